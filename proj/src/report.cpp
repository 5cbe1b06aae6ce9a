#include "uqd/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "uqd/errors.hpp"

namespace uqd {

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

void write_text(const std::string& path, const std::string& body) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!f) throw IoError("write failed for " + path);
}

std::string read_text(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            fields.push_back(line.substr(start));
            return fields;
        }
        fields.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

std::vector<std::vector<std::string>> parse_csv(const std::string& path,
                                                const std::string& expected_header) {
    const std::string buf = read_text(path);
    std::vector<std::vector<std::string>> rows;
    std::size_t start = 0, line_no = 0;
    while (start < buf.size()) {
        std::size_t end = buf.find('\n', start);
        if (end == std::string::npos) end = buf.size();
        std::string line = buf.substr(start, end - start);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        start = end + 1;
        ++line_no;
        if (line.empty()) continue;
        if (line_no == 1) {
            if (line != expected_header)
                throw FormatError(path + ": header is '" + line + "', expected '" +
                                  expected_header + "'");
            continue;
        }
        rows.push_back(split_csv_line(line));
    }
    if (line_no == 0) throw FormatError(path + ": empty file");
    return rows;
}

double parse_num(const std::string& path, const std::string& field) {
    try {
        std::size_t used = 0;
        const double v = std::stod(field, &used);
        if (used != field.size()) throw std::invalid_argument(field);
        return v;
    } catch (const std::exception&) {
        throw FormatError(path + ": bad numeric field '" + field + "'");
    }
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

} // namespace

void write_metrics_csv(const std::string& path,
                       const std::vector<std::pair<std::string, CalibrationReport>>& rows) {
    std::string out = "method,dsc,mcc,ece,brier,nll\n";
    for (const auto& [name, r] : rows) {
        if (name.empty() || name.find(',') != std::string::npos ||
            name.find('\n') != std::string::npos)
            throw ContractError("metrics csv: method name '" + name + "' is not writable");
        out += name + "," + num(r.dsc) + "," + num(r.mcc) + "," + num(r.ece) + "," +
               num(r.brier) + "," + num(r.nll) + "\n";
    }
    write_text(path, out);
}

std::vector<std::pair<std::string, std::vector<double>>> read_metrics_csv(
    const std::string& path) {
    std::vector<std::pair<std::string, std::vector<double>>> out;
    for (const auto& fields : parse_csv(path, "method,dsc,mcc,ece,brier,nll")) {
        if (fields.size() != 6)
            throw FormatError(path + ": expected 6 fields, found " +
                              std::to_string(fields.size()));
        std::vector<double> vals;
        for (std::size_t i = 1; i < 6; ++i) vals.push_back(parse_num(path, fields[i]));
        out.emplace_back(fields[0], std::move(vals));
    }
    return out;
}

void write_reliability_csv(const std::string& path, const ReliabilityTable& table) {
    std::string out = "bin_lo,bin_hi,mean_conf,accuracy,count\n";
    for (const ReliabilityBin& b : table.bins)
        out += num(b.lo) + "," + num(b.hi) + "," + num(b.mean_conf) + "," + num(b.accuracy) +
               "," + std::to_string(b.count) + "\n";
    write_text(path, out);
}

ReliabilityTable read_reliability_csv(const std::string& path) {
    ReliabilityTable table;
    for (const auto& fields : parse_csv(path, "bin_lo,bin_hi,mean_conf,accuracy,count")) {
        if (fields.size() != 5)
            throw FormatError(path + ": expected 5 fields, found " +
                              std::to_string(fields.size()));
        ReliabilityBin b;
        b.lo = parse_num(path, fields[0]);
        b.hi = parse_num(path, fields[1]);
        b.mean_conf = parse_num(path, fields[2]);
        b.accuracy = parse_num(path, fields[3]);
        b.count = static_cast<long long>(parse_num(path, fields[4]));
        table.bins.push_back(b);
    }
    return table;
}

void write_scatter_csv(const std::string& path, const std::vector<ImageMetrics>& per_image) {
    std::string out = "image,dsc,ece\n";
    for (std::size_t i = 0; i < per_image.size(); ++i)
        out += std::to_string(i) + "," + num(per_image[i].dsc) + "," + num(per_image[i].ece) +
               "\n";
    write_text(path, out);
}

void write_reliability_svg(const std::string& path, const ReliabilityTable& table,
                           const std::string& title) {
    if (table.bins.empty()) throw ContractError("reliability svg: table has no bins");

    // Plot area: confidence in [0.5, 1.0] on x, accuracy in [0, 1] on y.
    constexpr double margin = 60.0, plot = 400.0;
    constexpr double width = plot + 2 * margin, height = plot + 2 * margin;
    auto sx = [&](double conf) { return margin + (conf - 0.5) / 0.5 * plot; };
    auto sy = [&](double acc) { return margin + plot * (1.0 - acc); };

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    svg << "  <rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height
        << "\" fill=\"#ffffff\"/>\n";
    svg << "  <text x=\"" << width / 2 << "\" y=\"" << margin / 2
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
        << xml_escape(title) << "</text>\n";

    for (const ReliabilityBin& b : table.bins) {
        const double x = sx(b.lo);
        const double w = sx(b.hi) - x;
        const double top = sy(b.accuracy);
        svg << "  <rect class=\"bar\" x=\"" << num(x) << "\" y=\"" << num(top) << "\" width=\""
            << num(w) << "\" height=\"" << num(margin + plot - top)
            << "\" fill=\"#4878a8\" stroke=\"#ffffff\" stroke-width=\"1\"><title>[" << num(b.lo)
            << ", " << num(b.hi) << "] acc=" << num(b.accuracy) << " conf=" << num(b.mean_conf)
            << " n=" << b.count << "</title></rect>\n";
    }

    svg << "  <path class=\"diagonal\" d=\"M " << num(sx(0.5)) << " " << num(sy(0.5)) << " L "
        << num(sx(1.0)) << " " << num(sy(1.0))
        << "\" stroke=\"#c04040\" stroke-dasharray=\"6 4\" fill=\"none\" stroke-width=\"2\"/>\n";

    svg << "  <rect x=\"" << margin << "\" y=\"" << margin << "\" width=\"" << plot
        << "\" height=\"" << plot << "\" fill=\"none\" stroke=\"#202020\"/>\n";
    svg << "  <text x=\"" << width / 2 << "\" y=\"" << height - margin / 3
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">confidence"
        << "</text>\n";
    svg << "  <text x=\"" << margin / 3 << "\" y=\"" << height / 2
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\""
        << " transform=\"rotate(-90 " << margin / 3 << " " << height / 2 << ")\">accuracy"
        << "</text>\n";
    for (double tick : {0.5, 0.75, 1.0}) {
        svg << "  <text x=\"" << num(sx(tick)) << "\" y=\"" << margin + plot + 20
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
            << num(tick) << "</text>\n";
    }
    for (double tick : {0.0, 0.5, 1.0}) {
        svg << "  <text x=\"" << margin - 8 << "\" y=\"" << num(sy(tick) + 4)
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << num(tick)
            << "</text>\n";
    }
    svg << "</svg>\n";
    write_text(path, svg.str());
}

std::string format_metrics_table(
    const std::vector<std::pair<std::string, std::vector<double>>>& rows) {
    static const char* kCols[] = {"dsc\xE2\x86\x91", "mcc\xE2\x86\x91", "ece\xE2\x86\x93",
                                  "brier\xE2\x86\x93", "nll\xE2\x86\x93"};
    std::size_t name_w = 6;
    for (const auto& [name, vals] : rows) {
        if (vals.size() != 5)
            throw ContractError("metrics table: expected 5 values per row, got " +
                                std::to_string(vals.size()));
        name_w = std::max(name_w, name.size());
    }

    std::ostringstream out;
    out << "method";
    out << std::string(name_w - 6, ' ');
    for (const char* c : kCols) {
        // The arrow is 3 UTF-8 bytes but one display column.
        const std::size_t display = std::string(c).size() - 2;
        out << std::string(10 - display, ' ') << c;
    }
    out << "\n";
    for (const auto& [name, vals] : rows) {
        out << name << std::string(name_w - name.size(), ' ');
        for (double v : vals) {
            char buf[24];
            std::snprintf(buf, sizeof(buf), "%10.4f", v);
            out << buf;
        }
        out << "\n";
    }
    return out.str();
}

} // namespace uqd
