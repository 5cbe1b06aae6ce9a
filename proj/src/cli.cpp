#include "uqd/cli.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <thread>

#include "CLI11.hpp"

#include "uqd/data.hpp"
#include "uqd/distill.hpp"
#include "uqd/errors.hpp"
#include "uqd/metrics.hpp"
#include "uqd/report.hpp"
#include "uqd/rng.hpp"
#include "uqd/segnet.hpp"
#include "uqd/train.hpp"
#include "uqd/uncertainty.hpp"

namespace fs = std::filesystem;

namespace uqd::cli {

namespace {

std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text_file(const fs::path& path, const std::string& body) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!f) throw IoError("write failed for " + path.string());
}

// --data accepts either the manifest file or the directory holding manifest.txt.
std::string manifest_file_of(const std::string& data) {
    fs::path p(data);
    if (fs::is_directory(p)) p /= "manifest.txt";
    return p.string();
}

// --teachers / --ensemble: a directory (all member_*.uqd, name order) or a
// comma-separated checkpoint list.
std::vector<std::string> resolve_checkpoint_spec(const std::string& spec, const char* flag) {
    std::vector<std::string> paths;
    if (fs::is_directory(spec)) {
        for (const auto& entry : fs::directory_iterator(spec)) {
            const std::string name = entry.path().filename().string();
            if (name.rfind("member_", 0) == 0 && name.size() > 4 &&
                name.substr(name.size() - 4) == ".uqd")
                paths.push_back(entry.path().string());
        }
        std::sort(paths.begin(), paths.end());
        if (paths.empty())
            throw ConfigError(std::string(flag) + ": no member_*.uqd checkpoints in " + spec);
        return paths;
    }
    std::size_t start = 0;
    while (start <= spec.size()) {
        std::size_t comma = spec.find(',', start);
        if (comma == std::string::npos) comma = spec.size();
        const std::string piece = spec.substr(start, comma - start);
        if (!piece.empty()) paths.push_back(piece);
        start = comma + 1;
    }
    if (paths.empty()) throw ConfigError(std::string(flag) + ": empty checkpoint list");
    std::string missing;
    for (const std::string& p : paths)
        if (!fs::exists(p)) missing += (missing.empty() ? "" : ", ") + p;
    if (!missing.empty())
        throw ConfigError(std::string(flag) + ": missing checkpoint files: " + missing);
    return paths;
}

EnsembleModel load_ensemble(const std::string& spec, const char* flag) {
    EnsembleModel ens;
    for (const std::string& p : resolve_checkpoint_spec(spec, flag))
        ens.members.push_back(load_checkpoint(p));
    return ens;
}

void write_resolved_config(const CLI::App& sub, const fs::path& out_dir) {
    ensure_dir(out_dir);
    write_text_file(out_dir / "resolved-config.txt",
                    "# command: " + sub.get_name() + "\n" + sub.config_to_str(true, false));
}

void write_train_log(const fs::path& path, const std::vector<TrainLogRow>& rows) {
    std::string body = "epoch,step,lr,loss\n";
    for (const TrainLogRow& r : rows)
        body += std::to_string(r.epoch) + "," + std::to_string(r.step) + "," + num(r.lr) + "," +
                num(r.loss) + "\n";
    write_text_file(path, body);
}

void write_distill_log(const fs::path& path, const std::vector<DistillLogRow>& rows) {
    std::string body = "step,kl_term,crd_term,task_term,total\n";
    for (const DistillLogRow& r : rows) {
        body += std::to_string(r.step) + ",";
        body += (r.loss.has_kl ? num(r.loss.kl_term) : "") + std::string(",");
        body += (r.loss.has_crd ? num(r.loss.crd_term) : "") + std::string(",");
        body += (r.loss.has_task ? num(r.loss.task_term) : "") + std::string(",");
        body += num(r.loss.total) + "\n";
    }
    write_text_file(path, body);
}

UncertaintyMap compute_measure(const std::string& measure, const EnsemblePrediction& pred) {
    if (measure == "entropy") return predictive_entropy(pred.mean);
    if (measure == "variance") return member_variance(pred.members);
    return mutual_information(pred.mean, pred.members);
}

ProbMap as_prob_map(const UncertaintyMap& u) {
    ProbMap p;
    p.h = u.h;
    p.w = u.w;
    p.probs = u.values;
    return p;
}

DistillMode parse_mode(const std::string& mode) {
    if (mode == "kl") return DistillMode::kl;
    if (mode == "crd") return DistillMode::crd;
    return DistillMode::kl_crd;
}

// ---- gen-data ----

struct GenOpts {
    std::string out;
    SynthConfig synth;
    int test_n = 10;
};

void cmd_gen_data(const GenOpts& o, const CLI::App& sub) {
    ensure_dir(o.out);
    write_resolved_config(sub, o.out);

    Dataset train = generate_synthetic(o.synth, (fs::path(o.out) / "train").string());
    std::cout << "train: " << train.items.size() << " pairs in " << train.dir << "; checksum "
              << hex64(dataset_checksum(train)) << "\n";

    if (o.test_n > 0) {
        SynthConfig tc = o.synth;
        tc.n_images = o.test_n;
        tc.seed = mix64(o.synth.seed, 0x7e57);
        Dataset test = generate_synthetic(tc, (fs::path(o.out) / "test").string());
        std::cout << "test: " << test.items.size() << " pairs in " << test.dir << "; checksum "
                  << hex64(dataset_checksum(test)) << "\n";
    }
}

// ---- train / train-ensemble ----

struct TrainOpts {
    std::string data;
    std::string out;
    TrainConfig train;
    double dropout = 0.2;          // single model keeps dropout so MC-dropout works at test time
    double dropout_members = 0.0;  // ensemble members are deterministic
    int base_channels = 4;
    int members = 5;
};

void save_member(const SegNet& net, const std::vector<TrainLogRow>& log, const fs::path& out,
                 const std::string& name) {
    const fs::path ckpt = out / "checkpoints" / (name + ".uqd");
    save_checkpoint(net, ckpt.string());
    write_train_log(out / "logs" / ("train_" + name + ".csv"), log);
    std::cout << name << ": checkpoint " << ckpt.string() << "; checksum "
              << hex64(param_checksum(net)) << "; final loss "
              << (log.empty() ? "n/a" : num(log.back().loss)) << "\n";
}

void cmd_train(const TrainOpts& o, const CLI::App& sub) {
    write_resolved_config(sub, o.out);
    ensure_dir(fs::path(o.out) / "checkpoints");
    ensure_dir(fs::path(o.out) / "logs");

    LoadedDataset data = load_dataset(load_manifest(manifest_file_of(o.data)));
    ArchConfig arch{1, o.base_channels};
    std::vector<TrainLogRow> log;
    SegNet net = train_member(data.images, data.masks, o.train, o.train.seed, arch, o.dropout, &log);
    save_member(net, log, o.out, "baseline");
}

void cmd_train_ensemble(const TrainOpts& o, const CLI::App& sub) {
    write_resolved_config(sub, o.out);
    ensure_dir(fs::path(o.out) / "checkpoints");
    ensure_dir(fs::path(o.out) / "logs");

    LoadedDataset data = load_dataset(load_manifest(manifest_file_of(o.data)));
    ArchConfig arch{1, o.base_channels};

    const int m_count = o.members;
    std::vector<SegNet> nets(static_cast<std::size_t>(m_count));
    std::vector<std::vector<TrainLogRow>> logs(static_cast<std::size_t>(m_count));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(m_count));

    // Members share only the read-only dataset; each runs on its own tape.
    std::atomic<int> next{0};
    auto worker = [&] {
        while (true) {
            const int m = next.fetch_add(1);
            if (m >= m_count) return;
            try {
                logs[m].clear();
                nets[m] = train_member(data.images, data.masks, o.train,
                                       o.train.seed + static_cast<std::uint64_t>(m), arch,
                                       o.dropout_members, &logs[m]);
            } catch (...) {
                errors[m] = std::current_exception();
            }
        }
    };
    const int n_threads = std::min(thread_budget(), m_count);
    std::vector<std::thread> pool;
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (std::thread& th : pool) th.join();

    for (int m = 0; m < m_count; ++m)
        if (errors[static_cast<std::size_t>(m)])
            std::rethrow_exception(errors[static_cast<std::size_t>(m)]);
    for (int m = 0; m < m_count; ++m) {
        char name[24];
        std::snprintf(name, sizeof(name), "member_%d", m);
        save_member(nets[static_cast<std::size_t>(m)], logs[static_cast<std::size_t>(m)], o.out,
                    name);
    }
}

// ---- distill ----

struct DistillOpts {
    std::string data;
    std::string out;
    std::string teachers;
    std::string mode = "kl";
    TrainConfig train;
    DistillConfig distill;
    double dropout = 0.0;
    int base_channels = 4;
};

void cmd_distill(const DistillOpts& o, const CLI::App& sub) {
    write_resolved_config(sub, o.out);
    ensure_dir(fs::path(o.out) / "checkpoints");
    ensure_dir(fs::path(o.out) / "logs");

    DistillConfig dcfg = o.distill;
    dcfg.mode = parse_mode(o.mode);
    dcfg.teacher_checkpoints = resolve_checkpoint_spec(o.teachers, "--teachers");

    EnsembleModel teachers;
    for (const std::string& p : dcfg.teacher_checkpoints)
        teachers.members.push_back(load_checkpoint(p));

    ArchConfig arch{1, o.base_channels};
    if (dcfg.mode != DistillMode::kl)
        for (const SegNet& t : teachers.members)
            if (t.arch.rep_dim() != arch.rep_dim())
                throw ConfigError("distill: teacher rep_dim " + std::to_string(t.arch.rep_dim()) +
                                  " differs from student rep_dim " +
                                  std::to_string(arch.rep_dim()) +
                                  "; the contrastive loss needs matching widths");

    LoadedDataset data = load_dataset(load_manifest(manifest_file_of(o.data)));
    std::vector<DistillLogRow> log;
    SegNet student =
        distill_train(data.images, data.masks, teachers, dcfg, o.train, arch, o.dropout, &log);

    const std::string name = "student_" + o.mode;
    const fs::path ckpt = fs::path(o.out) / "checkpoints" / (name + ".uqd");
    save_checkpoint(student, ckpt.string());
    write_distill_log(fs::path(o.out) / "logs" / ("distill_" + o.mode + ".csv"), log);
    std::cout << name << ": checkpoint " << ckpt.string() << "; checksum "
              << hex64(param_checksum(student)) << "; final total "
              << (log.empty() ? "n/a" : num(log.back().loss.total)) << "\n";
}

// ---- predict ----

struct PredictOpts {
    std::string image;
    std::string out;
    std::string checkpoint;
    std::string teachers;
    bool mcd = false;
    int passes = 10;
    std::uint64_t mcd_seed = 0;
    std::string measure = "entropy";
};

EnsemblePrediction single_prediction(const SegNet& net, const Tensor& image) {
    ProbMap p = predict_prob(net, image);
    EnsemblePrediction pred;
    pred.members.push_back(p);
    pred.mean = std::move(p);
    return pred;
}

void cmd_predict(const PredictOpts& o, const CLI::App& sub) {
    if (o.checkpoint.empty() == o.teachers.empty())
        throw ConfigError("predict: give exactly one of --checkpoint and --teachers");
    if (o.mcd && o.checkpoint.empty())
        throw ConfigError("predict: --mcd needs --checkpoint");

    write_resolved_config(sub, o.out);
    Tensor image = read_pgm(o.image);

    EnsemblePrediction pred;
    if (!o.teachers.empty()) {
        pred = ensemble_predict(load_ensemble(o.teachers, "--teachers"), image);
    } else {
        SegNet net = load_checkpoint(o.checkpoint);
        pred = o.mcd ? mcd_predict(net, image, o.passes, o.mcd_seed)
                     : single_prediction(net, image);
    }

    const fs::path out(o.out);
    write_pfm((out / "prob.pfm").string(), pred.mean);
    std::cout << "wrote " << (out / "prob.pfm").string() << "\n";
    write_pgm((out / "mask.pgm").string(), binarize(pred.mean));
    std::cout << "wrote " << (out / "mask.pgm").string() << "\n";
    const fs::path upath = out / (o.measure + ".pfm");
    write_pfm(upath.string(), as_prob_map(compute_measure(o.measure, pred)));
    std::cout << "wrote " << upath.string() << "\n";
}

// ---- evaluate ----

struct EvalOpts {
    std::string data;
    std::string out;
    std::string baseline;
    std::string ensemble;
    std::string mcd;
    std::string student_kl;
    std::string student_crd;
    int passes = 10;
    std::uint64_t mcd_seed = 0;
    int bins = kDefaultBins;
    std::string measure = "entropy";
};

struct Method {
    std::string name;
    std::function<EnsemblePrediction(const Tensor&)> predict;
};

void cmd_evaluate(const EvalOpts& o, const CLI::App& sub) {
    std::vector<Method> methods;
    if (!o.baseline.empty()) {
        auto net = std::make_shared<SegNet>(load_checkpoint(o.baseline));
        methods.push_back({"baseline",
                           [net](const Tensor& img) { return single_prediction(*net, img); }});
    }
    if (!o.ensemble.empty()) {
        auto ens = std::make_shared<EnsembleModel>(load_ensemble(o.ensemble, "--ensemble"));
        methods.push_back({"de", [ens](const Tensor& img) { return ensemble_predict(*ens, img); }});
    }
    if (!o.mcd.empty()) {
        auto net = std::make_shared<SegNet>(load_checkpoint(o.mcd));
        const int passes = o.passes;
        const std::uint64_t seed = o.mcd_seed;
        methods.push_back({"mcd", [net, passes, seed](const Tensor& img) {
                               return mcd_predict(*net, img, passes, seed);
                           }});
    }
    if (!o.student_kl.empty()) {
        auto net = std::make_shared<SegNet>(load_checkpoint(o.student_kl));
        methods.push_back({"end-kl",
                           [net](const Tensor& img) { return single_prediction(*net, img); }});
    }
    if (!o.student_crd.empty()) {
        auto net = std::make_shared<SegNet>(load_checkpoint(o.student_crd));
        methods.push_back({"end-crd",
                           [net](const Tensor& img) { return single_prediction(*net, img); }});
    }
    if (methods.empty())
        throw ConfigError("evaluate: no method selected; give at least one of --baseline, "
                          "--ensemble, --mcd, --student-kl, --student-crd");

    write_resolved_config(sub, o.out);
    const fs::path reports = fs::path(o.out) / "reports";
    const fs::path figures = fs::path(o.out) / "figures";
    ensure_dir(reports);
    ensure_dir(figures);

    Dataset ds = load_manifest(manifest_file_of(o.data));
    LoadedDataset data = load_dataset(ds);

    std::vector<std::pair<std::string, CalibrationReport>> rows;
    std::vector<std::pair<std::string, std::vector<double>>> table;
    for (const Method& method : methods) {
        const fs::path udir = fs::path(o.out) / "uncertainty" / method.name;
        ensure_dir(udir);

        std::vector<ProbMap> preds;
        for (std::size_t i = 0; i < data.images.size(); ++i) {
            EnsemblePrediction pred = method.predict(data.images[i]);
            const std::string stem = fs::path(ds.items[i].image).stem().string();
            write_pfm((udir / (stem + ".pfm")).string(),
                      as_prob_map(compute_measure(o.measure, pred)));
            preds.push_back(std::move(pred.mean));
        }

        CalibrationReport rep = evaluate(preds, data.masks, o.bins);
        write_reliability_csv((reports / ("reliability_" + method.name + ".csv")).string(),
                              rep.reliability);
        write_scatter_csv((reports / ("scatter_" + method.name + ".csv")).string(),
                          rep.per_image);
        write_reliability_svg((figures / ("reliability_" + method.name + ".svg")).string(),
                              rep.reliability, method.name + " reliability");
        table.emplace_back(method.name,
                           std::vector<double>{rep.dsc, rep.mcc, rep.ece, rep.brier, rep.nll});
        rows.emplace_back(method.name, std::move(rep));
    }

    write_metrics_csv((reports / "metrics.csv").string(), rows);
    std::cout << format_metrics_table(table) << "wrote " << (reports / "metrics.csv").string()
              << "\n";
}

// ---- report ----

struct ReportOpts {
    std::string metrics;
    std::vector<std::string> reliability;
    std::string out;
};

void cmd_report(const ReportOpts& o, const CLI::App& sub) {
    const std::string table = format_metrics_table(read_metrics_csv(o.metrics));
    std::cout << table;
    if (!o.out.empty()) {
        write_resolved_config(sub, o.out);
        ensure_dir(fs::path(o.out) / "reports");
        write_text_file(fs::path(o.out) / "reports" / "table.txt", table);
    }
    if (!o.reliability.empty() && o.out.empty())
        throw ConfigError("report: --reliability needs --out for the rendered figures");
    for (const std::string& rel : o.reliability) {
        ReliabilityTable rt = read_reliability_csv(rel);
        const std::string stem = fs::path(rel).stem().string();
        ensure_dir(fs::path(o.out) / "figures");
        const fs::path svg = fs::path(o.out) / "figures" / (stem + ".svg");
        write_reliability_svg(svg.string(), rt, stem);
        std::cout << "wrote " << svg.string() << "\n";
    }
}

std::string strip(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

// Applies a key=value config file between defaults and flags: every file key
// not already present as a flag is injected as one right after the
// subcommand token, so explicit flags keep the last word.
std::vector<std::string> merge_config_args(const std::vector<std::string>& args) {
    std::string cfg_path;
    std::size_t subcmd = args.size();
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) cfg_path = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0) cfg_path = args[i].substr(9);
        else if (subcmd == args.size() && !args[i].empty() && args[i][0] != '-') subcmd = i;
    }
    if (cfg_path.empty() || subcmd == args.size()) return args;

    std::ifstream f(cfg_path);
    if (!f) throw IoError("cannot open config file " + cfg_path);

    auto given = [&args](const std::string& key) {
        for (const std::string& a : args)
            if (a == "--" + key || a.rfind("--" + key + "=", 0) == 0) return true;
        return false;
    };

    std::vector<std::string> inject;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        line = strip(line);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(cfg_path + ":" + std::to_string(line_no) +
                              ": expected key=value");
        const std::string key = strip(line.substr(0, eq));
        std::string value = strip(line.substr(eq + 1));
        if (value.size() >= 2 && (value.front() == '"' || value.front() == '\'') &&
            value.back() == value.front())
            value = value.substr(1, value.size() - 2);
        if (key.empty())
            throw ConfigError(cfg_path + ":" + std::to_string(line_no) + ": empty key");
        if (key == "config" || given(key)) continue;
        if (value == "true") {
            inject.push_back("--" + key);
        } else if (value != "false") {
            inject.push_back("--" + key);
            inject.push_back(value);
        }
    }

    std::vector<std::string> out = args;
    out.insert(out.begin() + static_cast<std::ptrdiff_t>(subcmd) + 1, inject.begin(),
               inject.end());
    return out;
}

void add_config_option(CLI::App* sub) {
    static std::string sink;
    sub->add_option("--config", sink, "Read key=value defaults from a file")
        ->configurable(false);
}

void add_train_flags(CLI::App* sub, TrainConfig& cfg) {
    sub->add_option("--epochs", cfg.epochs, "Training epochs")->check(CLI::PositiveNumber);
    sub->add_option("--batch-size", cfg.batch_size, "Images per optimizer step")
        ->check(CLI::PositiveNumber);
    sub->add_option("--lr", cfg.lr_init, "Initial learning rate")->check(CLI::PositiveNumber);
    sub->add_option("--weight-decay", cfg.weight_decay, "L2 coefficient folded into gradients")
        ->check(CLI::NonNegativeNumber);
    sub->add_option("--eta-min", cfg.eta_min, "Final learning rate of the cosine schedule")
        ->check(CLI::NonNegativeNumber);
    sub->add_option("--seed", cfg.seed, "Base seed for init, dropout and shuffling");
}

} // namespace

int thread_budget() {
    const unsigned hw = std::thread::hardware_concurrency();
    int budget = hw == 0 ? 1 : static_cast<int>(hw);
    if (const char* env = std::getenv("UQD_THREADS")) {
        int v = 0;
        try {
            std::size_t used = 0;
            v = std::stoi(env, &used);
            if (used != std::string(env).size() || v < 1) throw std::invalid_argument(env);
        } catch (const std::exception&) {
            throw ConfigError("UQD_THREADS must be a positive integer, got '" +
                              std::string(env) + "'");
        }
        budget = std::min(budget, v);
    }
    return std::max(1, budget);
}

int run(const std::vector<std::string>& args) {
    CLI::App app{"Ensemble uncertainty for binary segmentation: deep ensembles, MC-dropout, "
                 "ensemble distillation, calibration metrics"};
    app.name("uqd");
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();

    GenOpts gen;
    CLI::App* gen_sub = app.add_subcommand("gen-data", "Generate a synthetic curve dataset");
    add_config_option(gen_sub);
    gen_sub->add_option("--out", gen.out, "Dataset directory (train/ and test/ inside)")
        ->required();
    gen_sub->add_option("--seed", gen.synth.seed, "Generator seed");
    gen_sub->add_option("--n", gen.synth.n_images, "Training images")->check(CLI::PositiveNumber);
    gen_sub->add_option("--test-n", gen.test_n, "Test images (0 skips the test split)")
        ->check(CLI::NonNegativeNumber);
    gen_sub->add_option("--size", gen.synth.h, "Square image extent (multiple of 4)")
        ->check(CLI::PositiveNumber);
    gen_sub->add_option("--curves-min", gen.synth.curves_min, "Fewest curves per image (0 allowed)")
        ->check(CLI::NonNegativeNumber);
    gen_sub->add_option("--curves-max", gen.synth.curves_max, "Most curves per image")
        ->check(CLI::NonNegativeNumber);
    gen_sub->add_option("--thickness-min", gen.synth.thickness_min, "Thinnest curve, pixels")
        ->check(CLI::PositiveNumber);
    gen_sub->add_option("--thickness-max", gen.synth.thickness_max, "Thickest curve, pixels")
        ->check(CLI::PositiveNumber);
    gen_sub->add_option("--noise-sigma", gen.synth.noise_sigma, "Gaussian noise level")
        ->check(CLI::NonNegativeNumber);
    gen_sub->callback([&] {
        gen.synth.w = gen.synth.h;
        cmd_gen_data(gen, *gen_sub);
    });

    TrainOpts tr;
    CLI::App* train_sub = app.add_subcommand("train", "Train a single baseline model");
    CLI::App* ens_sub = app.add_subcommand("train-ensemble", "Train M independent members");
    for (CLI::App* sub : {train_sub, ens_sub}) {
        add_config_option(sub);
        sub->add_option("--data", tr.data, "Training manifest or its directory")->required();
        sub->add_option("--out", tr.out, "Run directory for checkpoints and logs")->required();
        add_train_flags(sub, tr.train);
        sub->add_option("--base-channels", tr.base_channels, "Width of the first encoder block")
            ->check(CLI::PositiveNumber);
    }
    train_sub->add_option("--dropout", tr.dropout, "Dropout rate after each encoder block");
    ens_sub->add_option("--dropout", tr.dropout_members,
                        "Member dropout rate; members default deterministic");
    ens_sub->add_option("--members", tr.members, "Ensemble size; member m trains with seed+m")
        ->check(CLI::PositiveNumber);
    train_sub->callback([&] { cmd_train(tr, *train_sub); });
    ens_sub->callback([&] { cmd_train_ensemble(tr, *ens_sub); });

    DistillOpts di;
    CLI::App* di_sub = app.add_subcommand("distill", "Distill an ensemble into one student");
    add_config_option(di_sub);
    di_sub->add_option("--data", di.data, "Training manifest or its directory")->required();
    di_sub->add_option("--out", di.out, "Run directory for checkpoints and logs")->required();
    di_sub->add_option("--teachers", di.teachers,
                       "Teacher checkpoints: directory of member_*.uqd or comma list")
        ->required();
    di_sub->add_option("--mode", di.mode, "Distillation objective")
        ->check(CLI::IsMember({"kl", "crd", "kl_crd"}));
    di_sub->add_option("--temperature", di.distill.temperature, "Contrastive temperature")
        ->check(CLI::PositiveNumber);
    di_sub->add_option("--task-weight", di.distill.task_loss_weight,
                       "Weight of the supervised loss term (0 disables it)")
        ->check(CLI::NonNegativeNumber);
    add_train_flags(di_sub, di.train);
    di_sub->add_option("--dropout", di.dropout, "Student dropout rate");
    di_sub->add_option("--base-channels", di.base_channels, "Student width");
    di_sub->callback([&] { cmd_distill(di, *di_sub); });

    PredictOpts pr;
    CLI::App* pr_sub = app.add_subcommand("predict", "Run one image through a model or ensemble");
    add_config_option(pr_sub);
    pr_sub->add_option("--image", pr.image, "Input PGM image")->required();
    pr_sub->add_option("--out", pr.out, "Directory for prob.pfm, mask.pgm, <measure>.pfm")
        ->required();
    pr_sub->add_option("--checkpoint", pr.checkpoint, "Single-model checkpoint");
    pr_sub->add_option("--teachers", pr.teachers,
                       "Ensemble checkpoints: directory or comma list");
    pr_sub->add_flag("--mcd", pr.mcd, "Monte-Carlo dropout inference on --checkpoint");
    pr_sub->add_option("--passes", pr.passes, "Dropout passes")->check(CLI::PositiveNumber);
    pr_sub->add_option("--mcd-seed", pr.mcd_seed, "Seed of the dropout passes");
    pr_sub->add_option("--measure", pr.measure, "Uncertainty map to write")
        ->check(CLI::IsMember({"entropy", "variance", "mi"}));
    pr_sub->callback([&] { cmd_predict(pr, *pr_sub); });

    EvalOpts ev;
    CLI::App* ev_sub = app.add_subcommand("evaluate", "Score methods on a test split");
    add_config_option(ev_sub);
    ev_sub->add_option("--data", ev.data, "Test manifest or its directory")->required();
    ev_sub->add_option("--out", ev.out, "Run directory for reports and figures")->required();
    ev_sub->add_option("--baseline", ev.baseline, "Baseline checkpoint");
    ev_sub->add_option("--ensemble", ev.ensemble, "Ensemble checkpoints: directory or comma list");
    ev_sub->add_option("--mcd", ev.mcd, "Checkpoint for MC-dropout inference");
    ev_sub->add_option("--student-kl", ev.student_kl, "Distilled student (KL objective)");
    ev_sub->add_option("--student-crd", ev.student_crd, "Distilled student (contrastive objective)");
    ev_sub->add_option("--passes", ev.passes, "Dropout passes")->check(CLI::PositiveNumber);
    ev_sub->add_option("--mcd-seed", ev.mcd_seed, "Seed of the dropout passes");
    ev_sub->add_option("--bins", ev.bins, "Reliability bins")->check(CLI::PositiveNumber);
    ev_sub->add_option("--measure", ev.measure, "Uncertainty maps to write per image")
        ->check(CLI::IsMember({"entropy", "variance", "mi"}));
    ev_sub->callback([&] { cmd_evaluate(ev, *ev_sub); });

    ReportOpts re;
    CLI::App* re_sub = app.add_subcommand("report", "Render tables and figures from metric CSVs");
    add_config_option(re_sub);
    re_sub->add_option("--metrics", re.metrics, "metrics.csv to tabulate")->required();
    re_sub->add_option("--reliability", re.reliability, "Reliability CSVs to render as SVG");
    re_sub->add_option("--out", re.out, "Directory for table.txt and figures");
    re_sub->callback([&] { cmd_report(re, *re_sub); });

    try {
        const std::vector<std::string> merged = merge_config_args(args);
        std::vector<std::string> reversed(merged.rbegin(), merged.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

} // namespace uqd::cli
