#ifndef UQD_REPORT_HPP
#define UQD_REPORT_HPP

#include <string>
#include <utility>
#include <vector>

#include "uqd/metrics.hpp"

namespace uqd {

// CSV: header "method,dsc,mcc,ece,brier,nll", one row per method.
void write_metrics_csv(const std::string& path,
                       const std::vector<std::pair<std::string, CalibrationReport>>& rows);
std::vector<std::pair<std::string, std::vector<double>>> read_metrics_csv(const std::string& path);

// CSV: header "bin_lo,bin_hi,mean_conf,accuracy,count", one row per bin.
void write_reliability_csv(const std::string& path, const ReliabilityTable& table);
ReliabilityTable read_reliability_csv(const std::string& path);

// CSV: header "image,dsc,ece", one row per test image (scatter data).
void write_scatter_csv(const std::string& path, const std::vector<ImageMetrics>& per_image);

// Reliability diagram: one rect of class "bar" per bin (accuracy vs
// confidence) and the y=x perfect-calibration path of class "diagonal".
// Self-contained SVG, no external references.
void write_reliability_svg(const std::string& path, const ReliabilityTable& table,
                           const std::string& title);

// Fixed-width text rendering of a metrics table (method, DSC, MCC, ECE,
// Brier, NLL), higher-is-better arrows in the header.
std::string format_metrics_table(
    const std::vector<std::pair<std::string, std::vector<double>>>& rows);

} // namespace uqd

#endif
