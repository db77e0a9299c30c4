#pragma once

#include <filesystem>

#include "tsbn/metrics.hpp"

namespace tsbn {

// Self-contained SVG line charts; output is a pure function of the log so
// regeneration is byte-identical.
void write_mcr_curve_svg(const MetricLog& log, const std::filesystem::path& file);
void write_param_growth_svg(const MetricLog& log, const std::filesystem::path& file);
void write_summary_md(const MetricLog& log, const std::filesystem::path& file);

// Reads run_dir/metrics.csv and regenerates plots/ and summary.md.
void generate_report(const std::filesystem::path& run_dir);

}  // namespace tsbn
