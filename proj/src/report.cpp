#include "tsbn/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "tsbn/tensor.hpp"

namespace fs = std::filesystem;

namespace tsbn {

namespace {

constexpr int kWidth = 560;
constexpr int kHeight = 360;
constexpr int kMarginLeft = 70;
constexpr int kMarginRight = 20;
constexpr int kMarginTop = 24;
constexpr int kMarginBottom = 48;

std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

struct ChartScale {
    double x_min, x_max, y_min, y_max;
    double px(double x) const {
        const double span = x_max > x_min ? x_max - x_min : 1.0;
        return kMarginLeft + (x - x_min) / span * (kWidth - kMarginLeft - kMarginRight);
    }
    double py(double y) const {
        const double span = y_max > y_min ? y_max - y_min : 1.0;
        return kHeight - kMarginBottom - (y - y_min) / span * (kHeight - kMarginTop - kMarginBottom);
    }
};

void chart_header(std::ostream& out, const std::string& title) {
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
        << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n";
    out << "<rect width=\"" << kWidth << "\" height=\"" << kHeight << "\" fill=\"white\"/>\n";
    out << "<text x=\"" << kWidth / 2 << "\" y=\"16\" text-anchor=\"middle\" font-family=\"sans-serif\" "
           "font-size=\"13\">" << title << "</text>\n";
}

void chart_axes(std::ostream& out, const ChartScale& s, const std::string& x_label,
                const std::string& y_label, int x_ticks, int y_ticks, bool y_percent) {
    out << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kHeight - kMarginBottom << "\" x2=\""
        << kWidth - kMarginRight << "\" y2=\"" << kHeight - kMarginBottom
        << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    out << "<line x1=\"" << kMarginLeft << "\" y1=\"" << kMarginTop << "\" x2=\"" << kMarginLeft
        << "\" y2=\"" << kHeight - kMarginBottom << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    for (int i = 0; i <= x_ticks; ++i) {
        const double x = s.x_min + (s.x_max - s.x_min) * i / std::max(x_ticks, 1);
        out << "<text x=\"" << fmt(s.px(x)) << "\" y=\"" << kHeight - kMarginBottom + 16
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">"
            << fmt(x) << "</text>\n";
    }
    for (int i = 0; i <= y_ticks; ++i) {
        const double y = s.y_min + (s.y_max - s.y_min) * i / std::max(y_ticks, 1);
        out << "<text x=\"" << kMarginLeft - 6 << "\" y=\"" << fmt(s.py(y) + 3)
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">"
            << (y_percent ? fmt(100.0 * y) : fmt(y)) << "</text>\n";
        out << "<line x1=\"" << kMarginLeft << "\" y1=\"" << fmt(s.py(y)) << "\" x2=\""
            << kWidth - kMarginRight << "\" y2=\"" << fmt(s.py(y))
            << "\" stroke=\"#dddddd\" stroke-width=\"0.5\"/>\n";
    }
    out << "<text x=\"" << (kMarginLeft + kWidth - kMarginRight) / 2 << "\" y=\"" << kHeight - 10
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << x_label
        << "</text>\n";
    out << "<text x=\"14\" y=\"" << (kMarginTop + kHeight - kMarginBottom) / 2
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\" transform=\"rotate(-90 14 "
        << (kMarginTop + kHeight - kMarginBottom) / 2 << ")\">" << y_label << "</text>\n";
}

void polyline_with_markers(std::ostream& out, const ChartScale& s,
                           const std::vector<std::pair<double, double>>& pts,
                           const std::string& color) {
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (size_t i = 0; i < pts.size(); ++i) {
        if (i) out << " ";
        out << fmt(s.px(pts[i].first)) << "," << fmt(s.py(pts[i].second));
    }
    out << "\"/>\n";
    for (const auto& [x, y] : pts) {
        out << "<circle cx=\"" << fmt(s.px(x)) << "\" cy=\"" << fmt(s.py(y))
            << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
}

}  // namespace

void write_mcr_curve_svg(const MetricLog& log, const fs::path& file) {
    detail::require(!log.records.empty(), "mcr curve: empty metric log");
    std::ofstream out(file);
    detail::require(out.good(), "cannot write " + file.string());
    ChartScale s{1.0, static_cast<double>(log.records.size()), 0.0, 1.0};
    if (log.records.size() == 1) s.x_max = 2.0;
    chart_header(out, "Mean class recall per phase");
    chart_axes(out, s, "task phase", "MCR (%)", static_cast<int>(log.records.size()) - 1, 5, true);
    std::vector<std::pair<double, double>> pts;
    for (const PhaseRecord& r : log.records) pts.emplace_back(r.phase, r.mcr);
    polyline_with_markers(out, s, pts, "#7a4fd1");
    out << "</svg>\n";
}

void write_param_growth_svg(const MetricLog& log, const fs::path& file) {
    detail::require(!log.records.empty(), "param growth: empty metric log");
    std::ofstream out(file);
    detail::require(out.good(), "cannot write " + file.string());
    double max_params = 0;
    for (const PhaseRecord& r : log.records) {
        max_params = std::max(max_params, static_cast<double>(r.total_params));
    }
    ChartScale s{1.0, static_cast<double>(log.records.size()), 0.0, max_params * 1.05};
    if (log.records.size() == 1) s.x_max = 2.0;
    chart_header(out, "Parameter count per task");
    chart_axes(out, s, "task phase", "parameters", static_cast<int>(log.records.size()) - 1, 5, false);
    std::vector<std::pair<double, double>> total_pts, trainable_pts;
    for (const PhaseRecord& r : log.records) {
        total_pts.emplace_back(r.phase, static_cast<double>(r.total_params));
        trainable_pts.emplace_back(r.phase, static_cast<double>(r.trainable_params));
    }
    polyline_with_markers(out, s, total_pts, "#7a4fd1");
    polyline_with_markers(out, s, trainable_pts, "#2e8b57");
    out << "<text x=\"" << kWidth - kMarginRight << "\" y=\"" << kMarginTop + 12
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\" fill=\"#7a4fd1\">total"
           "</text>\n";
    out << "<text x=\"" << kWidth - kMarginRight << "\" y=\"" << kMarginTop + 24
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\" fill=\"#2e8b57\">task-added "
           "(trainable)</text>\n";
    out << "</svg>\n";
}

void write_summary_md(const MetricLog& log, const fs::path& file) {
    detail::require(!log.records.empty(), "summary: empty metric log");
    std::ofstream out(file);
    detail::require(out.good(), "cannot write " + file.string());
    auto [last, avg] = summarize(log);
    out << "# Run summary\n\n";
    out << "- phases: " << log.records.size() << "\n";
    out << "- Last-MCR: " << format_double(last) << "\n";
    out << "- Avg-MCR: " << format_double(avg) << "\n\n";
    out << "| phase | MCR | TP acc | WP given TP | overall acc | trainable params | total params |\n";
    out << "|------:|----:|-------:|------------:|------------:|-----------------:|-------------:|\n";
    for (const PhaseRecord& r : log.records) {
        out << "| " << r.phase << " | " << format_double(r.mcr) << " | "
            << format_double(r.tp_accuracy) << " | " << format_double(r.wp_given_tp) << " | "
            << format_double(r.overall_accuracy) << " | " << r.trainable_params << " | "
            << r.total_params << " |\n";
    }
}

void generate_report(const fs::path& run_dir) {
    const fs::path metrics = run_dir / "metrics.csv";
    detail::require(fs::exists(metrics), "missing file: " + metrics.string());
    const MetricLog log = read_metrics_csv(metrics);
    fs::create_directories(run_dir / "plots");
    write_mcr_curve_svg(log, run_dir / "plots" / "mcr_curve.svg");
    write_param_growth_svg(log, run_dir / "plots" / "param_growth.svg");
    write_summary_md(log, run_dir / "summary.md");
}

}  // namespace tsbn
