#include "gfqi/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace gfqi {

std::map<SweepAxis, std::map<Learner, std::vector<SeriesPoint>>> summarize_results(const std::vector<ResultRow>& rows,
                                                                                   PlotMetric metric) {
  std::map<SweepAxis, std::map<Learner, std::map<double, std::vector<double>>>> groups;
  for (const ResultRow& r : rows) {
    const double v = metric == PlotMetric::regret_average ? r.regret_average : r.regret_discounted;
    if (!r.error.empty() || !std::isfinite(v)) continue;
    groups[r.axis][r.learner][r.axis_value].push_back(v);
  }
  std::map<SweepAxis, std::map<Learner, std::vector<SeriesPoint>>> out;
  for (const auto& [axis, by_learner] : groups) {
    for (const auto& [learner, by_x] : by_learner) {
      auto& series = out[axis][learner];
      for (const auto& [x, vals] : by_x) {
        SeriesPoint p;
        p.x = x;
        p.count = static_cast<int>(vals.size());
        for (double v : vals) p.mean += v;
        p.mean /= p.count;
        if (p.count > 1) {
          double ss = 0.0;
          for (double v : vals) ss += (v - p.mean) * (v - p.mean);
          p.std_error = std::sqrt(ss / (p.count - 1) / p.count);
        }
        series.push_back(p);
      }
    }
  }
  return out;
}

namespace {

const char* learner_color(Learner l) {
  switch (l) {
    case Learner::fqi: return "#1f77b4";
    case Learner::agtd: return "#2ca02c";
    case Learner::gfqi_identity: return "#ff7f0e";
    case Learner::gfqi_exchangeable: return "#d62728";
  }
  return "#000000";
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '&') out += "&amp;";
    else if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '"') out += "&quot;";
    else out += c;
  }
  return out;
}

struct Range {
  double lo, hi;
};

Range padded(double lo, double hi) {
  if (hi - lo < 1e-12) {
    const double pad = std::max(std::abs(lo) * 0.1, 0.5);
    return {lo - pad, hi + pad};
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

}  // namespace

std::string render_svg(const std::vector<ResultRow>& rows, const PlotOptions& options) {
  const auto summary = summarize_results(rows, options.metric);
  if (summary.empty()) throw InputError("no successful result rows to plot");

  constexpr double kPanelW = 480, kPanelH = 360, kLeft = 70, kRight = 20, kTop = 50, kBottom = 60;
  const double width = kPanelW * static_cast<double>(summary.size());
  const double height = kPanelH + 30 * 1.0;
  const char* metric_label =
      options.metric == PlotMetric::regret_average ? "regret (average reward)" : "regret (discounted value)";

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\"" << num(height)
      << "\" viewBox=\"0 0 " << num(width) << ' ' << num(height) << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!options.title.empty()) {
    svg << "<text x=\"" << num(width / 2) << "\" y=\"20\" text-anchor=\"middle\" font-size=\"15\">" << xml_escape(options.title)
        << "</text>\n";
  }

  int panel = 0;
  for (const auto& [axis, by_learner] : summary) {
    const double ox = kPanelW * panel++;
    double xlo = INFINITY, xhi = -INFINITY, ylo = 0.0, yhi = 0.0;
    for (const auto& [learner, pts] : by_learner) {
      for (const auto& p : pts) {
        xlo = std::min(xlo, p.x);
        xhi = std::max(xhi, p.x);
        ylo = std::min(ylo, p.mean - p.std_error);
        yhi = std::max(yhi, p.mean + p.std_error);
      }
    }
    const Range xr = padded(xlo, xhi);
    const Range yr = padded(ylo, yhi);
    const double pw = kPanelW - kLeft - kRight;
    const double ph = kPanelH - kTop - kBottom;
    auto sx = [&](double x) { return ox + kLeft + (x - xr.lo) / (xr.hi - xr.lo) * pw; };
    auto sy = [&](double y) { return kTop + (yr.hi - y) / (yr.hi - yr.lo) * ph; };

    svg << "<g>\n";
    svg << "<rect x=\"" << num(ox + kLeft) << "\" y=\"" << num(kTop) << "\" width=\"" << num(pw) << "\" height=\""
        << num(ph) << "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (int t = 0; t <= 4; ++t) {
      const double yv = yr.lo + (yr.hi - yr.lo) * t / 4.0;
      const double xv = xr.lo + (xr.hi - xr.lo) * t / 4.0;
      svg << "<line x1=\"" << num(ox + kLeft) << "\" x2=\"" << num(ox + kLeft + pw) << "\" y1=\"" << num(sy(yv))
          << "\" y2=\"" << num(sy(yv)) << "\" stroke=\"#ddd\"/>\n";
      svg << "<text x=\"" << num(ox + kLeft - 6) << "\" y=\"" << num(sy(yv) + 4) << "\" text-anchor=\"end\">"
          << tick_label(yv) << "</text>\n";
      svg << "<text x=\"" << num(sx(xv)) << "\" y=\"" << num(kTop + ph + 16) << "\" text-anchor=\"middle\">"
          << tick_label(xv) << "</text>\n";
    }
    svg << "<line x1=\"" << num(ox + kLeft) << "\" x2=\"" << num(ox + kLeft + pw) << "\" y1=\"" << num(sy(0.0))
        << "\" y2=\"" << num(sy(0.0)) << "\" stroke=\"#888\" stroke-dasharray=\"4 3\"/>\n";
    svg << "<text x=\"" << num(ox + kLeft + pw / 2) << "\" y=\"" << num(kTop + ph + 36)
        << "\" text-anchor=\"middle\">" << axis_name(axis) << "</text>\n";
    svg << "<text transform=\"translate(" << num(ox + 16) << ',' << num(kTop + ph / 2)
        << ") rotate(-90)\" text-anchor=\"middle\">" << metric_label << "</text>\n";

    int legend = 0;
    for (const auto& [learner, pts] : by_learner) {
      const char* color = learner_color(learner);
      if (pts.size() > 1) {
        svg << "<polygon fill=\"" << color << "\" fill-opacity=\"0.18\" stroke=\"none\" points=\"";
        for (const auto& p : pts) svg << num(sx(p.x)) << ',' << num(sy(p.mean + p.std_error)) << ' ';
        for (auto it = pts.rbegin(); it != pts.rend(); ++it) {
          svg << num(sx(it->x)) << ',' << num(sy(it->mean - it->std_error)) << ' ';
        }
        svg << "\"/>\n";
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (const auto& p : pts) svg << num(sx(p.x)) << ',' << num(sy(p.mean)) << ' ';
        svg << "\"/>\n";
      }
      for (const auto& p : pts) {
        svg << "<line x1=\"" << num(sx(p.x)) << "\" x2=\"" << num(sx(p.x)) << "\" y1=\""
            << num(sy(p.mean - p.std_error)) << "\" y2=\"" << num(sy(p.mean + p.std_error)) << "\" stroke=\""
            << color << "\"/>\n";
        svg << "<circle cx=\"" << num(sx(p.x)) << "\" cy=\"" << num(sy(p.mean)) << "\" r=\"3\" fill=\"" << color
            << "\"/>\n";
      }
      const double lx = ox + kLeft + 10;
      const double ly = kTop + 14 + 16 * legend++;
      svg << "<rect x=\"" << num(lx) << "\" y=\"" << num(ly - 9) << "\" width=\"12\" height=\"10\" fill=\"" << color
          << "\"/>\n";
      svg << "<text x=\"" << num(lx + 18) << "\" y=\"" << num(ly) << "\">" << learner_name(learner) << "</text>\n";
    }
    svg << "</g>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void plot_results(const std::filesystem::path& csv, const std::filesystem::path& svg_path,
                  const PlotOptions& options) {
  std::vector<ResultRow> rows;
  for (auto& p : read_results_csv(csv)) rows.push_back(std::move(p.row));
  if (rows.empty()) throw InputError("results file " + csv.string() + " has no rows");
  const std::string svg = render_svg(rows, options);
  std::ofstream out(svg_path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + svg_path.string());
  out << svg;
  if (!out.flush()) throw IoError("failed writing " + svg_path.string());
}

}  // namespace gfqi
