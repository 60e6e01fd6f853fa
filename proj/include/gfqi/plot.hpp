#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "gfqi/experiment.hpp"

namespace gfqi {

enum class PlotMetric { regret_average, regret_discounted };

struct PlotOptions {
  PlotMetric metric = PlotMetric::regret_average;
  std::string title;
};

struct SeriesPoint {
  double x = 0.0;
  double mean = 0.0;
  double std_error = 0.0;
  int count = 0;
};

/// Per (axis, learner) series of the mean metric and its standard error over
/// replications; failed rows are skipped.
std::map<SweepAxis, std::map<Learner, std::vector<SeriesPoint>>> summarize_results(const std::vector<ResultRow>& rows,
                                                                                   PlotMetric metric);

/// Static SVG with one panel per axis. Throws InputError when there is
/// nothing to plot.
std::string render_svg(const std::vector<ResultRow>& rows, const PlotOptions& options = {});

/// Reads a results CSV and writes the SVG. Nothing is written on error.
void plot_results(const std::filesystem::path& csv, const std::filesystem::path& svg,
                  const PlotOptions& options = {});

}  // namespace gfqi
