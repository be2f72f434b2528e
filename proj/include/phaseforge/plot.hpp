#ifndef PHASEFORGE_PLOT_HPP
#define PHASEFORGE_PLOT_HPP

#include <filesystem>
#include <string>
#include <vector>

namespace phaseforge {

struct BarSeries {
  std::string name;
  std::vector<double> values;  // one bar per group
};

// Grouped bar chart (one group per x label, one bar per series) written as an
// 8-bit RGB PNG. Non-finite values are drawn as empty slots.
void write_bar_chart_png(const std::filesystem::path& path, const std::string& title,
                         const std::vector<std::string>& group_labels,
                         const std::vector<BarSeries>& series);

}  // namespace phaseforge

#endif
