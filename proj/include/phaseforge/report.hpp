#ifndef PHASEFORGE_REPORT_HPP
#define PHASEFORGE_REPORT_HPP

#include <filesystem>
#include <string>
#include <vector>

namespace phaseforge {

// One aggregate line of an evaluation: method x mask configuration x metric.
struct MetricRow {
  std::string method;        // varnet | zero_filled | frechet
  std::string phase_source;  // gt | smooth | sbdm | "" for baselines
  int r = 0;
  int n_acs = 0;
  double r_eff = 0.0;
  std::string metric;  // nrmse | psnr | ssim | frechet
  double mean = 0.0;
  double std_dev = 0.0;
  std::size_t n = 0;
};

struct MetricReport {
  std::vector<MetricRow> rows;
};

// CSV columns: method,phase_source,R,n_acs,R_eff,metric,mean,std,n.
// Infinities serialize as "inf".
void write_report_csv(const std::filesystem::path& path, const MetricReport& report);
void write_report_json(const std::filesystem::path& path, const MetricReport& report);
MetricReport read_report_json(const std::filesystem::path& path);

// Merge per-seed reports: the aggregate mean of a row group is the arithmetic
// mean of the per-seed means, std is the spread of per-seed means.
MetricReport aggregate_over_seeds(const std::vector<MetricReport>& reports);

double mean_of(const std::vector<double>& xs);
double std_of(const std::vector<double>& xs);

}  // namespace phaseforge

#endif
