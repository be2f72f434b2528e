#include "phaseforge/report.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "phaseforge/errors.hpp"

namespace phaseforge {

namespace fs = std::filesystem;
using nlohmann::json;

double mean_of(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double std_of(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean_of(xs);
  if (!std::isfinite(m)) return 0.0;  // e.g. psnr at zero MSE
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size()));
}

namespace {

std::string num_to_string(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

double num_from_json(const json& j) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw io_error("bad numeric string in report: " + s);
  }
  return j.get<double>();
}

json num_to_json(double v) {
  if (std::isinf(v)) return v > 0 ? json("inf") : json("-inf");
  return json(v);
}

}  // namespace

void write_report_csv(const fs::path& path, const MetricReport& report) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw io_error("cannot write report " + path.string());
  f << "method,phase_source,R,n_acs,R_eff,metric,mean,std,n\n";
  for (const auto& row : report.rows) {
    f << row.method << ',' << row.phase_source << ',' << row.r << ',' << row.n_acs << ','
      << num_to_string(row.r_eff) << ',' << row.metric << ',' << num_to_string(row.mean)
      << ',' << num_to_string(row.std_dev) << ',' << row.n << '\n';
  }
}

void write_report_json(const fs::path& path, const MetricReport& report) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  json rows = json::array();
  for (const auto& row : report.rows) {
    rows.push_back({{"method", row.method},
                    {"phase_source", row.phase_source},
                    {"R", row.r},
                    {"n_acs", row.n_acs},
                    {"R_eff", row.r_eff},
                    {"metric", row.metric},
                    {"mean", num_to_json(row.mean)},
                    {"std", num_to_json(row.std_dev)},
                    {"n", row.n}});
  }
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw io_error("cannot write report " + path.string());
  f << json{{"rows", std::move(rows)}}.dump(2) << '\n';
}

MetricReport read_report_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw io_error("cannot read report " + path.string());
  const json j = json::parse(f);
  MetricReport report;
  for (const auto& row : j.at("rows")) {
    MetricRow r;
    r.method = row.at("method").get<std::string>();
    r.phase_source = row.at("phase_source").get<std::string>();
    r.r = row.at("R").get<int>();
    r.n_acs = row.at("n_acs").get<int>();
    r.r_eff = row.at("R_eff").get<double>();
    r.metric = row.at("metric").get<std::string>();
    r.mean = num_from_json(row.at("mean"));
    r.std_dev = num_from_json(row.at("std"));
    r.n = row.at("n").get<std::size_t>();
    report.rows.push_back(std::move(r));
  }
  return report;
}

MetricReport aggregate_over_seeds(const std::vector<MetricReport>& reports) {
  using Key = std::tuple<std::string, std::string, int, int, std::string>;
  std::map<Key, std::vector<const MetricRow*>> groups;
  std::vector<Key> order;
  for (const auto& rep : reports) {
    for (const auto& row : rep.rows) {
      Key k{row.method, row.phase_source, row.r, row.n_acs, row.metric};
      auto [it, fresh] = groups.try_emplace(k);
      if (fresh) order.push_back(k);
      it->second.push_back(&row);
    }
  }
  MetricReport out;
  for (const auto& k : order) {
    const auto& rows = groups.at(k);
    std::vector<double> means;
    std::size_t n = 0;
    for (const auto* r : rows) {
      means.push_back(r->mean);
      n += r->n;
    }
    MetricRow agg = *rows.front();
    agg.mean = mean_of(means);
    agg.std_dev = std_of(means);
    agg.n = n;
    out.rows.push_back(std::move(agg));
  }
  return out;
}

}  // namespace phaseforge
