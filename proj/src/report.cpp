#include "sam/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "sam/error.hpp"

namespace sam::report {

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  return f;
}

// Fixed-precision formatting keeps re-runs byte-identical.
std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0;
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0;
  double m = mean(v), s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

void write_matrix_csv(const std::string& path, const cl::RunReport& r) {
  auto f = open_out(path);
  f << "stage,task,protocol,accuracy\n";
  for (std::size_t j = 0; j < r.agnostic.size(); ++j)
    for (std::size_t i = 0; i < r.agnostic[j].size(); ++i) {
      f << j << "," << i << ",agnostic," << num(r.agnostic[j][i]) << "\n";
      f << j << "," << i << ",conditioned," << num(r.conditioned[j][i]) << "\n";
    }
}

void write_summary_csv(const std::string& path, const std::vector<SummaryRow>& rows) {
  auto f = open_out(path);
  f << "label,protocol,mean,std,n_seeds\n";
  for (const auto& r : rows) {
    f << r.label << "," << r.protocol << "," << num(mean(r.per_seed)) << ",";
    if (r.per_seed.size() > 1) f << num(stddev(r.per_seed));
    f << "," << r.per_seed.size() << "\n";
  }
}

void write_curves_csv(const std::string& path,
                      const std::vector<std::pair<std::uint64_t, cl::RunReport>>& runs) {
  auto f = open_out(path);
  f << "seed,stage,protocol,average\n";
  for (const auto& [seed, r] : runs)
    for (std::size_t j = 0; j < r.agnostic.size(); ++j) {
      f << seed << "," << j << ",agnostic,"
        << num(r.average(cl::Protocol::Agnostic, static_cast<int>(j))) << "\n";
      f << seed << "," << j << ",conditioned,"
        << num(r.average(cl::Protocol::Conditioned, static_cast<int>(j))) << "\n";
    }
}

void write_fwt_csv(const std::string& path, const std::vector<FwtRow>& rows) {
  auto f = open_out(path);
  f << "source,shared_blocks,task,accuracy\n";
  for (const auto& r : rows)
    f << r.source << "," << r.shared_blocks << "," << r.task << "," << num(r.accuracy)
      << "\n";
}

void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows) {
  auto f = open_out(path);
  f << "benchmark,attention,agnostic_mean,conditioned_mean\n";
  for (const auto& r : rows)
    f << r.benchmark << "," << r.attention << "," << num(r.agnostic_mean) << ","
      << num(r.conditioned_mean) << "\n";
}

int csv_rows(const std::string& path, const std::string& expected_header) {
  std::ifstream f(path);
  if (!f) throw IoError("report file missing: " + path);
  std::string line;
  if (!std::getline(f, line)) throw IoError("report file empty: " + path);
  if (line.rfind(expected_header, 0) != 0)
    throw IoError("unexpected header in " + path + ": \"" + line + "\"");
  int n = 0;
  while (std::getline(f, line))
    if (!line.empty()) ++n;
  return n;
}

}  // namespace sam::report
