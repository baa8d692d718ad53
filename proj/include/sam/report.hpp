#pragma once

#include <string>
#include <vector>

#include "sam/continual.hpp"

namespace sam::report {

double mean(const std::vector<double>& v);
// Sample standard deviation (n - 1); NaN-free: returns 0 for n < 2.
double stddev(const std::vector<double>& v);

// stage,task,protocol,accuracy rows for one seed's full run.
void write_matrix_csv(const std::string& path, const cl::RunReport& r);

struct SummaryRow {
  std::string label;     // strategy / configuration name
  std::string protocol;  // agnostic | conditioned
  std::vector<double> per_seed;
};

// label,protocol,mean,std,n_seeds plus one per-seed column set; the std cell
// is left empty for single-seed rows.
void write_summary_csv(const std::string& path, const std::vector<SummaryRow>& rows);

// seed,stage,protocol,average rows (the gradual forgetting curves).
void write_curves_csv(const std::string& path,
                      const std::vector<std::pair<std::uint64_t, cl::RunReport>>& runs);

struct FwtRow {
  std::string source;  // sam | standard
  int shared_blocks = 0;
  int task = 0;
  double accuracy = 0;
};
void write_fwt_csv(const std::string& path, const std::vector<FwtRow>& rows);

struct AblationRow {
  std::string benchmark;
  std::string attention;
  double agnostic_mean = 0;
  double conditioned_mean = 0;
};
void write_ablation_csv(const std::string& path, const std::vector<AblationRow>& rows);

// Line count excluding the header; throws IoError if the file is missing or
// its header does not start with `expected_header`.
int csv_rows(const std::string& path, const std::string& expected_header);

}  // namespace sam::report
