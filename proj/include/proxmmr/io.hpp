#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "proxmmr/eval.hpp"
#include "proxmmr/scm.hpp"

namespace proxmmr::io {

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);
/// Strict parse of a whole field; throws ParseError.
double parse_double(const std::string& text);

/// Header plus one row per sample. `metadata` is written first as a single
/// `# ...` comment line when nonempty.
void write_dataset_csv(std::ostream& out, const scm::Dataset& data, scm::Experiment experiment,
                       const std::string& metadata = {});

/// Columns (a_value | a_index), ey_a, mc_se.
void write_truth_csv(std::ostream& out, const scm::GroundTruth& truth, scm::Experiment experiment,
                     const std::string& metadata = {});

/// method,n_train,var_z,var_w,replicate,seed,c_mse,wall_s,status
void write_records_csv(std::ostream& out, std::span<const eval::EvalRecord> records);
/// Inverse of write_records_csv (curves are not stored). Throws ParseError
/// naming the offending line.
std::vector<eval::EvalRecord> read_records_csv(std::istream& in);

/// method,n_train,var_z,var_w,median,iqr,count,failures
void write_summary_csv(std::ostream& out, std::span<const eval::SummaryRow> rows);

/// Standalone SVG with one box per group that has successful records: median
/// line, quartile box, whiskers at the extremes. Empty groups are left out.
std::string boxplot_svg(std::span<const eval::EvalRecord> records);

}  // namespace proxmmr::io
