#pragma once

#include <string>
#include <vector>

#include "ipd/geometry.hpp"

namespace ipd {

/// The six reconstruction metrics at threshold rho. Distances are
/// Euclidean in whatever frame the clouds are given in; prec/recall/f1
/// are percentages in [0, 100].
struct EvalReport {
  double acc = 0.0;     // mean NN distance, prediction -> GT
  double comp = 0.0;    // mean NN distance, GT -> prediction
  double cd = 0.0;      // acc + comp
  double prec = 0.0;    // % of predicted points within rho of GT
  double recall = 0.0;  // % of GT points within rho of prediction
  double f1 = 0.0;      // harmonic mean of prec and recall (0 when both 0)
  double rho = 0.0;
  std::size_t n_pred = 0;
  std::size_t n_gt = 0;
};

EvalReport evaluate(const PointCloud& pred, const PointCloud& gt, double rho);

/// Exhaustive-pairwise oracle; bitwise-identical to evaluate().
EvalReport evaluate_bruteforce(const PointCloud& pred, const PointCloud& gt,
                               double rho);

/// One CSV row per report plus, when more than one, a trailing mean row.
void write_eval_csv(const std::string& path,
                    const std::vector<std::string>& labels,
                    const std::vector<EvalReport>& reports);

/// Table-style console line: Acc, Comp, CD, Prec, Recall, F1.
std::string format_report_row(const std::string& label, const EvalReport& r);

}  // namespace ipd
