#include "ipd/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "ipd/store.hpp"

namespace ipd {

namespace {

struct Directional {
  double mean_dist = 0.0;
  double within_pct = 0.0;
};

/// Mean NN distance and %-within-rho from `from` to `to`, with the given
/// per-query distance function. Accumulation order is the cloud order, so
/// the index-backed and brute-force paths agree bitwise.
template <class DistFn>
Directional directional(const PointCloud& from, std::size_t n_from,
                        double rho, DistFn&& nn_dist) {
  double sum = 0.0;
  std::size_t within = 0;
  for (std::size_t i = 0; i < n_from; ++i) {
    const double d = nn_dist(from.points[i]);
    sum += d;
    if (d <= rho) ++within;
  }
  return {sum / static_cast<double>(n_from),
          100.0 * static_cast<double>(within) / static_cast<double>(n_from)};
}

EvalReport combine(const Directional& fwd, const Directional& bwd, double rho,
                   std::size_t n_pred, std::size_t n_gt) {
  EvalReport r;
  r.acc = fwd.mean_dist;
  r.comp = bwd.mean_dist;
  r.cd = r.acc + r.comp;
  r.prec = fwd.within_pct;
  r.recall = bwd.within_pct;
  r.f1 = (r.prec + r.recall) > 0.0
             ? 2.0 * r.prec * r.recall / (r.prec + r.recall)
             : 0.0;
  r.rho = rho;
  r.n_pred = n_pred;
  r.n_gt = n_gt;
  return r;
}

void check_inputs(const PointCloud& pred, const PointCloud& gt, double rho) {
  if (pred.empty() || gt.empty())
    throw ContractError("evaluate requires non-empty clouds");
  if (!(rho > 0.0)) throw ParamError("rho must be positive");
}

double brute_nn(const Vec3& q, const PointCloud& ref) {
  double best = std::numeric_limits<double>::max();
  for (const Vec3& p : ref.points) {
    const double dx = q.x - p.x;
    const double dy = q.y - p.y;
    const double dz = q.z - p.z;
    const double d = dx * dx + dy * dy + dz * dz;
    if (d < best) best = d;
  }
  return std::sqrt(best);
}

}  // namespace

EvalReport evaluate(const PointCloud& pred, const PointCloud& gt, double rho) {
  check_inputs(pred, gt, rho);
  const NnIndex gt_index(gt);
  const NnIndex pred_index(pred);
  const auto fwd = directional(pred, pred.size(), rho, [&](const Vec3& q) {
    return gt_index.nearest_distance(q);
  });
  const auto bwd = directional(gt, gt.size(), rho, [&](const Vec3& q) {
    return pred_index.nearest_distance(q);
  });
  return combine(fwd, bwd, rho, pred.size(), gt.size());
}

EvalReport evaluate_bruteforce(const PointCloud& pred, const PointCloud& gt,
                               double rho) {
  check_inputs(pred, gt, rho);
  const auto fwd = directional(
      pred, pred.size(), rho, [&](const Vec3& q) { return brute_nn(q, gt); });
  const auto bwd = directional(
      gt, gt.size(), rho, [&](const Vec3& q) { return brute_nn(q, pred); });
  return combine(fwd, bwd, rho, pred.size(), gt.size());
}

namespace {

std::string full(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_eval_csv(const std::string& path,
                    const std::vector<std::string>& labels,
                    const std::vector<EvalReport>& reports) {
  if (labels.size() != reports.size())
    throw ContractError("write_eval_csv: label/report count mismatch");
  std::vector<std::vector<std::string>> rows;
  auto emit = [&](const std::string& label, const EvalReport& r) {
    rows.push_back({label, full(r.acc), full(r.comp), full(r.cd), full(r.prec),
                    full(r.recall), full(r.f1), full(r.rho),
                    std::to_string(r.n_pred), std::to_string(r.n_gt)});
  };
  for (std::size_t i = 0; i < reports.size(); ++i) emit(labels[i], reports[i]);
  if (reports.size() > 1) {
    EvalReport mean;
    for (const EvalReport& r : reports) {
      mean.acc += r.acc;
      mean.comp += r.comp;
      mean.cd += r.cd;
      mean.prec += r.prec;
      mean.recall += r.recall;
      mean.f1 += r.f1;
    }
    const double n = static_cast<double>(reports.size());
    mean.acc /= n; mean.comp /= n; mean.cd /= n;
    mean.prec /= n; mean.recall /= n; mean.f1 /= n;
    mean.rho = reports.front().rho;
    emit("mean", mean);
  }
  write_csv(path,
            {"label", "acc", "comp", "cd", "prec", "recall", "f1", "rho",
             "n_pred", "n_gt"},
            rows);
}

std::string format_report_row(const std::string& label, const EvalReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-16s %7.4f %7.4f %7.4f %7.1f %8.1f %7.1f",
                label.c_str(), r.acc, r.comp, r.cd, r.prec, r.recall, r.f1);
  return buf;
}

}  // namespace ipd
