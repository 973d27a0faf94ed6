#pragma once

// Value of progressive feedback, regret accounting and the regret-ratio
// diagnostic.

#include "impatient/csv.hpp"
#include "impatient/environments.hpp"
#include "impatient/gaussian.hpp"

#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace impatient {

// ---------------------------------------------------------------------------
// VoPF

struct VopfQuery {
  PriorParams prior;
  RewardSpec reward;
  DelaySchedule delays;
  int m = 1;
  int t = 1;  // 1-based decision time
};

/// r1^T (Sigma1^{-1} + sum_j n_j ell_j ell_j^T)^{-1} r1, where n_j is the
/// number of j-th outcomes observed.
inline double reward_variance_given_counts(const PriorParams& prior, const CholeskyFactors& factors,
                                           const RewardSpec& reward, const Vector& counts) {
  Matrix precision = spd_inverse(prior.sigma1(), "prior covariance");
  const Matrix w = counts.cwiseMax(0.0).cwiseSqrt().asDiagonal() * factors.l_inv;
  precision.noalias() += w.transpose() * w;
  auto llt = robust_llt(precision, "posterior precision");
  return reward.r1.dot(llt.solve(reward.r1));
}

/// Half the log ratio of the reward variance given only fully revealed
/// batches (t' < t - d_max) to the reward variance given everything visible
/// before t, both for an arm that received m users in every earlier batch.
inline double vopf_general(const VopfQuery& q) {
  const int j = q.prior.dim();
  require_dim(q.reward.dim() == j && q.delays.size() == j, "vopf_general: J disagrees across inputs");
  if (q.t < 1) throw InvalidArgument("vopf_general: t must be >= 1");
  if (q.m < 1) throw InvalidArgument("vopf_general: m must be >= 1");
  const auto factors = whiten_with_jitter(q.prior.v());
  const int d_max = q.delays.d_max();
  Vector full(j), delayed(j);
  for (int k = 0; k < j; ++k) {
    // batches t' in 1..t-1 with t > t' + d_k
    full(k) = static_cast<double>(q.m) * std::max(0, q.t - 1 - q.delays[k]);
    delayed(k) = static_cast<double>(q.m) * std::max(0, q.t - 1 - d_max);
  }
  const double var_delayed = reward_variance_given_counts(q.prior, factors, q.reward, delayed);
  const double var_full = reward_variance_given_counts(q.prior, factors, q.reward, full);
  return std::max(0.0, 0.5 * std::log(var_delayed / var_full));
}

/// Closed form for two outcomes with correlation rho, reward variance
/// sigma_r2, batch size m.
inline double vopf_two_outcome(double rho, double sigma_r2, int m, int t, int d_max) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw InvalidArgument("vopf_two_outcome: rho must lie in [0, 1]");
  if (t < d_max) throw InvalidArgument("vopf_two_outcome: requires t >= d_max");
  const double base = sigma_r2 + static_cast<double>(m) * (t - d_max) + 1.0;
  return 0.5 * std::log(base / (base - rho * rho));
}

// ---------------------------------------------------------------------------
// Regret

/// (1/m) sum_u [R(Y_u(A*)) - R(Y_u(A_u))].
inline double instantaneous_regret(std::span<const double> reward_optimal, std::span<const double> reward_assigned) {
  require_dim(reward_optimal.size() == reward_assigned.size(), "instantaneous_regret: length mismatch");
  if (reward_optimal.empty()) throw InvalidArgument("instantaneous_regret: empty batch");
  double total = 0.0;
  for (std::size_t u = 0; u < reward_optimal.size(); ++u) total += reward_optimal[u] - reward_assigned[u];
  return total / static_cast<double>(reward_optimal.size());
}

struct RegretRecord {
  std::string policy;
  int replication = 0;
  std::vector<double> delta;  // index t-1

  std::vector<double> cumulative() const {
    std::vector<double> out(delta.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < delta.size(); ++i) out[i] = acc += delta[i];
    return out;
  }
};

struct CurveStats {
  std::vector<double> mean;
  std::vector<double> stderr_;
};

/// Mean and standard error (sample sd / sqrt(n)) per batch.
inline CurveStats curve_stats(const std::vector<std::vector<double>>& curves) {
  if (curves.empty()) throw InvalidArgument("curve_stats: no curves");
  const std::size_t len = curves.front().size();
  for (const auto& c : curves) require_dim(c.size() == len, "curve_stats: curves differ in length");
  const double n = static_cast<double>(curves.size());
  CurveStats out{std::vector<double>(len, 0.0), std::vector<double>(len, 0.0)};
  for (std::size_t t = 0; t < len; ++t) {
    double s = 0.0;
    for (const auto& c : curves) s += c[t];
    const double mean = s / n;
    double ss = 0.0;
    for (const auto& c : curves) ss += (c[t] - mean) * (c[t] - mean);
    out.mean[t] = mean;
    out.stderr_[t] = curves.size() > 1 ? std::sqrt(ss / (n - 1.0)) / std::sqrt(n) : 0.0;
  }
  return out;
}

inline std::vector<std::vector<double>> deltas_of(std::span<const RegretRecord> runs) {
  std::vector<std::vector<double>> out;
  for (const auto& r : runs) out.push_back(r.delta);
  return out;
}

inline std::vector<std::vector<double>> cumulatives_of(std::span<const RegretRecord> runs) {
  std::vector<std::vector<double>> out;
  for (const auto& r : runs) out.push_back(r.cumulative());
  return out;
}

/// log(mean delayed regret / mean progressive regret) per batch; missing where
/// either mean is not positive.
inline std::vector<std::optional<double>> regret_ratio_log(std::span<const RegretRecord> progressive,
                                                           std::span<const RegretRecord> delayed) {
  if (progressive.empty() || delayed.empty()) throw InvalidArgument("regret_ratio_log: empty run set");
  const auto p = curve_stats(deltas_of(progressive)).mean;
  const auto d = curve_stats(deltas_of(delayed)).mean;
  if (p.size() != d.size()) throw DimensionError("regret_ratio_log: batch grids differ");
  std::vector<std::optional<double>> out(p.size());
  for (std::size_t t = 0; t < p.size(); ++t)
    if (p[t] > 0.0 && d[t] > 0.0) out[t] = std::log(d[t] / p[t]);
  return out;
}

// ---------------------------------------------------------------------------
// CSV writers

inline void write_regret_csv(std::ostream& out, std::span<const RegretRecord> runs) {
  out << "policy,replication,t,delta,cumulative\n";
  for (const auto& r : runs) {
    const auto cum = r.cumulative();
    for (std::size_t t = 0; t < r.delta.size(); ++t)
      out << r.policy << ',' << r.replication << ',' << t + 1 << ',' << csv::format_double(r.delta[t]) << ','
          << csv::format_double(cum[t]) << '\n';
  }
}

struct VopfRow {
  std::string preset;
  int m = 0;
  int t = 0;
  double vopf = 0.0;
};

inline void write_vopf_csv(std::ostream& out, std::span<const VopfRow> rows) {
  out << "preset,m,t,vopf_nats\n";
  for (const auto& r : rows) out << r.preset << ',' << r.m << ',' << r.t << ',' << csv::format_double(r.vopf) << '\n';
}

inline void write_ratio_csv(std::ostream& out, const std::string& preset,
                            const std::vector<std::optional<double>>& ratio) {
  out << "preset,t,log_ratio\n";
  for (std::size_t t = 0; t < ratio.size(); ++t) {
    out << preset << ',' << t + 1 << ',';
    if (ratio[t]) out << csv::format_double(*ratio[t]);
    out << '\n';
  }
}

}  // namespace impatient
