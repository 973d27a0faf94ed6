#pragma once

// Contextual variant: E[Y^(j) | x, theta] = x . theta^(j), where theta^(j) is
// the j-th length-k block of theta in R^{kJ}.

#include "impatient/gaussian.hpp"

#include <limits>
#include <span>
#include <vector>

namespace impatient {

class ContextualPrior {
 public:
  ContextualPrior(Vector mu1, Matrix sigma1, Matrix v, int k)
      : mu1_(std::move(mu1)), sigma1_(std::move(sigma1)), v_(std::move(v)), k_(k) {
    if (k_ < 1) throw InvalidArgument("ContextualPrior: k must be >= 1");
    const auto j = v_.rows();
    require_dim(v_.cols() == j && j >= 1, "ContextualPrior: v must be JxJ");
    require_dim(mu1_.size() == k_ * j, "ContextualPrior: mu1 must have length k*J");
    require_dim(sigma1_.rows() == k_ * j && sigma1_.cols() == k_ * j, "ContextualPrior: sigma1 must be kJ x kJ");
    if (Eigen::LLT<Matrix>(sigma1_).info() != Eigen::Success)
      throw DefinitenessError("ContextualPrior: sigma1 is not positive definite", 0);
    if (Eigen::LLT<Matrix>(v_).info() != Eigen::Success)
      throw DefinitenessError("ContextualPrior: v is not positive definite", 0);
  }

  int k() const { return k_; }
  int j_outcomes() const { return static_cast<int>(v_.rows()); }
  const Vector& mu1() const { return mu1_; }
  const Matrix& sigma1() const { return sigma1_; }
  const Matrix& v() const { return v_; }

 private:
  Vector mu1_;
  Matrix sigma1_;
  Matrix v_;
  int k_;
};

/// Block i (length k) is x * ell_i.
inline Vector phi(const Vector& x, const Vector& ell) {
  const auto k = x.size();
  const auto j = ell.size();
  require_dim(k >= 1 && j >= 1, "phi: empty input");
  Vector out(k * j);
  for (Eigen::Index i = 0; i < j; ++i) out.segment(i * k, k) = x * ell(i);
  return out;
}

struct ContextualObservation {
  Vector phi;
  double value = 0.0;
};

/// Precision-form update with rank-one terms phi phi^T and information terms
/// phi * value.
inline Belief contextual_posterior_update(const Belief& belief, std::span<const ContextualObservation> obs) {
  if (obs.empty()) return belief;
  const auto n = belief.dim();
  const Matrix prior_precision = spd_inverse(belief.cov, "belief covariance");
  Matrix precision = prior_precision;
  Vector info = prior_precision * belief.mean;
  for (const auto& o : obs) {
    require_dim(o.phi.size() == n, "contextual_posterior_update: feature has wrong length");
    if (!std::isfinite(o.value)) throw InvalidArgument("contextual_posterior_update: non-finite observation");
    precision.noalias() += o.phi * o.phi.transpose();
    info.noalias() += o.phi * o.value;
  }
  auto llt = robust_llt(precision, "posterior precision");
  Belief out;
  out.cov = symmetrized(llt.solve(Matrix::Identity(n, n)));
  out.mean = llt.solve(info);
  return out;
}

/// Per-outcome means (x . theta^(j))_j.
inline Vector project_context(const Vector& theta, const Vector& x) {
  const auto k = x.size();
  require_dim(k >= 1 && theta.size() % k == 0, "project_context: theta length is not a multiple of k");
  const auto j = theta.size() / k;
  Vector out(j);
  for (Eigen::Index i = 0; i < j; ++i) out(i) = x.dot(theta.segment(i * k, k));
  return out;
}

/// Draws theta' per arm in order and returns the index of the arm maximizing
/// R(x . theta'); ties go to the lowest index.
inline std::size_t contextual_ts_select(std::span<const Belief> beliefs, const Vector& x, const RewardSpec& reward,
                                        Rng& rng) {
  if (beliefs.empty()) throw InvalidArgument("contextual_ts_select: no arms");
  std::size_t best = 0;
  double best_value = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < beliefs.size(); ++a) {
    const double v = reward(project_context(sample_belief(beliefs[a], rng), x));
    if (v > best_value) {
      best_value = v;
      best = a;
    }
  }
  return best;
}

}  // namespace impatient
