#pragma once

// Multivariate-Gaussian beliefs over the latent mean-outcome vector, Cholesky
// whitening of within-user noise, and exact posterior updates in precision
// form.
//
// Indices are 0-based throughout the C++ API: outcome j here is outcome j+1
// in the usual 1-based notation.

#include "impatient/rng.hpp"
#include "impatient/types.hpp"

#include <cmath>
#include <span>
#include <sstream>
#include <vector>

namespace impatient {

// ---------------------------------------------------------------------------
// Matrix helpers

inline bool is_symmetric(const Matrix& m, double rel_tol) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

inline Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

/// Diagonal jitter schedule used whenever a covariance fails to factorize:
/// 1e-10 * trace/J on the first retry, ten times more on each of the next two.
struct JitterPolicy {
  static constexpr double kInitialScale = 1e-10;
  static constexpr double kGrowth = 10.0;
  static constexpr int kRetries = 3;

  static double base(const Matrix& m) {
    const double avg = m.trace() / static_cast<double>(m.rows());
    return avg > 0.0 ? avg : 1.0;
  }
};

/// LLT factorization with the jitter repair schedule. Throws NumericalError
/// once the retries are exhausted.
inline Eigen::LLT<Matrix> robust_llt(const Matrix& m, const char* what = "matrix") {
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() == Eigen::Success) return llt;
  double jitter = JitterPolicy::kInitialScale * JitterPolicy::base(m);
  for (int attempt = 0; attempt < JitterPolicy::kRetries; ++attempt) {
    Matrix repaired = m;
    repaired.diagonal().array() += jitter;
    llt.compute(repaired);
    if (llt.info() == Eigen::Success) return llt;
    jitter *= JitterPolicy::kGrowth;
  }
  std::ostringstream msg;
  msg << what << " is numerically singular or indefinite after " << JitterPolicy::kRetries
      << " jitter retries; consider adding diagonal jitter or regularizing the prior";
  throw NumericalError(msg.str());
}

/// Adds the smallest jitter from the schedule that makes `m` factorize.
inline Matrix jitter_repaired(const Matrix& m) {
  if (Eigen::LLT<Matrix>(m).info() == Eigen::Success) return m;
  double jitter = JitterPolicy::kInitialScale * JitterPolicy::base(m);
  for (int attempt = 0; attempt < JitterPolicy::kRetries; ++attempt) {
    Matrix repaired = m;
    repaired.diagonal().array() += jitter;
    if (Eigen::LLT<Matrix>(repaired).info() == Eigen::Success) return repaired;
    jitter *= JitterPolicy::kGrowth;
  }
  throw NumericalError("matrix could not be repaired to positive definite by diagonal jitter");
}

inline Matrix spd_inverse(const Matrix& m, const char* what = "matrix") {
  auto llt = robust_llt(m, what);
  return symmetrized(llt.solve(Matrix::Identity(m.rows(), m.cols())));
}

// ---------------------------------------------------------------------------
// Domain types

/// Hyperparameters of one feature class: theta ~ N(mu1, sigma1), and a
/// single user's outcome vector Y | theta ~ N(theta, v).
class PriorParams {
 public:
  PriorParams(Vector mu1, Matrix sigma1, Matrix v)
      : mu1_(std::move(mu1)), sigma1_(std::move(sigma1)), v_(std::move(v)) {
    const auto j = mu1_.size();
    require_dim(j >= 1, "PriorParams: empty mean");
    require_dim(sigma1_.rows() == j && sigma1_.cols() == j, "PriorParams: sigma1 must be JxJ");
    require_dim(v_.rows() == j && v_.cols() == j, "PriorParams: v must be JxJ");
    check_spd(sigma1_, "sigma1");
    check_spd(v_, "v");
  }

  /// Applies the jitter schedule to covariances that are only PSD (e.g. fitted
  /// from data with a constant coordinate) before validating.
  static PriorParams repaired(Vector mu1, const Matrix& sigma1, const Matrix& v) {
    return PriorParams(std::move(mu1), jitter_repaired(symmetrized(sigma1)),
                       jitter_repaired(symmetrized(v)));
  }

  int dim() const { return static_cast<int>(mu1_.size()); }
  const Vector& mu1() const { return mu1_; }
  const Matrix& sigma1() const { return sigma1_; }
  const Matrix& v() const { return v_; }

  /// Restriction to the first `k` outcomes (marginal of a Gaussian).
  PriorParams leading(int k) const {
    require_dim(k >= 1 && k <= dim(), "PriorParams::leading: k out of range");
    return PriorParams(mu1_.head(k), sigma1_.topLeftCorner(k, k), v_.topLeftCorner(k, k));
  }

 private:
  static void check_spd(const Matrix& m, const char* name) {
    if (!is_symmetric(m, 1e-12))
      throw InvalidArgument(std::string("PriorParams: ") + name + " is not symmetric");
    if (Eigen::LLT<Matrix>(m).info() != Eigen::Success)
      throw DefinitenessError(std::string("PriorParams: ") + name + " is not positive definite", 0);
  }

  Vector mu1_;
  Matrix sigma1_;
  Matrix v_;
};

/// V = L L^T together with the rows of L^{-1}.
struct CholeskyFactors {
  Matrix l;
  Matrix l_inv;

  int dim() const { return static_cast<int>(l.rows()); }
  /// Row j of L^{-1}; entries past j are zero.
  Vector row(int j) const { return l_inv.row(j).transpose(); }
};

struct Belief {
  Vector mean;
  Matrix cov;

  static Belief from_prior(const PriorParams& p) { return {p.mu1(), p.sigma1()}; }
  int dim() const { return static_cast<int>(mean.size()); }
};

/// Whitened outcome: value = ell_j . [Y_1..Y_j, 0...].
struct WhitenedObservation {
  int j = 0;
  double value = 0.0;
};

/// An observation paired with the whitening row that produced it.
struct Observation {
  WhitenedObservation obs;
  Vector ell;
};

/// Affine reward R(y) = r0 + r1 . y.
struct RewardSpec {
  double r0 = 0.0;
  Vector r1;

  RewardSpec() = default;
  RewardSpec(double r0, Vector r1) : r0(r0), r1(std::move(r1)) {
    if (this->r1.size() == 0 || this->r1.isZero(0.0))
      throw InvalidArgument("RewardSpec: r1 needs at least one nonzero entry");
  }

  int dim() const { return static_cast<int>(r1.size()); }
  double operator()(const Vector& y) const { return r0 + r1.dot(y); }
};

struct RewardMoments {
  double mean = 0.0;
  double var = 0.0;
};

// ---------------------------------------------------------------------------
// Operations

/// Cholesky factorization of a symmetric positive definite V, plus L^{-1}.
/// A non-positive pivot raises DefinitenessError naming the leading minor.
inline CholeskyFactors cholesky_whiten(const Matrix& v) {
  const Eigen::Index n = v.rows();
  require_dim(n >= 1 && v.cols() == n, "cholesky_whiten: V must be square and non-empty");
  if (!is_symmetric(v, 1e-12)) throw InvalidArgument("cholesky_whiten: V is not symmetric");

  Matrix l = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double pivot = v(j, j) - l.row(j).head(j).squaredNorm();
    if (!(pivot > 0.0) || !std::isfinite(pivot)) {
      std::ostringstream msg;
      msg << "cholesky_whiten: V is not positive definite (leading minor " << (j + 1)
          << " of " << n << " has non-positive pivot " << pivot << ")";
      throw DefinitenessError(msg.str(), static_cast<int>(j + 1));
    }
    l(j, j) = std::sqrt(pivot);
    for (Eigen::Index i = j + 1; i < n; ++i) {
      l(i, j) = (v(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / l(j, j);
    }
  }
  Matrix l_inv = l.triangularView<Eigen::Lower>().solve(Matrix::Identity(n, n));
  // Exact zeros above the diagonal.
  l_inv.triangularView<Eigen::StrictlyUpper>().setZero();
  return {std::move(l), std::move(l_inv)};
}

/// cholesky_whiten with the jitter schedule applied on failure.
inline CholeskyFactors whiten_with_jitter(const Matrix& v) {
  try {
    return cholesky_whiten(v);
  } catch (const DefinitenessError&) {
    double jitter = JitterPolicy::kInitialScale * JitterPolicy::base(v);
    for (int attempt = 0; attempt < JitterPolicy::kRetries; ++attempt) {
      Matrix repaired = v;
      repaired.diagonal().array() += jitter;
      try {
        return cholesky_whiten(repaired);
      } catch (const DefinitenessError&) {
        jitter *= JitterPolicy::kGrowth;
      }
    }
    throw;
  }
}

/// Whitened value of outcome j from the visible prefix Y_0..Y_j.
inline WhitenedObservation transform_outcome(std::span<const double> prefix,
                                             const CholeskyFactors& factors, int j) {
  if (j < 0 || j >= factors.dim())
    throw DimensionError("transform_outcome: outcome index out of range");
  if (static_cast<int>(prefix.size()) != j + 1) {
    std::ostringstream msg;
    msg << "transform_outcome: outcome " << j << " needs a prefix of length " << (j + 1)
        << ", got " << prefix.size();
    throw DimensionError(msg.str());
  }
  double value = 0.0;
  for (int i = 0; i <= j; ++i) value += factors.l_inv(j, i) * prefix[static_cast<std::size_t>(i)];
  return {j, value};
}

/// Accumulated sufficient statistics of a set of whitened observations:
/// sum of ell ell^T and sum of ell * value.
struct InformationIncrement {
  Matrix precision;
  Vector info;

  explicit InformationIncrement(int dim)
      : precision(Matrix::Zero(dim, dim)), info(Vector::Zero(dim)) {}

  void add(const Vector& ell, double value) {
    precision.noalias() += ell * ell.transpose();
    info.noalias() += ell * value;
  }

  /// `count` observations of the same row with values summing to `value_sum`.
  void add_repeated(const Vector& ell, double count, double value_sum) {
    precision.noalias() += count * (ell * ell.transpose());
    info.noalias() += ell * value_sum;
  }

  bool empty() const { return precision.isZero(0.0) && info.isZero(0.0); }
};

/// Posterior of a Gaussian belief after absorbing an information increment:
/// cov' = (cov^{-1} + dP)^{-1}, mean' = cov' (cov^{-1} mean + db).
inline Belief apply_information(const Belief& belief, const InformationIncrement& inc) {
  require_dim(inc.precision.rows() == belief.dim() && inc.info.size() == belief.dim(),
              "apply_information: dimension mismatch");
  if (inc.empty()) return belief;
  const Matrix prior_precision = spd_inverse(belief.cov, "belief covariance");
  const Matrix post_precision = prior_precision + inc.precision;
  auto llt = robust_llt(post_precision, "posterior precision");
  Belief out;
  out.cov = symmetrized(llt.solve(Matrix::Identity(belief.dim(), belief.dim())));
  out.mean = llt.solve(prior_precision * belief.mean + inc.info);
  return out;
}

inline Belief posterior_update(const Belief& belief, std::span<const Observation> observations) {
  InformationIncrement inc(belief.dim());
  for (const auto& o : observations) {
    require_dim(o.ell.size() == belief.dim(), "posterior_update: whitening row has wrong length");
    if (!std::isfinite(o.obs.value)) throw InvalidArgument("posterior_update: non-finite observation");
    inc.add(o.ell, o.obs.value);
  }
  return apply_information(belief, inc);
}

/// A matrix A with A A^T = cov: the Cholesky factor, or an eigen square root
/// with clamped eigenvalues when cov is singular.
inline Matrix psd_factor(const Matrix& cov) {
  if (cov.isZero(0.0)) return Matrix::Zero(cov.rows(), cov.cols());
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  // Singular PSD input: a jittered Cholesky factor would perturb draws by
  // O(sqrt(jitter)), the eigen square root is exact.
  Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrized(cov));
  if (eig.info() != Eigen::Success) throw NumericalError("psd_factor: eigendecomposition failed");
  const Vector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal();
}

/// One draw theta' ~ N(mean, cov).
inline Vector sample_belief(const Belief& belief, Rng& rng) {
  const Matrix a = psd_factor(belief.cov);
  Vector z(belief.dim());
  fill_standard_normal(z, rng);
  return belief.mean + a * z;
}

inline RewardMoments reward_belief(const Belief& belief, const RewardSpec& reward) {
  require_dim(reward.dim() == belief.dim(), "reward_belief: reward and belief dimensions differ");
  const double var = reward.r1.dot(belief.cov * reward.r1);
  return {reward.r0 + reward.r1.dot(belief.mean), std::max(var, 0.0)};
}

}  // namespace impatient
