#pragma once

#include "impatient.hpp"

#include <random>
#include <vector>

namespace testing_support {

using impatient::Matrix;
using impatient::Rng;
using impatient::Vector;

/// A A^T + shift I with A standard normal.
inline Matrix random_spd(int n, Rng& rng, double shift = 0.5) {
  Matrix a(n, n);
  impatient::fill_standard_normal(a, rng);
  Matrix s = a * a.transpose() / n;
  s.diagonal().array() += shift;
  return 0.5 * (s + s.transpose());
}

inline Vector random_vector(int n, Rng& rng) {
  Vector v(n);
  impatient::fill_standard_normal(v, rng);
  return v;
}

/// Observed-prefix mask of length n with a uniformly random prefix length in
/// [0, n].
inline std::vector<bool> random_prefix_mask(int n, Rng& rng) {
  std::uniform_int_distribution<int> len(0, n);
  const int k = len(rng);
  std::vector<bool> m(static_cast<std::size_t>(n), false);
  for (int j = 0; j < k; ++j) m[static_cast<std::size_t>(j)] = true;
  return m;
}

inline double max_abs(const Matrix& a) { return a.size() ? a.cwiseAbs().maxCoeff() : 0.0; }

/// Chained per-user posterior_update over observed prefixes.
inline impatient::Belief chained_update(const impatient::PriorParams& prior,
                                        const std::vector<impatient::MaskedOutcome>& users) {
  using namespace impatient;
  const auto factors = cholesky_whiten(prior.v());
  Belief b = Belief::from_prior(prior);
  for (const auto& u : users) {
    std::vector<Observation> obs;
    std::vector<double> prefix;
    for (int j = 0; j < prior.dim(); ++j) {
      if (!u.observed[static_cast<std::size_t>(j)]) break;
      prefix.push_back(u.y(j));
      obs.push_back({transform_outcome(prefix, factors, j), factors.row(j)});
    }
    b = posterior_update(b, obs);
  }
  return b;
}

struct ContextUser {
  Vector x;
  Vector y;
  int observed;  // prefix length
};

/// Whitened contextual observations for each user's observed prefix.
inline std::vector<impatient::ContextualObservation> contextual_obs(const impatient::CholeskyFactors& f,
                                                                    const std::vector<ContextUser>& users) {
  std::vector<impatient::ContextualObservation> out;
  for (const auto& u : users)
    for (int j = 0; j < u.observed; ++j) {
      const Vector ell = f.row(j);
      out.push_back({impatient::phi(u.x, ell), ell.dot(u.y)});
    }
  return out;
}

/// Joint-Gaussian conditioning of theta on the raw observed outcomes, with
/// E[Y_j] = x . theta^(j) and per-user noise V.
inline impatient::Belief contextual_oracle(const impatient::ContextualPrior& p,
                                          const std::vector<ContextUser>& users) {
  const int k = p.k();
  const int j = p.j_outcomes();
  int rows = 0;
  for (const auto& u : users) rows += u.observed;
  if (rows == 0) return {p.mu1(), p.sigma1()};
  Matrix h = Matrix::Zero(rows, k * j);
  Matrix noise = Matrix::Zero(rows, rows);
  Vector y(rows);
  int r = 0;
  for (const auto& u : users) {
    for (int i = 0; i < u.observed; ++i) {
      h.block(r + i, i * k, 1, k) = u.x.transpose();
      y(r + i) = u.y(i);
    }
    noise.block(r, r, u.observed, u.observed) = p.v().topLeftCorner(u.observed, u.observed);
    r += u.observed;
  }
  const Matrix s = h * p.sigma1() * h.transpose() + noise;
  const Matrix gain = p.sigma1() * h.transpose() * s.ldlt().solve(Matrix::Identity(rows, rows));
  return {p.mu1() + gain * (y - h * p.mu1()), p.sigma1() - gain * h * p.sigma1()};
}

}  // namespace testing_support
