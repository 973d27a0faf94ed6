#pragma once

// Reference posterior computed by direct joint-Gaussian conditioning. It does
// not whiten and does not update incrementally, so it serves as an
// independent check on posterior_update.

#include "impatient/gaussian.hpp"

#include <vector>

namespace impatient {

struct MaskedOutcome {
  Vector y;
  std::vector<bool> observed;  // same length as y; any pattern is allowed
};

inline Belief posterior_batch_oracle(const PriorParams& prior, std::span<const MaskedOutcome> users) {
  const int dim = prior.dim();

  // Flatten observed entries: (user, coordinate) pairs.
  std::vector<std::pair<std::size_t, int>> index;
  for (std::size_t u = 0; u < users.size(); ++u) {
    require_dim(users[u].y.size() == dim && static_cast<int>(users[u].observed.size()) == dim,
                "posterior_batch_oracle: outcome/mask length must equal J");
    for (int j = 0; j < dim; ++j)
      if (users[u].observed[static_cast<std::size_t>(j)]) index.emplace_back(u, j);
  }
  if (index.empty()) return Belief::from_prior(prior);

  const auto n = static_cast<Eigen::Index>(index.size());
  Vector obs(n), obs_mean(n);
  Matrix c_oo(n, n), c_to(dim, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    const auto [ua, ja] = index[static_cast<std::size_t>(a)];
    obs(a) = users[ua].y(ja);
    obs_mean(a) = prior.mu1()(ja);
    c_to.col(a) = prior.sigma1().col(ja);
    for (Eigen::Index b = 0; b < n; ++b) {
      const auto [ub, jb] = index[static_cast<std::size_t>(b)];
      c_oo(a, b) = prior.sigma1()(ja, jb) + (ua == ub ? prior.v()(ja, jb) : 0.0);
    }
  }

  Eigen::LDLT<Matrix> ldlt(c_oo);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw NumericalError("posterior_batch_oracle: observation covariance is singular");
  Belief out;
  out.mean = prior.mu1() + c_to * ldlt.solve(obs - obs_mean);
  out.cov = symmetrized(prior.sigma1() - c_to * ldlt.solve(c_to.transpose()));
  return out;
}

}  // namespace impatient
