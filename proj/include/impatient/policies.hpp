#pragma once

// Thompson sampling over progressively revealed outcomes, its rounded
// variant, sequential elimination, and the feedback views used by the
// baselines (delayed, day-two proxy, oracle).

#include "impatient/environments.hpp"
#include "impatient/gaussian.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <limits>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace impatient {

// ---------------------------------------------------------------------------
// Feedback views

enum class ViewMode { progressive, delayed, day_two_proxy, oracle };

inline const char* to_string(ViewMode m) {
  switch (m) {
    case ViewMode::progressive: return "progressive";
    case ViewMode::delayed: return "delayed";
    case ViewMode::day_two_proxy: return "day_two_proxy";
    case ViewMode::oracle: return "oracle";
  }
  return "?";
}

/// What a policy gets to see: which outcomes, when, and what it optimizes.
struct FeedbackView {
  ViewMode mode = ViewMode::progressive;
  DelaySchedule delays;  // effective, one entry per outcome the policy uses
  RewardSpec reward;     // the reward the policy maximizes

  int outcomes() const { return delays.size(); }

  static FeedbackView make(ViewMode mode, const DelaySchedule& env_delays, const RewardSpec& env_reward) {
    require_dim(env_delays.size() == env_reward.dim(), "FeedbackView: delays and reward disagree on J");
    if (!env_delays.non_decreasing())
      throw InvalidArgument("FeedbackView: delays must be non-decreasing in j");
    const int j = env_delays.size();
    switch (mode) {
      case ViewMode::progressive:
        return {mode, env_delays, env_reward};
      case ViewMode::delayed:
        return {mode, DelaySchedule::constant(j, env_delays.d_max()), env_reward};
      case ViewMode::oracle:
        return {mode, DelaySchedule::constant(j, 0), env_reward};
      case ViewMode::day_two_proxy: {
        if (j < 2) throw InvalidArgument("FeedbackView: day-two proxy needs J >= 2");
        Vector e2 = Vector::Zero(2);
        e2(1) = 1.0;
        return {mode, DelaySchedule({env_delays[0], env_delays[1]}), RewardSpec(0.0, e2)};
      }
    }
    throw InvalidArgument("FeedbackView: unknown mode");
  }
};

// ---------------------------------------------------------------------------
// Policy state

/// Prior and whitening for one feature class, restricted to the outcomes the
/// view uses.
struct ClassModel {
  PriorParams prior;
  CholeskyFactors factors;
  Matrix prior_precision;
  Vector prior_info;  // prior_precision * mu1

  explicit ClassModel(PriorParams p)
      : prior(std::move(p)),
        factors(whiten_with_jitter(prior.v())),
        prior_precision(spd_inverse(prior.sigma1(), "prior covariance")),
        prior_info(prior_precision * prior.mu1()) {}
};

/// One revealed block of data: `count` users of `arm` whose outcome j became
/// visible, with `sum_y` the sum of their outcome vectors (entries past j are
/// ignored).
struct Reveal {
  ArmId arm = 0;
  int j = 0;
  double count = 0.0;
  Vector sum_y;
};

/// Per-arm beliefs kept in information form: precision and information
/// vector. A block of n identical-row observations adds n ell ell^T, and only
/// the leading (j+1)x(j+1) corner is touched since ell_j vanishes past j.
class PolicyState {
 public:
  PolicyState(std::map<std::string, PriorParams> class_priors, FeedbackView view)
      : view_(std::move(view)) {
    if (class_priors.empty()) throw InvalidArgument("PolicyState: no class priors");
    for (auto& [z, p] : class_priors) {
      if (p.dim() < view_.outcomes()) throw DimensionError("PolicyState: prior has fewer outcomes than the view");
      const PriorParams restricted = p.dim() == view_.outcomes() ? p : p.leading(view_.outcomes());
      classes_.emplace(z, std::make_shared<const ClassModel>(restricted));
    }
  }

  PolicyState(const PriorParams& prior, FeedbackView view)
      : PolicyState(std::map<std::string, PriorParams>{{"", prior}}, std::move(view)) {}

  const FeedbackView& view() const { return view_; }
  int dim() const { return view_.outcomes(); }

  void add_arm(ArmId arm, const std::string& z = "") {
    if (arms_.count(arm)) return;
    auto it = classes_.find(z);
    if (it == classes_.end()) {
      if (classes_.size() == 1) {
        it = classes_.begin();
      } else {
        throw LookupError("PolicyState: no prior for class '" + z + "'");
      }
    }
    ArmState s{it->second, it->second->prior_precision, Vector::Zero(dim()), Vector::Zero(dim()), {}, {}, true};
    arms_.emplace(arm, std::move(s));
  }

  bool has_arm(ArmId arm) const { return arms_.count(arm) != 0; }

  /// Arms the policy may choose from at the current decision time, sorted.
  void set_candidates(std::vector<ArmId> arms) {
    std::sort(arms.begin(), arms.end());
    for (ArmId a : arms)
      if (!has_arm(a)) throw LookupError("PolicyState: candidate arm without a belief");
    candidates_ = std::move(arms);
  }
  const std::vector<ArmId>& candidates() const { return candidates_; }

  /// Candidates minus eliminated arms (sequential elimination).
  std::vector<ArmId> active() const {
    std::vector<ArmId> out;
    for (ArmId a : candidates_)
      if (!eliminated_.count(a)) out.push_back(a);
    return out;
  }
  void eliminate(ArmId arm) { eliminated_.insert(arm); }
  bool eliminated(ArmId arm) const { return eliminated_.count(arm) != 0; }

  void absorb(const Reveal& r) {
    auto& s = arm_state(r.arm);
    require_dim(r.j >= 0 && r.j < dim(), "PolicyState::absorb: outcome index out of range");
    require_dim(r.sum_y.size() >= r.j + 1, "PolicyState::absorb: outcome sum too short");
    if (r.count <= 0.0) return;
    const auto ell = s.model->factors.l_inv.row(r.j).head(r.j + 1);
    const double whitened_sum = ell.dot(r.sum_y.head(r.j + 1));
    s.counts(r.j) += r.count;
    s.precision.topLeftCorner(r.j + 1, r.j + 1).noalias() += r.count * (ell.transpose() * ell);
    s.info.head(r.j + 1) += ell.transpose() * whitened_sum;
    s.dirty = true;
  }

  Belief belief(ArmId arm) const {
    const auto& s = arm_state(arm);
    auto llt = robust_llt(s.precision, "posterior precision");
    Belief b;
    b.cov = symmetrized(llt.solve(Matrix::Identity(dim(), dim())));
    b.mean = llt.solve(s.model->prior_info + s.info);
    return b;
  }

  /// Mean and variance of the policy reward under the arm's posterior.
  RewardMoments reward_moments(ArmId arm) const {
    auto& s = const_cast<ArmState&>(arm_state(arm));
    if (s.dirty) refresh(s);
    return s.moments;
  }

  const Vector& posterior_mean(ArmId arm) const {
    auto& s = const_cast<ArmState&>(arm_state(arm));
    if (s.dirty) refresh(s);
    return s.mean;
  }

  /// Number of revealed j-th outcomes absorbed for this arm.
  const Vector& counts(ArmId arm) const { return arm_state(arm).counts; }

  int round_robin_offset = 0;

 private:
  struct ArmState {
    std::shared_ptr<const ClassModel> model;
    Matrix precision;
    Vector counts;
    Vector info;
    Vector mean;
    RewardMoments moments;
    bool dirty;
  };

  ArmState& arm_state(ArmId arm) {
    auto it = arms_.find(arm);
    if (it == arms_.end()) throw LookupError("PolicyState: unknown arm " + std::to_string(arm));
    return it->second;
  }
  const ArmState& arm_state(ArmId arm) const { return const_cast<PolicyState*>(this)->arm_state(arm); }


  void refresh(ArmState& s) const {
    auto llt = robust_llt(s.precision, "posterior precision");
    s.mean = llt.solve(s.model->prior_info + s.info);
    const Vector& r1 = view_.reward.r1;
    const double var = r1.dot(llt.solve(r1));
    s.moments = {view_.reward.r0 + r1.dot(s.mean), std::max(var, 0.0)};
    s.dirty = false;
  }

  FeedbackView view_;
  std::map<std::string, std::shared_ptr<const ClassModel>> classes_;
  std::map<ArmId, ArmState> arms_;
  std::vector<ArmId> candidates_;
  std::set<ArmId> eliminated_;
};

inline void apply_feedback(PolicyState& state, std::span<const Reveal> reveals) {
  for (const auto& r : reveals) state.absorb(r);
}

/// Per-user form: one user's outcome prefix Y_0..Y_j, revealed at index j.
inline void apply_feedback(PolicyState& state, ArmId arm, int j, std::span<const double> prefix) {
  require_dim(static_cast<int>(prefix.size()) == j + 1, "apply_feedback: prefix length must be j+1");
  Vector y = Vector::Zero(j + 1);
  for (int i = 0; i <= j; ++i) y(i) = prefix[static_cast<std::size_t>(i)];
  state.absorb({arm, j, 1.0, y});
}

// ---------------------------------------------------------------------------
// Thompson sampling

/// How a posterior draw is scored. The reward is affine, so R(theta') for
/// theta' ~ N(mu, Sigma) is exactly N(r0 + r1.mu, r1' Sigma r1); drawing that
/// scalar gives the same selection law as drawing the full vector.
enum class Sampling { reward_marginal, full_vector };

namespace detail {

inline ArmId ts_draw_one(const std::vector<ArmId>& arms, const std::vector<double>& mean,
                         const std::vector<double>& sd, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  ArmId best = arms.front();
  double best_value = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < arms.size(); ++i) {
    const double v = mean[i] + sd[i] * n01(rng);
    if (v > best_value) {
      best_value = v;
      best = arms[i];
    }
  }
  return best;
}

}  // namespace detail

/// Thompson-sampling action selection for `m` users over `arms` (ascending id, ties
/// to the lowest id).
inline std::vector<ArmId> ts_assign(const PolicyState& state, const std::vector<ArmId>& arms, int m, Rng& rng,
                                    Sampling sampling = Sampling::reward_marginal) {
  if (arms.empty()) throw InvalidArgument("ts_assign: no arms");
  std::vector<ArmId> out(static_cast<std::size_t>(std::max(m, 0)));
  if (sampling == Sampling::reward_marginal) {
    std::vector<double> mean, sd;
    for (ArmId a : arms) {
      const auto mom = state.reward_moments(a);
      mean.push_back(mom.mean);
      sd.push_back(std::sqrt(mom.var));
    }
    for (auto& a : out) a = detail::ts_draw_one(arms, mean, sd, rng);
    return out;
  }
  std::vector<Belief> beliefs;
  std::vector<Matrix> factors;
  for (ArmId a : arms) {
    beliefs.push_back(state.belief(a));
    factors.push_back(psd_factor(beliefs.back().cov));
  }
  const auto& reward = state.view().reward;
  Vector z(state.dim());
  for (auto& slot : out) {
    ArmId best = arms.front();
    double best_value = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < arms.size(); ++i) {
      fill_standard_normal(z, rng);
      const double v = reward(beliefs[i].mean + factors[i] * z);
      if (v > best_value) {
        best_value = v;
        best = arms[i];
      }
    }
    slot = best;
  }
  return out;
}

inline std::vector<ArmId> ts_assign(const PolicyState& state, int m, Rng& rng,
                                    Sampling sampling = Sampling::reward_marginal) {
  return ts_assign(state, state.active(), m, rng, sampling);
}

/// One Thompson-sampling selection from explicit beliefs: a full theta' per arm in
/// order, argmax of R(theta'), ties to the lowest index.
inline std::size_t ts_select(std::span<const Belief> beliefs, const RewardSpec& reward, Rng& rng) {
  if (beliefs.empty()) throw InvalidArgument("ts_select: no arms");
  std::size_t best = 0;
  double best_value = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < beliefs.size(); ++a) {
    const double v = reward(sample_belief(beliefs[a], rng));
    if (v > best_value) {
      best_value = v;
      best = a;
    }
  }
  return best;
}

struct AllocationProbs {
  std::vector<ArmId> arms;  // ascending
  std::vector<double> probs;
  int granularity = 0;  // m for rounded allocations, 0 otherwise

  double of(ArmId a) const {
    for (std::size_t i = 0; i < arms.size(); ++i)
      if (arms[i] == a) return probs[i];
    throw LookupError("AllocationProbs: unknown arm");
  }
};

/// Monte-Carlo estimate of P(a = argmax R(theta')) from n_mc joint draws.
inline AllocationProbs ts_probs(const PolicyState& state, const std::vector<ArmId>& arms, int n_mc, Rng& rng) {
  if (n_mc < 1) throw InvalidArgument("ts_probs: n_mc must be >= 1");
  if (arms.empty()) throw InvalidArgument("ts_probs: no arms");
  AllocationProbs out;
  out.arms = arms;
  out.probs.assign(arms.size(), 0.0);
  if (arms.size() == 1) {
    out.probs[0] = 1.0;
    return out;
  }
  std::vector<double> mean, sd;
  for (ArmId a : arms) {
    const auto mom = state.reward_moments(a);
    mean.push_back(mom.mean);
    sd.push_back(std::sqrt(mom.var));
  }
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<long> wins(arms.size(), 0);
  for (int s = 0; s < n_mc; ++s) {
    std::size_t best = 0;
    double best_value = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < arms.size(); ++i) {
      const double v = mean[i] + sd[i] * n01(rng);
      if (v > best_value) {
        best_value = v;
        best = i;
      }
    }
    ++wins[best];
  }
  for (std::size_t i = 0; i < arms.size(); ++i) out.probs[i] = static_cast<double>(wins[i]) / n_mc;
  return out;
}

inline AllocationProbs ts_probs(const PolicyState& state, int n_mc, Rng& rng) {
  return ts_probs(state, state.active(), n_mc, rng);
}

/// Number of 1/m units for a non-argmax arm: the q with p in ((q-1)/m, q/m].
/// Values within 1e-9 of a multiple are treated as that multiple.
inline long rounded_units(double p, int m) {
  const double x = p * m;
  const double nearest = std::round(x);
  if (std::abs(x - nearest) <= 1e-9 * std::max(1.0, x)) return static_cast<long>(nearest);
  return static_cast<long>(std::ceil(x));
}

/// Rounds every non-argmax probability up to a multiple of 1/m and gives the
/// argmax arm (lowest id on ties) the residual.
inline AllocationProbs round_probs(const AllocationProbs& p, int m) {
  if (m < 1) throw InvalidArgument("round_probs: m must be >= 1");
  if (p.arms.empty() || p.arms.size() != p.probs.size()) throw InvalidArgument("round_probs: malformed input");
  double total = 0.0;
  for (double v : p.probs) {
    if (!(v >= 0.0)) throw InvalidArgument("round_probs: negative probability");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) throw InvalidArgument("round_probs: probabilities must sum to 1");

  std::size_t top = 0;
  for (std::size_t i = 1; i < p.probs.size(); ++i)
    if (p.probs[i] > p.probs[top] || (p.probs[i] == p.probs[top] && p.arms[i] < p.arms[top])) top = i;

  std::vector<long> units(p.probs.size(), 0);
  long used = 0;
  for (std::size_t i = 0; i < p.probs.size(); ++i) {
    if (i == top) continue;
    units[i] = rounded_units(p.probs[i], m);
    used += units[i];
  }
  const long residual = m - used;
  if (residual < 0)
    throw InfeasibleRounding("round_probs: m = " + std::to_string(m) + " is too small for " +
                             std::to_string(p.arms.size()) + " arms");
  units[top] = residual;

  AllocationProbs out;
  out.arms = p.arms;
  out.granularity = m;
  for (long u : units) out.probs.push_back(static_cast<double>(u) / m);
  return out;
}

/// Users per arm under a rounded allocation.
inline std::vector<long> allocation_counts(const AllocationProbs& rounded) {
  if (rounded.granularity < 1) throw InvalidArgument("allocation_counts: allocation is not rounded");
  std::vector<long> out;
  for (double v : rounded.probs) out.push_back(std::lround(v * rounded.granularity));
  return out;
}

/// Rounded allocation: exactly m * p_rnd(a) users go to arm a, in contiguous blocks
/// following ascending arm id.
inline std::vector<ArmId> ts_rnd_assign(const PolicyState& state, int m, int n_mc, Rng& rng) {
  const auto rounded = round_probs(ts_probs(state, n_mc, rng), m);
  const auto counts = allocation_counts(rounded);
  std::vector<ArmId> out;
  out.reserve(static_cast<std::size_t>(m));
  for (std::size_t i = 0; i < counts.size(); ++i) out.insert(out.end(), static_cast<std::size_t>(counts[i]), rounded.arms[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Sequential elimination

struct SeqElimStep {
  std::vector<ArmId> assignments;
  std::vector<ArmId> survivors;
  std::vector<ArmId> eliminated;
};

/// Eliminates active arms whose posterior probability of being optimal is
/// below `threshold` (never the last one), then spreads the m users evenly
/// over the survivors.
inline SeqElimStep seq_elim_step(PolicyState& state, double threshold, int n_mc, int m, Rng& rng) {
  auto active = state.active();
  if (active.empty()) throw InvalidArgument("seq_elim_step: no active arms");
  if (!(threshold > 0.0 && threshold < 1.0)) throw InvalidArgument("seq_elim_step: threshold must lie in (0, 1)");
  SeqElimStep step;
  if (active.size() > 1) {
    const auto probs = ts_probs(state, active, n_mc, rng);
    std::size_t top = 0;
    for (std::size_t i = 1; i < probs.probs.size(); ++i)
      if (probs.probs[i] > probs.probs[top]) top = i;
    for (std::size_t i = 0; i < active.size(); ++i) {
      if (i != top && probs.probs[i] < threshold) {
        state.eliminate(active[i]);
        step.eliminated.push_back(active[i]);
      }
    }
    active = state.active();
  }
  step.survivors = active;
  const int k = static_cast<int>(active.size());
  for (int i = 0; i < m; ++i)
    step.assignments.push_back(active[static_cast<std::size_t>((i + state.round_robin_offset) % k)]);
  state.round_robin_offset = (state.round_robin_offset + m) % k;
  return step;
}

// ---------------------------------------------------------------------------
// Policy roster

enum class PolicyKind { thompson, thompson_rounded, seq_elim };

struct PolicySpec {
  std::string name;
  PolicyKind kind = PolicyKind::thompson;
  ViewMode view = ViewMode::progressive;
  bool isotropic_prior = false;
  double threshold = 0.0;
  int n_mc = 0;  // 0: use the experiment-wide setting

  int effective_n_mc() const { return n_mc > 0 ? n_mc : 2048; }
};

inline const std::vector<std::string>& policy_names() {
  static const std::vector<std::string> names{"progressive", "progressive_rnd", "delayed",        "day_two",
                                              "oracle",      "seq_elim_1pct",   "seq_elim_4pct", "progressive_isotropic"};
  return names;
}

inline PolicySpec policy_spec(const std::string& name) {
  PolicySpec s;
  s.name = name;
  if (name == "progressive") return s;
  if (name == "progressive_rnd") {
    s.kind = PolicyKind::thompson_rounded;
    return s;
  }
  if (name == "delayed") {
    s.view = ViewMode::delayed;
    return s;
  }
  if (name == "day_two") {
    s.view = ViewMode::day_two_proxy;
    return s;
  }
  if (name == "oracle") {
    s.view = ViewMode::oracle;
    return s;
  }
  if (name == "seq_elim_1pct" || name == "seq_elim_4pct") {
    s.kind = PolicyKind::seq_elim;
    s.threshold = name == "seq_elim_1pct" ? 0.01 : 0.04;
    return s;
  }
  if (name == "progressive_isotropic") {
    s.isotropic_prior = true;
    return s;
  }
  std::string valid;
  for (const auto& n : policy_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw LookupError("unknown policy '" + name + "' (valid: " + valid + ")");
}

/// mu = 0, Sigma = 100 I, V = I.
inline PriorParams isotropic_prior(int j_outcomes) {
  return PriorParams(Vector::Zero(j_outcomes), 100.0 * Matrix::Identity(j_outcomes, j_outcomes),
                     Matrix::Identity(j_outcomes, j_outcomes));
}

/// Decision for one batch according to the policy kind.
inline std::vector<ArmId> policy_assign(const PolicySpec& spec, PolicyState& state, int m, Rng& rng) {
  switch (spec.kind) {
    case PolicyKind::thompson: return ts_assign(state, m, rng);
    case PolicyKind::thompson_rounded: return ts_rnd_assign(state, m, spec.effective_n_mc(), rng);
    case PolicyKind::seq_elim: return seq_elim_step(state, spec.threshold, spec.effective_n_mc(), m, rng).assignments;
  }
  throw InvalidArgument("policy_assign: unknown kind");
}

}  // namespace impatient
