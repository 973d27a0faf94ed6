#pragma once

// Data-generating environments: the synthetic Gaussian model, trace replay
// (optionally with a rolling action set), and a generator of binary
// engagement traces used in place of proprietary logs.

#include "impatient/csv.hpp"
#include "impatient/gaussian.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace impatient {

// ---------------------------------------------------------------------------
// Delays and censoring

/// delays[j]: number of batches before outcome j is revealed.
class DelaySchedule {
 public:
  DelaySchedule() = default;
  explicit DelaySchedule(std::vector<int> delays) : delays_(std::move(delays)) {
    if (delays_.empty()) throw InvalidArgument("DelaySchedule: needs at least one outcome");
    for (int d : delays_)
      if (d < 0) throw InvalidArgument("DelaySchedule: delays must be non-negative");
  }

  /// d_j = j (0-based), i.e. the first outcome is revealed right away.
  static DelaySchedule staggered(int j_outcomes) {
    std::vector<int> d(static_cast<std::size_t>(j_outcomes));
    for (int j = 0; j < j_outcomes; ++j) d[static_cast<std::size_t>(j)] = j;
    return DelaySchedule(std::move(d));
  }

  static DelaySchedule constant(int j_outcomes, int delay) {
    return DelaySchedule(std::vector<int>(static_cast<std::size_t>(j_outcomes), delay));
  }

  int size() const { return static_cast<int>(delays_.size()); }
  int operator[](int j) const { return delays_[static_cast<std::size_t>(j)]; }
  const std::vector<int>& values() const { return delays_; }
  int d_max() const { return *std::max_element(delays_.begin(), delays_.end()); }

  bool non_decreasing() const { return std::is_sorted(delays_.begin(), delays_.end()); }

  /// Outcome j of a user assigned at tau is visible at decision time t iff
  /// t > tau + d_j.
  bool visible(int tau, int t, int j) const { return t > tau + (*this)[j]; }

  bool operator==(const DelaySchedule&) const = default;

 private:
  std::vector<int> delays_;
};

struct CensoredTrace {
  long user_id = 0;
  ArmId arm_id = 0;
  int tau = 0;
  Vector outcomes;

  std::vector<bool> observed_through(int t, const DelaySchedule& delays) const {
    std::vector<bool> mask(static_cast<std::size_t>(outcomes.size()));
    for (int j = 0; j < outcomes.size(); ++j) mask[static_cast<std::size_t>(j)] = delays.visible(tau, t, j);
    return mask;
  }
};

struct RevealedOutcome {
  int j = 0;
  double value = 0.0;
};

/// Outcomes that are visible at t but were not visible at t-1.
inline std::vector<RevealedOutcome> censor(const CensoredTrace& trace, int t, const DelaySchedule& delays) {
  require_dim(trace.outcomes.size() == delays.size(), "censor: trace length differs from delay schedule");
  if (t < trace.tau) throw InvalidArgument("censor: t precedes the assignment time");
  std::vector<RevealedOutcome> out;
  for (int j = 0; j < delays.size(); ++j)
    if (delays.visible(trace.tau, t, j) && !delays.visible(trace.tau, t - 1, j))
      out.push_back({j, trace.outcomes(j)});
  return out;
}

// ---------------------------------------------------------------------------
// Arms

struct ArmLatent {
  ArmId arm_id = 0;
  std::string z;
  Vector theta;
  double r_bar = 0.0;
};

inline ArmLatent make_arm(ArmId id, std::string z, Vector theta, const RewardSpec& reward) {
  const double r_bar = reward(theta);
  return {id, std::move(z), std::move(theta), r_bar};
}

/// n independent draws of Y ~ N(theta, v).
inline std::vector<Vector> sample_outcomes(const ArmLatent& arm, const Matrix& v, int n, Rng& rng) {
  require_dim(v.rows() == arm.theta.size() && v.cols() == arm.theta.size(),
              "sample_outcomes: noise covariance has wrong shape");
  std::vector<Vector> out;
  if (n <= 0) return out;
  const Matrix l = psd_factor(v);
  out.reserve(static_cast<std::size_t>(n));
  Vector z(arm.theta.size());
  for (int i = 0; i < n; ++i) {
    fill_standard_normal(z, rng);
    out.push_back(arm.theta + l * z);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic model

struct SyntheticEnvSpec {
  double alpha = 0.8;
  int j_outcomes = 25;
  int batch_size = 10;
  int num_arms = 20;

  double reward_scale() const {
    const double a2 = alpha * alpha;
    const double j = j_outcomes;
    return std::sqrt((1.0 - a2) * j + a2 * j * j);
  }

  void validate() const {
    if (!(alpha >= 0.0 && alpha < 1.0)) throw InvalidArgument("SyntheticEnvSpec: alpha must lie in [0, 1)");
    if (j_outcomes < 1) throw InvalidArgument("SyntheticEnvSpec: J must be >= 1");
    if (batch_size < 1) throw InvalidArgument("SyntheticEnvSpec: m must be >= 1");
    if (num_arms < 1) throw InvalidArgument("SyntheticEnvSpec: need at least one arm");
  }
};

/// (1 - alpha^2) I + alpha^2 11^T
inline Matrix synthetic_sigma1(double alpha, int j_outcomes) {
  const double a2 = alpha * alpha;
  Matrix s = Matrix::Constant(j_outcomes, j_outcomes, a2);
  s.diagonal().array() += 1.0 - a2;
  return s;
}

struct SyntheticWorld {
  PriorParams prior;
  std::vector<ArmLatent> arms;
  RewardSpec reward;
  DelaySchedule delays;
};

inline PriorParams synthetic_prior(const SyntheticEnvSpec& spec) {
  spec.validate();
  const int j = spec.j_outcomes;
  return PriorParams(Vector::Zero(j), synthetic_sigma1(spec.alpha, j),
                     static_cast<double>(spec.batch_size) * Matrix::Identity(j, j));
}

inline RewardSpec synthetic_reward(const SyntheticEnvSpec& spec) {
  return RewardSpec(0.0, Vector::Constant(spec.j_outcomes, 1.0 / spec.reward_scale()));
}

/// Draws arm latents from a prior; the prior is returned alongside as the
/// correctly specified model.
inline std::vector<ArmLatent> draw_arms(const PriorParams& prior, const RewardSpec& reward, int num_arms, Rng& rng) {
  std::vector<ArmLatent> arms;
  arms.reserve(static_cast<std::size_t>(num_arms));
  const Belief b = Belief::from_prior(prior);
  for (ArmId a = 0; a < num_arms; ++a) arms.push_back(make_arm(a, "", sample_belief(b, rng), reward));
  return arms;
}

inline SyntheticWorld make_synthetic(const SyntheticEnvSpec& spec, Rng& rng) {
  PriorParams prior = synthetic_prior(spec);
  RewardSpec reward = synthetic_reward(spec);
  auto arms = draw_arms(prior, reward, spec.num_arms, rng);
  return {std::move(prior), std::move(arms), std::move(reward), DelaySchedule::staggered(spec.j_outcomes)};
}

/// Largest correlation the two-outcome filter model uses. At rho = 1 both
/// matrices are singular; a diagonal jitter makes them factorizable but leaves
/// whitening rows of order 1/sqrt(jitter), which destroys the posterior in
/// double precision.
inline constexpr double kTwoOutcomeMaxModelRho = 1.0 - 1e-6;

/// Two outcomes with Sigma1 = [[1, rho], [rho, 1]], V = sigma_r2 * Sigma1,
/// reward = second outcome, delays (0, d_max).
inline PriorParams two_outcome_prior(double rho, double sigma_r2) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw InvalidArgument("two_outcome_prior: rho must lie in [0, 1]");
  if (!(sigma_r2 > 0.0)) throw InvalidArgument("two_outcome_prior: sigma_r2 must be positive");
  const double r = std::min(rho, kTwoOutcomeMaxModelRho);
  Matrix s(2, 2);
  s << 1.0, r, r, 1.0;
  return PriorParams(Vector::Zero(2), s, sigma_r2 * s);
}

// ---------------------------------------------------------------------------
// Trace datasets

struct TraceDataset {
  struct Arm {
    std::string id;
    std::string z;
    Matrix traces;    // N x J
    Matrix contexts;  // N x k, empty when absent
  };

  int j_outcomes = 0;
  std::vector<Arm> arms;

  std::size_t num_arms() const { return arms.size(); }

  std::size_t index_of(const std::string& id) const {
    for (std::size_t i = 0; i < arms.size(); ++i)
      if (arms[i].id == id) return i;
    throw LookupError("TraceDataset: unknown arm '" + id + "'");
  }

  std::vector<std::string> classes() const {
    std::vector<std::string> out;
    for (const auto& a : arms)
      if (std::find(out.begin(), out.end(), a.z) == out.end()) out.push_back(a.z);
    return out;
  }

  void validate() const {
    if (j_outcomes < 1) throw InvalidArgument("TraceDataset: J must be >= 1");
    for (const auto& a : arms) {
      if (a.traces.rows() < 1) throw InvalidArgument("TraceDataset: arm '" + a.id + "' has no traces");
      if (a.traces.cols() != j_outcomes)
        throw DimensionError("TraceDataset: arm '" + a.id + "' has traces of the wrong length");
    }
  }
};

/// Uniform draw with replacement from one arm's trace pool.
inline Vector replay_sample(const TraceDataset& data, std::size_t arm_index, Rng& rng) {
  if (arm_index >= data.arms.size()) throw LookupError("replay_sample: arm index out of range");
  const auto& pool = data.arms[arm_index].traces;
  std::uniform_int_distribution<Eigen::Index> pick(0, pool.rows() - 1);
  return pool.row(pick(rng)).transpose();
}

inline Vector replay_sample(const TraceDataset& data, const std::string& arm_id, Rng& rng) {
  return replay_sample(data, data.index_of(arm_id), rng);
}

/// Parse error carrying the 1-based line number.
struct TraceFormatError : Error {
  TraceFormatError(const std::string& what, long line) : Error(what), line(line) {}
  long line;
};

inline TraceDataset read_traces_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw TraceFormatError("trace CSV is empty", 1);
  const auto header = csv::split(csv::trim(line));
  if (header.size() < 3 || csv::trim(header[0]) != "arm_id" || csv::trim(header[1]) != "z")
    throw TraceFormatError("trace CSV header must start with arm_id,z,y1", 1);
  int j_count = 0;
  int k_count = 0;
  for (std::size_t c = 2; c < header.size(); ++c) {
    const auto name = std::string(csv::trim(header[c]));
    const bool is_y = name == "y" + std::to_string(j_count + 1);
    const bool is_x = name == "x" + std::to_string(k_count + 1);
    if (is_y && k_count == 0) {
      ++j_count;
    } else if (is_x && j_count > 0) {
      ++k_count;
    } else {
      throw TraceFormatError("trace CSV header: unexpected column '" + name + "'", 1);
    }
  }
  if (j_count == 0) throw TraceFormatError("trace CSV header has no outcome columns", 1);

  struct Pending {
    std::string z;
    std::vector<std::vector<double>> rows;
    std::vector<std::vector<double>> ctx;
  };
  std::vector<std::string> order;
  std::unordered_map<std::string, Pending> pending;
  const std::size_t width = 2 + static_cast<std::size_t>(j_count + k_count);

  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (csv::trim(line).empty()) continue;
    const auto fields = csv::split(csv::trim(line));
    if (fields.size() != width)
      throw TraceFormatError("line " + std::to_string(line_no) + ": expected " + std::to_string(width) +
                                 " fields, got " + std::to_string(fields.size()),
                             line_no);
    const std::string id(csv::trim(fields[0]));
    const std::string z(csv::trim(fields[1]));
    if (id.empty()) throw TraceFormatError("line " + std::to_string(line_no) + ": empty arm_id", line_no);
    std::vector<double> y, x;
    for (std::size_t c = 2; c < fields.size(); ++c) {
      const auto v = csv::parse_double(fields[c]);
      if (!v) throw TraceFormatError("line " + std::to_string(line_no) + ": bad number '" + fields[c] + "'", line_no);
      (c < 2 + static_cast<std::size_t>(j_count) ? y : x).push_back(*v);
    }
    auto [it, inserted] = pending.try_emplace(id);
    if (inserted) {
      order.push_back(id);
      it->second.z = z;
    } else if (it->second.z != z) {
      throw TraceFormatError("line " + std::to_string(line_no) + ": arm '" + id + "' changes class", line_no);
    }
    it->second.rows.push_back(std::move(y));
    if (k_count > 0) it->second.ctx.push_back(std::move(x));
  }

  TraceDataset out;
  out.j_outcomes = j_count;
  for (const auto& id : order) {
    auto& p = pending[id];
    TraceDataset::Arm arm{id, p.z, Matrix(static_cast<Eigen::Index>(p.rows.size()), j_count), Matrix()};
    for (std::size_t r = 0; r < p.rows.size(); ++r)
      for (int j = 0; j < j_count; ++j) arm.traces(static_cast<Eigen::Index>(r), j) = p.rows[r][static_cast<std::size_t>(j)];
    if (k_count > 0) {
      arm.contexts.resize(static_cast<Eigen::Index>(p.ctx.size()), k_count);
      for (std::size_t r = 0; r < p.ctx.size(); ++r)
        for (int k = 0; k < k_count; ++k) arm.contexts(static_cast<Eigen::Index>(r), k) = p.ctx[r][static_cast<std::size_t>(k)];
    }
    out.arms.push_back(std::move(arm));
  }
  return out;
}

inline TraceDataset read_traces_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open trace file '" + path + "'");
  return read_traces_csv(in);
}

inline void write_traces_csv(std::ostream& out, const TraceDataset& data) {
  const auto k = data.arms.empty() ? 0 : data.arms.front().contexts.cols();
  out << "arm_id,z";
  for (int j = 1; j <= data.j_outcomes; ++j) out << ",y" << j;
  for (Eigen::Index i = 1; i <= k; ++i) out << ",x" << i;
  out << '\n';
  for (const auto& arm : data.arms) {
    for (Eigen::Index r = 0; r < arm.traces.rows(); ++r) {
      out << arm.id << ',' << arm.z;
      for (Eigen::Index j = 0; j < arm.traces.cols(); ++j) out << ',' << csv::format_double(arm.traces(r, j));
      for (Eigen::Index i = 0; i < k; ++i) out << ',' << csv::format_double(arm.contexts(r, i));
      out << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Binary engagement traces

/// Per-day engagement follows a two-state (engaged/idle) Markov chain that
/// starts engaged on day one.
struct BinaryArmParams {
  double retention = 0.3;     // P(engaged tomorrow | engaged today)
  double return_prob = 0.075;  // P(engaged tomorrow | idle today)
};

inline Matrix gen_binary_arm_traces(const BinaryArmParams& p, int n, int j_outcomes, Rng& rng) {
  Matrix out(n, j_outcomes);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int r = 0; r < n; ++r) {
    bool engaged = true;
    out(r, 0) = 1.0;
    for (int j = 1; j < j_outcomes; ++j) {
      engaged = u01(rng) < (engaged ? p.retention : p.return_prob);
      out(r, j) = engaged ? 1.0 : 0.0;
    }
  }
  return out;
}

struct BinaryTraceParams {
  int num_arms = 200;
  int traces_per_arm = 500;
  int j_outcomes = 60;
  int num_classes = 4;
  // log-retention ~ N(log_retention_mean + class shift, log_retention_sd)
  double log_retention_mean = -1.2;
  double log_retention_sd = 0.6;
  double class_shift_sd = 0.15;
  // log-return-probability ~ N(log_return_mean, log_return_sd), independent of retention
  double log_return_mean = -2.6;
  double log_return_sd = 0.6;
};

inline TraceDataset gen_binary_traces(const BinaryTraceParams& p, Rng& rng) {
  if (p.j_outcomes < 1) throw InvalidArgument("gen_binary_traces: J must be >= 1");
  if (p.num_arms < 1) throw InvalidArgument("gen_binary_traces: need at least one arm");
  if (p.traces_per_arm < 1) throw InvalidArgument("gen_binary_traces: traces_per_arm must be >= 1");
  const int classes = std::max(1, p.num_classes);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> shift(static_cast<std::size_t>(classes));
  for (auto& s : shift) s = p.class_shift_sd * n01(rng);

  TraceDataset data;
  data.j_outcomes = p.j_outcomes;
  const int id_width = static_cast<int>(std::to_string(p.num_arms - 1).size());
  for (int a = 0; a < p.num_arms; ++a) {
    const int c = a % classes;
    const double log_ret = p.log_retention_mean + shift[static_cast<std::size_t>(c)] + p.log_retention_sd * n01(rng);
    BinaryArmParams arm_params;
    arm_params.retention = std::clamp(std::exp(log_ret), 0.01, 0.97);
    arm_params.return_prob = std::clamp(std::exp(p.log_return_mean + p.log_return_sd * n01(rng)), 0.001, 0.97);
    std::ostringstream id;
    id << "show" << std::setw(id_width) << std::setfill('0') << a;
    data.arms.push_back({id.str(), "c" + std::to_string(c),
                         gen_binary_arm_traces(arm_params, p.traces_per_arm, p.j_outcomes, rng), Matrix()});
  }
  return data;
}

/// Latent mean-outcome vectors of a replay pool: per-arm average trace.
inline std::vector<ArmLatent> replay_latents(const TraceDataset& data, const RewardSpec& reward) {
  std::vector<ArmLatent> out;
  out.reserve(data.arms.size());
  for (std::size_t i = 0; i < data.arms.size(); ++i) {
    Vector theta = data.arms[i].traces.colwise().mean().transpose();
    out.push_back(make_arm(static_cast<ArmId>(i), data.arms[i].z, std::move(theta), reward));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rolling action set

struct ActiveArm {
  ArmId arm_id = 0;
  int introduced = 0;
};

/// Drops the oldest arm (lowest id on ties) and appends the next arm from the
/// reservoir, introduced at time t.
inline std::vector<ActiveArm> rotate_actions(std::vector<ActiveArm> active, std::deque<ArmId>& reservoir, int t) {
  if (reservoir.empty()) throw ExhaustedReservoir("rotate_actions: reservoir is exhausted");
  if (!active.empty()) {
    auto oldest = std::min_element(active.begin(), active.end(), [](const ActiveArm& a, const ActiveArm& b) {
      return a.introduced != b.introduced ? a.introduced < b.introduced : a.arm_id < b.arm_id;
    });
    active.erase(oldest);
  }
  active.push_back({reservoir.front(), t});
  reservoir.pop_front();
  return active;
}

// ---------------------------------------------------------------------------
// Environment interface used by the simulation harness

class Environment {
 public:
  virtual ~Environment() = default;

  virtual int outcome_dim() const = 0;
  virtual const RewardSpec& reward() const = 0;
  virtual const DelaySchedule& delays() const = 0;
  /// Every arm that may ever become active.
  virtual const std::vector<ArmLatent>& arms() const = 0;
  virtual std::vector<ArmId> active_arms() const = 0;
  /// Draws the potential outcome vector Y_u(a).
  virtual Vector potential_outcome(ArmId arm, Rng& rng) const = 0;
  /// Called after decision time t has been fully processed.
  virtual void end_of_batch(int /*t*/) {}
  virtual std::unique_ptr<Environment> clone() const = 0;

  double mean_reward(ArmId arm) const { return arms()[static_cast<std::size_t>(arm)].r_bar; }

  /// argmax of the mean reward over the active set, lowest id on ties.
  ArmId optimal_arm() const {
    const auto active = active_arms();
    ArmId best = active.front();
    for (ArmId a : active)
      if (mean_reward(a) > mean_reward(best) || (mean_reward(a) == mean_reward(best) && a < best)) best = a;
    return best;
  }
};

class GaussianEnvironment final : public Environment {
 public:
  GaussianEnvironment(std::vector<ArmLatent> arms, const Matrix& v, RewardSpec reward, DelaySchedule delays)
      : arms_(std::move(arms)), noise_factor_(psd_factor(v)), reward_(std::move(reward)), delays_(std::move(delays)) {
    require_dim(!arms_.empty(), "GaussianEnvironment: no arms");
    require_dim(reward_.dim() == v.rows() && delays_.size() == v.rows(),
                "GaussianEnvironment: reward/delay/noise dimensions disagree");
    for (std::size_t i = 0; i < arms_.size(); ++i)
      if (arms_[i].arm_id != static_cast<ArmId>(i)) throw InvalidArgument("GaussianEnvironment: arm ids must be 0..n-1");
    for (const auto& a : arms_) active_.push_back(a.arm_id);
  }

  int outcome_dim() const override { return static_cast<int>(noise_factor_.rows()); }
  const RewardSpec& reward() const override { return reward_; }
  const DelaySchedule& delays() const override { return delays_; }
  const std::vector<ArmLatent>& arms() const override { return arms_; }
  std::vector<ArmId> active_arms() const override { return active_; }

  Vector potential_outcome(ArmId arm, Rng& rng) const override {
    Vector z(outcome_dim());
    fill_standard_normal(z, rng);
    return arms_[static_cast<std::size_t>(arm)].theta + noise_factor_ * z;
  }

  std::unique_ptr<Environment> clone() const override { return std::make_unique<GaussianEnvironment>(*this); }

 private:
  std::vector<ArmLatent> arms_;
  Matrix noise_factor_;
  RewardSpec reward_;
  DelaySchedule delays_;
  std::vector<ArmId> active_;
};

/// Replays traces of a dataset. With a reservoir it keeps a constant-size
/// active set, rotating one arm after every decision time.
class ReplayEnvironment final : public Environment {
 public:
  ReplayEnvironment(std::shared_ptr<const TraceDataset> data, RewardSpec reward, DelaySchedule delays,
                    std::vector<ArmId> initial_active, std::deque<ArmId> reservoir = {})
      : data_(std::move(data)),
        reward_(std::move(reward)),
        delays_(std::move(delays)),
        latents_(replay_latents(*data_, reward_)),
        reservoir_(std::move(reservoir)) {
    require_dim(reward_.dim() == data_->j_outcomes && delays_.size() == data_->j_outcomes,
                "ReplayEnvironment: reward/delay dimensions differ from the dataset");
    if (initial_active.empty()) throw InvalidArgument("ReplayEnvironment: empty active set");
    for (ArmId a : initial_active) active_.push_back({a, 0});
  }

  int outcome_dim() const override { return data_->j_outcomes; }
  const RewardSpec& reward() const override { return reward_; }
  const DelaySchedule& delays() const override { return delays_; }
  const std::vector<ArmLatent>& arms() const override { return latents_; }

  std::vector<ArmId> active_arms() const override {
    std::vector<ArmId> out;
    out.reserve(active_.size());
    for (const auto& a : active_) out.push_back(a.arm_id);
    return out;
  }

  Vector potential_outcome(ArmId arm, Rng& rng) const override {
    return replay_sample(*data_, static_cast<std::size_t>(arm), rng);
  }

  void end_of_batch(int t) override {
    if (rotating_) active_ = rotate_actions(std::move(active_), reservoir_, t + 1);
  }

  std::unique_ptr<Environment> clone() const override { return std::make_unique<ReplayEnvironment>(*this); }

  void set_rotating(bool on) { rotating_ = on; }
  bool rotating() const { return rotating_; }

 private:
  std::shared_ptr<const TraceDataset> data_;
  RewardSpec reward_;
  DelaySchedule delays_;
  std::vector<ArmLatent> latents_;
  std::vector<ActiveArm> active_;
  std::deque<ArmId> reservoir_;
  bool rotating_ = false;
};

}  // namespace impatient
