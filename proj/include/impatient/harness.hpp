#pragma once

// Batched simulation loop, replication runner and experiment presets.

#include "impatient/environments.hpp"
#include "impatient/metrics.hpp"
#include "impatient/policies.hpp"
#include "impatient/prior_fit.hpp"
#include "impatient/rng.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

namespace impatient {

#ifndef IMPATIENT_VERSION
#define IMPATIENT_VERSION "0.1.0"
#endif

enum class EnvKind { synthetic, two_outcome, replay, nonstationary };

inline const char* to_string(EnvKind k) {
  switch (k) {
    case EnvKind::synthetic: return "synthetic";
    case EnvKind::two_outcome: return "two_outcome";
    case EnvKind::replay: return "replay";
    case EnvKind::nonstationary: return "nonstationary";
  }
  return "?";
}

struct ExperimentConfig {
  std::string preset = "custom";
  EnvKind env = EnvKind::synthetic;

  // synthetic
  double alpha = 0.8;
  int j_outcomes = 25;
  int num_arms = 20;

  // two_outcome
  double rho = 0.0;
  double sigma_r2 = 0.0;  // 0 means "use m"
  int d_max = 10;

  // replay / nonstationary
  std::string traces_path;  // empty: generate
  BinaryTraceParams traces;
  int history_arms = 200;  // arms in the generated historical dataset used to fit the prior
  int active_arms = 60;    // nonstationary only

  std::vector<PolicySpec> policies;
  int horizon = 50;
  int batch_size = 10;
  int replications = 1;
  std::uint64_t seed = 1;
  int n_mc = 2048;
  bool common_random_numbers = true;
  int jobs = 1;

  void validate() const {
    if (horizon < 1) throw InvalidArgument("T must be >= 1");
    if (batch_size < 1) throw InvalidArgument("m must be >= 1");
    if (replications < 1) throw InvalidArgument("replications must be >= 1");
    if (n_mc < 1) throw InvalidArgument("n_mc must be >= 1");
    if (jobs < 1) throw InvalidArgument("jobs must be >= 1");
    if (policies.empty()) throw InvalidArgument("no policies configured");
    if (env == EnvKind::synthetic) {
      SyntheticEnvSpec{alpha, j_outcomes, batch_size, num_arms}.validate();
    }
    if (env == EnvKind::two_outcome) {
      if (!(rho >= 0.0 && rho <= 1.0)) throw InvalidArgument("rho must lie in [0, 1]");
      if (d_max < 0) throw InvalidArgument("d_max must be >= 0");
      if (num_arms < 1) throw InvalidArgument("need at least one arm");
    }
    if (env == EnvKind::nonstationary && active_arms < 1) throw InvalidArgument("active_arms must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Worlds

/// Everything an episode needs that is fixed within a replication.
struct World {
  std::unique_ptr<Environment> env;
  std::map<std::string, PriorParams> priors;  // the policies' model, per class
};

/// Data shared by all replications of a replay experiment.
struct ReplayShared {
  std::shared_ptr<const TraceDataset> live;
  FittedPrior fitted;
  std::map<std::string, PriorParams> priors;
};

inline ReplayShared prepare_replay(const ExperimentConfig& cfg) {
  ReplayShared out;
  if (!cfg.traces_path.empty()) {
    auto data = std::make_shared<TraceDataset>(read_traces_csv(cfg.traces_path));
    data->validate();
    out.fitted = fit_prior(*data);
    out.live = data;
  } else {
    Rng live_rng = make_rng(cfg.seed, hash_name("traces/live"));
    auto data = std::make_shared<TraceDataset>(gen_binary_traces(cfg.traces, live_rng));
    BinaryTraceParams hist = cfg.traces;
    hist.num_arms = cfg.history_arms;
    Rng hist_rng = make_rng(cfg.seed, hash_name("traces/history"));
    const TraceDataset history = gen_binary_traces(hist, hist_rng);
    out.fitted = fit_prior(history);
    out.live = data;
  }
  out.priors = out.fitted.to_prior_params();
  return out;
}

inline World make_world(const ExperimentConfig& cfg, int replication, const ReplayShared* replay) {
  World w;
  Rng env_rng = make_rng(cfg.seed, replication, hash_name("env"));
  switch (cfg.env) {
    case EnvKind::synthetic: {
      const SyntheticEnvSpec spec{cfg.alpha, cfg.j_outcomes, cfg.batch_size, cfg.num_arms};
      auto sw = make_synthetic(spec, env_rng);
      w.env = std::make_unique<GaussianEnvironment>(std::move(sw.arms), sw.prior.v(), sw.reward, sw.delays);
      w.priors.emplace("", std::move(sw.prior));
      break;
    }
    case EnvKind::two_outcome: {
      const double s2 = cfg.sigma_r2 > 0.0 ? cfg.sigma_r2 : static_cast<double>(cfg.batch_size);
      PriorParams prior = two_outcome_prior(cfg.rho, s2);
      Vector e2 = Vector::Zero(2);
      e2(1) = 1.0;
      RewardSpec reward(0.0, e2);
      Matrix s(2, 2);
      s << 1.0, cfg.rho, cfg.rho, 1.0;
      // Latents and noise use the exact (possibly singular) matrices.
      const Belief exact{Vector::Zero(2), s};
      std::vector<ArmLatent> arms;
      for (ArmId a = 0; a < cfg.num_arms; ++a) arms.push_back(make_arm(a, "", sample_belief(exact, env_rng), reward));
      w.env = std::make_unique<GaussianEnvironment>(std::move(arms), s2 * s, reward,
                                                    DelaySchedule({0, cfg.d_max}));
      w.priors.emplace("", std::move(prior));
      break;
    }
    case EnvKind::replay:
    case EnvKind::nonstationary: {
      if (!replay) throw InvalidArgument("make_world: replay data not prepared");
      const int n = static_cast<int>(replay->live->num_arms());
      RewardSpec reward(0.0, Vector::Ones(replay->live->j_outcomes));
      const auto delays = DelaySchedule::staggered(replay->live->j_outcomes);
      std::vector<ArmId> order(static_cast<std::size_t>(n));
      std::iota(order.begin(), order.end(), 0);
      if (cfg.env == EnvKind::replay) {
        w.env = std::make_unique<ReplayEnvironment>(replay->live, reward, delays, order);
      } else {
        std::shuffle(order.begin(), order.end(), env_rng);
        const int active = std::min(cfg.active_arms, n);
        if (n - active < cfg.horizon)
          throw InvalidArgument("nonstationary: " + std::to_string(n) + " arms cannot support " +
                                std::to_string(active) + " active arms over T = " + std::to_string(cfg.horizon));
        std::vector<ArmId> initial(order.begin(), order.begin() + active);
        std::deque<ArmId> reservoir(order.begin() + active, order.end());
        auto env = std::make_unique<ReplayEnvironment>(replay->live, reward, delays, initial, reservoir);
        env->set_rotating(true);
        w.env = std::move(env);
      }
      w.priors = replay->priors;
      break;
    }
  }
  return w;
}

// ---------------------------------------------------------------------------
// Episodes

/// Called for every datum a policy consumes: (t, tau, j) with j 0-based.
using ConsumeObserver = std::function<void(int t, int tau, int j)>;

struct EpisodeKeys {
  std::uint64_t seed = 1;
  int replication = 0;
  bool common_random_numbers = true;
};

struct EpisodeResult {
  RegretRecord regret;
  std::vector<ArmId> final_arms;
  std::vector<RewardMoments> final_moments;
};

inline std::map<std::string, PriorParams> policy_priors(const PolicySpec& spec,
                                                        const std::map<std::string, PriorParams>& model,
                                                        int j_outcomes) {
  if (!spec.isotropic_prior) return model;
  std::map<std::string, PriorParams> out;
  for (const auto& [z, p] : model) out.emplace(z, isotropic_prior(j_outcomes));
  return out;
}

/// One episode of T batches of m users:
///   1. absorb outcomes that become visible at t under the policy's view;
///   2. assign the m users;
///   3. realize Y_u(A_u) and Y_u(A*) and record the batch regret;
///   4. store the batch and advance the environment.
inline EpisodeResult run_episode(const Environment& env_template, const PolicySpec& spec,
                                 const std::map<std::string, PriorParams>& model, int horizon, int m,
                                 const EpisodeKeys& keys, const ConsumeObserver& observer = {}) {
  auto env = env_template.clone();
  const int j_env = env->outcome_dim();
  PolicyState state(policy_priors(spec, model, j_env), FeedbackView::make(spec.view, env->delays(), env->reward()));
  const auto& view_delays = state.view().delays;
  Rng policy_rng = make_rng(keys.seed, keys.replication, hash_name("policy"), hash_name(spec.name));
  const std::uint64_t outcome_key = keys.common_random_numbers ? 0 : hash_name(spec.name);

  struct Cell {
    double count = 0.0;
    Vector sum;
  };
  std::vector<std::map<ArmId, Cell>> history(static_cast<std::size_t>(horizon) + 1);

  EpisodeResult out;
  out.regret.policy = spec.name;
  out.regret.replication = keys.replication;
  out.regret.delta.reserve(static_cast<std::size_t>(horizon));

  const auto& arms = env->arms();
  std::vector<double> r_opt(static_cast<std::size_t>(m)), r_asg(static_cast<std::size_t>(m));

  for (int t = 1; t <= horizon; ++t) {
    for (int j = 0; j < state.dim(); ++j) {
      const int tau = t - 1 - view_delays[j];
      if (tau < 1) continue;
      for (const auto& [arm, cell] : history[static_cast<std::size_t>(tau)]) {
        if (observer) observer(t, tau, j);
        state.absorb({arm, j, cell.count, cell.sum});
      }
    }

    const auto active = env->active_arms();
    for (ArmId a : active) state.add_arm(a, arms[static_cast<std::size_t>(a)].z);
    state.set_candidates(active);
    const auto assigned = policy_assign(spec, state, m, policy_rng);
    const ArmId best = env->optimal_arm();

    auto& batch = history[static_cast<std::size_t>(t)];
    for (int u = 0; u < m; ++u) {
      const ArmId a = assigned[static_cast<std::size_t>(u)];
      Rng ra = make_rng(keys.seed, keys.replication, hash_name("outcome"), outcome_key, t, u, a);
      Vector y = env->potential_outcome(a, ra);
      double r_best;
      if (a == best) {
        r_best = env->reward()(y);
      } else {
        Rng rb = make_rng(keys.seed, keys.replication, hash_name("outcome"), outcome_key, t, u, best);
        r_best = env->reward()(env->potential_outcome(best, rb));
      }
      r_opt[static_cast<std::size_t>(u)] = r_best;
      r_asg[static_cast<std::size_t>(u)] = env->reward()(y);
      auto& cell = batch[a];
      if (cell.count == 0.0) cell.sum = Vector::Zero(j_env);
      cell.count += 1.0;
      cell.sum += y;
    }
    out.regret.delta.push_back(instantaneous_regret(r_opt, r_asg));
    env->end_of_batch(t);
  }

  for (ArmId a : state.candidates()) {
    out.final_arms.push_back(a);
    out.final_moments.push_back(state.reward_moments(a));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Replications

struct RunResult {
  ExperimentConfig config;
  std::vector<RegretRecord> records;  // ordered by (policy, replication)
  double wall_seconds = 0.0;

  std::vector<RegretRecord> of(const std::string& policy) const {
    std::vector<RegretRecord> out;
    for (const auto& r : records)
      if (r.policy == policy) out.push_back(r);
    return out;
  }
};

inline RunResult run_replications(const ExperimentConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  std::unique_ptr<ReplayShared> replay;
  if (cfg.env == EnvKind::replay || cfg.env == EnvKind::nonstationary)
    replay = std::make_unique<ReplayShared>(prepare_replay(cfg));

  const std::size_t n_pol = cfg.policies.size();
  const std::size_t n_rep = static_cast<std::size_t>(cfg.replications);
  std::vector<RegretRecord> slots(n_pol * n_rep);

  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  auto worker = [&] {
    while (true) {
      const std::size_t rep = next.fetch_add(1);
      if (rep >= n_rep) return;
      try {
        const World world = make_world(cfg, static_cast<int>(rep), replay.get());
        for (std::size_t p = 0; p < n_pol; ++p) {
          PolicySpec spec = cfg.policies[p];
          if (spec.n_mc <= 0) spec.n_mc = cfg.n_mc;
          const EpisodeKeys keys{cfg.seed, static_cast<int>(rep), cfg.common_random_numbers};
          slots[p * n_rep + rep] =
              run_episode(*world.env, spec, world.priors, cfg.horizon, cfg.batch_size, keys).regret;
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next = n_rep;
        return;
      }
    }
  };
  const int jobs = std::min<int>(cfg.jobs, static_cast<int>(n_rep));
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < jobs; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (error) std::rethrow_exception(error);

  RunResult out;
  out.config = cfg;
  out.records = std::move(slots);
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

// ---------------------------------------------------------------------------
// Presets

inline std::vector<PolicySpec> roster(std::initializer_list<const char*> names) {
  std::vector<PolicySpec> out;
  for (const char* n : names) out.push_back(policy_spec(n));
  return out;
}

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"genmodel", "genmodel-ratio", "replay-200", "priors", "nonstationary",
                                              "seqelim",  "surrogate",      "pure-delay"};
  return names;
}

inline ExperimentConfig preset(const std::string& name) {
  ExperimentConfig c;
  c.preset = name;
  if (name == "genmodel" || name == "genmodel-ratio") {
    c.env = EnvKind::synthetic;
    c.alpha = 0.8;
    c.j_outcomes = 25;
    c.num_arms = 20;
    c.horizon = 50;
    c.batch_size = 10;
    c.replications = 500;
    c.policies = roster({"progressive", "delayed"});
    return c;
  }
  if (name == "replay-200" || name == "priors") {
    c.env = EnvKind::replay;
    c.traces.num_arms = 200;
    c.horizon = 120;
    c.batch_size = name == "priors" ? 50 : 10;
    c.replications = 10;
    c.policies = name == "priors" ? roster({"progressive", "progressive_isotropic", "delayed"})
                                  : roster({"progressive", "delayed", "day_two", "oracle"});
    return c;
  }
  if (name == "nonstationary") {
    c.env = EnvKind::nonstationary;
    c.traces.num_arms = 200;
    c.active_arms = 60;
    c.horizon = 120;
    c.batch_size = 50;
    c.replications = 10;
    c.policies = roster({"progressive", "delayed", "day_two"});
    return c;
  }
  if (name == "seqelim") {
    c.env = EnvKind::synthetic;
    c.alpha = 0.4;
    c.j_outcomes = 25;
    c.num_arms = 20;
    c.horizon = 50;
    c.batch_size = 10;
    c.replications = 5000;
    c.policies = roster({"progressive", "seq_elim_1pct", "seq_elim_4pct"});
    return c;
  }
  if (name == "surrogate" || name == "pure-delay") {
    c.env = EnvKind::two_outcome;
    c.rho = name == "surrogate" ? 1.0 : 0.0;
    c.d_max = 10;
    c.num_arms = 10;
    c.horizon = 30;
    c.batch_size = 10;
    c.replications = 500;
    c.policies = name == "surrogate" ? roster({"progressive", "oracle"}) : roster({"progressive", "delayed"});
    return c;
  }
  std::string valid;
  for (const auto& n : preset_names()) valid += (valid.empty() ? "" : ", ") + n;
  throw LookupError("unknown preset '" + name + "' (valid: " + valid + ")");
}

/// Thresholds of the elimination variants in a config.
inline std::vector<double> elimination_thresholds(const ExperimentConfig& c) {
  std::vector<double> out;
  for (const auto& p : c.policies)
    if (p.kind == PolicyKind::seq_elim) out.push_back(p.threshold);
  return out;
}

// ---------------------------------------------------------------------------
// Output

inline void write_summary_csv(std::ostream& out, const RunResult& run) {
  out << "policy,t,mean_delta,stderr_delta,mean_cumulative,stderr_cumulative\n";
  for (const auto& p : run.config.policies) {
    const auto recs = run.of(p.name);
    const auto d = curve_stats(deltas_of(recs));
    const auto c = curve_stats(cumulatives_of(recs));
    for (std::size_t t = 0; t < d.mean.size(); ++t)
      out << p.name << ',' << t + 1 << ',' << csv::format_double(d.mean[t]) << ',' << csv::format_double(d.stderr_[t])
          << ',' << csv::format_double(c.mean[t]) << ',' << csv::format_double(c.stderr_[t]) << '\n';
  }
}

/// key,value lines describing the resolved run. `include_timing` adds the
/// wall-clock entry, which is the only non-deterministic field.
inline void write_manifest_csv(std::ostream& out, const RunResult& run, bool include_timing = true) {
  const auto& c = run.config;
  std::string policies;
  for (const auto& p : c.policies) policies += (policies.empty() ? "" : ";") + p.name;
  out << "key,value\n";
  out << "preset," << c.preset << '\n';
  out << "seed," << c.seed << '\n';
  out << "version," << IMPATIENT_VERSION << '\n';
  out << "env," << to_string(c.env) << '\n';
  out << "policies," << policies << '\n';
  out << "T," << c.horizon << '\n';
  out << "m," << c.batch_size << '\n';
  out << "replications," << c.replications << '\n';
  out << "n_mc," << c.n_mc << '\n';
  out << "crn," << (c.common_random_numbers ? 1 : 0) << '\n';
  if (c.env == EnvKind::synthetic) {
    out << "alpha," << csv::format_double(c.alpha) << '\n';
    out << "J," << c.j_outcomes << '\n';
    out << "num_arms," << c.num_arms << '\n';
  } else if (c.env == EnvKind::two_outcome) {
    out << "rho," << csv::format_double(c.rho) << '\n';
    out << "sigma_r2," << csv::format_double(c.sigma_r2 > 0 ? c.sigma_r2 : c.batch_size) << '\n';
    out << "d_max," << c.d_max << '\n';
    out << "num_arms," << c.num_arms << '\n';
  } else {
    out << "traces," << (c.traces_path.empty() ? "generated" : c.traces_path) << '\n';
    out << "num_arms," << c.traces.num_arms << '\n';
    out << "J," << c.traces.j_outcomes << '\n';
    if (c.env == EnvKind::nonstationary) out << "active_arms," << c.active_arms << '\n';
  }
  if (include_timing) out << "wall_clock_seconds," << csv::format_short(run.wall_seconds) << '\n';
}

inline std::vector<VopfRow> synthetic_vopf_rows(const ExperimentConfig& c) {
  std::vector<VopfRow> rows;
  const SyntheticEnvSpec spec{c.alpha, c.j_outcomes, c.batch_size, c.num_arms};
  VopfQuery q{synthetic_prior(spec), synthetic_reward(spec), DelaySchedule::staggered(c.j_outcomes), c.batch_size, 1};
  for (int t = 1; t <= c.horizon; ++t) {
    q.t = t;
    rows.push_back({c.preset, c.batch_size, t, vopf_general(q)});
  }
  return rows;
}

/// Writes regret.csv, summary.csv, manifest.csv, and where meaningful
/// ratio.csv and vopf.csv.
inline void write_outputs(const RunResult& run, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream f(dir / name, std::ios::binary);
    if (!f) throw Error("cannot write '" + (dir / name).string() + "'");
    return f;
  };
  {
    auto f = open("regret.csv");
    write_regret_csv(f, run.records);
  }
  {
    auto f = open("summary.csv");
    write_summary_csv(f, run);
  }
  {
    auto f = open("manifest.csv");
    write_manifest_csv(f, run);
  }
  const auto prog = run.of("progressive");
  const auto del = run.of("delayed");
  if (!prog.empty() && !del.empty()) {
    auto f = open("ratio.csv");
    write_ratio_csv(f, run.config.preset, regret_ratio_log(prog, del));
  }
  if (run.config.env == EnvKind::synthetic) {
    auto f = open("vopf.csv");
    write_vopf_csv(f, synthetic_vopf_rows(run.config));
  }
}

}  // namespace impatient
