// impatient: run bandit simulations, fit priors, compute VoPF curves and
// generate binary trace datasets.

#include "impatient.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace impatient;

namespace {

/// Bad user input: exit code 2.
struct UsageError : Error {
  using Error::Error;
};

fs::path default_out_root() {
  if (const char* env = std::getenv("IMPATIENT_OUT_DIR"); env && *env) return env;
  return "out";
}

struct SimulateArgs {
  std::string preset;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> replications, jobs, m, horizon, n_mc, num_arms;
  std::optional<double> alpha, rho;
  std::optional<std::string> policies, traces;
  bool no_crn = false;
  std::string out;
};

int cmd_simulate(const SimulateArgs& a) {
  ExperimentConfig cfg;
  try {
    if (!a.config.empty()) {
      cfg = resolve_config(read_config_file(a.config));
      if (!a.preset.empty()) throw UsageError("--preset and --config are mutually exclusive");
    } else if (!a.preset.empty()) {
      cfg = preset(a.preset);
    } else {
      throw UsageError("simulate needs --preset or --config");
    }
    if (a.seed) cfg.seed = *a.seed;
    if (a.replications) cfg.replications = *a.replications;
    if (a.jobs) cfg.jobs = *a.jobs;
    if (a.m) cfg.batch_size = *a.m;
    if (a.horizon) cfg.horizon = *a.horizon;
    if (a.n_mc) cfg.n_mc = *a.n_mc;
    if (a.alpha) cfg.alpha = *a.alpha;
    if (a.rho) cfg.rho = *a.rho;
    if (a.num_arms) {
      cfg.num_arms = *a.num_arms;
      cfg.traces.num_arms = *a.num_arms;
    }
    if (a.traces) cfg.traces_path = *a.traces;
    if (a.no_crn) cfg.common_random_numbers = false;
    if (a.policies) apply_setting(cfg, "policies", *a.policies);
    cfg.validate();
  } catch (const ConfigError& e) {
    throw UsageError(std::string("config error [") + e.key + "]: " + e.what());
  } catch (const LookupError& e) {
    throw UsageError(e.what());
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }

  const fs::path out = a.out.empty() ? default_out_root() / cfg.preset : fs::path(a.out);
  std::cerr << "simulate: preset=" << cfg.preset << " env=" << to_string(cfg.env) << " T=" << cfg.horizon
            << " m=" << cfg.batch_size << " replications=" << cfg.replications << " seed=" << cfg.seed << '\n';
  const RunResult run = run_replications(cfg);
  write_outputs(run, out);
  for (const auto& p : cfg.policies) {
    const auto stats = curve_stats(cumulatives_of(run.of(p.name)));
    std::printf("%-24s cumulative regret at T: %.4f (se %.4f)\n", p.name.c_str(), stats.mean.back(),
                stats.stderr_.back());
  }
  std::cerr << "wrote " << out.string() << " in " << csv::format_short(run.wall_seconds) << " s\n";
  return 0;
}

int cmd_fit_prior(const std::string& traces, const std::string& out_arg) {
  TraceDataset data;
  try {
    data = read_traces_csv(traces);
    data.validate();
  } catch (const TraceFormatError& e) {
    throw UsageError(traces + ": " + e.what());
  } catch (const DimensionError& e) {
    throw UsageError(e.what());
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
  FittedPrior fitted;
  try {
    fitted = fit_prior(data);
  } catch (const InsufficientData& e) {
    throw UsageError(e.what());
  }
  const fs::path out = out_arg.empty() ? default_out_root() / "prior" : fs::path(out_arg);
  write_prior_bundle(fitted, out);
  for (const auto& w : fitted.warnings) std::cerr << "warning: " << w << '\n';
  for (const auto& [z, c] : fitted.classes)
    std::printf("class %s: %d arms, %ld traces\n", z.empty() ? "(none)" : z.c_str(), c.num_arms, c.num_traces);
  std::cerr << "wrote " << out.string() << '\n';
  return 0;
}

struct VopfArgs {
  std::string prior_dir;
  std::optional<double> alpha;
  int j_outcomes = 25;
  std::vector<int> m{10, 50, 200};
  int t_min = 1;
  int t_max = 0;
  std::string delays = "staggered";
  std::string out;
};

int cmd_vopf(const VopfArgs& a) {
  if (a.prior_dir.empty() == !a.alpha) throw UsageError("vopf needs exactly one of --prior or --alpha");
  if (a.m.empty()) throw UsageError("--m needs at least one batch size");
  for (int m : a.m)
    if (m < 1) throw UsageError("--m values must be >= 1");
  if (a.delays != "staggered" && a.delays != "pure") throw UsageError("--delays must be 'staggered' or 'pure'");

  struct Source {
    std::string label;
    PriorParams prior;
    RewardSpec reward;
  };
  std::vector<Source> sources;
  if (a.alpha) {
    if (!(*a.alpha >= 0.0 && *a.alpha < 1.0)) throw UsageError("--alpha must lie in [0, 1)");
    if (a.j_outcomes < 1) throw UsageError("--J must be >= 1");
    for (int m : a.m) {
      const SyntheticEnvSpec spec{*a.alpha, a.j_outcomes, m, 1};
      sources.push_back({"synthetic-m" + std::to_string(m), synthetic_prior(spec), synthetic_reward(spec)});
    }
  } else {
    FittedPrior fitted;
    try {
      fitted = read_prior_bundle(a.prior_dir);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    for (const auto& [z, p] : fitted.to_prior_params())
      sources.push_back({z.empty() ? std::string("all") : z, p, RewardSpec(0.0, Vector::Ones(p.dim()))});
  }

  std::vector<VopfRow> rows;
  for (std::size_t s = 0; s < sources.size(); ++s) {
    const auto& src = sources[s];
    const int j = src.prior.dim();
    const auto delays = a.delays == "pure" ? DelaySchedule::constant(j, j - 1) : DelaySchedule::staggered(j);
    const int t_max = a.t_max > 0 ? a.t_max : 2 * j;
    if (a.t_min < 1 || t_max < a.t_min) throw UsageError("bad t range");
    const std::vector<int> ms = a.alpha ? std::vector<int>{a.m[s]} : a.m;
    for (int m : ms)
      for (int t = a.t_min; t <= t_max; ++t)
        rows.push_back({src.label, m, t, vopf_general({src.prior, src.reward, delays, m, t})});
  }
  const fs::path out = a.out.empty() ? default_out_root() / "vopf.csv" : fs::path(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream f(out, std::ios::binary);
  if (!f) throw Error("cannot write '" + out.string() + "'");
  write_vopf_csv(f, rows);
  std::cerr << "wrote " << out.string() << " (" << rows.size() << " rows)\n";
  return 0;
}

struct GenArgs {
  BinaryTraceParams params;
  std::uint64_t seed = 1;
  std::string out;
};

int cmd_gen_traces(const GenArgs& a) {
  if (a.params.traces_per_arm < 1) throw UsageError("--traces-per-arm must be >= 1");
  if (a.params.num_arms < 1) throw UsageError("--arms must be >= 1");
  if (a.params.j_outcomes < 1) throw UsageError("--J must be >= 1");
  if (a.params.num_classes < 1) throw UsageError("--classes must be >= 1");
  Rng rng = make_rng(a.seed, hash_name("gen-traces"));
  const TraceDataset data = gen_binary_traces(a.params, rng);
  const fs::path out = a.out.empty() ? default_out_root() / "traces.csv" : fs::path(a.out);
  if (out.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(out.parent_path(), ec);
  }
  std::ofstream f(out, std::ios::binary);
  if (!f) throw Error("cannot write '" + out.string() + "'");
  write_traces_csv(f, data);
  f.close();
  if (!f) throw Error("failed writing '" + out.string() + "'");
  std::cerr << "wrote " << out.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bandit simulations with progressively revealed outcomes"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Run a preset or config and write regret CSVs");
  simulate->add_option("--preset", sim.preset, "Preset name");
  simulate->add_option("--config", sim.config, "Config file (key = value, [policy.NAME] sections)");
  simulate->add_option("--seed", sim.seed, "Master seed");
  simulate->add_option("--replications", sim.replications, "Number of replications");
  simulate->add_option("--jobs", sim.jobs, "Worker threads");
  simulate->add_option("--m", sim.m, "Batch size");
  simulate->add_option("--T", sim.horizon, "Horizon in batches");
  simulate->add_option("--n-mc", sim.n_mc, "Monte-Carlo draws for allocation probabilities");
  simulate->add_option("--alpha", sim.alpha, "Synthetic information level");
  simulate->add_option("--rho", sim.rho, "Two-outcome correlation");
  simulate->add_option("--arms", sim.num_arms, "Number of arms");
  simulate->add_option("--policies", sim.policies, "Comma-separated policy roster");
  simulate->add_option("--traces", sim.traces, "Trace CSV for replay environments");
  simulate->add_flag("--no-crn", sim.no_crn, "Give each policy its own outcome stream");
  simulate->add_option("--out", sim.out, "Output directory");

  std::string fit_traces, fit_out;
  auto* fit = app.add_subcommand("fit-prior", "Fit per-class priors from a trace CSV");
  fit->add_option("traces", fit_traces, "Trace CSV")->required();
  fit->add_option("--out", fit_out, "Output directory");

  VopfArgs vopf;
  auto* vopf_cmd = app.add_subcommand("vopf", "Compute VoPF over an (m, t) grid");
  vopf_cmd->add_option("--prior", vopf.prior_dir, "Prior bundle directory from fit-prior");
  vopf_cmd->add_option("--alpha", vopf.alpha, "Use the synthetic prior with this alpha");
  vopf_cmd->add_option("--J", vopf.j_outcomes, "Outcomes for the synthetic prior");
  vopf_cmd->add_option("--m", vopf.m, "Batch sizes")->delimiter(',');
  vopf_cmd->add_option("--t-min", vopf.t_min, "First decision time");
  vopf_cmd->add_option("--t-max", vopf.t_max, "Last decision time (default 2J)");
  vopf_cmd->add_option("--delays", vopf.delays, "staggered (d_j = j-1) or pure (all d_j = J-1)");
  vopf_cmd->add_option("--out", vopf.out, "Output CSV path");

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-traces", "Generate a binary engagement trace dataset");
  gen_cmd->add_option("--arms", gen.params.num_arms, "Number of arms");
  gen_cmd->add_option("--traces-per-arm", gen.params.traces_per_arm, "Traces per arm");
  gen_cmd->add_option("--J", gen.params.j_outcomes, "Days per trace");
  gen_cmd->add_option("--classes", gen.params.num_classes, "Feature classes");
  gen_cmd->add_option("--seed", gen.seed, "Seed");
  gen_cmd->add_option("--out", gen.out, "Output CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(sim);
    if (fit->parsed()) return cmd_fit_prior(fit_traces, fit_out);
    if (vopf_cmd->parsed()) return cmd_vopf(vopf);
    if (gen_cmd->parsed()) return cmd_gen_traces(gen);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
