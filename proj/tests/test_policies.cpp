#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace impatient;
using namespace testing_support;

namespace {

FeedbackView progressive_view(int j) {
  return FeedbackView::make(ViewMode::progressive, DelaySchedule::staggered(j), RewardSpec(0.0, Vector::Ones(j)));
}

/// State whose arms have beliefs N(means[a], eps I) via a tight prior.
PolicyState separated_state(const std::vector<double>& means, double eps) {
  std::map<std::string, PriorParams> priors;
  for (std::size_t a = 0; a < means.size(); ++a)
    priors.emplace("c" + std::to_string(a),
                   PriorParams(Vector::Constant(1, means[a]), eps * Matrix::Identity(1, 1), Matrix::Identity(1, 1)));
  PolicyState s(priors, progressive_view(1));
  std::vector<ArmId> ids;
  for (std::size_t a = 0; a < means.size(); ++a) {
    s.add_arm(static_cast<ArmId>(a), "c" + std::to_string(a));
    ids.push_back(static_cast<ArmId>(a));
  }
  s.set_candidates(ids);
  return s;
}

PolicyState symmetric_state(int arms, int j = 2) {
  Rng setup(42);
  const PriorParams p(Vector::Zero(j), random_spd(j, setup), random_spd(j, setup));
  PolicyState s(p, progressive_view(j));
  std::vector<ArmId> ids;
  for (ArmId a = 0; a < arms; ++a) {
    s.add_arm(a);
    ids.push_back(a);
  }
  s.set_candidates(ids);
  return s;
}

double frequency(const std::vector<ArmId>& xs, ArmId a) {
  return static_cast<double>(std::count(xs.begin(), xs.end(), a)) / static_cast<double>(xs.size());
}

AllocationProbs probs_of(std::vector<double> p) {
  AllocationProbs out;
  for (std::size_t i = 0; i < p.size(); ++i) out.arms.push_back(static_cast<ArmId>(i));
  out.probs = std::move(p);
  return out;
}

}  // namespace

TEST(FeedbackView, EffectiveSchedules) {
  const auto d = DelaySchedule({0, 2, 5});
  const RewardSpec r(1.0, Vector::Ones(3));
  EXPECT_EQ(FeedbackView::make(ViewMode::progressive, d, r).delays, d);
  EXPECT_EQ(FeedbackView::make(ViewMode::delayed, d, r).delays, DelaySchedule::constant(3, 5));
  EXPECT_EQ(FeedbackView::make(ViewMode::oracle, d, r).delays, DelaySchedule::constant(3, 0));
  const auto two = FeedbackView::make(ViewMode::day_two_proxy, d, r);
  EXPECT_EQ(two.outcomes(), 2);
  EXPECT_EQ(two.delays.values(), (std::vector<int>{0, 2}));
  EXPECT_EQ(two.reward.r1, Vector::Unit(2, 1));
  EXPECT_EQ(two.reward.r0, 0.0);
}

TEST(FeedbackView, RejectsNonMonotoneDelaysAndShortDayTwo) {
  EXPECT_THROW(FeedbackView::make(ViewMode::progressive, DelaySchedule({3, 1}), RewardSpec(0, Vector::Ones(2))),
               InvalidArgument);
  EXPECT_THROW(FeedbackView::make(ViewMode::day_two_proxy, DelaySchedule({0}), RewardSpec(0, Vector::Ones(1))),
               InvalidArgument);
}

TEST(PolicyState, DayTwoUsesLeadingMarginal) {
  Rng setup(1);
  const PriorParams p(random_vector(4, setup), random_spd(4, setup), random_spd(4, setup));
  const auto view = FeedbackView::make(ViewMode::day_two_proxy, DelaySchedule::staggered(4), RewardSpec(0, Vector::Ones(4)));
  PolicyState s(p, view);
  s.add_arm(0);
  const Belief b = s.belief(0);
  EXPECT_LT(max_abs(b.mean - p.mu1().head(2)), 1e-12);
  EXPECT_LT(max_abs(b.cov - p.sigma1().topLeftCorner(2, 2)), 1e-10);
  EXPECT_NEAR(s.reward_moments(0).var, p.sigma1()(1, 1), 1e-10);
}

TEST(PolicyState, UnknownClassAndArm) {
  std::map<std::string, PriorParams> priors{
      {"a", PriorParams(Vector::Zero(1), Matrix::Identity(1, 1), Matrix::Identity(1, 1))},
      {"b", PriorParams(Vector::Zero(1), Matrix::Identity(1, 1), Matrix::Identity(1, 1))}};
  PolicyState s(priors, progressive_view(1));
  EXPECT_THROW(s.add_arm(0, "c"), LookupError);
  EXPECT_THROW(s.belief(5), LookupError);
  EXPECT_THROW(s.set_candidates({5}), LookupError);
}

TEST(ApplyFeedback, BlockRevealsMatchPerUserUpdatesAndOracle) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const int j = 4;
    const PriorParams p(random_vector(j, rng), random_spd(j, rng), random_spd(j, rng));
    PolicyState block(p, progressive_view(j));
    PolicyState single(p, progressive_view(j));
    block.add_arm(0);
    single.add_arm(0);
    std::vector<MaskedOutcome> users;
    for (int u = 0; u < 5; ++u) users.push_back({random_vector(j, rng), random_prefix_mask(j, rng)});
    for (int k = 0; k < j; ++k) {
      Reveal r{0, k, 0.0, Vector::Zero(j)};
      for (const auto& u : users) {
        if (!u.observed[static_cast<std::size_t>(k)]) continue;
        r.count += 1.0;
        r.sum_y += u.y;
        std::vector<double> prefix(u.y.data(), u.y.data() + k + 1);
        apply_feedback(single, 0, k, prefix);
      }
      apply_feedback(block, std::span<const Reveal>(&r, 1));
    }
    const Belief oracle = posterior_batch_oracle(p, users);
    for (const auto* s : {&block, &single}) {
      const Belief b = s->belief(0);
      EXPECT_LT(max_abs(b.mean - oracle.mean), 1e-8);
      EXPECT_LT(max_abs(b.cov - oracle.cov), 1e-8);
      EXPECT_LT(max_abs(s->posterior_mean(0) - oracle.mean), 1e-8);
    }
  }
}

TEST(ApplyFeedback, NothingNewLeavesStateUnchanged) {
  auto s = symmetric_state(2, 3);
  const Belief before = s.belief(0);
  apply_feedback(s, std::span<const Reveal>());
  const Reveal empty{0, 1, 0.0, Vector::Zero(3)};
  apply_feedback(s, std::span<const Reveal>(&empty, 1));
  const Belief after = s.belief(0);
  EXPECT_EQ(max_abs(after.mean - before.mean), 0.0);
  EXPECT_EQ(max_abs(after.cov - before.cov), 0.0);
}

namespace {

struct Assigned {
  int tau;
  Vector y;
};

/// Beliefs of arm 0 after absorbing, at time t, everything visible under the
/// view's effective delays.
Belief belief_at(const PriorParams& p, ViewMode mode, const DelaySchedule& env, const std::vector<Assigned>& users,
                 int t) {
  const auto view = FeedbackView::make(mode, env, RewardSpec(0, Vector::Ones(env.size())));
  PolicyState s(p, view);
  s.add_arm(0);
  for (const auto& u : users)
    for (int j = 0; j < view.outcomes(); ++j)
      if (view.delays.visible(u.tau, t, j)) {
        std::vector<double> prefix(u.y.data(), u.y.data() + j + 1);
        apply_feedback(s, 0, j, prefix);
      }
  return s.belief(0);
}

}  // namespace

TEST(ApplyFeedback, DelayedViewWithholdsPartialVisibility) {
  Rng rng(9);
  const int j = 3;
  const PriorParams p(Vector::Zero(j), random_spd(j, rng), random_spd(j, rng));
  const DelaySchedule env({0, 1, 4});
  const std::vector<Assigned> users{{1, random_vector(j, rng)}, {1, random_vector(j, rng)}};
  const Belief prior = Belief::from_prior(p);
  for (int t = 1; t <= 5; ++t) {
    const Belief b = belief_at(p, ViewMode::delayed, env, users, t);
    EXPECT_LT(max_abs(b.mean - prior.mean), 1e-12);
    EXPECT_LT(max_abs(b.cov - prior.cov), 1e-12);
  }
  // Once everything is visible, progressive and delayed agree with the oracle.
  std::vector<MaskedOutcome> full;
  for (const auto& u : users) full.push_back({u.y, std::vector<bool>(j, true)});
  const Belief oracle = posterior_batch_oracle(p, full);
  for (auto mode : {ViewMode::progressive, ViewMode::delayed}) {
    const Belief b = belief_at(p, mode, env, users, 6);
    EXPECT_LT(max_abs(b.mean - oracle.mean), 1e-8);
    EXPECT_LT(max_abs(b.cov - oracle.cov), 1e-8);
  }
}

TEST(ApplyFeedback, OracleViewMatchesProgressiveOnShiftedClock) {
  Rng rng(10);
  const int j = 3;
  const PriorParams p(random_vector(j, rng), random_spd(j, rng), random_spd(j, rng));
  const DelaySchedule env({0, 2, 3});
  std::vector<Assigned> users;
  const int t = 4;
  for (int tau = 1; tau < t; ++tau)
    for (int u = 0; u < 2; ++u) users.push_back({tau, random_vector(j, rng)});
  const Belief oracle = belief_at(p, ViewMode::oracle, env, users, t);
  const Belief prog = belief_at(p, ViewMode::progressive, env, users, t + env.d_max());
  EXPECT_LT(max_abs(oracle.mean - prog.mean), 1e-9);
  EXPECT_LT(max_abs(oracle.cov - prog.cov), 1e-9);
}

TEST(TsAssign, SingleArmAndSeparation) {
  auto one = separated_state({0.0}, 1.0);
  Rng rng(1);
  for (ArmId a : ts_assign(one, 20, rng)) EXPECT_EQ(a, 0);
  auto sep = separated_state({10.0, 0.0}, 1e-12);
  for (auto mode : {Sampling::reward_marginal, Sampling::full_vector})
    for (ArmId a : ts_assign(sep, 100, rng, mode)) EXPECT_EQ(a, 0);
}

TEST(TsAssign, SymmetricBeliefsSplitEvenly) {
  auto s = symmetric_state(2);
  Rng rng(2);
  for (auto mode : {Sampling::reward_marginal, Sampling::full_vector}) {
    const auto xs = ts_assign(s, 10000, rng, mode);
    EXPECT_NEAR(frequency(xs, 0), 0.5, 0.02);
  }
}

TEST(TsAssign, ScalarMarginalMatchesFullVectorLaw) {
  Rng setup(3);
  const int j = 3;
  std::map<std::string, PriorParams> priors;
  for (int a = 0; a < 3; ++a)
    priors.emplace(std::to_string(a), PriorParams(0.3 * random_vector(j, setup), random_spd(j, setup), random_spd(j, setup)));
  PolicyState s(priors, progressive_view(j));
  for (int a = 0; a < 3; ++a) s.add_arm(a, std::to_string(a));
  s.set_candidates({0, 1, 2});
  Rng r1(4), r2(5);
  const int n = 40000;
  const auto marg = ts_assign(s, n, r1, Sampling::reward_marginal);
  const auto full = ts_assign(s, n, r2, Sampling::full_vector);
  for (ArmId a = 0; a < 3; ++a) {
    const double p = frequency(marg, a);
    EXPECT_NEAR(p, frequency(full, a), 4.0 * std::sqrt(2.0 * p * (1 - p) / n) + 1e-3);
  }
}

TEST(TsSelect, MatchedDrawsAgreeWithManualArgmax) {
  Rng setup(6);
  std::vector<Belief> beliefs;
  for (int a = 0; a < 4; ++a) beliefs.push_back({random_vector(3, setup), random_spd(3, setup)});
  const RewardSpec r(0.0, (Vector(3) << 1, -0.5, 2).finished());
  for (int rep = 0; rep < 50; ++rep) {
    Rng a(100 + rep), b(100 + rep);
    const auto pick = ts_select(beliefs, r, a);
    std::size_t best = 0;
    double best_v = -1e300;
    for (std::size_t i = 0; i < beliefs.size(); ++i) {
      const double v = r(sample_belief(beliefs[i], b));
      if (v > best_v) {
        best_v = v;
        best = i;
      }
    }
    EXPECT_EQ(pick, best);
  }
}

TEST(TsProbs, Examples) {
  Rng rng(11);
  const auto one = separated_state({1.0}, 1.0);
  EXPECT_EQ(ts_probs(one, 100, rng).probs, std::vector<double>{1.0});
  const int n = 20000;
  const auto sym = ts_probs(symmetric_state(2), n, rng);
  EXPECT_NEAR(sym.probs[0], 0.5, 3 * std::sqrt(0.25 / n));
  EXPECT_NEAR(sym.probs[0] + sym.probs[1], 1.0, 1e-12);
  const auto dom = ts_probs(separated_state({10.0, 0.0}, 1e-12), 2048, rng);
  EXPECT_LT(dom.probs[1], 1e-3);
  EXPECT_THROW(ts_probs(one, 0, rng), InvalidArgument);
}

TEST(TsProbs, ConvergesToAssignmentFrequencies) {
  auto s = separated_state({0.0, 0.3, 0.6}, 0.25);
  Rng r1(12), r2(13);
  const int n = 40000;
  const auto probs = ts_probs(s, n, r1);
  const auto xs = ts_assign(s, n, r2);
  for (ArmId a = 0; a < 3; ++a) {
    const double p = probs.of(a);
    EXPECT_NEAR(p, frequency(xs, a), 4.0 * std::sqrt(2.0 * p * (1 - p) / n));
  }
}

TEST(RoundProbs, WorkedExample) {
  const auto r = round_probs(probs_of({0.23, 0.77}), 10);
  EXPECT_NEAR(r.probs[0], 0.3, 1e-15);
  EXPECT_NEAR(r.probs[1], 0.7, 1e-15);
  EXPECT_EQ(allocation_counts(r), (std::vector<long>{3, 7}));
}

TEST(RoundProbs, ExactMultiplesUnchanged) {
  const auto r = round_probs(probs_of({0.1, 0.2, 0.7}), 10);
  EXPECT_EQ(allocation_counts(r), (std::vector<long>{1, 2, 7}));
  EXPECT_NEAR(r.probs[0], 0.1, 1e-15);
}

TEST(RoundProbs, TiesGoToLowestIdAndInfeasible) {
  const auto r = round_probs(probs_of({0.45, 0.45, 0.1}), 20);
  EXPECT_EQ(allocation_counts(r), (std::vector<long>{9, 9, 2}));
  const auto tie = round_probs(probs_of({0.5, 0.5}), 3);
  EXPECT_EQ(allocation_counts(tie), (std::vector<long>{1, 2}));
  EXPECT_THROW(round_probs(probs_of({0.34, 0.33, 0.33}), 1), InfeasibleRounding);
  EXPECT_THROW(round_probs(probs_of({0.5, 0.4}), 10), InvalidArgument);
}

TEST(RoundProbs, ErrorBoundsOverRandomDistributions) {
  Rng rng(14);
  std::uniform_int_distribution<int> arms_dist(2, 8);
  std::exponential_distribution<double> expo(1.0);
  for (int trial = 0; trial < 10000; ++trial) {
    const int k = arms_dist(rng);
    const int m = 2 * k * (k - 1) + static_cast<int>(rng() % 50);
    std::vector<double> p(static_cast<std::size_t>(k));
    for (auto& v : p) v = expo(rng) + 1e-6;
    const double total = std::accumulate(p.begin(), p.end(), 0.0);
    for (auto& v : p) v /= total;
    const auto r = round_probs(probs_of(p), m);
    const double eps = static_cast<double>(k) * (k - 1) / m;
    double sum = 0.0;
    long units = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      sum += r.probs[i];
      EXPECT_LE(std::abs(p[i] - r.probs[i]), eps + 1e-12);
      EXPECT_GE(r.probs[i] / p[i], 1.0 - eps - 1e-12);
      units += allocation_counts(r)[i];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    EXPECT_EQ(units, m);
  }
}

TEST(TsRndAssign, CountsEqualRoundedAllocation) {
  auto s = separated_state({0.0, 0.2, 0.4}, 0.1);
  for (int seed = 0; seed < 20; ++seed) {
    Rng a(seed), b(seed);
    const int m = 50;
    const auto xs = ts_rnd_assign(s, m, 512, a);
    const auto counts = allocation_counts(round_probs(ts_probs(s, 512, b), m));
    ASSERT_EQ(xs.size(), static_cast<std::size_t>(m));
    for (ArmId k = 0; k < 3; ++k) EXPECT_EQ(std::count(xs.begin(), xs.end(), k), counts[static_cast<std::size_t>(k)]);
  }
  auto one = separated_state({0.0}, 1.0);
  Rng rng(1);
  const auto xs = ts_rnd_assign(one, 10, 64, rng);
  EXPECT_EQ(std::count(xs.begin(), xs.end(), 0), 10);
}

TEST(SeqElim, SingleArmKeepsEverything) {
  auto s = separated_state({0.0}, 1.0);
  Rng rng(1);
  const auto step = seq_elim_step(s, 0.01, 256, 7, rng);
  EXPECT_TRUE(step.eliminated.empty());
  EXPECT_EQ(step.assignments, std::vector<ArmId>(7, 0));
}

TEST(SeqElim, DominatedArmEliminatedFirstStep) {
  auto s = separated_state({0.0, -10.0, 0.0}, 1.0);
  Rng rng(2), probe(3);
  EXPECT_LT(ts_probs(s, 4096, probe).of(1), 1e-3);
  const auto step = seq_elim_step(s, 0.01, 2048, 10, rng);
  EXPECT_EQ(step.eliminated, std::vector<ArmId>{1});
  EXPECT_EQ(step.survivors, (std::vector<ArmId>{0, 2}));
  EXPECT_EQ(std::count(step.assignments.begin(), step.assignments.end(), 0), 5);
  EXPECT_EQ(std::count(step.assignments.begin(), step.assignments.end(), 2), 5);
  EXPECT_TRUE(s.eliminated(1));
}

TEST(SeqElim, NeverEliminatesEverythingAndSpreadsRemainders) {
  auto s = separated_state({5.0, 0.0, 0.0, 0.0}, 1e-6);
  Rng rng(4);
  const auto step = seq_elim_step(s, 0.04, 512, 3, rng);
  EXPECT_EQ(step.survivors, std::vector<ArmId>{0});
  EXPECT_EQ(step.assignments, std::vector<ArmId>(3, 0));

  auto even = separated_state({0.0, 0.0, 0.0}, 1.0);
  std::vector<int> counts(3, 0);
  for (int t = 0; t < 3; ++t)
    for (ArmId a : seq_elim_step(even, 0.01, 2048, 4, rng).assignments) ++counts[static_cast<std::size_t>(a)];
  EXPECT_EQ(counts, (std::vector<int>{4, 4, 4}));
}

TEST(Roster, NamesAndPresetsOfThresholds) {
  for (const auto& n : policy_names()) EXPECT_EQ(policy_spec(n).name, n);
  EXPECT_DOUBLE_EQ(policy_spec("seq_elim_1pct").threshold, 0.01);
  EXPECT_DOUBLE_EQ(policy_spec("seq_elim_4pct").threshold, 0.04);
  EXPECT_EQ(policy_spec("day_two").view, ViewMode::day_two_proxy);
  EXPECT_TRUE(policy_spec("progressive_isotropic").isotropic_prior);
  try {
    policy_spec("greedy");
    FAIL();
  } catch (const LookupError& e) {
    EXPECT_NE(std::string(e.what()).find("progressive_rnd"), std::string::npos);
  }
  const auto iso = isotropic_prior(3);
  EXPECT_EQ(max_abs(iso.sigma1() - 100.0 * Matrix::Identity(3, 3)), 0.0);
  EXPECT_EQ(max_abs(iso.v() - Matrix::Identity(3, 3)), 0.0);
}
