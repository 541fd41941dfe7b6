#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <sstream>

#include "json.hpp"
#include "slate/variance_lab.hpp"

using namespace slate;
using namespace slate::lab;

namespace {

RewardProcessSpec iid_spec() { return RewardProcessSpec{}; }  // T=4, unit scales

RewardProcessSpec coupled_spec() {
  RewardProcessSpec s;
  s.coupling = Coupling::prefix_coupled;
  s.coupling_strength = 0.5;
  return s;
}

// negative future covariance with a loud first step: the one regime where the
// step-level variance is allowed to exceed the trajectory-level one
RewardProcessSpec violation_spec() {
  RewardProcessSpec s;
  s.horizon = 2;
  s.step_scales = {2.0 / 3.0, 0.06};
  s.future_covariance = -1.0;
  return s;
}

RewardProcessSpec lopsided_spec() {
  RewardProcessSpec s;
  s.step_scales = {2.0, 1.0, 1.0, 0.5};
  return s;
}

std::shared_ptr<const policy::Vocabulary> vocab12() {
  static auto v = std::make_shared<const policy::Vocabulary>(12, 2);
  return v;
}

policy::PolicyModel pinned_policy(const env::Task& task) {
  policy::PolicyModel m(vocab12(), policy::BlockShape{});
  const auto& v = m.vocab();
  const double w = 40.0;
  for (size_t i = 0; i < task.chain.size(); ++i) {
    const int e = task.chain[i];
    const policy::PrefixContext ctx{e};
    const bool terminal = i + 1 == task.chain.size();
    m.set_weight(m.feature_index(ctx, policy::Slot::think, 0), e, w);
    m.set_weight(m.feature_index(ctx, policy::Slot::decide, 0),
                 terminal ? v.answer_open() : v.search_open(), w);
    m.set_weight(m.feature_index(ctx, policy::Slot::query, 0), e, w);
    m.set_weight(m.feature_index(ctx, policy::Slot::answer, 0), e, w);
  }
  return m;
}

// answers immediately whatever the frontier looks like
policy::PolicyModel eager_policy() {
  policy::PolicyModel m(vocab12(), policy::BlockShape{});
  const auto& v = m.vocab();
  for (int e = 0; e < 12; ++e) {
    const policy::PrefixContext ctx{e};
    m.set_weight(m.feature_index(ctx, policy::Slot::think, 0), e, 40.0);
    m.set_weight(m.feature_index(ctx, policy::Slot::decide, 0), v.answer_open(),
                 40.0);
    m.set_weight(m.feature_index(ctx, policy::Slot::answer, 0), e, 40.0);
  }
  return m;
}

// never answers on its own; decide flips to answer only when constrained
policy::PolicyModel searcher_policy() {
  policy::PolicyModel m(vocab12(), policy::BlockShape{});
  const auto& v = m.vocab();
  for (int e = 0; e < 12; ++e)
    m.set_weight(m.feature_index(policy::PrefixContext{e}, policy::Slot::decide, 0),
                 v.search_open(), 40.0);
  return m;
}

policy::PolicyModel random_policy(uint64_t seed) {
  policy::PolicyModel m(vocab12(), policy::BlockShape{});
  Rng rng(seed);
  for (double& w : m.mutable_weights()) w = 2.0 * rng.uniform() - 1.0;
  return m;
}

bool within(const Estimate& e, double expect, double slack = 0.0) {
  return std::abs(e.value - expect) <= 3.0 * e.ci + slack;
}

}  // namespace

// ============================================================
// estimator plumbing
// ============================================================

TEST_CASE("batched mean recovers the sample mean with a finite interval") {
  const Estimate e = batched_mean({1.0, 2.0, 3.0, 4.0});
  CHECK(e.value == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(e.trials == 4);
  CHECK(e.ci > 0.0);

  const Estimate flat = batched_mean(std::vector<double>(64, 1.25));
  CHECK(flat.value == doctest::Approx(1.25).epsilon(1e-12));
  CHECK(flat.ci == doctest::Approx(0.0).scale(1.0).epsilon(1e-15));

  CHECK_THROWS_AS(batched_mean({}), std::invalid_argument);
}

TEST_CASE("token cost accounting matches the worked example") {
  const TokenCost c = token_cost_accounting(8, 4, 100.0, 2);
  CHECK(c.full_group == doctest::Approx(800.0).epsilon(1e-12));
  CHECK(c.truncated == doctest::Approx(200.0).epsilon(1e-12));
  CHECK(c.ratio == doctest::Approx(0.25).epsilon(1e-12));

  // k = G spends exactly the full-group budget
  const TokenCost even = token_cost_accounting(5, 4, 64.0, 5);
  CHECK(even.ratio == doctest::Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(token_cost_accounting(0, 4, 100.0, 2), std::invalid_argument);
  CHECK_THROWS_AS(token_cost_accounting(8, 0, 100.0, 2), std::invalid_argument);
  CHECK_THROWS_AS(token_cost_accounting(8, 4, 0.0, 2), std::invalid_argument);
  CHECK_THROWS_AS(token_cost_accounting(8, 4, 100.0, 0), std::invalid_argument);
}

TEST_CASE("synthetic process is deterministic per seed") {
  ProcessRewardSource src(coupled_spec());
  Rng a(42), b(42), c(43);
  const auto ta = src.sample_trajectory(a);
  const auto tb = src.sample_trajectory(b);
  REQUIRE(ta.size() == 4);
  CHECK(ta == tb);
  CHECK(src.sample_trajectory(c) != ta);

  Rng d(7), e(7);
  CHECK(src.sample_step_group(3, 6, d) == src.sample_step_group(3, 6, e));
}

TEST_CASE("iid ternary marginals have mean zero and variance two thirds") {
  ProcessRewardSource src(iid_spec());
  Rng rng(5);
  std::vector<double> sum(4, 0.0), sq(4, 0.0);
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const auto traj = src.sample_trajectory(rng);
    for (int t = 0; t < 4; ++t) {
      sum[t] += traj[t];
      sq[t] += traj[t] * traj[t];
    }
  }
  for (int t = 0; t < 4; ++t) {
    const double mean = sum[t] / n;
    const double var = sq[t] / n - mean * mean;
    CHECK(std::abs(mean) < 0.02);
    CHECK(var == doctest::Approx(2.0 / 3.0).epsilon(0.05));
  }
}

// ============================================================
// variance estimators against closed forms
// ============================================================

TEST_CASE("trajectory advantage variance matches (1 - 1/G) Var[R]") {
  ProcessRewardSource src(iid_spec());
  Rng rng(101);
  const Estimate e = estimate_traj_adv_variance(src, 5, 20000, rng);
  // T * (2/3) * (1 - 1/5) = 32/15
  CHECK(e.ci > 0.0);
  CHECK(e.ci < 0.08);
  CHECK(within(e, 32.0 / 15.0, 0.01));
}

TEST_CASE("step advantage variance matches the shared-prefix closed form") {
  ProcessRewardSource src(iid_spec());
  Rng rng(202);
  const Estimate e = estimate_step_adv_variance(src, 2, 5, 20000, rng);
  // (2/3) * (1 - 1/5) = 8/15
  CHECK(within(e, 8.0 / 15.0, 0.005));
}

TEST_CASE("return variance estimator and the G-scaling identity") {
  ProcessRewardSource src(iid_spec());
  Rng rng(303);
  const Estimate ret = estimate_return_variance(src, 2, 20000, rng);
  CHECK(within(ret, 8.0 / 3.0, 0.02));

  Rng rng2(304);
  const Estimate adv = estimate_traj_adv_variance(src, 5, 20000, rng2);
  CHECK(adv.value / ret.value == doctest::Approx(0.8).epsilon(0.05));
}

// ============================================================
// theorem checks on the synthetic configurations
// ============================================================

TEST_CASE("iid process certifies both clauses at the 1/T rate") {
  ProcessRewardSource src(iid_spec());
  const AssumptionFlags flags = assumption_flags(src.spec());
  CHECK(flags.a1);
  CHECK(flags.a2);
  CHECK(flags.a3);

  Rng rng(11);
  const TheoremCheck check = check_theorem(src, flags, 5, 20000, rng);
  REQUIRE(check.steps.size() == 4);
  CHECK(within(check.traj_adv_var, 32.0 / 15.0, 0.01));
  for (const auto& sr : check.steps) {
    CHECK(sr.ratio == doctest::Approx(0.25).epsilon(0.08));
    CHECK(std::abs(sr.ratio - 0.25) <= 3.0 * sr.ratio_ci + 0.01);
  }
  CHECK(check.max_ratio < 0.3);
  CHECK(check.clause1_ok);
  CHECK(check.clause2_applicable);
  CHECK(check.clause2_ok);
}

TEST_CASE("prefix coupling keeps the bound while breaking independence") {
  ProcessRewardSource src(coupled_spec());
  const AssumptionFlags flags = assumption_flags(src.spec());
  CHECK(flags.a1);
  CHECK_FALSE(flags.a2);
  CHECK(flags.a3);

  Rng rng(12);
  const TheoremCheck check = check_theorem(src, flags, 5, 20000, rng);
  CHECK(within(check.traj_adv_var, 7.2, 0.05));
  for (const auto& sr : check.steps)
    CHECK(sr.ratio == doctest::Approx(8.0 / 15.0 / 7.2).epsilon(0.1));
  CHECK(check.clause1_ok);
  CHECK_FALSE(check.clause2_applicable);
  CHECK_FALSE(check.clause2_ok);
}

TEST_CASE("negative future covariance violates the step-level bound") {
  ProcessRewardSource src(violation_spec());
  const AssumptionFlags flags = assumption_flags(src.spec());
  CHECK_FALSE(flags.a1);

  Rng rng(13);
  const TheoremCheck check = check_theorem(src, flags, 5, 20000, rng);
  CHECK(within(check.traj_adv_var, 0.061179259259259256, 0.002));
  // frozen: step-1 ratio 8/27 * 0.8 / 0.06117926 = 3.8744672607516
  CHECK(check.max_ratio == doctest::Approx(3.8744672607516).epsilon(0.08));
  CHECK(check.max_ratio > 1.0 + 3.0 * check.max_ratio_ci);
  CHECK_FALSE(check.clause1_ok);
  CHECK_FALSE(check.clause2_ok);
}

TEST_CASE("lopsided scales break symmetry but not the bound") {
  ProcessRewardSource src(lopsided_spec());
  const AssumptionFlags flags = assumption_flags(src.spec());
  CHECK(flags.a1);
  CHECK(flags.a2);
  CHECK_FALSE(flags.a3);

  Rng rng(14);
  const TheoremCheck check = check_theorem(src, flags, 5, 20000, rng);
  const double expect[4] = {0.64, 0.16, 0.16, 0.04};
  REQUIRE(check.steps.size() == 4);
  for (int t = 0; t < 4; ++t)
    CHECK(check.steps[t].ratio == doctest::Approx(expect[t]).epsilon(0.1));
  CHECK(check.max_ratio == doctest::Approx(0.64).epsilon(0.1));
  CHECK(check.clause1_ok);
  CHECK_FALSE(check.clause2_applicable);
}

TEST_CASE("single-step horizon sits exactly on the bound") {
  RewardProcessSpec spec;
  spec.horizon = 1;
  ProcessRewardSource src(spec);
  const AssumptionFlags flags = assumption_flags(spec);

  Rng rng(15);
  const TheoremCheck check = check_theorem(src, flags, 5, 20000, rng);
  REQUIRE(check.steps.size() == 1);
  CHECK(check.max_ratio == doctest::Approx(1.0).epsilon(0.08));
  CHECK(check.clause1_ok);  // only through the 3-sigma slack
  CHECK(check.clause2_applicable);
  CHECK(check.clause2_ok);
}

TEST_CASE("total variance decomposition closes on the coupled process") {
  ProcessRewardSource src(coupled_spec());
  Rng rng(16);
  const Decomposition d = total_variance_decomposition(src, 3, 8, 20000, rng);
  CHECK(d.t == 3);
  CHECK(d.m == 8);
  // marginal Var[r_3] = 2/3 + 0.25 * Var[a_1 + a_2] = 1
  CHECK(within(d.total, 1.0, 0.02));
  CHECK(within(d.within, 2.0 / 3.0, 0.01));
  CHECK(std::abs(d.between - 1.0 / 3.0) <= 3.0 * d.between_ci + 0.02);
  CHECK(d.gap < 0.05);
}

// ============================================================
// spec bookkeeping
// ============================================================

TEST_CASE("assumption flags track the process definition") {
  RewardProcessSpec pos_cov;
  pos_cov.future_covariance = 0.5;
  const AssumptionFlags f = assumption_flags(pos_cov);
  CHECK(f.a1);
  CHECK_FALSE(f.a2);
  CHECK(f.a3);

  RewardProcessSpec neg_coupling = coupled_spec();
  neg_coupling.coupling_strength = -0.25;
  CHECK_FALSE(assumption_flags(neg_coupling).a1);
}

TEST_CASE("config hash is stable and separates configurations") {
  const std::string a = config_hash(iid_spec());
  CHECK(a == config_hash(iid_spec()));
  CHECK(a.size() == 16);
  CHECK(a.find_first_not_of("0123456789abcdef") == std::string::npos);

  CHECK(a != config_hash(coupled_spec()));
  CHECK(a != config_hash(violation_spec()));
  CHECK(a != config_hash(lopsided_spec()));

  RewardProcessSpec explicit_ones;
  explicit_ones.step_scales = {1.0, 1.0, 1.0, 1.0};
  CHECK(a != config_hash(explicit_ones));  // spelled-out profile is distinct
}

TEST_CASE("estimator and process input validation") {
  ProcessRewardSource src(iid_spec());
  Rng rng(1);
  CHECK_THROWS_AS(estimate_traj_adv_variance(src, 1, 10, rng),
                  std::invalid_argument);
  CHECK_THROWS_AS(estimate_step_adv_variance(src, 2, 1, 10, rng),
                  std::invalid_argument);
  CHECK_THROWS_AS(estimate_return_variance(src, 1, 10, rng),
                  std::invalid_argument);
  CHECK_THROWS_AS(total_variance_decomposition(src, 1, 1, 100, rng),
                  std::invalid_argument);
  CHECK_THROWS_AS(src.sample_step_group(0, 5, rng), std::invalid_argument);
  CHECK_THROWS_AS(src.sample_step_group(5, 5, rng), std::invalid_argument);
  CHECK_THROWS_AS(src.sample_step_group(2, 0, rng), std::invalid_argument);

  RewardProcessSpec bad_horizon;
  bad_horizon.horizon = 0;
  CHECK_THROWS_AS(ProcessRewardSource{bad_horizon}, std::invalid_argument);

  RewardProcessSpec bad_scales;
  bad_scales.step_scales = {1.0, 2.0};  // horizon is 4
  CHECK_THROWS_AS(ProcessRewardSource{bad_scales}, std::invalid_argument);
}

// ============================================================
// live environment source
// ============================================================

TEST_CASE("live source on a pinned policy yields constant step rewards") {
  const uint64_t base = 99;
  const auto task0 = env::generate_task(derive_seed(base, kLabTaskStream, 0), 3, 12);
  const auto model = pinned_policy(task0);
  sampler::OracleJudge judge;
  sampler::RolloutConfig cfg;

  LiveRewardSource src(model, judge, cfg, base, 3, 12);
  CHECK(src.horizon() == 4);
  CHECK(src.current_task().id == task0.id);

  src.begin_trial(0);
  Rng rng(7);
  for (int rep = 0; rep < 5; ++rep) {
    const auto traj = src.sample_trajectory(rng);
    REQUIRE(traj.size() == 4);
    // three perfect searches then the constrained exact answer, no bonus
    for (double r : traj) CHECK(r == doctest::Approx(2.0).epsilon(1e-12));
  }

  // shared-prefix groups at every step score the same perfect candidates
  const auto group = src.sample_step_group(2, 4, rng);
  REQUIRE(group.size() == 4);
  for (double r : group) CHECK(r == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("live source zero-pads after an early answer") {
  const auto model = eager_policy();
  sampler::OracleJudge judge;
  sampler::RolloutConfig cfg;
  LiveRewardSource src(model, judge, cfg, 99, 3, 12);
  src.begin_trial(0);

  Rng rng(9);
  const auto traj = src.sample_trajectory(rng);
  REQUIRE(traj.size() == 4);
  // frontier think (+1), wrong early answer (-1), bonus 0.1 * 3/4
  CHECK(traj[0] == doctest::Approx(0.075).epsilon(1e-9));
  CHECK(traj[1] == 0.0);
  CHECK(traj[2] == 0.0);
  CHECK(traj[3] == 0.0);

  // the prefix answers before reaching step 2, so the group is empty of signal
  const auto late = src.sample_step_group(2, 4, rng);
  for (double r : late) CHECK(r == 0.0);

  const auto first = src.sample_step_group(1, 3, rng);
  for (double r : first) CHECK(r == doctest::Approx(0.075).epsilon(1e-9));
}

TEST_CASE("live source is deterministic given seed and trial") {
  const auto model = random_policy(21);
  sampler::OracleJudge judge;
  sampler::RolloutConfig cfg;
  LiveRewardSource a(model, judge, cfg, 77, 3, 12);
  LiveRewardSource b(model, judge, cfg, 77, 3, 12);
  a.begin_trial(4);
  b.begin_trial(4);
  Rng ra(55), rb(55);
  CHECK(a.sample_trajectory(ra) == b.sample_trajectory(rb));
  CHECK(a.sample_step_group(3, 5, ra) == b.sample_step_group(3, 5, rb));
}

TEST_CASE("theorem check runs end to end on the live environment") {
  const auto model = random_policy(3);
  sampler::OracleJudge judge;
  sampler::RolloutConfig cfg;
  LiveRewardSource src(model, judge, cfg, 500, 3, 12);

  Rng rng(31);
  const TheoremCheck check = check_theorem(src, AssumptionFlags{}, 5, 1000, rng);
  REQUIRE(check.steps.size() == 4);
  CHECK(check.traj_adv_var.value > 0.0);
  CHECK(check.traj_adv_var.ci > 0.0);
  for (const auto& sr : check.steps) CHECK(sr.ratio_ci > 0.0);
  CHECK(check.clause1_ok);
  CHECK_FALSE(check.clause2_applicable);
}

TEST_CASE("measured token costs match the hand count for a pure searcher") {
  const auto model = searcher_policy();
  sampler::OracleJudge judge;
  sampler::RolloutConfig cfg;
  cfg.k = 2;

  Rng rng(61);
  const MeasuredTokens m =
      measure_token_costs(model, judge, cfg, 8, 321, 3, 12, 4, rng);
  // full group: 8 rollouts, three searches then the constrained answer each,
  // 3 + 3 + 3 + 2 sampled tokens; truncated: 2 candidates at four steps plus
  // the forced answer block
  CHECK(m.full_group == doctest::Approx(88.0).epsilon(1e-12));
  CHECK(m.truncated == doctest::Approx(26.0).epsilon(1e-12));
  CHECK(m.ratio == doctest::Approx(26.0 / 88.0).epsilon(1e-12));

  // the analytic account with the same shape parameters
  const TokenCost c = token_cost_accounting(8, 4, m.full_group / 8, cfg.k);
  CHECK(std::abs(m.ratio - c.ratio) / c.ratio < 0.25);
}

// ============================================================
// reporting
// ============================================================

TEST_CASE("theorem report renders parseable json and tabular csv") {
  ProcessRewardSource src(iid_spec());
  const AssumptionFlags flags = assumption_flags(src.spec());
  Rng rng(71);
  const TheoremCheck check = check_theorem(src, flags, 5, 2000, rng);
  const std::string hash = config_hash(src.spec());

  const std::string json_text = theorem_json(check, hash);
  const auto j = nlohmann::json::parse(json_text);
  CHECK(j["config_hash"] == hash);
  CHECK(j["horizon"] == 4);
  CHECK(j["group_size"] == 5);
  CHECK(j["trials"] == 2000);
  CHECK(j["steps"].size() == 4);
  CHECK(j["bounds"]["clause2"] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(j["assumptions"]["a1"].is_boolean());
  CHECK(j["clause1_ok"].is_boolean());

  const std::string csv = theorem_csv(check, hash);
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  CHECK(line ==
        "config_hash,horizon,group_size,trials,t,step_adv_var,step_ci,"
        "traj_adv_var,traj_ci,ratio,ratio_ci,a1,a2,a3,clause1_ok,"
        "clause2_applicable,clause2_ok");
  int rows = 0;
  while (std::getline(is, line)) {
    ++rows;
    CHECK(line.rfind(hash + ",4,5,2000,", 0) == 0);
  }
  CHECK(rows == 4);

  // byte-stable reporting
  CHECK(theorem_csv(check, hash) == csv);
  CHECK(theorem_json(check, hash) == json_text);
}
