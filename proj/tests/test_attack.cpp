#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "advaudio/attack.hpp"
#include "advaudio/errors.hpp"
#include "support.hpp"

using namespace advaudio;
using namespace advaudio::testing;

namespace {

Perturbation along_w(const LinearProblem& p, double scale) {
  std::vector<float> d(p.w_hat.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<float>(scale * p.w_hat[i]);
  return {AudioClip(std::move(d), kCanonicalRate), 0};
}

PhonemeBank w_bank(const LinearProblem& p) {
  return PhonemeBank({{along_w(p, 2.0).delta, "w", 50.0}}, 0);
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

}  // namespace

TEST_CASE("attack config validation and defaults") {
  AttackConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.budget(AttackGoal::targeted("stop", "go")) == 5000);
  CHECK(c.budget(AttackGoal::untargeted("stop")) == 2000);
  c.query_budget = 77;
  CHECK(c.budget(AttackGoal::untargeted("stop")) == 77);

  auto bad = [](auto mutate) {
    AttackConfig x;
    mutate(x);
    CHECK_THROWS_AS(x.validate(), ConfigError);
  };
  bad([](AttackConfig& x) { x.K = 0; });
  bad([](AttackConfig& x) { x.Q = 0; });
  bad([](AttackConfig& x) { x.sigma = 0.0; });
  bad([](AttackConfig& x) { x.eta = 0.9; });
  bad([](AttackConfig& x) { x.tau_ms = 150.0; });
  bad([](AttackConfig& x) { x.noise_cap = 1.5; });
  bad([](AttackConfig& x) { x.query_budget = 0; });
  bad([](AttackConfig& x) { x.band_high_hz = 10.0; });

  AttackConfig custom;
  custom.Q = 12;
  custom.weak_sync = true;
  custom.query_budget = 900;
  const AttackConfig back = AttackConfig::from_json(custom.to_json());
  CHECK(back.Q == 12);
  CHECK(back.weak_sync);
  CHECK(back.query_budget == 900);
  CHECK(back.to_json() == custom.to_json());
}

TEST_CASE("init refuses a carrier that is not the original") {
  LinearProblem p = make_linear_problem(1);
  OracleSession s(p.oracle);
  Rng rng(1);
  CHECK_THROWS_AS(phoneme_init(s, p.x0, AttackGoal::untargeted("b"), w_bank(p), {}, rng), BadCarrier);
}

TEST_CASE("targeted init with nothing to do returns no candidates") {
  LinearProblem p = make_linear_problem(1);
  OracleSession s(p.oracle);
  Rng rng(1);
  const InitResult r = phoneme_init(s, p.x0, AttackGoal::targeted("a", "a"), w_bank(p), {}, rng);
  CHECK(r.candidates.empty());
  CHECK(r.final_cer == 0.0);
  CHECK(r.queries == 1);
}

TEST_CASE("untargeted init collects flipping draws") {
  LinearProblem p = make_linear_problem(2);
  OracleSession s(p.oracle);
  AttackConfig c;
  c.K = 5;
  c.query_budget = 40;
  Rng rng(2);
  const InitResult r = phoneme_init(s, p.x0, AttackGoal::untargeted("a"), w_bank(p), c, rng);
  REQUIRE_FALSE(r.candidates.empty());
  CHECK(r.queries <= 40);
  CHECK(s.ledger().count(Phase::kInit) == r.queries);
  for (const auto& cand : r.candidates) {
    CHECK(cand.transcript.text() == "b");
    CHECK(cand.perturbation.delta.size() == p.x0.size());
    CHECK(cand.l2 == doctest::Approx(l2_distortion(cand.perturbation)));
  }

  const PhonemeBank useless({{AudioClip::silence(800, kCanonicalRate), "z", 50.0}}, 0);
  OracleSession s2(p.oracle);
  AttackConfig tiny;
  tiny.K = 3;
  tiny.noise_cap = 1e-6;
  CHECK_THROWS_AS(phoneme_init(s2, p.x0, AttackGoal::untargeted("a"), useless, tiny, rng), InitFailed);
  CHECK(s2.queries() == 4);
}

TEST_CASE("gradient estimate spends exactly Q queries and is reproducible") {
  LinearProblem p = make_linear_problem(3);
  AttackConfig c;
  c.Q = 24;
  const Perturbation d = along_w(p, 1.02 * p.d_star);
  const AttackGoal goal = AttackGoal::untargeted("a");

  OracleSession serial(p.oracle, {.cache = false, .budget = std::nullopt});
  Rng r1(9);
  const GradientEstimate a = estimate_gradient(serial, p.x0, d, goal, c, p.d_star, r1);
  CHECK(serial.queries() == 24);
  CHECK(serial.ledger().count(Phase::kGradient) == 24);
  CHECK(a.samples.size() == 24);

  c.parallel_probes = 5;
  OracleSession parallel(p.oracle, {.cache = false, .budget = std::nullopt});
  Rng r2(9);
  const GradientEstimate b = estimate_gradient(parallel, p.x0, d, goal, c, p.d_star, r2);
  CHECK(parallel.queries() == 24);
  CHECK(a.direction == b.direction);
  CHECK(a.holds == b.holds);

  Rng r3(9);
  CHECK_THROWS_AS(estimate_gradient(serial, p.x0, d, goal, c, p.d_star, r3, 10), BudgetExhausted);
  CHECK(serial.queries() == 24);
}

TEST_CASE("gradient estimate points away from the decision region on average") {
  double mean = 0.0;
  for (std::uint64_t t = 0; t < 20; ++t) {
    LinearProblem p = make_linear_problem(100 + t);
    OracleSession s(p.oracle);
    Rng rng(t);
    const GradientEstimate g =
        estimate_gradient(s, p.x0, along_w(p, 1.02 * p.d_star), AttackGoal::untargeted("a"), {}, p.d_star, rng);
    std::vector<double> minus_w(p.w_hat.size());
    for (std::size_t i = 0; i < minus_w.size(); ++i) minus_w[i] = -p.w_hat[i];
    mean += cosine(g.direction, minus_w) / 20.0;
  }
  CHECK(mean > 0.0);
}

TEST_CASE("fine tune shrinks l2 monotonically while keeping the goal") {
  LinearProblem p = make_linear_problem(4);
  OracleSession s(p.oracle);
  AttackConfig c;
  c.epsilon_l2 = 1e-6;
  c.query_budget = 1500;
  Rng rng(4);
  const Perturbation start = along_w(p, 3.0 * p.d_star);
  const AttackResult r = fine_tune(s, p.x0, start, AttackGoal::untargeted("a"), c, rng);
  CHECK(r.success);
  CHECK(r.final_transcript.text() == "b");
  CHECK(r.ledger.total_queries <= 1500);
  CHECK(r.ledger.total_queries == s.queries());
  REQUIRE(r.trace.size() >= 2);
  for (std::size_t i = 1; i < r.trace.size(); ++i) {
    CHECK(r.trace[i].l2 < r.trace[i - 1].l2);
    CHECK(r.trace[i].queries >= r.trace[i - 1].queries);
  }
  CHECK(r.l2 < l2_distortion(start));
  CHECK(r.l2 >= p.d_star * p.d_star * 0.999);
  CHECK(p.oracle.score(mix_at(p.x0, r.perturbation)) > p.oracle.score(p.x0) + p.d_star * 0.999);
}

TEST_CASE("fine tune from a point that misses the goal returns unchanged") {
  LinearProblem p = make_linear_problem(5);
  OracleSession s(p.oracle);
  Rng rng(5);
  const Perturbation weak = along_w(p, 0.5 * p.d_star);
  const AttackResult r = fine_tune(s, p.x0, weak, AttackGoal::untargeted("a"), {}, rng);
  CHECK_FALSE(r.success);
  CHECK(r.perturbation == weak);
  CHECK(s.queries() == 1);
}

TEST_CASE("craft end to end on a linear oracle") {
  LinearProblem p = make_linear_problem(6);
  OracleSession s(p.oracle);
  AttackConfig c;
  c.query_budget = 600;
  Rng rng(6);
  const AttackResult r = craft(s, p.x0, AttackGoal::untargeted("a"), w_bank(p), c, rng);
  CHECK(r.success);
  CHECK(r.l2 <= c.epsilon_l2);
  CHECK(r.ledger.total_queries == s.queries());
  CHECK(s.queries() <= 600);
  CHECK(r.candidates_found >= 1);
}

TEST_CASE("weak sync loss, shifts and mismatch sweep") {
  LinearProblem p = make_linear_problem(7);
  OracleSession s(p.oracle);
  const Perturbation d = along_w(p, 3.0 * p.d_star);
  const AttackGoal goal = AttackGoal::untargeted("a");
  AttackConfig c;
  c.N = 2;
  c.tau_ms = 100.0;
  // The carrier is 50 ms long, so a 100 ms delay pushes delta past its end.
  CHECK(weak_sync_loss(s, p.x0, d, goal, c) == doctest::Approx(0.5));
  c.N = 1;
  CHECK(weak_sync_loss(s, p.x0, d, goal, c) == 0.0);

  CHECK(shifted(d, 16).offset_samples == 16);
  CHECK(shifted(d, 16).delta == d.delta);

  AttackResult r;
  r.perturbation = d;
  const auto sweep = mismatch_sweep(s, p.x0, r, goal, {0.0, 100.0});
  REQUIRE(sweep.size() == 2);
  CHECK(sweep[0].holds);
  CHECK_FALSE(sweep[1].holds);
  CHECK(sweep[1].transcript.text() == "a");
  CHECK_THROWS_AS(mismatch_sweep(s, p.x0, r, goal, {-1.0}), ArgumentError);

  c.weak_sync = true;
  c.N = 2;
  CHECK_FALSE(goal_holds_at(s, p.x0, d, goal, c, Phase::kEval));
  c.weak_sync = false;
  CHECK(goal_holds_at(s, p.x0, d, goal, c, Phase::kEval));
}

TEST_CASE("attack result save and load") {
  LinearProblem p = make_linear_problem(8);
  AttackResult r;
  r.perturbation = {along_w(p, 0.4).delta, 12};
  r.final_transcript = Transcript::from_raw("b");
  r.success = true;
  r.l2 = l2_distortion(r.perturbation);
  r.ledger.record(Phase::kInit, 0.05);
  r.ledger.record(Phase::kGradient, 0.05);
  r.trace = {{1, 0.3, 0.0}, {7, 0.2, 0.0}};
  r.phoneme_offsets = {3};
  r.phoneme_sources = {"w"};
  r.candidates_found = 2;
  r.candidates_tried = 1;

  const auto stem = std::filesystem::temp_directory_path() / "advaudio_tests" / "ae" / "0001";
  r.save(stem, {{"carrier", "x.wav"}});
  const AttackResult back = AttackResult::load(stem.string() + ".json");
  CHECK(back.success);
  CHECK(back.final_transcript == r.final_transcript);
  CHECK(back.ledger == r.ledger);
  CHECK(back.perturbation.offset_samples == 12);
  CHECK(back.perturbation.delta.size() == r.perturbation.delta.size());
  CHECK(back.trace.size() == 2);
  CHECK(back.phoneme_sources == r.phoneme_sources);
  CHECK(std::filesystem::exists(stem.string() + ".trace.csv"));
  CHECK_THROWS_AS(AttackResult::load(stem.string() + ".missing.json"), IoError);
}
