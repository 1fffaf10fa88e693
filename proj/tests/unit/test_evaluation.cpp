#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "ca3/evaluation.hpp"
#include "support.hpp"

using namespace ca3;
using ca3::test::pairwise_auc;
using ca3::test::pick;

namespace {

ScoreSet random_scores(Rng& rng, std::size_t n, bool coarse) {
  ScoreSet s;
  for (std::size_t i = 0; i < n; ++i) {
    s.labels.push_back(rng.uniform() < 0.3 ? 1 : 0);
    // coarse values force plenty of ties
    const double v = coarse ? std::floor(rng.uniform(0, 6)) : rng.uniform(-3, 3);
    s.scores.push_back(static_cast<float>(v + 0.5 * s.labels.back()));
  }
  s.labels[0] = 0;
  s.labels[1] = 1;
  return s;
}

ExperimentSpec small_spec() {
  ExperimentSpec spec;
  spec.iterations = 2;
  spec.base_seed = 5;
  spec.normalization = NormMethod::zscore;
  spec.target = TargetConfig::tabular(0);
  spec.train.epochs = 3;
  return spec;
}

}  // namespace

TEST_SUITE("evaluation") {
  TEST_CASE("rank AUC equals the pairwise count") {
    Rng rng(11);
    for (int trial = 0; trial < 100; ++trial) {
      const ScoreSet s = random_scores(rng, pick(rng, 2, 500), trial % 2 == 0);
      CHECK(roc_auc(s) == pairwise_auc(s.scores, s.labels));
    }
  }

  TEST_CASE("AUC is invariant under strictly increasing maps") {
    Rng rng(12);
    for (int trial = 0; trial < 50; ++trial) {
      const ScoreSet s = random_scores(rng, pick(rng, 2, 300), trial % 2 == 0);
      const double before = roc_auc(s);
      std::vector<float> distinct = s.scores;
      std::sort(distinct.begin(), distinct.end());
      distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
      ScoreSet ranked = s;
      for (float& v : ranked.scores)
        v = std::exp(0.01f * static_cast<float>(std::lower_bound(distinct.begin(), distinct.end(), v) -
                                                distinct.begin()));
      CHECK(roc_auc(ranked) == before);
    }
  }

  TEST_CASE("negating scores gives the complement") {
    Rng rng(13);
    for (int trial = 0; trial < 50; ++trial) {
      ScoreSet s = random_scores(rng, pick(rng, 2, 300), true);
      const double a = roc_auc(s);
      for (float& v : s.scores) v = -v;
      CHECK(a + roc_auc(s) == doctest::Approx(1.0).epsilon(1e-12));
    }
  }

  TEST_CASE("hand-worked values") {
    CHECK(roc_auc({{0.1f, 0.2f, 0.8f, 0.9f}, {0, 0, 1, 1}}) == 1.0);
    CHECK(roc_auc({{0.1f, 0.2f, 0.8f, 0.9f}, {1, 1, 0, 0}}) == 0.0);
    CHECK(roc_auc({{0.5f, 0.5f, 0.5f}, {0, 1, 1}}) == 0.5);
    CHECK(roc_auc({{0.1f, 0.4f, 0.35f, 0.8f}, {0, 0, 1, 1}}) == 0.75);
  }

  TEST_CASE("AUC input errors") {
    CHECK_THROWS_AS(roc_auc({{0.1f, 0.2f}, {0, 0}}), DataError);
    CHECK_THROWS_AS(roc_auc({{0.1f}, {0, 1}}), ShapeError);
    CHECK_THROWS_AS(roc_auc({{0.1f, 0.2f}, {0, 2}}), DataError);
    CHECK_THROWS_AS(roc_auc({{0.1f, std::nanf("")}, {0, 1}}), NumericError);
  }

  TEST_CASE("population statistics") {
    CHECK(mean_of({1, 2, 3, 4}) == 2.5);
    CHECK(population_std({1, 2, 3, 4}) == doctest::Approx(std::sqrt(1.25)));
    CHECK(population_std({7}) == 0.0);
    const ModeSummary m = summarize(ScoreMode::recon, {0.5, 0.7});
    CHECK(m.mean == doctest::Approx(0.6));
    CHECK(m.std == doctest::Approx(0.1));
  }

  TEST_CASE("architecture description") {
    CHECK(describe_architecture(TargetConfig::tabular(10), AlarmConfig{}) ==
          "tabular 10 soft 64/4 enc 8-16 k3 s2 z8 | alarm 32-16 k3 dense 64");
  }

  TEST_CASE("experiment report, rendering and CSV round trip") {
    const Dataset d = synth_two_gaussian(150, 30, 4, 4.0, 0);
    const ExperimentSpec spec = small_spec();
    const EvalReport r = run_experiment(d, spec);
    CHECK(r.seeds == std::vector<std::uint64_t>{5, 6});
    REQUIRE(r.modes.size() == 3);
    for (const auto& m : r.modes) {
      REQUIRE(m.aucs.size() == 2);
      CHECK(std::abs(m.mean - mean_of(m.aucs)) <= 1e-12);
      CHECK(std::abs(m.std - population_std(m.aucs)) <= 1e-12);
      for (double a : m.aucs) CHECK((a >= 0.0 && a <= 1.0));
    }
    const std::string csv = render_report({r}, ReportFormat::csv);
    CHECK(csv.rfind("dataset,normal_class,gamma,mode,iterations,mean,std,seeds,aucs,architecture\n", 0) == 0);
    const auto parsed = parse_report_csv(csv);
    REQUIRE(parsed.size() == 1);
    CHECK(render_report(parsed, ReportFormat::csv) == csv);
    for (std::size_t i = 0; i < 3; ++i) CHECK(parsed[0].modes[i].aucs == r.modes[i].aucs);
    const std::string md = render_report({r}, ReportFormat::markdown);
    CHECK(md.find("| dataset | normal class |") != std::string::npos);
    CHECK(md.find(" ± ") != std::string::npos);
  }

  TEST_CASE("experiments repeat bit-identically, with or without threads") {
    const Dataset d = synth_two_gaussian(120, 20, 3, 4.0, 1);
    ExperimentSpec spec = small_spec();
    const std::string a = render_report({run_experiment(d, spec)}, ReportFormat::csv);
    const std::string b = render_report({run_experiment(d, spec)}, ReportFormat::csv);
    spec.threads = 2;
    const std::string c = render_report({run_experiment(d, spec)}, ReportFormat::csv);
    CHECK(a == b);
    CHECK(a == c);
  }

  TEST_CASE("failing iteration is named") {
    Dataset d = synth_two_gaussian(60, 10, 3, 4.0, 1);
    ExperimentSpec spec = small_spec();
    spec.normal_class = 9;
    CHECK_THROWS_WITH_AS(run_experiment(d, spec), doctest::Contains("experiment iteration 0"), DataError);
  }

  TEST_CASE("malformed report CSV is rejected") {
    CHECK_THROWS(parse_report_csv("not,a,report\n1,2,3\n"));
  }
}
