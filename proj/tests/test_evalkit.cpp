#include <doctest.h>

#include <algorithm>
#include <filesystem>

#include "ctld/error.hpp"
#include "ctld/evalkit.hpp"
#include "ctld/rng.hpp"

using namespace ctld;

namespace {

LandmarkSet points(std::initializer_list<std::pair<float, float>> pts) {
  LandmarkSet lm;
  for (const auto& [x, y] : pts) lm.points.emplace_back(x, y);
  return lm;
}

// Exact integral of the counting CED over [0, T]: each error e contributes
// max(0, T - e); normalized by N*T.
double exact_auc(std::vector<double> errors, double T) {
  double acc = 0.0;
  for (double e : errors) acc += std::max(0.0, T - std::min(e, T));
  return acc / (static_cast<double>(errors.size()) * T);
}

}  // namespace

TEST_CASE("mean_error worked examples") {
  SUBCASE("perfect predictions") {
    const auto t = points({{1, 2}, {3, 4}});
    const MeanError r = mean_error({t}, {t});
    CHECK(r.me == 0.0);
    CHECK(r.sd == 0.0);
  }

  SUBCASE("uniform (3,4) offset gives ME 5") {
    const auto truth = points({{10, 10}, {20, 20}, {5, 30}});
    auto pred = truth;
    for (auto& p : pred.points) p += Eigen::Vector2f(3.0f, 4.0f);
    const MeanError r = mean_error({pred}, {truth});
    CHECK(r.me == doctest::Approx(5.0));
  }

  SUBCASE("two images with errors 1 and 3: ME 2, population SD 1") {
    const auto truth = points({{0, 0}});
    const MeanError r = mean_error({points({{1, 0}}), points({{3, 0}})}, {truth, truth});
    CHECK(r.me == doctest::Approx(2.0));
    CHECK(r.sd == doctest::Approx(1.0));
  }

  SUBCASE("mismatched K") {
    CHECK_THROWS_AS(mean_error({points({{0, 0}})}, {points({{0, 0}, {1, 1}})}), ConfigError);
  }
}

TEST_CASE("ced worked examples and monotonicity") {
  SUBCASE("all-zero errors give CED == 1 everywhere") {
    for (const auto& [t, f] : ced({0.0, 0.0, 0.0}, 64, 1.2)) {
      (void)t;
      CHECK(f == 1.0);
    }
  }

  SUBCASE("errors {1,3} at t=2 give 0.5") {
    const auto samples = ced({1.0, 3.0}, 512, 1.2);
    const auto it = std::lower_bound(samples.begin(), samples.end(), 2.0,
                                     [](const auto& s, double t) { return s.first < t; });
    REQUIRE(it != samples.end());
    CHECK(it->second == doctest::Approx(0.5));
    CHECK(samples.back().second == 1.0);
  }

  SUBCASE("non-decreasing on random inputs") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<double> errors;
      for (int i = 0; i < 40; ++i) errors.push_back(rng.uniform(0.0, 6.0));
      const auto samples = ced(errors, 128, 1.2);
      for (std::size_t i = 1; i < samples.size(); ++i)
        CHECK(samples[i].second >= samples[i - 1].second);
    }
  }
}

TEST_CASE("auc_fr worked examples") {
  SUBCASE("all-zero errors: AUC 1, FR 0") {
    const auto [auc, fr] = auc_fr({0.0, 0.0, 0.0, 0.0}, 1.2);
    CHECK(auc == doctest::Approx(1.0));
    CHECK(fr == 0.0);
  }

  SUBCASE("one failure in four: FR 0.25") {
    const auto [auc, fr] = auc_fr({2.0, 0.0, 0.0, 0.0}, 1.2);
    CHECK(fr == doctest::Approx(0.25));
    CHECK(auc == doctest::Approx(0.75).epsilon(0.01));
  }

  SUBCASE("everything beyond the threshold: AUC 0, FR 1") {
    const auto [auc, fr] = auc_fr({1.3, 2.0, 5.0}, 1.2);
    CHECK(auc == 0.0);
    CHECK(fr == 1.0);
  }
}

TEST_CASE("trapezoidal AUC agrees with the exact step-function oracle") {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> errors;
    const int n = 1 + rng.uniform_int(60);
    for (int i = 0; i < n; ++i) errors.push_back(rng.uniform(0.0, 3.0));
    const double t = 1.2;
    const auto [auc, fr] = auc_fr(errors, t, 512);
    CHECK(std::abs(auc - exact_auc(errors, t)) < 1.0 / 512.0);

    // FR from the CED at the threshold equals FR by direct counting.
    std::size_t le = 0;
    for (double e : errors)
      if (e <= t) ++le;
    CHECK(fr == doctest::Approx(1.0 - static_cast<double>(le) / n));
  }
}

TEST_CASE("AUC is invariant under permutations of the error vector") {
  Rng rng(19);
  std::vector<double> errors;
  for (int i = 0; i < 30; ++i) errors.push_back(rng.uniform(0.0, 2.5));
  const auto [auc1, fr1] = auc_fr(errors, 1.2);
  std::reverse(errors.begin(), errors.end());
  std::swap(errors[3], errors[11]);
  const auto [auc2, fr2] = auc_fr(errors, 1.2);
  CHECK(auc1 == auc2);
  CHECK(fr1 == fr2);
}

TEST_CASE("evaluate report: units, per-point mode, file output") {
  const auto truth = points({{10, 10}, {50, 30}});
  auto pred = truth;
  pred.points[0] += Eigen::Vector2f(3.0f, 4.0f);  // 5 px on one point -> 2.5 per image

  EvalConfig cfg;
  const EvalReport rep = evaluate({pred}, {truth}, cfg);
  CHECK(rep.me == doctest::Approx(2.5));
  CHECK(rep.unit == "input_px");

  EvalConfig q = cfg;
  q.quarter_resolution = true;
  CHECK(evaluate({pred}, {truth}, q).me == doctest::Approx(0.625));

  EvalConfig pp = cfg;
  pp.per_point = true;
  const EvalReport rep_pp = evaluate({pred}, {truth}, pp);
  CHECK(rep_pp.errors.size() == 2);
  CHECK(rep_pp.me == doctest::Approx(2.5));

  const auto dir = std::filesystem::temp_directory_path() / "ctld_eval_test";
  std::filesystem::create_directories(dir);
  write_report(rep, (dir / "report.json").string(), (dir / "ced.csv").string());
  CHECK(std::filesystem::exists(dir / "report.json"));
  CHECK(std::filesystem::exists(dir / "ced.csv"));
}

TEST_CASE("prediction CSV round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "ctld_eval_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "preds.csv").string();

  const std::vector<std::string> ids = {"images/a.png", "images/b.png"};
  const std::vector<LandmarkSet> preds = {points({{1.5f, 2.0f}, {3.0f, 4.0f}}),
                                          points({{5.0f, 6.5f}, {7.0f, 8.0f}})};
  write_predictions_csv(path, ids, preds);
  const auto [rids, rpreds] = read_predictions_csv(path);
  CHECK(rids == ids);
  REQUIRE(rpreds.size() == 2);
  CHECK(rpreds[0].points[0].x() == doctest::Approx(1.5f));
  CHECK(rpreds[1].points[1].y() == doctest::Approx(8.0f));

  write_predictions_csv(path, {}, {});
  const auto [eids, epreds] = read_predictions_csv(path);
  CHECK(eids.empty());
  CHECK(epreds.empty());
}
