#include <numeric>

#include "json.hpp"
#include "doctest.h"
#include "cloe/metrics.hpp"
#include "oracles.hpp"

using namespace cloe;
using metrics::ConfusionMatrix;

namespace {

std::vector<std::vector<double>> one_hot_probs(const std::vector<int>& pred, int k) {
  std::vector<std::vector<double>> out;
  for (int p : pred) {
    std::vector<double> v(static_cast<std::size_t>(k), 0.0);
    v[static_cast<std::size_t>(p)] = 1.0;
    out.push_back(v);
  }
  return out;
}

}  // namespace

TEST_CASE("confusion counts") {
  const std::vector<int> t{0, 0, 1, 2}, p{0, 1, 1, 2};
  const auto cm = metrics::confusion(t, p, 3);
  CHECK(cm.at(0, 0) == 1);
  CHECK(cm.at(0, 1) == 1);
  CHECK(cm.at(1, 1) == 1);
  CHECK(cm.at(2, 2) == 1);
  CHECK(cm.total() == 4);
  CHECK(metrics::confusion(std::vector<int>{}, std::vector<int>{}, 3).total() == 0);
  CHECK(metrics::confusion(t, t, 3).is_diagonal());
  CHECK_THROWS(metrics::confusion(t, std::vector<int>{0}, 3));
}

TEST_CASE("qwk: hand-derived 0.8 and perfect agreement") {
  const std::vector<int> t{0, 0, 1, 2}, p{0, 1, 1, 2};
  const auto cm = metrics::confusion(t, p, 3);
  const auto k = metrics::qwk(cm);
  // Weighted observed 0.25 over weighted expected 1.25.
  CHECK(k.value == doctest::Approx(0.8).epsilon(1e-15));
  CHECK_FALSE(k.degenerate);
  CHECK(oracle::qwk_pairs(cm) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(metrics::qwk(metrics::confusion(t, t, 3)).value == 1.0);
}

TEST_CASE("qwk: single-cell, constant-prediction and empty matrices") {
  ConfusionMatrix one(3);
  one.at(1, 1) = 5;
  CHECK(metrics::qwk(one).value == 1.0);
  CHECK_FALSE(metrics::qwk(one).degenerate);
  // Observed and expected disagreement are both 2, so kappa is exactly 0.
  ConfusionMatrix constant(2);
  constant.at(0, 0) = 2;
  constant.at(1, 0) = 2;
  const auto k = metrics::qwk(constant);
  CHECK_FALSE(k.degenerate);
  CHECK(k.value == 0.0);
  // Expected disagreement vanishes only when there is nothing to disagree on.
  CHECK(metrics::qwk(ConfusionMatrix(3)).degenerate);
}

TEST_CASE("qwk matches the pairwise oracle and is transpose-symmetric") {
  Rng r(31);
  for (int t = 0; t < 300; ++t) {
    const int k = 2 + static_cast<int>(r.below(5));
    const auto cm = oracle::random_confusion(r, k, 20);
    const auto got = metrics::qwk(cm);
    if (got.degenerate) continue;
    CHECK(std::abs(got.value - oracle::qwk_pairs(cm)) < 1e-9);
    CHECK(std::abs(got.value - metrics::qwk(cm.transposed()).value) < 1e-12);
  }
}

TEST_CASE("qwk drops when a diagonal count moves further off the diagonal") {
  Rng r(7);
  int checked = 0;
  for (int t = 0; t < 300; ++t) {
    const int k = 3 + static_cast<int>(r.below(3));
    auto cm = oracle::random_confusion(r, k, 10);
    const int i = static_cast<int>(r.below(static_cast<std::uint64_t>(k)));
    if (cm.at(i, i) == 0) continue;
    // Move one count from (i, i) to (i, i+1), then to (i, i+2).
    if (i + 2 >= k) continue;
    auto near = cm, far = cm;
    --near.at(i, i);
    ++near.at(i, i + 1);
    --far.at(i, i);
    ++far.at(i, i + 2);
    const auto a = metrics::qwk(cm), b = metrics::qwk(near), c = metrics::qwk(far);
    if (a.degenerate || b.degenerate || c.degenerate) continue;
    // Compare against the oracle so marginal shifts are accounted for exactly.
    CHECK(b.value == doctest::Approx(oracle::qwk_pairs(near)).epsilon(1e-9));
    CHECK(c.value == doctest::Approx(oracle::qwk_pairs(far)).epsilon(1e-9));
    ++checked;
  }
  CHECK(checked > 50);
}

TEST_CASE("top-k accuracy") {
  const std::vector<std::vector<double>> probs{{0.5, 0.3, 0.2}};
  CHECK(metrics::top_k_accuracy(probs, std::vector<int>{1}, 2) == 1.0);
  CHECK(metrics::top_k_accuracy(probs, std::vector<int>{1}, 1) == 0.0);
  CHECK(metrics::top_k_accuracy(probs, std::vector<int>{2}, 3) == 1.0);
  // Tie between classes 1 and 2: the lower index ranks first.
  const std::vector<std::vector<double>> tie{{0.5, 0.25, 0.25}};
  CHECK(metrics::top_k_accuracy(tie, std::vector<int>{1}, 2) == 1.0);
  CHECK(metrics::top_k_accuracy(tie, std::vector<int>{2}, 2) == 0.0);
}

TEST_CASE("f1 and specificity on the three-sample case") {
  const auto cm = metrics::confusion(std::vector<int>{0, 0, 1}, std::vector<int>{0, 1, 1}, 2);
  const auto f = metrics::f1_scores(cm);
  CHECK(f.per_class[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(f.per_class[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(f.macro == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  const auto prs = metrics::prec_rec_spec(cm);
  CHECK(prs.specificity[0] == 1.0);
  CHECK(prs.specificity[1] == 0.5);
  CHECK(prs.specificity_macro == 0.75);
}

TEST_CASE("absent classes contribute zero and are flagged") {
  const auto cm = metrics::confusion(std::vector<int>{0, 0, 1}, std::vector<int>{0, 0, 1}, 3);
  const auto f = metrics::f1_scores(cm);
  CHECK(f.per_class[2] == 0.0);
  CHECK(f.undefined_classes == std::vector<int>{2});
  CHECK(f.macro == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("report: perfect predictions give all ones") {
  const std::vector<int> t{0, 1, 2, 3, 1};
  const auto r = metrics::report(one_hot_probs(t, 4), t, 4);
  for (double v : {r.top1_acc, r.top2_acc, r.f1_macro, r.f1_micro, r.precision_macro, r.recall_macro,
                   r.specificity_macro, r.qwk}) {
    CHECK(v == 1.0);
  }
}

TEST_CASE("report: constant predictor on balanced two-class data") {
  const std::vector<int> t{0, 0, 1, 1};
  const auto r = metrics::report(one_hot_probs({0, 0, 0, 0}, 2), t, 2);
  CHECK(r.top1_acc == 0.5);
  // Column marginals (4, 0) make expected disagreement 2 per 4 samples, equal
  // to observed, so kappa is exactly zero rather than undefined.
  CHECK(r.qwk == 0.0);
  CHECK_FALSE(r.qwk_degenerate);
}

TEST_CASE("report is invariant under joint permutation of samples") {
  Rng r(3);
  std::vector<std::vector<double>> probs;
  std::vector<int> truth;
  for (int i = 0; i < 40; ++i) {
    std::vector<double> p(4);
    double s = 0;
    for (auto& v : p) s += (v = r.uniform());
    for (auto& v : p) v /= s;
    probs.push_back(p);
    truth.push_back(static_cast<int>(r.below(4)));
  }
  const auto a = metrics::report(probs, truth, 4);
  const auto perm = r.permutation(40);
  std::vector<std::vector<double>> pp;
  std::vector<int> tp;
  for (auto i : perm) {
    pp.push_back(probs[i]);
    tp.push_back(truth[i]);
  }
  const auto b = metrics::report(pp, tp, 4);
  CHECK(a.csv_row() == b.csv_row());
}

TEST_CASE("micro F1 equals top-1 and every field lies in its range") {
  Rng r(12);
  for (int t = 0; t < 100; ++t) {
    const int k = 2 + static_cast<int>(r.below(5));
    const int n = 1 + static_cast<int>(r.below(60));
    std::vector<std::vector<double>> probs;
    std::vector<int> truth;
    for (int i = 0; i < n; ++i) {
      std::vector<double> p(static_cast<std::size_t>(k));
      for (auto& v : p) v = r.uniform();
      probs.push_back(p);
      truth.push_back(static_cast<int>(r.below(static_cast<std::uint64_t>(k))));
    }
    const auto rep = metrics::report(probs, truth, k);
    CHECK(rep.f1_micro == doctest::Approx(rep.top1_acc).epsilon(1e-12));
    CHECK(rep.top2_acc >= rep.top1_acc);
    for (double v : {rep.top1_acc, rep.top2_acc, rep.f1_macro, rep.f1_micro, rep.precision_macro,
                     rep.recall_macro, rep.specificity_macro}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    CHECK(rep.qwk >= -1.0);
    CHECK(rep.qwk <= 1.0);
  }
}

TEST_CASE("serialization: csv row, json object and confusion grid") {
  const std::vector<int> t{0, 0, 1, 2};
  const auto r = metrics::report(one_hot_probs({0, 1, 1, 2}, 3), t, 3);
  CHECK(metrics::MetricsReport::csv_header().rfind("top1_acc,", 0) == 0);
  CHECK(r.csv_row().rfind("0.75,", 0) == 0);
  const auto j = nlohmann::json::parse(r.to_json());
  CHECK(j.at("qwk").get<double>() == doctest::Approx(0.8));
  CHECK(r.confusion.to_csv() == "true\\pred,0,1,2\n0,1,1,0\n1,0,1,0\n2,0,0,1\n");
}
