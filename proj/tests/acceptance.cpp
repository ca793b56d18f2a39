// Acceptance gate: one PASS/FAIL line per criterion. With no arguments every
// criterion runs; otherwise only the listed numbers.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "cloe/experiment.hpp"
#include "oracles.hpp"

using namespace cloe;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome qwk_oracle() {
  Rng rng(1001);
  double worst = 0.0;
  int compared = 0, degenerate = 0;
  for (int t = 0; t < 1000; ++t) {
    const int k = 2 + static_cast<int>(rng.below(5));
    const auto cm = oracle::random_confusion(rng, k, 50);
    const auto got = metrics::qwk(cm);
    if (got.degenerate) {
      ++degenerate;
      continue;
    }
    worst = std::max(worst, std::abs(got.value - oracle::qwk_pairs(cm)));
    ++compared;
  }
  const std::vector<int> truth{0, 0, 1, 2}, pred{0, 1, 1, 2};
  const double hand = metrics::qwk(metrics::confusion(truth, pred, 3)).value;
  const bool exact = std::abs(hand - 0.8) < 1e-15;
  return {worst < 1e-9 && exact && compared + degenerate == 1000,
          fmt("max |delta| %.3g over %d matrices (%d degenerate), hand case %.17g", worst, compared, degenerate, hand)};
}

Outcome gradient_check() {
  double worst = 0.0;
  std::size_t checked = 0, failed = 0, kinks = 0;
  for (std::uint64_t m = 0; m < 10; ++m) {
    const auto g = oracle::check_gradients(7000 + m, 20);
    worst = std::max(worst, g.worst_rel);
    checked += g.checked;
    failed += g.failed;
    kinks += g.kinks;
  }
  return {failed == 0 && checked == 10 * 20 * nn::kNumArrays,
          fmt("%zu coordinates, %zu over 1e-4, worst relative error %.3g, %zu non-differentiable draws redrawn",
              checked, failed, worst, kinks)};
}

// Phase index after each call, driven through the state machine.
std::vector<int> transitions_of(const std::vector<double>& accs, int patience) {
  auto st = curriculum::PhaseState::start(
      {curriculum::Phase::CleanOnly, curriculum::Phase::Combined, curriculum::Phase::NoisyOnly}, patience, 1000);
  std::vector<int> out;
  for (std::size_t i = 0; i < accs.size() && !st.done(); ++i) {
    const auto before = st.index;
    st = curriculum::advance(st, accs[i]);
    if (st.index != before) out.push_back(static_cast<int>(i) + 1);
    for (std::size_t j = 1; j < st.log.size(); ++j) {
      if (int(st.log[j - 1].phase) > int(st.log[j].phase)) return {-1};
    }
  }
  return out;
}

// Independent replay: a transition happens after `patience` consecutive
// calls without a strict improvement over the phase's best.
std::vector<int> predicted_transitions(const std::vector<double>& accs, int patience) {
  std::vector<int> out;
  double best = 0;
  bool have = false;
  int streak = 0;
  for (std::size_t i = 0; i < accs.size() && out.size() < 3; ++i) {
    if (!have || accs[i] > best) {
      best = accs[i];
      have = true;
      streak = 0;
    } else if (++streak == patience) {
      out.push_back(static_cast<int>(i) + 1);
      have = false;
      streak = 0;
    }
  }
  return out;
}

Outcome phase_traces() {
  bool ok = transitions_of({0.60, 0.61, 0.60, 0.60, 0.59, 0.58, 0.57}, 5) == std::vector<int>{7};
  ok = ok && transitions_of({0.4, 0.4, 0.4, 0.4, 0.4, 0.4}, 5) == std::vector<int>{6};
  std::vector<double> rising;
  for (int i = 0; i < 50; ++i) rising.push_back(i / 100.0);
  ok = ok && transitions_of(rising, 5).empty();
  Rng rng(303);
  int mismatches = 0;
  for (int t = 0; t < 2000; ++t) {
    const int patience = 1 + static_cast<int>(rng.below(7));
    std::vector<double> accs(5 + rng.below(80));
    for (auto& a : accs) a = static_cast<double>(rng.below(6)) / 6.0;
    if (transitions_of(accs, patience) != predicted_transitions(accs, patience)) ++mismatches;
  }
  return {ok && mismatches == 0, fmt("scripted traces %s, %d/2000 random traces mismatched", ok ? "ok" : "wrong", mismatches)};
}

Outcome augmentation_invariants() {
  Rng rng(4004);
  oracle::MixStats st;
  while (st.mixes < 10000) {
    const std::size_t b = 2 + rng.below(15);
    const int h = 8 + static_cast<int>(rng.below(33));
    const int w = 8 + static_cast<int>(rng.below(33));
    const auto batch = oracle::banded_batch(rng, b, h, w, 2 + static_cast<int>(rng.below(5)));
    oracle::check_mixed_batch(batch, augment::mixup(batch, 0.2, rng), augment::Kind::MixUp, st);
    oracle::check_mixed_batch(batch, augment::cutmix(batch, 1.0, rng), augment::Kind::CutMix, st);
    oracle::check_mixed_batch(batch, augment::resizemix(batch, 0.1, 0.8, rng), augment::Kind::ResizeMix, st);
  }
  const std::size_t bad = st.simplex_failures + st.area_failures + st.outside_failures + st.label_failures;
  return {bad == 0, fmt("%zu mixes: simplex %zu, area %zu, outside %zu, label %zu failures; worst sum error %.3g",
                        st.mixes, st.simplex_failures, st.area_failures, st.outside_failures, st.label_failures,
                        st.worst_simplex_error)};
}

// Test QWK per seed for the three arms the trend criteria compare.
struct TrendRuns {
  std::vector<double> std_a, cl, cl_resizemix;
};

const TrendRuns& trend_runs() {
  static const TrendRuns runs = [] {
    TrendRuns r;
    experiment::ScorerCache cache;
    experiment::RunOptions opts;
    opts.write_artifacts = false;
    opts.scorer_cache = &cache;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      auto cfg = experiment::default_config();
      cfg.seed = seed;
      cfg.protocol = curriculum::Protocol::STD_A;
      r.std_a.push_back(experiment::run_experiment(cfg, opts).test->qwk);
      cfg.protocol = curriculum::Protocol::CL;
      r.cl.push_back(experiment::run_experiment(cfg, opts).test->qwk);
      cfg.augmentation.kind = augment::Kind::ResizeMix;
      r.cl_resizemix.push_back(experiment::run_experiment(cfg, opts).test->qwk);
      std::fprintf(stderr, "  seed %llu: STD_A %.4f  CL %.4f  CL+resizemix %.4f\n",
                   static_cast<unsigned long long>(seed), r.std_a.back(), r.cl.back(), r.cl_resizemix.back());
    }
    return r;
  }();
  return runs;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); }

Outcome ablation_trend() {
  const auto& r = trend_runs();
  int wins = 0;
  for (std::size_t i = 0; i < r.cl.size(); ++i) wins += r.cl[i] >= r.std_a[i] ? 1 : 0;
  return {wins >= 7 && mean(r.cl) > mean(r.std_a),
          fmt("CL >= STD_A in %d/10 seeds, mean QWK CL %.4f vs STD_A %.4f", wins, mean(r.cl), mean(r.std_a))};
}

Outcome augmentation_trend() {
  const auto& r = trend_runs();
  return {mean(r.cl_resizemix) >= mean(r.cl),
          fmt("mean QWK CL+resizemix %.4f vs CL %.4f", mean(r.cl_resizemix), mean(r.cl))};
}

Outcome scorer_adequacy() {
  const auto cfg = experiment::default_config();
  const auto data = experiment::generate(*cfg.synthetic, cfg.seed);
  const Dataset binary = quality::make_quality_training_set(data.quality);
  const auto [train, val] = split_train_val(binary, 0.1, mix_seed(cfg.seed, 6));
  auto hyper = cfg.scorer;
  hyper.seed = mix_seed(cfg.seed, 5);
  const auto res = quality::train_quality_scorer(train, val, hyper);
  return {res.val_auc > 0.9, fmt("validation AUC %.4f, accuracy %.4f on %zu held-out of %zu", res.val_auc,
                                 res.val_accuracy, val.size(), data.quality.size())};
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "cloe_acceptance_determinism";
  fs::remove_all(root);
  auto cfg = experiment::default_config();
  cfg.seed = 3;
  cfg.augmentation.kind = augment::Kind::ResizeMix;
  cfg.output_dir = root / "a";
  experiment::run_experiment(cfg);
  cfg.output_dir = root / "b";
  experiment::run_experiment(cfg);
  std::string diffs;
  for (const char* name : {"metrics.csv", "model.cloe", "quality_model.cloe"}) {
    const auto a = slurp(root / "a" / name), b = slurp(root / "b" / name);
    if (a.empty() || a != b) diffs += std::string(" ") + name;
  }
  fs::remove_all(root);
  return {diffs.empty(), diffs.empty() ? "metrics.csv and checkpoints byte-identical" : "differs:" + diffs};
}

Outcome metric_identities() {
  Rng rng(9009);
  int micro_bad = 0, top2_bad = 0, range_bad = 0;
  for (int t = 0; t < 100; ++t) {
    const int k = 2 + static_cast<int>(rng.below(6));
    const std::size_t n = 1 + rng.below(200);
    std::vector<std::vector<double>> probs;
    std::vector<int> truth;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> p(static_cast<std::size_t>(k));
      double s = 0;
      for (auto& v : p) s += (v = rng.uniform());
      for (auto& v : p) v /= s;
      probs.push_back(std::move(p));
      truth.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(k))));
    }
    const auto r = metrics::report(probs, truth, k);
    if (std::abs(r.f1_micro - r.top1_acc) > 1e-12) ++micro_bad;
    if (r.top2_acc < r.top1_acc) ++top2_bad;
    bool in_range = r.qwk >= -1.0 && r.qwk <= 1.0;
    for (double v : {r.top1_acc, r.top2_acc, r.f1_macro, r.f1_micro, r.precision_macro, r.recall_macro,
                     r.specificity_macro}) {
      in_range = in_range && v >= 0.0 && v <= 1.0;
    }
    if (!in_range) ++range_bad;
  }
  return {micro_bad + top2_bad + range_bad == 0,
          fmt("100 sets: micro-F1 != top-1 in %d, top-2 < top-1 in %d, out of range in %d", micro_bad, top2_bad,
              range_bad)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> only;
  app.add_option("criteria", only, "criterion numbers to run (default: all)")->check(CLI::Range(1, 9));
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"QWK oracle equivalence", qwk_oracle},
      {"gradient check", gradient_check},
      {"phase state machine", phase_traces},
      {"augmentation invariants", augmentation_invariants},
      {"ablation trend CL vs STD_A", ablation_trend},
      {"augmentation trend CL+resizemix vs CL", augmentation_trend},
      {"quality scorer adequacy", scorer_adequacy},
      {"determinism", determinism},
      {"metric identities", metric_identities},
  };
  const std::set<int> wanted(only.begin(), only.end());
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int num = static_cast<int>(i) + 1;
    if (!wanted.empty() && !wanted.count(num)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %d %s: %s (%s) [%.1fs]\n", num, criteria[i].first, o.pass ? "PASS" : "FAIL",
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
