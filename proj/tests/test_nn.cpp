#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "cloe/nn.hpp"
#include "oracles.hpp"

using namespace cloe;
namespace fs = std::filesystem;

namespace {

nn::ModelShape shape_of(int side, int k) {
  nn::ModelShape s;
  s.height = side;
  s.width = side;
  s.num_classes = k;
  return s;
}

std::vector<ImageTensor> random_images(Rng& r, std::size_t n, int side) {
  std::vector<ImageTensor> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(oracle::random_image(r, 3, side, side));
  return out;
}

// Two classes told apart by overall brightness.
Dataset brightness_toy(std::size_t n, std::uint64_t seed) {
  Rng r(seed);
  Dataset ds{{}, 2, Split::Train};
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.id = "b" + std::to_string(i);
    s.label = static_cast<int>(i % 2);
    s.image = ImageTensor(3, 8, 8);
    for (auto& p : s.image.pixels) p = static_cast<float>(s.label ? 0.6 + 0.4 * r.uniform() : 0.4 * r.uniform());
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

}  // namespace

TEST_CASE("feature size is 16 * H/4 * W/4") {
  CHECK(shape_of(32, 4).feature_dim() == 1024);
  CHECK(shape_of(16, 4).feature_dim() == 256);
  nn::ModelShape odd = shape_of(30, 4);
  CHECK_THROWS(odd.validate());
}

TEST_CASE("forward: zero parameters give zero logits and a uniform softmax") {
  Rng r(1);
  const auto m = nn::TinyCNN::zeros(shape_of(8, 4));
  const auto imgs = random_images(r, 3, 8);
  const auto fp = nn::forward(m, std::span<const ImageTensor>(imgs));
  for (float z : fp.logits) CHECK(z == 0.0f);
  const std::vector<double> z(4, 0.0);
  for (double p : nn::softmax(z)) CHECK(p == 0.25);
}

TEST_CASE("forward: doubling the head weights and bias doubles the logits") {
  Rng r(2);
  auto m = nn::init_model<double>(shape_of(8, 3), 5);
  for (auto& b : m.fc_b) b = r.uniform(-1, 1);
  const auto imgs = random_images(r, 2, 8);
  const auto a = nn::forward(m, std::span<const ImageTensor>(imgs));
  for (auto& w : m.fc_w) w *= 2;
  for (auto& b : m.fc_b) b *= 2;
  const auto b = nn::forward(m, std::span<const ImageTensor>(imgs));
  for (std::size_t i = 0; i < a.logits.size(); ++i) CHECK(b.logits[i] == doctest::Approx(2 * a.logits[i]).epsilon(1e-12));
}

TEST_CASE("forward: deterministic and shape-checked") {
  Rng r(3);
  const auto m = nn::init_model<float>(shape_of(16, 4), 9);
  const auto imgs = random_images(r, 2, 16);
  const auto a = nn::forward(m, std::span<const ImageTensor>(imgs));
  const auto b = nn::forward(m, std::span<const ImageTensor>(imgs));
  CHECK(a.logits == b.logits);
  CHECK(a.features.size() == 2 * 256);
  const std::vector<ImageTensor> wrong{ImageTensor(3, 8, 8)};
  CHECK_THROWS(nn::forward(m, std::span<const ImageTensor>(wrong)));
}

TEST_CASE("loss: uniform logits against a one-hot target give ln 4") {
  const std::vector<double> logits(4, 0.3);
  const std::vector<double> target{0, 0, 1, 0};
  CHECK(nn::loss_ce_soft(logits, target, 4).loss == doctest::Approx(std::log(4.0)).epsilon(1e-15));
}

TEST_CASE("loss: logits (2, 0) against (1, 0)") {
  const std::vector<double> logits{2, 0};
  const std::vector<double> target{1, 0};
  const auto r = nn::loss_ce_soft(logits, target, 2);
  // ln(1 + e^-2) = 0.12692801104297263
  CHECK(r.loss == doctest::Approx(0.12692801104297263).epsilon(1e-14));
  const double sigma = std::exp(2.0) / (std::exp(2.0) + 1.0);
  CHECK(r.dlogits[0] == doctest::Approx(sigma - 1.0).epsilon(1e-14));
  CHECK(r.dlogits[1] == doctest::Approx(1.0 - sigma).epsilon(1e-14));
  // Finite-difference cross-check of the first gradient entry.
  const double h = 1e-6;
  const double fd = (oracle::ce_loss({2 + h, 0}, target, 2) - oracle::ce_loss({2 - h, 0}, target, 2)) / (2 * h);
  CHECK(r.dlogits[0] == doctest::Approx(fd).epsilon(1e-8));
}

TEST_CASE("loss: target equal to the softmax has zero gradient, large logits stay finite") {
  const std::vector<double> logits{1.0, -0.5, 3.0};
  const auto p = nn::softmax(logits);
  const auto r = nn::loss_ce_soft(logits, p, 3);
  for (double g : r.dlogits) CHECK(std::abs(g) < 1e-15);
  const std::vector<double> big{1000.0, -1000.0};
  const auto rb = nn::loss_ce_soft(big, std::vector<double>{0.0, 1.0}, 2);
  CHECK(std::isfinite(rb.loss));
  CHECK(rb.loss == doctest::Approx(2000.0));
}

TEST_CASE("softmax is permutation equivariant") {
  const std::vector<double> z{0.1, 2.0, -1.0, 0.5};
  const std::vector<double> zp{z[2], z[0], z[3], z[1]};
  const auto p = nn::softmax(z), pp = nn::softmax(zp);
  CHECK(pp[0] == p[2]);
  CHECK(pp[1] == p[0]);
  CHECK(pp[2] == p[3]);
  CHECK(pp[3] == p[1]);
}

TEST_CASE("backward: zero upstream gradient gives zero gradients") {
  Rng r(4);
  const auto m = nn::init_model<double>(shape_of(8, 3), 2);
  const auto imgs = random_images(r, 2, 8);
  const auto fp = nn::forward(m, std::span<const ImageTensor>(imgs));
  const std::vector<double> zero(6, 0.0);
  const auto g = nn::backward(m, fp, std::span<const double>(zero));
  for (auto arr : g.arrays()) {
    for (double v : arr) CHECK(v == 0.0);
  }
}

TEST_CASE("backward: head bias gradient is the column sum of dlogits") {
  Rng r(5);
  const auto m = nn::init_model<double>(shape_of(8, 3), 3);
  const auto imgs = random_images(r, 4, 8);
  const auto fp = nn::forward(m, std::span<const ImageTensor>(imgs));
  std::vector<double> dl(12);
  for (auto& v : dl) v = r.uniform(-1, 1);
  const auto g = nn::backward(m, fp, std::span<const double>(dl));
  for (int k = 0; k < 3; ++k) {
    double s = 0;
    for (int n = 0; n < 4; ++n) s += dl[n * 3 + k];
    CHECK(g.fc_b[k] == doctest::Approx(s).epsilon(1e-12));
  }
}

TEST_CASE("backward agrees with central differences") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto res = oracle::check_gradients(seed, 20);
    CHECK(res.checked == 120);
    CHECK(res.failed == 0);
    CHECK(res.worst_rel < 1e-4);
  }
}

TEST_CASE("sgd_step: plain SGD, zero gradient, and the momentum recurrence") {
  auto m = nn::init_model<double>(shape_of(8, 2), 1);
  const auto start = m;
  auto g = nn::Params<double>::zeros(m.shape);
  for (auto arr : g.arrays()) {
    for (auto& v : arr) v = 0.5;
  }
  auto vel = nn::Params<double>::zeros(m.shape);
  nn::sgd_step(m, g, vel, 0.0, 0.0, 0.1);
  CHECK(m.fc_w[0] == doctest::Approx(start.fc_w[0] - 0.05).epsilon(1e-15));

  auto still = start;
  auto zero_v = nn::Params<double>::zeros(m.shape);
  nn::sgd_step(still, nn::Params<double>::zeros(m.shape), zero_v, 0.9, 0.0, 0.1);
  CHECK(still == start);

  auto mm = start;
  auto v = nn::Params<double>::zeros(m.shape);
  nn::sgd_step(mm, g, v, 0.9, 0.0, 0.1);
  const auto after_one = mm;
  nn::sgd_step(mm, g, v, 0.9, 0.0, 0.1);
  // Second step moves by lr * (mu * g + g) = 0.1 * 1.9 * 0.5.
  CHECK(mm.conv1_w[3] - after_one.conv1_w[3] == doctest::Approx(-0.1 * 1.9 * 0.5).epsilon(1e-12));
}

TEST_CASE("sgd_step: weight decay enters the velocity") {
  auto m = nn::init_model<double>(shape_of(8, 2), 1);
  const double w0 = m.fc_w[0];
  auto v = nn::Params<double>::zeros(m.shape);
  nn::sgd_step(m, nn::Params<double>::zeros(m.shape), v, 0.0, 0.1, 1.0);
  CHECK(m.fc_w[0] == doctest::Approx(w0 - 0.1 * w0).epsilon(1e-12));
}

TEST_CASE("lr_at: step and cosine schedules") {
  nn::LrSchedule step;
  CHECK(nn::lr_at(step, 0, 0.002) == 0.002);
  CHECK(nn::lr_at(step, 39, 0.002) == 0.002);
  CHECK(nn::lr_at(step, 40, 0.002) == doctest::Approx(0.0002).epsilon(1e-15));
  CHECK(nn::lr_at(step, 80, 0.002) == doctest::Approx(0.00002).epsilon(1e-15));

  nn::LrSchedule cos{nn::ScheduleKind::Cosine, 0.001, 50, 40, 0.1};
  CHECK(nn::lr_at(cos, 0, 0.1) == 0.1);
  CHECK(nn::lr_at(cos, 25, 0.1) == doctest::Approx((0.1 + 0.001) / 2).epsilon(1e-12));
  CHECK(nn::lr_at(cos, 50, 0.1) == doctest::Approx(0.001).epsilon(1e-12));
  CHECK(nn::lr_at(cos, 70, 0.1) == 0.001);

  nn::LrSchedule bad{nn::ScheduleKind::Step, 0.0, 1, 40, 0.0};
  CHECK_THROWS(bad.validate());
  nn::LrSchedule bad_cos{nn::ScheduleKind::Cosine, 0.0, 0, 40, 0.1};
  CHECK_THROWS(bad_cos.validate());
}

TEST_CASE("train_epoch: lr 0 leaves the model unchanged but reports a loss") {
  const Dataset ds = brightness_toy(20, 1);
  auto m = nn::init_model<float>(shape_of(8, 2), 3);
  const auto start = m;
  auto opt = nn::OptimState::for_model(m);
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  nn::TrainOptions zero;
  zero.base_lr = 0.0;
  zero.batch_size = 7;
  const auto res = nn::train_epoch(m, opt, idx, ds, zero, 0);
  CHECK(m == start);
  CHECK(res.mean_loss > 0.0);
}

TEST_CASE("train_epoch: same (seed, epoch) gives identical parameters") {
  const Dataset ds = brightness_toy(40, 2);
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  nn::TrainOptions o;
  o.augment.kind = augment::Kind::CutMix;
  o.seed = 77;
  auto a = nn::init_model<float>(shape_of(8, 2), 4);
  auto b = a;
  auto oa = nn::OptimState::for_model(a), ob = nn::OptimState::for_model(b);
  nn::train_epoch(a, oa, idx, ds, o, 3);
  nn::train_epoch(b, ob, idx, ds, o, 3);
  CHECK(a == b);
}

TEST_CASE("train_epoch: separable toy data is learned within 20 epochs") {
  const Dataset ds = brightness_toy(64, 3);
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  nn::TrainOptions o;
  o.base_lr = 0.05;
  o.batch_size = 16;
  auto m = nn::init_model<float>(shape_of(8, 2), 5);
  auto opt = nn::OptimState::for_model(m);
  for (int e = 0; e < 20; ++e) nn::train_epoch(m, opt, idx, ds, o, e);
  CHECK(nn::accuracy(nn::evaluate(m, ds), ds) > 0.95);
}

TEST_CASE("one small full-batch step does not increase the loss") {
  int passes = 0;
  for (std::uint64_t t = 0; t < 20; ++t) {
    Rng r(100 + t);
    auto m = nn::init_model<double>(shape_of(8, 3), r.next());
    const auto imgs = random_images(r, 8, 8);
    std::vector<double> targets;
    for (int n = 0; n < 8; ++n) {
      const auto y = r.below(3);
      for (std::uint64_t k = 0; k < 3; ++k) targets.push_back(k == y ? 1.0 : 0.0);
    }
    const auto fp = nn::forward(m, std::span<const ImageTensor>(imgs));
    const auto before = nn::loss_ce_soft(fp.logits, targets, 3);
    const auto g = nn::backward(m, fp, std::span<const double>(before.dlogits));
    auto v = nn::Params<double>::zeros(m.shape);
    nn::sgd_step(m, g, v, 0.0, 0.0, 1e-3);
    const auto after = nn::loss_ce_soft(nn::forward(m, std::span<const ImageTensor>(imgs)).logits, targets, 3);
    passes += after.loss <= before.loss ? 1 : 0;
  }
  CHECK(passes >= 19);
}

TEST_CASE("evaluate: empty data, normalized outputs, repeatable") {
  const auto m = nn::init_model<float>(shape_of(8, 2), 6);
  const Dataset empty{{}, 2, Split::Test};
  const auto e = nn::evaluate(m, empty);
  CHECK(e.probs.empty());
  CHECK(e.features.empty());
  const Dataset ds = brightness_toy(10, 4);
  const auto a = nn::evaluate(m, ds);
  for (const auto& p : a.probs) CHECK(std::abs(std::accumulate(p.begin(), p.end(), 0.0) - 1.0) < 1e-9);
  CHECK(nn::evaluate(m, ds).probs == a.probs);
}

TEST_CASE("argmax breaks ties toward the lower index") {
  const std::vector<double> v{0.2, 0.4, 0.4};
  CHECK(nn::argmax(v) == 1);
}

TEST_CASE("checkpoint round trip and header layout") {
  const auto m = nn::init_model<float>(shape_of(16, 4), 8);
  const std::string bytes = nn::serialize(m);
  CHECK(bytes.substr(0, 4) == "CLOE");
  CHECK(static_cast<unsigned char>(bytes[4]) == nn::kCheckpointVersion);
  CHECK(nn::deserialize(bytes) == m);
  const fs::path p = fs::temp_directory_path() / "cloe_test_model.cloe";
  nn::save_checkpoint(m, p);
  CHECK(nn::load_checkpoint(p) == m);
  CHECK_THROWS(nn::deserialize(bytes.substr(0, bytes.size() - 3)));
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS(nn::deserialize(bad));
}
