#include "cloe/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <numbers>

#include "cloe/rng.hpp"

namespace cloe::nn {

void ModelShape::validate() const {
  if (channels <= 0 || conv1_out <= 0 || conv2_out <= 0) throw ConfigError("model: widths must be positive");
  if (height < 4 || width < 4 || height % 4 != 0 || width % 4 != 0) {
    throw ConfigError("model: input height and width must be positive multiples of 4");
  }
  if (num_classes < 2) throw ConfigError("model: need at least 2 classes");
}

template <class Real>
Params<Real> Params<Real>::zeros(const ModelShape& s) {
  s.validate();
  Params p;
  p.shape = s;
  p.conv1_w.assign(static_cast<std::size_t>(s.conv1_out) * s.channels * 9, Real(0));
  p.conv1_b.assign(static_cast<std::size_t>(s.conv1_out), Real(0));
  p.conv2_w.assign(static_cast<std::size_t>(s.conv2_out) * s.conv1_out * 9, Real(0));
  p.conv2_b.assign(static_cast<std::size_t>(s.conv2_out), Real(0));
  p.fc_w.assign(static_cast<std::size_t>(s.num_classes) * s.feature_dim(), Real(0));
  p.fc_b.assign(static_cast<std::size_t>(s.num_classes), Real(0));
  return p;
}

template <class Real>
std::array<std::span<Real>, kNumArrays> Params<Real>::arrays() {
  return {conv1_w, conv1_b, conv2_w, conv2_b, fc_w, fc_b};
}

template <class Real>
std::array<std::span<const Real>, kNumArrays> Params<Real>::arrays() const {
  return {conv1_w, conv1_b, conv2_w, conv2_b, fc_w, fc_b};
}

template <class Real>
std::vector<std::uint32_t> Params<Real>::dims(std::size_t i) const {
  const auto u = [](int v) { return static_cast<std::uint32_t>(v); };
  switch (i) {
    case 0: return {u(shape.conv1_out), u(shape.channels), 3, 3};
    case 1: return {u(shape.conv1_out)};
    case 2: return {u(shape.conv2_out), u(shape.conv1_out), 3, 3};
    case 3: return {u(shape.conv2_out)};
    case 4: return {u(shape.num_classes), u(shape.feature_dim())};
    case 5: return {u(shape.num_classes)};
    default: throw std::out_of_range("Params::dims");
  }
}

template <class Real>
Params<Real> init_model(const ModelShape& shape, std::uint64_t seed) {
  Params<Real> p = Params<Real>::zeros(shape);
  Rng rng(mix_seed(seed, 0x1a17));
  const auto fill = [&rng](std::vector<Real>& v, double bound) {
    for (auto& x : v) x = static_cast<Real>(rng.uniform(-bound, bound));
  };
  fill(p.conv1_w, std::sqrt(6.0 / (shape.channels * 9)));
  fill(p.conv2_w, std::sqrt(6.0 / (shape.conv1_out * 9)));
  fill(p.fc_w, 1.0 / std::sqrt(static_cast<double>(shape.feature_dim())));
  return p;
}

void check_input(const ModelShape& shape, const ImageTensor& img) {
  if (img.channels != shape.channels || img.height != shape.height || img.width != shape.width) {
    throw DataError("image " + std::to_string(img.channels) + "x" + std::to_string(img.height) + "x" +
                    std::to_string(img.width) + " does not match model input " + std::to_string(shape.channels) +
                    "x" + std::to_string(shape.height) + "x" + std::to_string(shape.width));
  }
  if (img.pixels.size() != img.size()) throw DataError("image pixel buffer has the wrong length");
}

namespace {

// 3x3 convolution, stride 1, zero padding 1, single sample.
template <class Real>
void conv3x3_forward(const Real* in, int cin, int h, int w, const Real* wt, const Real* bias, int cout, Real* out) {
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int oc = 0; oc < cout; ++oc) {
    Real* o = out + oc * plane;
    std::fill(o, o + plane, bias[oc]);
    for (int ic = 0; ic < cin; ++ic) {
      const Real* ip = in + ic * plane;
      const Real* k = wt + (static_cast<std::size_t>(oc) * cin + ic) * 9;
      for (int ky = 0; ky < 3; ++ky) {
        const int dy = ky - 1;
        const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
        for (int kx = 0; kx < 3; ++kx) {
          const int dx = kx - 1;
          const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
          const Real kv = k[ky * 3 + kx];
          for (int y = y0; y < y1; ++y) {
            Real* orow = o + static_cast<std::size_t>(y) * w;
            const Real* irow = ip + static_cast<std::ptrdiff_t>(y + dy) * w + dx;
            for (int x = x0; x < x1; ++x) orow[x] += kv * irow[x];
          }
        }
      }
    }
  }
}

// Accumulates weight and bias gradients (double) and, when din is given,
// adds the input gradient into din.
template <class Real>
void conv3x3_backward(const Real* in, int cin, int h, int w, const Real* wt, int cout, const Real* dout, double* dw,
                      double* db, Real* din) {
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<Real> colacc(static_cast<std::size_t>(w));
  for (int oc = 0; oc < cout; ++oc) {
    const Real* d = dout + oc * plane;
    double bsum = 0.0;
    for (std::size_t i = 0; i < plane; ++i) bsum += d[i];
    db[oc] += bsum;
    for (int ic = 0; ic < cin; ++ic) {
      const Real* ip = in + ic * plane;
      const std::size_t kbase = (static_cast<std::size_t>(oc) * cin + ic) * 9;
      for (int ky = 0; ky < 3; ++ky) {
        const int dy = ky - 1;
        const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
        for (int kx = 0; kx < 3; ++kx) {
          const int dx = kx - 1;
          const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
          // Column partial sums stay elementwise (vectorizable); the final
          // reduction over columns is done in double.
          std::fill(colacc.begin(), colacc.end(), Real(0));
          for (int y = y0; y < y1; ++y) {
            const Real* drow = d + static_cast<std::size_t>(y) * w;
            const Real* irow = ip + static_cast<std::ptrdiff_t>(y + dy) * w + dx;
            for (int x = x0; x < x1; ++x) colacc[static_cast<std::size_t>(x)] += drow[x] * irow[x];
          }
          double s = 0.0;
          for (int x = x0; x < x1; ++x) s += colacc[static_cast<std::size_t>(x)];
          dw[kbase + ky * 3 + kx] += s;
          if (din != nullptr) {
            const Real kv = wt[kbase + ky * 3 + kx];
            Real* dp = din + ic * plane;
            for (int y = y0; y < y1; ++y) {
              const Real* drow = d + static_cast<std::size_t>(y) * w;
              Real* irow = dp + static_cast<std::ptrdiff_t>(y + dy) * w + dx;
              for (int x = x0; x < x1; ++x) irow[x] += kv * drow[x];
            }
          }
        }
      }
    }
  }
}

template <class Real>
void relu_inplace(Real* v, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) v[i] = v[i] > Real(0) ? v[i] : Real(0);
}

// 2x2 max pool, stride 2. arg stores the winning index within the input
// plane; ties keep the first candidate in raster order.
template <class Real>
void maxpool2(const Real* in, int c, int h, int w, Real* out, std::uint32_t* arg) {
  const int oh = h / 2, ow = w / 2;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t oplane = static_cast<std::size_t>(oh) * ow;
  for (int ch = 0; ch < c; ++ch) {
    const Real* ip = in + ch * plane;
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        std::uint32_t best = static_cast<std::uint32_t>((2 * y) * w + 2 * x);
        Real bv = ip[best];
        const std::uint32_t cand[3] = {best + 1, best + static_cast<std::uint32_t>(w),
                                       best + static_cast<std::uint32_t>(w) + 1};
        for (std::uint32_t ci : cand) {
          if (ip[ci] > bv) {
            bv = ip[ci];
            best = ci;
          }
        }
        out[ch * oplane + static_cast<std::size_t>(y) * ow + x] = bv;
        arg[ch * oplane + static_cast<std::size_t>(y) * ow + x] = best;
      }
    }
  }
}

}  // namespace

template <class Real>
ForwardPass<Real> forward(const Params<Real>& m, std::span<const ImageTensor> images) {
  const ModelShape& s = m.shape;
  const std::size_t n = images.size();
  const std::size_t in_sz = static_cast<std::size_t>(s.channels) * s.height * s.width;
  const std::size_t a1_sz = static_cast<std::size_t>(s.conv1_out) * s.height * s.width;
  const std::size_t p1_sz = a1_sz / 4;
  const std::size_t a2_sz = static_cast<std::size_t>(s.conv2_out) * (s.height / 2) * (s.width / 2);
  const std::size_t f = static_cast<std::size_t>(s.feature_dim());
  const std::size_t k = static_cast<std::size_t>(s.num_classes);

  ForwardPass<Real> fp;
  fp.batch = n;
  fp.input.resize(n * in_sz);
  fp.act1.resize(n * a1_sz);
  fp.pool1.resize(n * p1_sz);
  fp.arg1.resize(n * p1_sz);
  fp.act2.resize(n * a2_sz);
  fp.features.resize(n * f);
  fp.arg2.resize(n * f);
  fp.logits.resize(n * k);

  for (std::size_t i = 0; i < n; ++i) {
    check_input(s, images[i]);
    Real* in = fp.input.data() + i * in_sz;
    std::copy(images[i].pixels.begin(), images[i].pixels.end(), in);

    Real* a1 = fp.act1.data() + i * a1_sz;
    conv3x3_forward(in, s.channels, s.height, s.width, m.conv1_w.data(), m.conv1_b.data(), s.conv1_out, a1);
    relu_inplace(a1, a1_sz);
    Real* p1 = fp.pool1.data() + i * p1_sz;
    maxpool2(a1, s.conv1_out, s.height, s.width, p1, fp.arg1.data() + i * p1_sz);

    Real* a2 = fp.act2.data() + i * a2_sz;
    conv3x3_forward(p1, s.conv1_out, s.height / 2, s.width / 2, m.conv2_w.data(), m.conv2_b.data(), s.conv2_out, a2);
    relu_inplace(a2, a2_sz);
    Real* feat = fp.features.data() + i * f;
    maxpool2(a2, s.conv2_out, s.height / 2, s.width / 2, feat, fp.arg2.data() + i * f);

    for (std::size_t c = 0; c < k; ++c) {
      const Real* wrow = m.fc_w.data() + c * f;
      double acc = m.fc_b[c];
      for (std::size_t j = 0; j < f; ++j) acc += static_cast<double>(wrow[j]) * feat[j];
      fp.logits[i * k + c] = static_cast<Real>(acc);
    }
  }
  return fp;
}

template <class Real>
Params<Real> backward(const Params<Real>& m, const ForwardPass<Real>& fp, std::span<const Real> dlogits) {
  const ModelShape& s = m.shape;
  const std::size_t n = fp.batch;
  const std::size_t k = static_cast<std::size_t>(s.num_classes);
  const std::size_t f = static_cast<std::size_t>(s.feature_dim());
  if (dlogits.size() != n * k) throw DataError("backward: dlogits has the wrong size");

  const std::size_t in_sz = static_cast<std::size_t>(s.channels) * s.height * s.width;
  const std::size_t a1_sz = static_cast<std::size_t>(s.conv1_out) * s.height * s.width;
  const std::size_t p1_sz = a1_sz / 4;
  const std::size_t a2_sz = static_cast<std::size_t>(s.conv2_out) * (s.height / 2) * (s.width / 2);
  const std::size_t plane1 = static_cast<std::size_t>(s.height) * s.width;
  const std::size_t plane2 = plane1 / 4;
  const std::size_t pplane1 = plane1 / 4;
  const std::size_t pplane2 = plane1 / 16;

  std::vector<double> g_c1w(m.conv1_w.size(), 0.0), g_c1b(m.conv1_b.size(), 0.0);
  std::vector<double> g_c2w(m.conv2_w.size(), 0.0), g_c2b(m.conv2_b.size(), 0.0);
  std::vector<double> g_fw(m.fc_w.size(), 0.0), g_fb(m.fc_b.size(), 0.0);

  std::vector<Real> dfeat(f), da2(a2_sz), dp1(p1_sz), da1(a1_sz);
  for (std::size_t i = 0; i < n; ++i) {
    const Real* dl = dlogits.data() + i * k;
    const Real* feat = fp.features.data() + i * f;

    std::fill(dfeat.begin(), dfeat.end(), Real(0));
    for (std::size_t c = 0; c < k; ++c) {
      const Real g = dl[c];
      g_fb[c] += g;
      double* gw = g_fw.data() + c * f;
      const Real* wrow = m.fc_w.data() + c * f;
      for (std::size_t j = 0; j < f; ++j) {
        gw[j] += static_cast<double>(g) * feat[j];
        dfeat[j] += g * wrow[j];
      }
    }

    // Unpool 2, then relu mask.
    std::fill(da2.begin(), da2.end(), Real(0));
    const std::uint32_t* arg2 = fp.arg2.data() + i * f;
    for (int ch = 0; ch < s.conv2_out; ++ch) {
      for (std::size_t j = 0; j < pplane2; ++j) {
        const std::size_t o = ch * pplane2 + j;
        da2[ch * plane2 + arg2[o]] += dfeat[o];
      }
    }
    const Real* a2 = fp.act2.data() + i * a2_sz;
    for (std::size_t j = 0; j < a2_sz; ++j) {
      if (!(a2[j] > Real(0))) da2[j] = Real(0);
    }

    std::fill(dp1.begin(), dp1.end(), Real(0));
    conv3x3_backward(fp.pool1.data() + i * p1_sz, s.conv1_out, s.height / 2, s.width / 2, m.conv2_w.data(),
                     s.conv2_out, da2.data(), g_c2w.data(), g_c2b.data(), dp1.data());

    std::fill(da1.begin(), da1.end(), Real(0));
    const std::uint32_t* arg1 = fp.arg1.data() + i * p1_sz;
    for (int ch = 0; ch < s.conv1_out; ++ch) {
      for (std::size_t j = 0; j < pplane1; ++j) {
        const std::size_t o = ch * pplane1 + j;
        da1[ch * plane1 + arg1[o]] += dp1[o];
      }
    }
    const Real* a1 = fp.act1.data() + i * a1_sz;
    for (std::size_t j = 0; j < a1_sz; ++j) {
      if (!(a1[j] > Real(0))) da1[j] = Real(0);
    }

    conv3x3_backward(fp.input.data() + i * in_sz, s.channels, s.height, s.width, m.conv1_w.data(), s.conv1_out,
                     da1.data(), g_c1w.data(), g_c1b.data(), static_cast<Real*>(nullptr));
  }

  Params<Real> g = Params<Real>::zeros(s);
  const auto store = [](std::vector<Real>& dst, const std::vector<double>& src) {
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] = static_cast<Real>(src[j]);
  };
  store(g.conv1_w, g_c1w);
  store(g.conv1_b, g_c1b);
  store(g.conv2_w, g_c2w);
  store(g.conv2_b, g_c2b);
  store(g.fc_w, g_fw);
  store(g.fc_b, g_fb);
  return g;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  if (logits.empty()) return p;
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

LossResult loss_ce_soft(std::span<const double> logits, std::span<const double> targets, int num_classes) {
  const std::size_t k = static_cast<std::size_t>(num_classes);
  if (k == 0 || logits.size() % k != 0 || targets.size() != logits.size()) {
    throw DataError("loss_ce_soft: logits and targets must both be N x K");
  }
  const std::size_t n = logits.size() / k;
  LossResult r;
  r.dlogits.resize(logits.size());
  if (n == 0) return r;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* z = logits.data() + i * k;
    const double* t = targets.data() + i * k;
    double mx = z[0];
    for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, z[c]);
    double se = 0.0;
    for (std::size_t c = 0; c < k; ++c) se += std::exp(z[c] - mx);
    const double lse = mx + std::log(se);
    for (std::size_t c = 0; c < k; ++c) {
      const double logp = z[c] - lse;
      if (t[c] != 0.0) total -= t[c] * logp;
      r.dlogits[i * k + c] = (std::exp(logp) - t[c]) / static_cast<double>(n);
    }
  }
  r.loss = total / static_cast<double>(n);
  return r;
}

OptimState OptimState::for_model(const TinyCNN& model, double momentum, double weight_decay) {
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  OptimState o;
  o.momentum = momentum;
  o.weight_decay = weight_decay;
  o.velocity = Params<float>::zeros(model.shape);
  return o;
}

template <class Real>
void sgd_step(Params<Real>& model, const Params<Real>& grads, Params<Real>& velocity, double momentum,
              double weight_decay, double lr) {
  if (!(model.shape == grads.shape) || !(model.shape == velocity.shape)) {
    throw DataError("sgd_step: parameter, gradient and velocity shapes differ");
  }
  auto theta = model.arrays();
  auto g = grads.arrays();
  auto v = velocity.arrays();
  for (std::size_t a = 0; a < kNumArrays; ++a) {
    for (std::size_t j = 0; j < theta[a].size(); ++j) {
      double vj = momentum * v[a][j] + g[a][j];
      if (weight_decay != 0.0) vj += weight_decay * theta[a][j];
      v[a][j] = static_cast<Real>(vj);
      theta[a][j] = static_cast<Real>(theta[a][j] - lr * vj);
    }
  }
}

void sgd_step(TinyCNN& model, const Gradients& grads, OptimState& optim, double lr) {
  sgd_step<float>(model, grads, optim.velocity, optim.momentum, optim.weight_decay, lr);
}

void LrSchedule::validate() const {
  if (kind == ScheduleKind::Cosine && t_max < 1) throw ConfigError("cosine schedule needs t_max >= 1");
  if (kind == ScheduleKind::Step) {
    if (period < 1) throw ConfigError("step schedule needs period >= 1");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("step schedule needs gamma in (0, 1]");
  }
}

double lr_at(const LrSchedule& s, int epoch, double base_lr) {
  if (epoch < 0) throw ConfigError("lr_at: epoch must be >= 0");
  if (s.kind == ScheduleKind::Cosine) {
    if (epoch >= s.t_max) return s.lr_min;
    return s.lr_min + 0.5 * (base_lr - s.lr_min) * (1.0 + std::cos(std::numbers::pi * epoch / s.t_max));
  }
  return base_lr * std::pow(s.gamma, epoch / s.period);
}

int argmax(std::span<const double> v) {
  int best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

EpochResult train_epoch(TinyCNN& model, OptimState& optim, std::span<const std::size_t> indices, const Dataset& ds,
                        const TrainOptions& opts, int epoch) {
  if (indices.empty()) throw DataError("train_epoch: no samples to train on");
  if (opts.batch_size < 1) throw ConfigError("train_epoch: batch_size must be >= 1");
  const int k = model.shape.num_classes;
  if (ds.num_classes != k) throw DataError("train_epoch: dataset and model disagree on class count");

  Rng rng(mix_seed(opts.seed, 0x7a11'0000ULL + static_cast<std::uint64_t>(epoch)));
  std::vector<std::size_t> order(indices.begin(), indices.end());
  rng.shuffle(order);

  EpochResult res;
  res.lr = lr_at(opts.schedule, epoch, opts.base_lr);
  double loss_sum = 0.0;
  const auto bs = static_cast<std::size_t>(opts.batch_size);
  for (std::size_t start = 0; start < order.size(); start += bs) {
    const std::size_t end = std::min(order.size(), start + bs);
    augment::LabeledBatch batch;
    batch.num_classes = k;
    for (std::size_t j = start; j < end; ++j) {
      const Sample& s = ds.samples.at(order[j]);
      ImageTensor img = s.image;
      if (opts.augment.random_resized_crop) img = augment::random_resized_crop(img, rng);
      if (opts.augment.hflip && rng.bernoulli(0.5)) img = augment::hflip(img);
      batch.images.push_back(std::move(img));
      batch.labels.push_back(s.label);
    }
    const augment::MixedBatch mixed = augment::apply(batch, opts.augment, rng);

    ForwardPass<float> fp = forward(model, std::span<const ImageTensor>(mixed.images));
    std::vector<double> logits(fp.logits.begin(), fp.logits.end());
    std::vector<double> targets;
    targets.reserve(logits.size());
    for (const auto& lab : mixed.labels) targets.insert(targets.end(), lab.probs.begin(), lab.probs.end());
    const LossResult lr = loss_ce_soft(logits, targets, k);
    const std::vector<float> dl(lr.dlogits.begin(), lr.dlogits.end());
    const Gradients g = backward(model, fp, std::span<const float>(dl));
    sgd_step(model, g, optim, res.lr);
    loss_sum += lr.loss * static_cast<double>(end - start);
  }
  res.mean_loss = loss_sum / static_cast<double>(order.size());
  return res;
}

Evaluation evaluate(const TinyCNN& model, const Dataset& ds) {
  Evaluation ev;
  ev.num_classes = model.shape.num_classes;
  ev.feature_dim = model.shape.feature_dim();
  constexpr std::size_t kChunk = 128;
  const std::size_t k = static_cast<std::size_t>(ev.num_classes);
  const std::size_t f = static_cast<std::size_t>(ev.feature_dim);
  for (std::size_t start = 0; start < ds.samples.size(); start += kChunk) {
    const std::size_t end = std::min(ds.samples.size(), start + kChunk);
    std::vector<ImageTensor> imgs;
    imgs.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) imgs.push_back(ds.samples[i].image);
    const ForwardPass<float> fp = forward(model, std::span<const ImageTensor>(imgs));
    for (std::size_t i = 0; i < end - start; ++i) {
      std::vector<double> z(fp.logits.begin() + static_cast<std::ptrdiff_t>(i * k),
                            fp.logits.begin() + static_cast<std::ptrdiff_t>((i + 1) * k));
      ev.probs.push_back(softmax(z));
      ev.features.emplace_back(fp.features.begin() + static_cast<std::ptrdiff_t>(i * f),
                               fp.features.begin() + static_cast<std::ptrdiff_t>((i + 1) * f));
    }
  }
  return ev;
}

double accuracy(const Evaluation& ev, const Dataset& ds) {
  if (ds.samples.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    if (argmax(ev.probs[i]) == ds.samples[i].label) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(ds.samples.size());
}

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xffu));
}

class ByteReader {
 public:
  explicit ByteReader(std::string_view b) : b_(b) {}
  bool done() const { return pos_ == b_.size(); }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b_[pos_ + b])) << (8 * b);
    pos_ += 4;
    return v;
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw ParseError("checkpoint truncated at byte " + std::to_string(pos_), pos_);
  }
  std::string_view b_;
  std::size_t pos_ = 0;
};

void put_array(std::string& out, std::string_view name, const std::vector<std::uint32_t>& dims,
               std::span<const float> data) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.append(name);
  put_u32(out, static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) put_u32(out, d);
  for (float v : data) put_u32(out, std::bit_cast<std::uint32_t>(v));
}

}  // namespace

std::string serialize(const TinyCNN& model) {
  std::string out = "CLOE";
  out.push_back(static_cast<char>(kCheckpointVersion));
  const ModelShape& s = model.shape;
  const std::vector<float> in_shape = {static_cast<float>(s.channels), static_cast<float>(s.height),
                                       static_cast<float>(s.width)};
  put_array(out, "input_shape", {3}, in_shape);
  const auto arrays = model.arrays();
  for (std::size_t a = 0; a < kNumArrays; ++a) put_array(out, kArrayNames[a], model.dims(a), arrays[a]);
  return out;
}

TinyCNN deserialize(std::string_view bytes) {
  if (bytes.size() < 5 || bytes.substr(0, 4) != "CLOE") throw ParseError("checkpoint: bad magic", 0);
  if (static_cast<std::uint8_t>(bytes[4]) != kCheckpointVersion) {
    throw ParseError("checkpoint: unsupported version " + std::to_string(static_cast<unsigned char>(bytes[4])), 4);
  }
  ByteReader r(bytes.substr(5));
  struct Arr {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> data;
  };
  std::vector<Arr> arrs;
  while (!r.done()) {
    Arr a;
    const std::uint32_t nlen = r.u32();
    a.name = std::string(r.take(nlen));
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw ParseError("checkpoint: implausible rank for " + a.name, r.pos() + 5);
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      a.dims.push_back(r.u32());
      count *= a.dims.back();
    }
    if (count > (1u << 28)) throw ParseError("checkpoint: array too large", r.pos() + 5);
    a.data.resize(count);
    for (auto& v : a.data) v = std::bit_cast<float>(r.u32());
    arrs.push_back(std::move(a));
  }
  if (arrs.size() != kNumArrays + 1 || arrs[0].name != "input_shape" || arrs[0].data.size() != 3) {
    throw ParseError("checkpoint: expected input_shape followed by the six TinyCNN arrays", 5);
  }
  ModelShape s;
  s.channels = static_cast<int>(arrs[0].data[0]);
  s.height = static_cast<int>(arrs[0].data[1]);
  s.width = static_cast<int>(arrs[0].data[2]);
  if (arrs[1].dims.size() != 4 || arrs[5].dims.size() != 2) throw ParseError("checkpoint: bad weight ranks", 5);
  s.conv1_out = static_cast<int>(arrs[1].dims[0]);
  s.conv2_out = static_cast<int>(arrs[3].dims.empty() ? 0 : arrs[3].dims[0]);
  s.num_classes = static_cast<int>(arrs[5].dims[0]);
  TinyCNN m = TinyCNN::zeros(s);
  auto dst = m.arrays();
  for (std::size_t a = 0; a < kNumArrays; ++a) {
    const Arr& src = arrs[a + 1];
    if (src.name != kArrayNames[a] || src.dims != m.dims(a)) {
      throw ParseError("checkpoint: array '" + src.name + "' does not match the expected layout", 5);
    }
    std::copy(src.data.begin(), src.data.end(), dst[a].begin());
  }
  return m;
}

void save_checkpoint(const TinyCNN& model, const std::filesystem::path& path) {
  const std::string bytes = serialize(model);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write checkpoint " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

TinyCNN load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

template <class To, class From>
Params<To> cast(const Params<From>& p) {
  Params<To> out = Params<To>::zeros(p.shape);
  auto dst = out.arrays();
  auto src = p.arrays();
  for (std::size_t a = 0; a < kNumArrays; ++a) {
    for (std::size_t j = 0; j < src[a].size(); ++j) dst[a][j] = static_cast<To>(src[a][j]);
  }
  return out;
}

template struct Params<float>;
template struct Params<double>;
template Params<float> init_model<float>(const ModelShape&, std::uint64_t);
template Params<double> init_model<double>(const ModelShape&, std::uint64_t);
template ForwardPass<float> forward<float>(const Params<float>&, std::span<const ImageTensor>);
template ForwardPass<double> forward<double>(const Params<double>&, std::span<const ImageTensor>);
template Params<float> backward<float>(const Params<float>&, const ForwardPass<float>&, std::span<const float>);
template Params<double> backward<double>(const Params<double>&, const ForwardPass<double>&, std::span<const double>);
template void sgd_step<float>(Params<float>&, const Params<float>&, Params<float>&, double, double, double);
template void sgd_step<double>(Params<double>&, const Params<double>&, Params<double>&, double, double, double);
template Params<double> cast<double, float>(const Params<float>&);
template Params<float> cast<float, double>(const Params<double>&);

}  // namespace cloe::nn
