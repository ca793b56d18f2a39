#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cloe/augment.hpp"
#include "cloe/core.hpp"

namespace cloe::nn {

/// Input geometry and widths of the fixed two-block CNN:
/// conv3x3(C->c1) relu maxpool2, conv3x3(c1->c2) relu maxpool2, linear(F->K).
struct ModelShape {
  int channels = 3;
  int height = 32;
  int width = 32;
  int num_classes = 4;
  int conv1_out = 8;
  int conv2_out = 16;

  int feature_dim() const { return conv2_out * (height / 4) * (width / 4); }
  void validate() const;
  bool operator==(const ModelShape&) const = default;
};

inline constexpr std::size_t kNumArrays = 6;
inline constexpr std::array<std::string_view, kNumArrays> kArrayNames = {
    "conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias", "fc.weight", "fc.bias"};

/// Flat parameter arrays. The same type holds gradients and optimizer
/// velocity, so every array is paired one-to-one by construction.
template <class Real>
struct Params {
  ModelShape shape;
  std::vector<Real> conv1_w, conv1_b, conv2_w, conv2_b, fc_w, fc_b;

  static Params zeros(const ModelShape& shape);

  std::array<std::span<Real>, kNumArrays> arrays();
  std::array<std::span<const Real>, kNumArrays> arrays() const;
  /// Dimensions of array i (weights are [out, in, 3, 3] or [K, F]).
  std::vector<std::uint32_t> dims(std::size_t i) const;
  bool operator==(const Params&) const = default;
};

using TinyCNN = Params<float>;
using Gradients = Params<float>;

/// Fan-in scaled uniform init (He for conv layers, 1/sqrt(F) for the head);
/// biases start at zero.
template <class Real>
Params<Real> init_model(const ModelShape& shape, std::uint64_t seed);

/// Activations kept for backward.
template <class Real>
struct ForwardPass {
  std::size_t batch = 0;
  std::vector<Real> logits;    // batch x K
  std::vector<Real> features;  // batch x F, pooled conv2 output
  std::vector<Real> input, act1, pool1, act2;
  std::vector<std::uint32_t> arg1, arg2;  // maxpool winners
};

template <class Real>
ForwardPass<Real> forward(const Params<Real>& model, std::span<const ImageTensor> images);

template <class Real>
Params<Real> backward(const Params<Real>& model, const ForwardPass<Real>& pass, std::span<const Real> dlogits);

struct LossResult {
  double loss = 0.0;
  std::vector<double> dlogits;  // batch x K, already divided by batch
};

/// Mean soft-target cross-entropy with max-subtracted log-softmax.
LossResult loss_ce_soft(std::span<const double> logits, std::span<const double> targets, int num_classes);

std::vector<double> softmax(std::span<const double> logits);

struct OptimState {
  double momentum = 0.9;
  double weight_decay = 0.0;
  Params<float> velocity;

  static OptimState for_model(const TinyCNN& model, double momentum = 0.9, double weight_decay = 0.0);
};

/// v <- mu v + g + wd theta; theta <- theta - lr v.
template <class Real>
void sgd_step(Params<Real>& model, const Params<Real>& grads, Params<Real>& velocity, double momentum,
              double weight_decay, double lr);
void sgd_step(TinyCNN& model, const Gradients& grads, OptimState& optim, double lr);

enum class ScheduleKind { Cosine, Step };

struct LrSchedule {
  ScheduleKind kind = ScheduleKind::Step;
  double lr_min = 0.0;
  int t_max = 100;
  int period = 40;
  double gamma = 0.1;

  void validate() const;
};

double lr_at(const LrSchedule& schedule, int epoch, double base_lr);

struct TrainOptions {
  int batch_size = 32;
  double base_lr = 0.01;
  LrSchedule schedule;
  augment::AugmentConfig augment;
  std::uint64_t seed = 0;
};

struct EpochResult {
  double mean_loss = 0.0;
  double lr = 0.0;
};

/// One pass over `indices` (positions into ds) in an order shuffled from
/// (seed, epoch), one SGD step per batch at lr_at(schedule, epoch).
EpochResult train_epoch(TinyCNN& model, OptimState& optim, std::span<const std::size_t> indices, const Dataset& ds,
                        const TrainOptions& opts, int epoch);

struct Evaluation {
  int num_classes = 0;
  int feature_dim = 0;
  std::vector<std::vector<double>> probs;
  std::vector<std::vector<float>> features;
};

/// Softmax outputs and penultimate features per sample, in dataset order.
Evaluation evaluate(const TinyCNN& model, const Dataset& ds);

/// Argmax with ties going to the lower index.
int argmax(std::span<const double> v);

double accuracy(const Evaluation& ev, const Dataset& ds);

void check_input(const ModelShape& shape, const ImageTensor& img);

// Checkpoint: "CLOE", version byte, then per array: u32 name length, name,
// u32 rank, u32 dims, float32 payload (all little-endian). The first array,
// "input_shape", records (C, H, W).
inline constexpr std::uint8_t kCheckpointVersion = 1;
std::string serialize(const TinyCNN& model);
TinyCNN deserialize(std::string_view bytes);
void save_checkpoint(const TinyCNN& model, const std::filesystem::path& path);
TinyCNN load_checkpoint(const std::filesystem::path& path);

template <class To, class From>
Params<To> cast(const Params<From>& p);

}  // namespace cloe::nn
