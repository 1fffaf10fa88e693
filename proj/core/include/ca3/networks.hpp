#pragma once

// Target autoencoder + alarm classifier.
//
// The target is a convolutional autoencoder (2-D for images, soft-ordered
// 1-D for tabular rows). Activations of its tapped conv layers are pooled to
// a common spatial shape, stacked along the channel axis and fed to the
// alarm CNN, which emits one anomaly probability per sample.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ca3/ops.hpp"
#include "ca3/random.hpp"
#include "ca3/tensor.hpp"

namespace ca3 {

enum class InputKind { image, tabular };

struct TargetConfig {
  InputKind kind = InputKind::image;
  // image input (C, H, W)
  std::size_t channels = 1;
  std::size_t height = 28;
  std::size_t width = 28;
  // tabular input width D
  std::size_t features = 0;

  std::vector<std::size_t> encoder_channels{16, 32};
  std::size_t kernel_size = 3;
  std::size_t stride = 2;
  std::size_t latent_dim = 32;
  // tabular only: soft-ordering layer width W, split into k rows
  std::size_t soft_ordering_width = 64;
  std::size_t soft_ordering_k = 4;

  bool variational = false;
  double kl_weight = 1e-3;
  bool tap_decoder = false;

  static TargetConfig image(std::size_t c, std::size_t h, std::size_t w);
  static TargetConfig tabular(std::size_t d);

  // Per-sample input shape, i.e. without the batch axis.
  Shape sample_shape() const;
  void validate() const;
};

struct AlarmConfig {
  std::vector<std::size_t> conv_channels{32, 16};
  std::size_t kernel_size = 3;
  std::vector<std::size_t> hidden_dense{64};

  void validate() const;
};

struct TapInfo {
  std::string id;
  Shape shape;  // per sample: [C, spatial...]
};

struct ActivationBundle {
  std::vector<std::pair<std::string, Tensor>> entries;
};

struct TargetOutput {
  Tensor reconstruction;
  ActivationBundle activations;
  Tensor latent_mean;
  Tensor latent_logvar;  // variational only
};

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

// Pools every entry to the elementwise-minimum spatial shape and
// concatenates along channels in entry order.
Tensor stack_activations(Tape& tape, const ActivationBundle& acts);

class ModelBundle {
 public:
  // Parameters are initialized uniformly in +-1/sqrt(fan_in) from `seed`.
  static ModelBundle build(const TargetConfig& target, const AlarmConfig& alarm, std::uint64_t seed);

  ModelBundle(ModelBundle&&) noexcept;
  ModelBundle& operator=(ModelBundle&&) noexcept;
  ModelBundle(const ModelBundle&) = delete;
  ModelBundle& operator=(const ModelBundle&) = delete;
  ~ModelBundle();

  // Deep copy with independent parameter storage.
  ModelBundle clone() const;

  const TargetConfig& target_config() const;
  const AlarmConfig& alarm_config() const;
  const std::vector<TapInfo>& taps() const;
  // [sum of tap channels, min spatial...]
  const Shape& alarm_input_shape() const;

  const std::vector<NamedParameter>& parameters() const;
  std::size_t parameter_count() const;

  // `sampler` draws the reparameterization noise of a variational target;
  // without it the latent mean is decoded.
  TargetOutput forward_with_taps(Tape& tape, const Tensor& x, Rng* sampler = nullptr) const;
  // [N, 1] probabilities.
  Tensor alarm_forward(Tape& tape, const Tensor& stacked) const;
  // KL(q(z|x) || N(0, I)) averaged over the batch; variational targets only.
  Tensor kl_divergence(Tape& tape, const TargetOutput& out) const;

 private:
  struct Layers;
  ModelBundle(TargetConfig target, AlarmConfig alarm, std::unique_ptr<Layers> layers);

  TargetConfig target_;
  AlarmConfig alarm_;
  std::unique_ptr<Layers> layers_;
  std::vector<TapInfo> taps_;
  Shape alarm_input_;
  std::vector<NamedParameter> params_;
};

enum class ScoreMode { alarm, recon, combined };

struct ScoreSpec {
  ScoreMode mode = ScoreMode::alarm;
  double lambda = 1.0;  // combined mode weight of the normalized reconstruction error
};

const char* to_string(ScoreMode mode);
ScoreMode parse_score_mode(const std::string& name);

// Per-sample anomaly scores (higher = more anomalous). Combined mode adds
// lambda times the reconstruction error min-max normalized over `x`.
std::vector<float> score(const ModelBundle& bundle, const Tensor& x, ScoreSpec spec,
                         std::size_t batch_size = 256);

}  // namespace ca3
