#include "ca3/networks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

namespace ca3 {
namespace {

struct Dense {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
};

struct Conv {
  Tensor weight;  // conv: [out, in, k...]; transposed: [in, out, k...]
  Tensor bias;
  ops::ConvParams params;
  bool two_d = true;
  bool transposed = false;
};

Tensor uniform_tensor(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<float> data(numel(shape));
  for (auto& v : data) v = static_cast<float>(rng.uniform(-bound, bound));
  return Tensor(std::move(shape), std::move(data), true);
}

Dense make_dense(std::size_t in, std::size_t out, Rng& rng) {
  return Dense{uniform_tensor({in, out}, in, rng), uniform_tensor({out}, in, rng)};
}

Conv make_conv(std::size_t in, std::size_t out, std::size_t k, bool two_d, ops::ConvParams p, Rng& rng) {
  const std::size_t fan_in = in * k * (two_d ? k : 1);
  Shape w = two_d ? Shape{out, in, k, k} : Shape{out, in, k};
  return Conv{uniform_tensor(std::move(w), fan_in, rng), uniform_tensor({out}, fan_in, rng), p, two_d, false};
}

Conv make_deconv(std::size_t in, std::size_t out, std::size_t k, bool two_d, ops::ConvParams p, Rng& rng) {
  const std::size_t fan_in = out * k * (two_d ? k : 1);
  Shape w = two_d ? Shape{in, out, k, k} : Shape{in, out, k};
  return Conv{uniform_tensor(std::move(w), fan_in, rng), uniform_tensor({out}, fan_in, rng), p, two_d, true};
}

Tensor apply(Tape& tape, const Dense& d, const Tensor& x) { return ops::linear(tape, x, d.weight, d.bias); }

Tensor apply(Tape& tape, const Conv& c, const Tensor& x) {
  if (c.transposed) {
    return c.two_d ? ops::conv_transpose2d(tape, x, c.weight, c.bias, c.params)
                   : ops::conv_transpose1d(tape, x, c.weight, c.bias, c.params);
  }
  return c.two_d ? ops::conv2d(tape, x, c.weight, c.bias, c.params) : ops::conv1d(tape, x, c.weight, c.bias, c.params);
}

std::string layer_name(const char* prefix, std::size_t i) { return std::string(prefix) + std::to_string(i); }

Shape with_batch(std::size_t n, const Shape& s) {
  Shape out{n};
  out.insert(out.end(), s.begin(), s.end());
  return out;
}

}  // namespace

struct ModelBundle::Layers {
  std::optional<Dense> soft_order;
  std::vector<Conv> encoder;
  Shape encoder_out;  // per sample [C, spatial...]
  Dense latent_mean;
  std::optional<Dense> latent_logvar;
  Dense decoder_in;
  std::vector<Conv> decoder;
  std::optional<Dense> output;

  std::vector<Conv> alarm_convs;
  std::vector<Dense> alarm_dense;
  Dense alarm_out;
};

TargetConfig TargetConfig::image(std::size_t c, std::size_t h, std::size_t w) {
  TargetConfig cfg;
  cfg.kind = InputKind::image;
  cfg.channels = c;
  cfg.height = h;
  cfg.width = w;
  return cfg;
}

TargetConfig TargetConfig::tabular(std::size_t d) {
  TargetConfig cfg;
  cfg.kind = InputKind::tabular;
  cfg.features = d;
  cfg.encoder_channels = {8, 16};
  cfg.kernel_size = 3;
  cfg.stride = 2;
  cfg.latent_dim = 8;
  cfg.soft_ordering_width = 64;
  cfg.soft_ordering_k = 4;
  return cfg;
}

Shape TargetConfig::sample_shape() const {
  return kind == InputKind::image ? Shape{channels, height, width} : Shape{features};
}

void TargetConfig::validate() const {
  if (encoder_channels.empty()) throw ConfigError("target.encoder_channels must not be empty");
  for (auto c : encoder_channels)
    if (c == 0) throw ConfigError("target.encoder_channels entries must be positive");
  if (latent_dim < 1) throw ConfigError("target.latent_dim must be >= 1");
  if (kernel_size < 1) throw ConfigError("target.kernel_size must be >= 1");
  if (stride < 1) throw ConfigError("target.stride must be >= 1");
  if (kl_weight < 0) throw ConfigError("target.kl_weight must be >= 0");
  if (kind == InputKind::image) {
    if (channels < 1 || height < 1 || width < 1) throw ConfigError("target image dimensions must be positive");
  } else {
    if (features < 1) throw ConfigError("target.features must be >= 1 for tabular input");
    if (soft_ordering_width < 1 || soft_ordering_k < 1) {
      throw ConfigError("target.soft_ordering_width and soft_ordering_k must be positive");
    }
    if (soft_ordering_width % soft_ordering_k != 0) {
      throw ConfigError("target.soft_ordering_k = " + std::to_string(soft_ordering_k) +
                        " does not divide soft_ordering_width = " + std::to_string(soft_ordering_width));
    }
  }
}

void AlarmConfig::validate() const {
  if (kernel_size < 1) throw ConfigError("alarm.kernel_size must be >= 1");
  for (auto c : conv_channels)
    if (c == 0) throw ConfigError("alarm.conv_channels entries must be positive");
  for (auto h : hidden_dense)
    if (h == 0) throw ConfigError("alarm.hidden_dense entries must be positive");
}

ModelBundle::ModelBundle(TargetConfig target, AlarmConfig alarm, std::unique_ptr<Layers> layers)
    : target_(std::move(target)), alarm_(std::move(alarm)), layers_(std::move(layers)) {}
ModelBundle::ModelBundle(ModelBundle&&) noexcept = default;
ModelBundle& ModelBundle::operator=(ModelBundle&&) noexcept = default;
ModelBundle::~ModelBundle() = default;

ModelBundle ModelBundle::build(const TargetConfig& target, const AlarmConfig& alarm, std::uint64_t seed) {
  target.validate();
  alarm.validate();
  Rng rng(seed);
  auto layers = std::make_unique<Layers>();
  ModelBundle bundle(target, alarm, nullptr);
  auto& params = bundle.params_;
  auto add_dense = [&params](const std::string& name, const Dense& d) {
    params.push_back({name + ".weight", d.weight});
    params.push_back({name + ".bias", d.bias});
  };
  auto add_conv = [&params](const std::string& name, const Conv& c) {
    params.push_back({name + ".weight", c.weight});
    params.push_back({name + ".bias", c.bias});
  };

  const bool image = target.kind == InputKind::image;
  const std::size_t k = target.kernel_size;
  const ops::ConvParams enc_params{target.stride, 0, 0};

  // Encoder input: image [C, H, W] or soft-ordered tabular [k_rows, W/k_rows].
  std::size_t in_channels;
  std::vector<std::size_t> spatial;
  if (image) {
    in_channels = target.channels;
    spatial = {target.height, target.width};
  } else {
    layers->soft_order = make_dense(target.features, target.soft_ordering_width, rng);
    add_dense("target.soft_order", *layers->soft_order);
    in_channels = target.soft_ordering_k;
    spatial = {target.soft_ordering_width / target.soft_ordering_k};
  }

  std::vector<std::vector<std::size_t>> encoder_inputs;
  std::size_t c = in_channels;
  for (std::size_t i = 0; i < target.encoder_channels.size(); ++i) {
    for (auto extent : spatial) {
      if (extent < k) {
        throw ShapeError("encoder layer " + std::to_string(i) + ": spatial extent " + std::to_string(extent) +
                         " is smaller than kernel " + std::to_string(k) + " (input " + to_string(target.sample_shape()) +
                         ")");
      }
    }
    encoder_inputs.push_back(spatial);
    const std::size_t out = target.encoder_channels[i];
    layers->encoder.push_back(make_conv(c, out, k, image, enc_params, rng));
    add_conv(layer_name("target.enc.conv", i), layers->encoder.back());
    for (auto& extent : spatial) extent = ops::conv_out_extent(extent, k, enc_params);
    c = out;
    Shape tap{c};
    tap.insert(tap.end(), spatial.begin(), spatial.end());
    bundle.taps_.push_back({layer_name("target.enc.conv", i), tap});
  }
  layers->encoder_out = Shape{c};
  layers->encoder_out.insert(layers->encoder_out.end(), spatial.begin(), spatial.end());
  const std::size_t flat = numel(layers->encoder_out);

  layers->latent_mean = make_dense(flat, target.latent_dim, rng);
  add_dense("target.enc.latent_mean", layers->latent_mean);
  if (target.variational) {
    layers->latent_logvar = make_dense(flat, target.latent_dim, rng);
    add_dense("target.enc.latent_logvar", *layers->latent_logvar);
  }
  layers->decoder_in = make_dense(target.latent_dim, flat, rng);
  add_dense("target.dec.dense", layers->decoder_in);

  // Decoder mirrors the encoder; output_padding lands each layer on the
  // exact input extent of the matching encoder layer.
  const std::size_t depth = target.encoder_channels.size();
  for (std::size_t j = 0; j < depth; ++j) {
    const std::size_t mirror = depth - 1 - j;
    const std::size_t out = mirror > 0 ? target.encoder_channels[mirror - 1] : in_channels;
    const auto& want = encoder_inputs[mirror];
    ops::ConvParams p{target.stride, 0, 0};
    const std::size_t base = ops::conv_transpose_out_extent(spatial[0], k, p);
    if (want[0] < base) {
      throw ShapeError("decoder layer " + std::to_string(j) + ": transposed conv overshoots encoder extent " +
                       std::to_string(want[0]));
    }
    p.output_padding = want[0] - base;
    for (std::size_t a = 0; a < spatial.size(); ++a) {
      const std::size_t b = ops::conv_transpose_out_extent(spatial[a], k, p) - p.output_padding;
      if (want[a] < b || want[a] - b != p.output_padding) {
        throw ShapeError("decoder layer " + std::to_string(j) + ": cannot mirror encoder extent " +
                         std::to_string(want[a]) + " with a uniform output padding");
      }
    }
    layers->decoder.push_back(make_deconv(c, out, k, image, p, rng));
    add_conv(layer_name("target.dec.deconv", j), layers->decoder.back());
    spatial = want;
    c = out;
    if (target.tap_decoder) {
      Shape tap{c};
      tap.insert(tap.end(), spatial.begin(), spatial.end());
      bundle.taps_.push_back({layer_name("target.dec.deconv", j), tap});
    }
  }
  if (!image) {
    layers->output = make_dense(target.soft_ordering_width, target.features, rng);
    add_dense("target.dec.out", *layers->output);
  }

  // Alarm input: summed tap channels at the minimum tap spatial shape.
  Shape alarm_in{0};
  std::vector<std::size_t> min_spatial(bundle.taps_.front().shape.begin() + 1, bundle.taps_.front().shape.end());
  for (const auto& tap : bundle.taps_) {
    alarm_in[0] += tap.shape[0];
    for (std::size_t a = 0; a < min_spatial.size(); ++a) min_spatial[a] = std::min(min_spatial[a], tap.shape[a + 1]);
  }
  alarm_in.insert(alarm_in.end(), min_spatial.begin(), min_spatial.end());
  bundle.alarm_input_ = alarm_in;

  const std::size_t ak = alarm.kernel_size;
  const ops::ConvParams alarm_params{1, ak / 2, 0};
  std::size_t ac = alarm_in[0];
  std::vector<std::size_t> aspatial = min_spatial;
  for (std::size_t i = 0; i < alarm.conv_channels.size(); ++i) {
    for (auto& extent : aspatial) {
      const auto next = ops::conv_out_extent(extent, ak, alarm_params);
      if (next == 0) {
        throw ShapeError("alarm conv layer " + std::to_string(i) + ": spatial extent " + std::to_string(extent) +
                         " is smaller than kernel " + std::to_string(ak));
      }
      extent = next;
    }
    layers->alarm_convs.push_back(make_conv(ac, alarm.conv_channels[i], ak, image, alarm_params, rng));
    add_conv(layer_name("alarm.conv", i), layers->alarm_convs.back());
    ac = alarm.conv_channels[i];
  }
  std::size_t width = ac;
  for (auto e : aspatial) width *= e;
  for (std::size_t i = 0; i < alarm.hidden_dense.size(); ++i) {
    layers->alarm_dense.push_back(make_dense(width, alarm.hidden_dense[i], rng));
    add_dense(layer_name("alarm.dense", i), layers->alarm_dense.back());
    width = alarm.hidden_dense[i];
  }
  layers->alarm_out = make_dense(width, 1, rng);
  add_dense("alarm.out", layers->alarm_out);

  bundle.layers_ = std::move(layers);
  return bundle;
}

ModelBundle ModelBundle::clone() const {
  ModelBundle copy = build(target_, alarm_, 0);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto dst = copy.params_[i].tensor.mutable_data();
    const auto src = params_[i].tensor.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return copy;
}

const TargetConfig& ModelBundle::target_config() const { return target_; }
const AlarmConfig& ModelBundle::alarm_config() const { return alarm_; }
const std::vector<TapInfo>& ModelBundle::taps() const { return taps_; }
const Shape& ModelBundle::alarm_input_shape() const { return alarm_input_; }
const std::vector<NamedParameter>& ModelBundle::parameters() const { return params_; }

std::size_t ModelBundle::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

TargetOutput ModelBundle::forward_with_taps(Tape& tape, const Tensor& x, Rng* sampler) const {
  const Shape expected = target_.sample_shape();
  if (x.rank() != expected.size() + 1 || !std::equal(expected.begin(), expected.end(), x.shape().begin() + 1)) {
    throw ShapeError("target expects input [N]" + to_string(expected) + ", got " + to_string(x.shape()));
  }
  const Layers& L = *layers_;
  const std::size_t n = x.dim(0);
  TargetOutput out;

  Tensor h = x;
  if (L.soft_order) {
    h = ops::elu(tape, apply(tape, *L.soft_order, x));
    h = ops::split_stack(tape, h, target_.soft_ordering_k);
  }
  for (std::size_t i = 0; i < L.encoder.size(); ++i) {
    h = ops::elu(tape, apply(tape, L.encoder[i], h));
    out.activations.entries.emplace_back(taps_[i].id, h);
  }
  const Tensor flat = ops::flatten(tape, h);
  out.latent_mean = apply(tape, L.latent_mean, flat);
  Tensor z = out.latent_mean;
  if (L.latent_logvar) {
    out.latent_logvar = apply(tape, *L.latent_logvar, flat);
    if (sampler) {
      std::vector<float> noise(out.latent_mean.size());
      for (auto& v : noise) v = static_cast<float>(sampler->normal());
      const Tensor eps(out.latent_mean.shape(), std::move(noise));
      const Tensor std_dev = ops::exp(tape, ops::scale(tape, out.latent_logvar, 0.5f));
      z = ops::add(tape, out.latent_mean, ops::mul(tape, std_dev, eps));
    }
  }
  Tensor d = ops::elu(tape, apply(tape, L.decoder_in, z));
  d = ops::reshape(tape, d, with_batch(n, L.encoder_out));
  const bool image = target_.kind == InputKind::image;
  std::size_t tap = L.encoder.size();
  for (std::size_t j = 0; j < L.decoder.size(); ++j) {
    d = apply(tape, L.decoder[j], d);
    const bool last = j + 1 == L.decoder.size();
    d = (last && image) ? ops::sigmoid(tape, d) : ops::elu(tape, d);
    if (target_.tap_decoder) out.activations.entries.emplace_back(taps_[tap++].id, d);
  }
  if (L.output) d = apply(tape, *L.output, ops::flatten(tape, d));
  out.reconstruction = d;
  return out;
}

Tensor ModelBundle::kl_divergence(Tape& tape, const TargetOutput& out) const {
  if (!target_.variational || !out.latent_logvar.defined()) {
    throw ShapeError("kl_divergence requires a variational target");
  }
  const auto& mu = out.latent_mean;
  const auto& lv = out.latent_logvar;
  const std::size_t n = mu.dim(0);
  // 0.5/N * sum(exp(lv) + mu^2 - lv - 1)
  Tensor t = ops::add(tape, ops::exp(tape, lv), ops::mul(tape, mu, mu));
  t = ops::sub(tape, t, lv);
  Tensor s = ops::scale(tape, ops::sum(tape, t), 0.5f / static_cast<float>(n));
  const float offset = -0.5f * static_cast<float>(mu.size()) / static_cast<float>(n);
  return ops::add(tape, s, Tensor::scalar(offset));
}

Tensor ModelBundle::alarm_forward(Tape& tape, const Tensor& stacked) const {
  if (stacked.rank() != alarm_input_.size() + 1 ||
      !std::equal(alarm_input_.begin(), alarm_input_.end(), stacked.shape().begin() + 1)) {
    throw ShapeError("alarm network built for input [N]" + to_string(alarm_input_) + ", got " +
                     to_string(stacked.shape()));
  }
  const Layers& L = *layers_;
  Tensor h = stacked;
  for (const auto& conv : L.alarm_convs) h = ops::elu(tape, apply(tape, conv, h));
  h = ops::flatten(tape, h);
  for (const auto& dense : L.alarm_dense) h = ops::elu(tape, apply(tape, dense, h));
  return ops::sigmoid(tape, apply(tape, L.alarm_out, h));
}

Tensor stack_activations(Tape& tape, const ActivationBundle& acts) {
  if (acts.entries.empty()) throw ShapeError("stack_activations: no activations");
  const Shape& first = acts.entries.front().second.shape();
  if (first.size() < 3) throw ShapeError("stack_activations: activation " + to_string(first) + " has no spatial axes");
  std::vector<std::size_t> target(first.begin() + 2, first.end());
  for (const auto& [id, t] : acts.entries) {
    if (t.rank() != first.size()) {
      throw ShapeError("stack_activations: tap '" + id + "' has spatial rank " + std::to_string(t.rank() - 2) +
                       ", expected " + std::to_string(first.size() - 2));
    }
    if (t.dim(0) != first[0]) throw ShapeError("stack_activations: tap '" + id + "' has a different batch size");
    for (std::size_t a = 0; a < target.size(); ++a) target[a] = std::min(target[a], t.dim(a + 2));
  }
  std::vector<Tensor> pooled;
  pooled.reserve(acts.entries.size());
  for (const auto& [id, t] : acts.entries) {
    const bool same = std::equal(target.begin(), target.end(), t.shape().begin() + 2);
    pooled.push_back(same ? t : ops::adaptive_avg_pool(tape, t, target));
  }
  if (pooled.size() == 1) return pooled.front();
  return ops::concat_channels(tape, pooled);
}

const char* to_string(ScoreMode mode) {
  switch (mode) {
    case ScoreMode::alarm: return "alarm";
    case ScoreMode::recon: return "recon";
    case ScoreMode::combined: return "combined";
  }
  return "?";
}

ScoreMode parse_score_mode(const std::string& name) {
  if (name == "alarm") return ScoreMode::alarm;
  if (name == "recon") return ScoreMode::recon;
  if (name == "combined") return ScoreMode::combined;
  throw ConfigError("unknown score mode '" + name + "' (expected alarm, recon or combined)");
}

std::vector<float> score(const ModelBundle& bundle, const Tensor& x, ScoreSpec spec, std::size_t batch_size) {
  if (spec.mode == ScoreMode::combined && !(spec.lambda >= 0.0)) {
    throw ConfigError("combined score weight lambda must be >= 0");
  }
  if (batch_size == 0) batch_size = 1;
  const std::size_t n = x.dim(0);
  std::vector<float> alarm(n), recon(n);
  const bool need_alarm = spec.mode != ScoreMode::recon;
  const bool need_recon = spec.mode != ScoreMode::alarm;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t stop = std::min(n, start + batch_size);
    idx.resize(stop - start);
    for (std::size_t i = start; i < stop; ++i) idx[i - start] = i;
    const Tensor batch = (start == 0 && stop == n) ? x : gather_rows(x, idx);
    Tape tape(Tape::Mode::inference);
    const TargetOutput out = bundle.forward_with_taps(tape, batch);
    if (need_alarm) {
      const Tensor s = bundle.alarm_forward(tape, stack_activations(tape, out.activations));
      std::copy(s.data().begin(), s.data().end(), alarm.begin() + static_cast<std::ptrdiff_t>(start));
    }
    if (need_recon) {
      const Tensor r = ops::per_sample_mse(tape, batch, out.reconstruction);
      std::copy(r.data().begin(), r.data().end(), recon.begin() + static_cast<std::ptrdiff_t>(start));
    }
  }
  switch (spec.mode) {
    case ScoreMode::alarm: return alarm;
    case ScoreMode::recon: return recon;
    case ScoreMode::combined: break;
  }
  const auto [lo, hi] = std::minmax_element(recon.begin(), recon.end());
  const float min = *lo, range = *hi - *lo;
  std::vector<float> combined(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float normalized = range > 0.0f ? (recon[i] - min) / range : 0.0f;
    combined[i] = alarm[i] + static_cast<float>(spec.lambda) * normalized;
  }
  return combined;
}

}  // namespace ca3
