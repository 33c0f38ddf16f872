#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "modir/ops.hpp"
#include "modir/registration.hpp"

namespace modir {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Scaled 2D encoder-decoder: a stride-2 encoder shared by `heads` decoders,
/// each decoder upsampling with skip connections to half resolution and
/// predicting a displacement field that is bilinearly upsampled to full size.
struct ModelConfig {
  std::size_t image_size = 64;
  std::vector<std::size_t> encoder_channels{16, 32, 32, 32};
  std::size_t decoder_channels = 16;
  std::size_t heads = 27;
  bool share_encoder = true;
  double slope = 0.2;
  double flow_init_std = 1e-5;
  // Give every head (and encoder replica) the same initial weights.
  bool identical_heads = false;

  void validate() const {
    if (heads < 1) throw ConfigError("model needs at least one head");
    if (encoder_channels.size() < 2) throw ConfigError("encoder needs at least two blocks");
    if (image_size % (std::size_t{1} << encoder_channels.size()) != 0)
      throw ConfigError("image size must be divisible by 2^depth");
    if (!(slope >= 0.0 && slope < 1.0)) throw ConfigError("leaky ReLU slope must lie in [0,1)");
  }
};

struct ConvBlock {
  Tensor kernel;  // [F,C,3,3]
  Tensor bias;    // [F]
  std::size_t stride = 1;
};

struct Encoder {
  std::vector<ConvBlock> blocks;
};

struct Decoder {
  std::vector<ConvBlock> blocks;
  ConvBlock flow;
};

struct ModelParams {
  ModelConfig config;
  std::vector<Encoder> encoders;  // one when shared, otherwise one per head
  std::vector<Decoder> decoders;

  const Encoder& encoder_for(std::size_t head) const { return encoders[config.share_encoder ? 0 : head]; }

  /// All trainable tensors in a fixed order: encoders, then decoders.
  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (const auto& e : encoders)
      for (const auto& b : e.blocks) out.insert(out.end(), {b.kernel, b.bias});
    for (const auto& d : decoders) {
      for (const auto& b : d.blocks) out.insert(out.end(), {b.kernel, b.bias});
      out.insert(out.end(), {d.flow.kernel, d.flow.bias});
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : parameters()) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto t : parameters()) t.zero_grad();
  }
};

namespace detail {

inline ConvBlock make_block(std::mt19937_64& rng, std::size_t in, std::size_t out, std::size_t stride, double std) {
  std::normal_distribution<double> normal(0.0, std);
  std::vector<double> k(out * in * 9);
  for (double& v : k) v = normal(rng);
  return ConvBlock{Tensor::from({out, in, 3, 3}, std::move(k), true), Tensor::zeros({out}, true), stride};
}

inline double kaiming_std(double slope, std::size_t fan_in) {
  return std::sqrt(2.0 / (1.0 + slope * slope)) / std::sqrt(static_cast<double>(fan_in));
}

inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(index)};
  return std::mt19937_64(seq);
}

}  // namespace detail

/// Kaiming-He normal initialisation (fan-in, leaky-ReLU gain) for every conv
/// block; the DVF layer starts near zero so the initial warp is ~identity.
inline ModelParams init_params(std::uint64_t seed, const ModelConfig& config) {
  config.validate();
  ModelParams params{config, {}, {}};
  const auto& enc = config.encoder_channels;
  const std::size_t depth = enc.size();

  const std::size_t n_encoders = config.share_encoder ? 1 : config.heads;
  for (std::size_t e = 0; e < n_encoders; ++e) {
    auto rng = detail::stream(seed, 1, config.identical_heads ? 0 : e);
    Encoder encoder;
    std::size_t in = 2;
    for (std::size_t l = 0; l < depth; ++l) {
      encoder.blocks.push_back(detail::make_block(rng, in, enc[l], 2, detail::kaiming_std(config.slope, in * 9)));
      in = enc[l];
    }
    params.encoders.push_back(std::move(encoder));
  }

  for (std::size_t h = 0; h < config.heads; ++h) {
    auto rng = detail::stream(seed, 2, config.identical_heads ? 0 : h);
    Decoder decoder;
    std::size_t in = enc[depth - 1];
    for (std::size_t l = depth - 1; l-- > 0;) {
      const std::size_t fan = in + enc[l];
      decoder.blocks.push_back(detail::make_block(rng, fan, config.decoder_channels, 1,
                                                  detail::kaiming_std(config.slope, fan * 9)));
      in = config.decoder_channels;
    }
    decoder.flow = detail::make_block(rng, in, 2, 1, config.flow_init_std);
    params.decoders.push_back(std::move(decoder));
  }
  return params;
}

namespace detail {

inline Tensor conv_block(Tape& tape, const Tensor& x, const ConvBlock& b, double slope) {
  return ops::leaky_relu(tape, ops::channel_bias(tape, ops::conv2d(tape, x, b.kernel, b.stride, 1), b.bias), slope);
}

inline std::vector<Tensor> encode(Tape& tape, const Encoder& enc, const Tensor& input, double slope) {
  std::vector<Tensor> feats;
  Tensor x = input;
  for (const auto& b : enc.blocks) {
    x = conv_block(tape, x, b, slope);
    feats.push_back(x);
  }
  return feats;
}

inline Tensor decode(Tape& tape, const Decoder& dec, const std::vector<Tensor>& feats, double slope) {
  Tensor x = feats.back();
  std::size_t skip = feats.size() - 1;
  for (const auto& b : dec.blocks) {
    --skip;
    x = ops::upsample_bilinear(tape, x, 2);
    x = ops::concat_channels(tape, x, feats[skip]);
    x = conv_block(tape, x, b, slope);
  }
  Tensor flow = ops::channel_bias(tape, ops::conv2d(tape, x, dec.flow.kernel, 1, 1), dec.flow.bias);
  return ops::upsample_bilinear(tape, flow, 2);
}

}  // namespace detail

/// One DVF [1,2,H,W] per head, all recorded on the same tape. The shared
/// encoder runs once.
inline std::vector<Tensor> forward_multi_head(Tape& tape, const ModelParams& params, const RegistrationPair& pair) {
  const auto& cfg = params.config;
  const Shape expected{1, 1, cfg.image_size, cfg.image_size};
  if (pair.source_image.shape() != expected || pair.target_image.shape() != expected)
    throw ShapeError("forward: images must be " + shape_str(expected) + ", got " +
                     shape_str(pair.source_image.shape()) + " and " + shape_str(pair.target_image.shape()));
  const Tensor input = ops::concat_channels(tape, pair.source_image, pair.target_image);

  std::vector<Tensor> dvfs;
  std::vector<Tensor> shared;
  if (cfg.share_encoder) shared = detail::encode(tape, params.encoders[0], input, cfg.slope);
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const auto feats = cfg.share_encoder ? shared : detail::encode(tape, params.encoders[h], input, cfg.slope);
    dvfs.push_back(detail::decode(tape, params.decoders[h], feats, cfg.slope));
  }
  return dvfs;
}

}  // namespace modir
