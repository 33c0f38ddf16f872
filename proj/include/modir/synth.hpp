#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

#include "modir/registration.hpp"
#include "modir/tensor.hpp"

// Deterministic 2D registration pairs with known correspondence: a textured
// base image with elliptical organs, a smooth ground-truth deformation built
// from Gaussian bumps, and landmarks mapped through that deformation.
namespace modir::synth {

struct SynthConfig {
  std::uint64_t seed = 1;
  std::size_t size = 64;
  std::size_t organs = 2;
  double magnitude = 4.0;  // max |u| in voxels
  std::size_t bumps = 4;
  double noise = 0.003;
  std::size_t landmarks = 23;
  // Multiplicative intensity ramp on the source that the masks do not follow.
  bool conflict = true;
  double conflict_strength = 0.3;

  void validate() const {
    if (size < 32) throw std::invalid_argument("synthetic images must be at least 32 voxels wide");
    if (magnitude < 0.0 || magnitude > static_cast<double>(size) / 8.0)
      throw std::invalid_argument("deformation magnitude must lie in [0, size/8]");
    if (organs < 1) throw std::invalid_argument("need at least one organ");
  }
};

/// Smooth displacement field u(p) = t(p) sum_b a_b exp(-|p - c_b|^2 / 2 s_b^2),
/// evaluable anywhere in the plane. The taper t falls smoothly to zero at the
/// border of [0, extent-1]^2 so that p + u(p) never leaves the image.
class BumpField {
 public:
  struct Bump {
    double cx, cy, sigma, ax, ay;
  };

  BumpField() = default;
  explicit BumpField(std::vector<Bump> bumps, double extent = 0.0, double margin = 0.0)
      : bumps_(std::move(bumps)), extent_(extent), margin_(margin) {}

  double taper(double x, double y) const {
    if (margin_ <= 0.0) return 1.0;
    const auto ramp = [&](double c) {
      const double z = std::clamp(std::min(c, extent_ - 1.0 - c) / margin_, 0.0, 1.0);
      return z * z * (3.0 - 2.0 * z);
    };
    return ramp(x) * ramp(y);
  }

  std::array<double, 2> at(double x, double y) const {
    const double t = taper(x, y);
    std::array<double, 2> u{0.0, 0.0};
    if (t == 0.0) return u;
    for (const auto& b : bumps_) {
      const double dx = x - b.cx, dy = y - b.cy;
      const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
      u[0] += b.ax * g;
      u[1] += b.ay * g;
    }
    u[0] *= t;
    u[1] *= t;
    return u;
  }

  /// Solves q + u(q) = p by fixed-point iteration (u is a contraction here).
  std::array<double, 2> inverse_map(double x, double y) const {
    double qx = x, qy = y;
    for (int it = 0; it < 100; ++it) {
      const auto u = at(qx, qy);
      const double nx = x - u[0], ny = y - u[1];
      const double step = std::abs(nx - qx) + std::abs(ny - qy);
      qx = nx;
      qy = ny;
      if (step < 1e-12) break;
    }
    return {qx, qy};
  }

  /// Rasterised field [1,2,size,size].
  Tensor raster(std::size_t size) const {
    std::vector<double> v(2 * size * size);
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const auto u = at(static_cast<double>(x), static_cast<double>(y));
        v[y * size + x] = u[0];
        v[size * size + y * size + x] = u[1];
      }
    return Tensor::from({1, 2, size, size}, std::move(v));
  }

  const std::vector<Bump>& bumps() const { return bumps_; }

 private:
  std::vector<Bump> bumps_;
  double extent_ = 0.0, margin_ = 0.0;
};

inline std::mt19937_64 pair_rng(const SynthConfig& config, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x5eedu};
  return std::mt19937_64(seq);
}

/// Random bump field scaled so that the largest displacement on the voxel
/// grid equals config.magnitude.
inline BumpField gen_gt_field(const SynthConfig& config, std::mt19937_64& rng) {
  const double size = static_cast<double>(config.size);
  std::uniform_real_distribution<double> centre(0.0, size);
  std::uniform_real_distribution<double> width(size * 10.0 / 64.0, size * 16.0 / 64.0);
  std::normal_distribution<double> amp(0.0, 1.0);
  std::vector<BumpField::Bump> bumps;
  for (std::size_t b = 0; b < config.bumps; ++b) {
    const double cx = centre(rng), cy = centre(rng), s = width(rng);
    const double ax = amp(rng), ay = amp(rng);
    bumps.push_back({cx, cy, s, ax, ay});
  }
  // The smoothstep ramp stays below z * 9/8, so a margin of 3x the magnitude
  // keeps p + u(p) inside the image with room to spare.
  const double margin = std::max(3.0 * config.magnitude, size * 8.0 / 64.0);
  BumpField field(bumps, size, margin);
  double peak = 0.0;
  for (std::size_t y = 0; y < config.size; ++y)
    for (std::size_t x = 0; x < config.size; ++x) {
      const auto u = field.at(static_cast<double>(x), static_cast<double>(y));
      peak = std::max(peak, std::hypot(u[0], u[1]));
    }
  const double gain = peak > 0.0 ? config.magnitude / peak : 0.0;
  for (auto& b : bumps) {
    b.ax *= gain;
    b.ay *= gain;
  }
  return BumpField(std::move(bumps), size, margin);
}

/// Ground-truth DVF raster [1,2,H,W].
inline Tensor gen_gt_dvf(const SynthConfig& config, std::mt19937_64& rng) {
  config.validate();
  return gen_gt_field(config, rng).raster(config.size);
}

namespace detail {

struct Organ {
  double cx, cy, a, b, angle, contrast;

  // Normalised elliptical radius: < 1 inside.
  double radius(double x, double y) const {
    const double c = std::cos(angle), s = std::sin(angle);
    const double dx = x - cx, dy = y - cy;
    const double u = (c * dx + s * dy) / a, v = (-s * dx + c * dy) / b;
    return std::sqrt(u * u + v * v);
  }
  std::array<double, 2> boundary_point(double phi) const {
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = a * std::cos(phi), v = b * std::sin(phi);
    return {cx + c * u - s * v, cy + s * u + c * v};
  }
};

struct Wave {
  double kx, ky, phase, amp;
};

struct Scene {
  std::vector<Organ> organs;
  std::vector<Wave> waves;

  double intensity(double x, double y) const {
    double v = 0.4;
    for (const auto& w : waves) v += w.amp * std::sin(w.kx * x + w.ky * y + w.phase);
    for (const auto& o : organs) {
      const double d = (o.radius(x, y) - 1.0) * std::min(o.a, o.b);
      v += o.contrast / (1.0 + std::exp(d / 0.75));
    }
    return v;
  }
};

inline Scene gen_scene(const SynthConfig& config, std::mt19937_64& rng) {
  const double size = static_cast<double>(config.size);
  const double unit = size / 64.0;
  Scene scene;
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int w = 0; w < 10; ++w) {
    const double wavelength = unit * (5.0 + 8.0 * uni(rng));
    const double dir = 2.0 * std::numbers::pi * uni(rng);
    const double k = 2.0 * std::numbers::pi / wavelength;
    scene.waves.push_back({k * std::cos(dir), k * std::sin(dir), 2.0 * std::numbers::pi * uni(rng), 0.04 + 0.02 * uni(rng)});
  }
  // Organs sit on a ring around the image centre, evenly spaced in angle,
  // with the ring radius chosen so that neighbours never overlap. Major axes
  // are tangential to within +-45 degrees.
  const std::size_t k_organs = config.organs;
  for (std::size_t k = 0; k < k_organs; ++k) {
    detail::Organ o{};
    o.a = unit * (15.0 + 3.0 * uni(rng));
    o.b = o.a - unit * (1.0 + 1.5 * uni(rng));
    o.angle = 0.5 * std::numbers::pi * (uni(rng) - 0.5);
    o.contrast = (uni(rng) < 0.5 ? -1.0 : 1.0) * (0.2 + 0.15 * uni(rng));
    scene.organs.push_back(o);
  }
  // Two organs lie near a diagonal, where the image has the most room.
  const double quadrant = std::floor(4.0 * uni(rng));
  const double theta0 = std::numbers::pi * (0.25 + 0.5 * quadrant + (uni(rng) - 0.5) / 6.0);
  double ring = 0.0;
  if (k_organs > 1) {
    // Half-extent of an ellipse along the direction that makes angle phi
    // with its minor axis; bounds the reach towards any neighbour.
    const double chord = 2.0 * std::sin(std::numbers::pi / static_cast<double>(k_organs));
    const auto reach = [](const detail::Organ& o) { return std::max(o.a, o.b); };
    const auto radial = [](const detail::Organ& o) {
      const double s = std::sin(o.angle), c = std::cos(o.angle);
      return std::sqrt(o.a * o.a * s * s + o.b * o.b * c * c);
    };
    for (std::size_t k = 0; k < k_organs; ++k) {
      const auto& o = scene.organs[k];
      const auto& next = scene.organs[(k + 1) % k_organs];
      const double ext = k_organs == 2 ? radial(o) + radial(next) : reach(o) + reach(next);
      ring = std::max(ring, (ext + unit) / chord);
    }
  }
  for (std::size_t k = 0; k < k_organs; ++k) {
    const double t = theta0 + 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(k_organs);
    scene.organs[k].cx = 0.5 * (size - 1.0) + ring * std::cos(t);
    scene.organs[k].cy = 0.5 * (size - 1.0) + ring * std::sin(t);
    scene.organs[k].angle += t + 0.5 * std::numbers::pi;  // major axis roughly tangential
  }
  return scene;
}

}  // namespace detail

/// One pair. The target is the base scene; the source is the scene pushed
/// forward through x -> x + u(x), so that warping the source with u recovers
/// the target and landmark t in the target corresponds to t + u(t).
inline RegistrationPair gen_pair(const SynthConfig& config, std::mt19937_64& rng) {
  config.validate();
  const std::size_t n = config.size, hw = n * n, k_organs = config.organs;
  const double size = static_cast<double>(n);
  const BumpField field = gen_gt_field(config, rng);
  const detail::Scene scene = detail::gen_scene(config, rng);
  std::normal_distribution<double> noise(0.0, config.noise);

  std::vector<double> target(hw), source(hw), tmask(k_organs * hw), smask(k_organs * hw);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double px = static_cast<double>(x), py = static_cast<double>(y);
      const auto q = field.inverse_map(px, py);
      const std::size_t i = y * n + x;
      target[i] = scene.intensity(px, py);
      source[i] = scene.intensity(q[0], q[1]);
      if (config.conflict) source[i] *= 1.0 + config.conflict_strength * (px / size - 0.5);
      for (std::size_t k = 0; k < k_organs; ++k) {
        tmask[k * hw + i] = scene.organs[k].radius(px, py) <= 1.0 ? 1.0 : 0.0;
        smask[k * hw + i] = scene.organs[k].radius(q[0], q[1]) <= 1.0 ? 1.0 : 0.0;
      }
    }
  for (double& v : target) v = std::clamp(v + noise(rng), 0.0, 1.0);
  for (double& v : source) v = std::clamp(v + noise(rng), 0.0, 1.0);

  RegistrationPair pair;
  pair.target_image = Tensor::from({1, 1, n, n}, std::move(target));
  pair.source_image = Tensor::from({1, 1, n, n}, std::move(source));
  pair.target_mask = Tensor::from({1, k_organs, n, n}, std::move(tmask));
  pair.source_mask = Tensor::from({1, k_organs, n, n}, std::move(smask));
  pair.gt_dvf = field.raster(n);

  // Organ centres and boundary extremities first, then textured interior sites.
  std::vector<std::array<double, 2>> sites;
  for (const auto& o : scene.organs) {
    sites.push_back({o.cx, o.cy});
    for (int q = 0; q < 4; ++q) sites.push_back(o.boundary_point(q * std::numbers::pi / 2.0));
  }
  const double margin = size * 10.0 / 64.0;
  std::uniform_real_distribution<double> interior(margin, size - 1.0 - margin);
  while (sites.size() < config.landmarks) sites.push_back({interior(rng), interior(rng)});
  sites.resize(config.landmarks);
  for (const auto& t : sites) {
    const auto u = field.at(t[0], t[1]);
    pair.landmarks.push_back({t[0], t[1], t[0] + u[0], t[1] + u[1]});
  }
  return pair;
}

/// Deterministic indexed stream of pairs; the first train_count indices form
/// the training split and the rest the evaluation split.
class Dataset {
 public:
  Dataset(SynthConfig config, std::size_t count, std::size_t train_count)
      : config_(config), train_count_(train_count) {
    if (count < 1) throw std::invalid_argument("dataset needs at least one pair");
    if (train_count > count) throw std::invalid_argument("train split larger than dataset");
    pairs_.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      auto rng = pair_rng(config_, i);
      pairs_.push_back(gen_pair(config_, rng));
    }
  }

  /// Wraps pairs loaded from disk.
  Dataset(std::vector<RegistrationPair> pairs, std::size_t train_count, SynthConfig config = {})
      : config_(config), train_count_(train_count), pairs_(std::move(pairs)) {
    if (pairs_.empty()) throw std::invalid_argument("dataset needs at least one pair");
    if (train_count_ > pairs_.size()) throw std::invalid_argument("train split larger than dataset");
  }

  const SynthConfig& config() const { return config_; }
  std::size_t size() const { return pairs_.size(); }
  const RegistrationPair& operator[](std::size_t i) const { return pairs_.at(i); }

  std::vector<std::size_t> train_indices() const { return range(0, train_count_); }
  std::vector<std::size_t> eval_indices() const { return range(train_count_, pairs_.size()); }

 private:
  static std::vector<std::size_t> range(std::size_t lo, std::size_t hi) {
    std::vector<std::size_t> v;
    for (std::size_t i = lo; i < hi; ++i) v.push_back(i);
    return v;
  }

  SynthConfig config_;
  std::size_t train_count_;
  std::vector<RegistrationPair> pairs_;
};

}  // namespace modir::synth
