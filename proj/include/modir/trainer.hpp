#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "modir/adam.hpp"
#include "modir/genmed.hpp"
#include "modir/hypervolume.hpp"
#include "modir/model.hpp"
#include "modir/registration.hpp"
#include "modir/synth.hpp"

namespace modir {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::size_t p = 27;
  std::size_t iterations = 2000;
  double lr = 1e-3;
  std::vector<double> reference{1.0, 1.0, 1.0};
  bool guidance = true;
  bool share_encoder = true;
  std::uint64_t seed = 1;
  std::size_t batch = 1;
  std::size_t eval_every = 500;
  ModelConfig model;

  std::size_t objectives() const { return guidance ? 3 : 2; }

  void validate() const {
    if (p < 1) throw ConfigError("p must be at least 1");
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (batch < 1) throw ConfigError("batch size must be at least 1");
    if (reference.size() != objectives())
      throw ConfigError("reference point has " + std::to_string(reference.size()) + " components but " +
                        std::to_string(objectives()) + " objectives are trained");
    for (double r : reference)
      if (!(r > 0.0)) throw ConfigError("reference point components must be positive");
  }

  ModelConfig model_config() const {
    ModelConfig m = model;
    m.heads = p;
    m.share_encoder = share_encoder;
    return m;
  }
};

struct TraceRecord {
  std::size_t iteration = 0;
  double hv = 0.0;
  hv::PointSet losses;   // p evaluation-set mean loss vectors
  hv::PointSet weights;  // p weight rows used at the latest training step
};

struct TrainTrace {
  std::string mode;  // "mo" or "grid"
  std::vector<double> reference;
  std::vector<TraceRecord> records;
  hv::PointSet final_losses;
  hv::PointSet fixed_weights;  // grid mode only
};

struct TrainResult {
  TrainTrace trace;
  ModelParams params;
};

inline std::vector<std::string> objective_names(bool guidance) {
  if (guidance) return {"image_similarity", "dvf_smoothness", "seg_similarity"};
  return {"image_similarity", "dvf_smoothness"};
}

/// Mean loss vector of every head over a set of pairs, without a tape.
inline hv::PointSet evaluate_losses(const ModelParams& params, const std::vector<RegistrationPair>& pairs, bool guidance) {
  hv::PointSet mean(params.config.heads, hv::Point(guidance ? 3 : 2, 0.0));
  for (const auto& pair : pairs) {
    Tape tape(false);
    const auto dvfs = forward_multi_head(tape, params, pair);
    for (std::size_t h = 0; h < dvfs.size(); ++h) {
      const auto v = compute_losses(tape, pair, dvfs[h], guidance).values();
      for (std::size_t k = 0; k < v.size(); ++k) mean[h][k] += v[k] / static_cast<double>(pairs.size());
    }
  }
  return mean;
}

/// Weight rule: given the p (clamped) loss vectors of the current step,
/// return p weight rows.
using WeightRule = std::function<hv::PointSet(const hv::PointSet&)>;

namespace detail {

inline std::vector<RegistrationPair> gather(const synth::Dataset& data, const std::vector<std::size_t>& idx) {
  std::vector<RegistrationPair> out;
  for (std::size_t i : idx) out.push_back(data[i]);
  return out;
}

inline TrainResult train_loop(const TrainConfig& config, const synth::Dataset& data, const WeightRule& rule,
                              std::string mode) {
  config.validate();
  const auto train_idx = data.train_indices();
  if (train_idx.empty()) throw ConfigError("dataset has no training pairs");
  auto eval_pairs = gather(data, data.eval_indices());
  if (eval_pairs.empty()) eval_pairs = gather(data, train_idx);

  TrainResult result{{std::move(mode), config.reference, {}, {}, {}}, init_params(config.seed, config.model_config())};
  ModelParams& params = result.params;
  Adam adam(params.parameters(), AdamOptions{config.lr});
  std::mt19937_64 sampler(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_int_distribution<std::size_t> pick(0, train_idx.size() - 1);
  const std::size_t n = config.objectives();

  hv::PointSet last_weights(config.p, hv::Point(n, 0.0));
  const auto record = [&](std::size_t iteration) {
    TraceRecord r;
    r.iteration = iteration;
    r.losses = evaluate_losses(params, eval_pairs, config.guidance);
    r.hv = hv::hypervolume(r.losses, config.reference);
    r.weights = last_weights;
    result.trace.records.push_back(std::move(r));
  };
  record(0);

  for (std::size_t it = 0; it < config.iterations; ++it) {
    Tape tape;
    std::vector<Tensor> sources;
    std::vector<double> weights;
    hv::PointSet batch_weights(config.p, hv::Point(n, 0.0));
    for (std::size_t b = 0; b < config.batch; ++b) {
      const RegistrationPair& pair = data[train_idx[pick(sampler)]];
      const auto dvfs = forward_multi_head(tape, params, pair);
      std::vector<LossVector> lvs;
      hv::PointSet objective_space;
      for (std::size_t h = 0; h < dvfs.size(); ++h) {
        lvs.push_back(compute_losses(tape, pair, dvfs[h], config.guidance));
        hv::Point v = lvs.back().values();
        for (double x : v)
          if (!std::isfinite(x)) {
            std::ostringstream os;
            os << "non-finite loss at iteration " << it << ", head " << h << ": (";
            for (std::size_t k = 0; k < v.size(); ++k) os << (k ? ", " : "") << v[k];
            os << ")";
            throw TrainingError(os.str());
          }
        for (double& x : v) x = std::min(x, 1.0);
        objective_space.push_back(std::move(v));
      }
      const hv::PointSet w = rule(objective_space);
      for (std::size_t h = 0; h < dvfs.size(); ++h) {
        const auto terms = lvs[h].terms();
        for (std::size_t k = 0; k < n; ++k) {
          sources.push_back(terms[k]);
          weights.push_back(w[h][k] / static_cast<double>(config.batch));
          batch_weights[h][k] += w[h][k] / static_cast<double>(config.batch);
        }
      }
    }
    tape.backward(sources, weights);
    try {
      adam.step();
    } catch (const NonFiniteGradient& e) {
      throw TrainingError(std::string("iteration ") + std::to_string(it) + ": " + e.what());
    }
    params.zero_grad();
    last_weights = std::move(batch_weights);
    if (config.eval_every > 0 && (it + 1) % config.eval_every == 0 && it + 1 != config.iterations) record(it + 1);
  }
  record(config.iterations);
  result.trace.final_losses = result.trace.records.back().losses;
  return result;
}

}  // namespace detail

/// Multi-objective training: every step weights each head's objectives by
/// its normalised hypervolume gradient (clamped losses in objective space).
inline TrainResult train_mo(const TrainConfig& config, const synth::Dataset& data) {
  const hv::Point ref = config.reference;
  return detail::train_loop(config, data, [ref](const hv::PointSet& pts) { return hv::dynamic_weights(pts, ref); }, "mo");
}

/// The 27 grid weight triples over w1 in {0,.5,1}, w2 in {0,.1,.5,1},
/// w3 in {0,.5,1}. Drops the all-zero triple and the triples without
/// w1 or w3, then drops scalar multiples of other triples, keeping the
/// larger representative, while more than 27 remain.
inline std::vector<std::array<double, 3>> enumerate_grid_weights() {
  const std::array<double, 3> w1{0.0, 0.5, 1.0};
  const std::array<double, 4> w2{0.0, 0.1, 0.5, 1.0};
  const std::array<double, 3> w3{0.0, 0.5, 1.0};
  std::vector<std::array<double, 3>> all;
  for (double a : w1)
    for (double b : w2)
      for (double c : w3) {
        if (a == 0.0 && b == 0.0 && c == 0.0) continue;
        if (a == 0.0 && c == 0.0) continue;
        all.push_back({a, b, c});
      }
  const auto multiple_of = [](const std::array<double, 3>& x, const std::array<double, 3>& y) {
    // x = s * y for some s in (0,1)
    double s = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      if ((x[k] == 0.0) != (y[k] == 0.0)) return false;
      if (y[k] != 0.0) {
        const double r = x[k] / y[k];
        if (s == 0.0) s = r;
        else if (std::abs(r - s) > 1e-12) return false;
      }
    }
    return s > 0.0 && s < 1.0;
  };
  std::vector<bool> drop(all.size(), false);
  std::size_t remaining = all.size();
  for (std::size_t i = 0; i < all.size() && remaining > 27; ++i)
    for (std::size_t j = 0; j < all.size(); ++j)
      if (i != j && multiple_of(all[i], all[j])) {
        drop[i] = true;
        --remaining;
        break;
      }
  std::vector<std::array<double, 3>> out;
  for (std::size_t i = 0; i < all.size(); ++i)
    if (!drop[i]) out.push_back(all[i]);
  if (out.size() != 27)
    throw ConfigError("grid weight enumeration produced " + std::to_string(out.size()) + " triples, expected 27");
  return out;
}

/// Grid-search baseline: head i keeps the fixed grid triple i, normalised to
/// sum 1, for the whole run.
inline TrainResult train_grid(const TrainConfig& config, const synth::Dataset& data) {
  const auto grid = enumerate_grid_weights();
  if (config.p != grid.size())
    throw ConfigError("grid training needs p = " + std::to_string(grid.size()) + ", got " + std::to_string(config.p));
  if (!config.guidance) throw ConfigError("grid training uses all three objectives");
  hv::PointSet fixed;
  for (const auto& g : grid) {
    const double s = g[0] + g[1] + g[2];
    fixed.push_back({g[0] / s, g[1] / s, g[2] / s});
  }
  auto result = detail::train_loop(config, data, [fixed](const hv::PointSet&) { return fixed; }, "grid");
  for (const auto& g : grid) result.trace.fixed_weights.push_back({g[0], g[1], g[2]});
  return result;
}

struct GenmedConfig {
  std::size_t p = 25;
  std::size_t objectives = 3;
  std::size_t iterations = 4000;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  std::size_t record_every = 500;
  std::vector<std::vector<double>> references{{10.0, 10.0, 10.0}, {2.2, 2.2, 2.2}};
};

struct GenmedRecord {
  std::size_t iteration = 0;
  double hv = 0.0;
  hv::PointSet objectives;
};

struct GenmedTrace {
  std::vector<double> reference;
  std::vector<GenmedRecord> records;
  hv::PointSet decisions;   // final decision vectors
  hv::PointSet objectives;  // final objective vectors
};

/// Optimises p decision vectors of GenMED directly, one independent run per
/// reference point, all from the same initial population.
inline std::vector<GenmedTrace> train_genmed(const GenmedConfig& config) {
  if (config.p < 1) throw ConfigError("p must be at least 1");
  const std::size_t n = config.objectives;
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  hv::PointSet init(config.p, hv::Point(n));
  for (auto& x : init)
    for (double& v : x) v = uni(rng);

  std::vector<GenmedTrace> traces;
  for (const auto& ref : config.references) {
    if (ref.size() != n) throw ConfigError("reference point dimension does not match objectives");
    GenmedTrace trace{ref, {}, init, {}};
    std::vector<AdamState> states(config.p);
    const auto objectives_of = [&] {
      hv::PointSet f;
      for (const auto& x : trace.decisions) f.push_back(genmed::evaluate(x));
      return f;
    };
    for (std::size_t it = 0; it <= config.iterations; ++it) {
      const hv::PointSet f = objectives_of();
      if (it % config.record_every == 0 || it == config.iterations)
        trace.records.push_back({it, hv::hypervolume(f, ref), f});
      if (it == config.iterations) break;
      const hv::PointSet w = hv::dynamic_weights(f, ref);
      for (std::size_t i = 0; i < config.p; ++i) {
        const auto jac = genmed::gradient(trace.decisions[i]);
        std::vector<double> g(n, 0.0);
        for (std::size_t k = 0; k < n; ++k)
          for (std::size_t m = 0; m < n; ++m) g[m] += w[i][k] * jac[k][m];
        adam_step(trace.decisions[i], g, states[i], AdamOptions{config.lr});
      }
    }
    trace.objectives = objectives_of();
    traces.push_back(std::move(trace));
  }
  return traces;
}

}  // namespace modir
