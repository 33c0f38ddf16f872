#pragma once

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "modir/io.hpp"
#include "modir/metrics.hpp"
#include "modir/synth.hpp"
#include "modir/trainer.hpp"

// On-disk datasets and run bundles.
//
// Bundle layout (all paths relative to the bundle root):
//   manifest.json                 written last, lists every file with its SHA-256
//   trace.json  metrics.json  metrics.csv  model.mot  scatter.json (pair 0)
//   pairs/pair_XX/                source.png target.png source_mask_K.png
//                                 target_mask_K.png landmarks.json pair.mot scatter.json
//   pairs/pair_XX/sol_YY/         warped.png warped_mask_K.png dvf.modvf overlay.png
//   genmed.json                   genmed runs only
namespace modir::bundle {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------------------
// JSON conversions

inline json landmarks_json(const std::vector<Landmark>& lms) {
  json a = json::array();
  for (const auto& l : lms) a.push_back({{"target", {l.target_x, l.target_y}}, {"source", {l.source_x, l.source_y}}});
  return a;
}

inline std::vector<Landmark> landmarks_from(const json& a) {
  std::vector<Landmark> out;
  for (const auto& e : a)
    out.push_back({e.at("target").at(0).get<double>(), e.at("target").at(1).get<double>(),
                   e.at("source").at(0).get<double>(), e.at("source").at(1).get<double>()});
  return out;
}

inline json trace_json(const TrainTrace& t) {
  json records = json::array();
  for (const auto& r : t.records)
    records.push_back({{"iteration", r.iteration}, {"hv", r.hv}, {"losses", r.losses}, {"weights", r.weights}});
  return {{"mode", t.mode},
          {"reference", t.reference},
          {"records", records},
          {"final_losses", t.final_losses},
          {"fixed_weights", t.fixed_weights}};
}

inline TrainTrace trace_from(const json& j) {
  TrainTrace t;
  t.mode = j.at("mode").get<std::string>();
  t.reference = j.at("reference").get<std::vector<double>>();
  for (const auto& r : j.at("records"))
    t.records.push_back({r.at("iteration").get<std::size_t>(), r.at("hv").get<double>(),
                         r.at("losses").get<hv::PointSet>(), r.at("weights").get<hv::PointSet>()});
  t.final_losses = j.at("final_losses").get<hv::PointSet>();
  t.fixed_weights = j.at("fixed_weights").get<hv::PointSet>();
  return t;
}

inline json model_config_json(const ModelConfig& m) {
  return {{"image_size", m.image_size},       {"encoder_channels", m.encoder_channels},
          {"decoder_channels", m.decoder_channels}, {"heads", m.heads},
          {"share_encoder", m.share_encoder}, {"slope", m.slope},
          {"flow_init_std", m.flow_init_std}, {"identical_heads", m.identical_heads}};
}

inline ModelConfig model_config_from(const json& j) {
  ModelConfig m;
  m.image_size = j.at("image_size").get<std::size_t>();
  m.encoder_channels = j.at("encoder_channels").get<std::vector<std::size_t>>();
  m.decoder_channels = j.at("decoder_channels").get<std::size_t>();
  m.heads = j.at("heads").get<std::size_t>();
  m.share_encoder = j.at("share_encoder").get<bool>();
  m.slope = j.at("slope").get<double>();
  m.flow_init_std = j.at("flow_init_std").get<double>();
  m.identical_heads = j.at("identical_heads").get<bool>();
  return m;
}

inline json train_config_json(const TrainConfig& c) {
  return {{"p", c.p},
          {"iterations", c.iterations},
          {"lr", c.lr},
          {"reference", c.reference},
          {"guidance", c.guidance},
          {"share_encoder", c.share_encoder},
          {"seed", c.seed},
          {"batch", c.batch},
          {"eval_every", c.eval_every}};
}

inline json synth_config_json(const synth::SynthConfig& c) {
  return {{"seed", c.seed},           {"size", c.size},     {"organs", c.organs},
          {"magnitude", c.magnitude}, {"bumps", c.bumps},   {"noise", c.noise},
          {"landmarks", c.landmarks}, {"conflict", c.conflict}, {"conflict_strength", c.conflict_strength}};
}

inline synth::SynthConfig synth_config_from(const json& j) {
  synth::SynthConfig c;
  c.seed = j.at("seed").get<std::uint64_t>();
  c.size = j.at("size").get<std::size_t>();
  c.organs = j.at("organs").get<std::size_t>();
  c.magnitude = j.at("magnitude").get<double>();
  c.bumps = j.at("bumps").get<std::size_t>();
  c.noise = j.at("noise").get<double>();
  c.landmarks = j.at("landmarks").get<std::size_t>();
  c.conflict = j.at("conflict").get<bool>();
  c.conflict_strength = j.at("conflict_strength").get<double>();
  return c;
}

inline json summary_json(const metrics::SetSummary& s) {
  return {{"hv", s.hv},
          {"min_tre_solution", s.min_tre_solution},
          {"min_tre", s.min_tre},
          {"min_tre_folding_pct", s.min_tre_folding},
          {"max_dice_solution", s.max_dice_solution},
          {"max_dice_pct", s.max_dice},
          {"max_dice_folding_pct", s.max_dice_folding},
          {"spread", s.spread},
          {"front0", s.front0}};
}

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

inline std::string two_digits(std::size_t i) {
  std::ostringstream os;
  os << std::setw(2) << std::setfill('0') << i;
  return os.str();
}

// ---------------------------------------------------------------------------
// Pairs and datasets. Originals are kept losslessly in pair.mot; the PNGs are
// for viewing only.

/// Writes one pair into `dir` and returns the written paths relative to `root`.
inline std::vector<std::string> save_pair(const fs::path& root, const fs::path& dir, const RegistrationPair& pair) {
  std::vector<std::string> files;
  const auto put_png = [&](const std::string& name, const Tensor& t, std::size_t ch) {
    io::write_png(dir / name, io::to_gray8(t, ch));
    files.push_back(fs::relative(dir / name, root).generic_string());
  };
  put_png("source.png", pair.source_image, 0);
  put_png("target.png", pair.target_image, 0);
  for (std::size_t k = 0; k < pair.organs(); ++k) {
    put_png("source_mask_" + std::to_string(k) + ".png", pair.source_mask, k);
    put_png("target_mask_" + std::to_string(k) + ".png", pair.target_mask, k);
  }
  io::write_text(dir / "landmarks.json", landmarks_json(pair.landmarks).dump(1) + "\n");
  files.push_back(fs::relative(dir / "landmarks.json", root).generic_string());
  std::vector<Tensor> tensors{pair.source_image, pair.target_image, pair.source_mask, pair.target_mask};
  if (pair.gt_dvf) tensors.push_back(*pair.gt_dvf);
  io::write_tensors(dir / "pair.mot", tensors);
  files.push_back(fs::relative(dir / "pair.mot", root).generic_string());
  return files;
}

inline RegistrationPair load_pair(const fs::path& dir) {
  auto tensors = io::read_tensors(dir / "pair.mot");
  if (tensors.size() < 4) throw io::IntegrityError((dir / "pair.mot").string() + ": expected at least 4 tensors");
  RegistrationPair pair{tensors[0], tensors[1], tensors[2], tensors[3], {}, std::nullopt};
  if (tensors.size() > 4) pair.gt_dvf = tensors[4];
  try {
    pair.landmarks = landmarks_from(json::parse(io::read_file(dir / "landmarks.json")));
  } catch (const json::exception& e) {
    throw io::IntegrityError((dir / "landmarks.json").string() + ": " + e.what());
  }
  return pair;
}

/// dataset.json + pair_XXX directories.
inline void save_dataset(const fs::path& dir, const synth::Dataset& data) {
  json pairs = json::array();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::string name = "pair_" + two_digits(i);
    save_pair(dir, dir / name, data[i]);
    pairs.push_back(name);
  }
  const json meta{{"schema_version", kSchemaVersion},
                  {"synth", synth_config_json(data.config())},
                  {"train_count", data.train_indices().size()},
                  {"pairs", pairs}};
  io::write_text(dir / "dataset.json", meta.dump(1) + "\n");
}

inline synth::Dataset load_dataset(const fs::path& dir) {
  json meta;
  try {
    meta = json::parse(io::read_file(dir / "dataset.json"));
  } catch (const json::exception& e) {
    throw io::IntegrityError((dir / "dataset.json").string() + ": " + e.what());
  }
  if (meta.value("schema_version", -1) != kSchemaVersion)
    throw io::VersionError("dataset.json: unsupported schema_version");
  std::vector<RegistrationPair> pairs;
  for (const auto& name : meta.at("pairs")) pairs.push_back(load_pair(dir / name.get<std::string>()));
  return synth::Dataset(std::move(pairs), meta.at("train_count").get<std::size_t>(),
                        synth_config_from(meta.at("synth")));
}

// ---------------------------------------------------------------------------
// Run bundle

struct SolutionEntry {
  std::size_t id = 0;
  std::optional<std::vector<double>> weights;  // nullopt = dynamic
};

struct PairResult {
  std::size_t dataset_index = 0;
  RegistrationPair pair;
  double pre_tre = 0.0;
  std::vector<metrics::SolutionOutput> solutions;
};

struct RunBundle {
  int schema_version = kSchemaVersion;
  std::string mode;  // "mo", "grid" or "genmed"
  json config = json::object();
  std::vector<double> reference;
  std::vector<std::string> objectives;
  std::vector<SolutionEntry> solutions;
  std::vector<PairResult> pairs;
  std::optional<TrainTrace> trace;
  std::optional<ModelParams> model;
  std::vector<GenmedTrace> genmed;
};

/// Rounds a DVF to float32, the precision it is stored with.
inline Tensor storage_precision(const Tensor& dvf) {
  std::vector<double> v(dvf.data().begin(), dvf.data().end());
  for (double& x : v) x = static_cast<double>(static_cast<float>(x));
  return Tensor::from(dvf.shape(), std::move(v));
}

/// Runs the trained model on the evaluation pairs and packages everything.
/// Metrics are computed on the float32-rounded DVFs so that a bundle
/// re-evaluated from disk reproduces them exactly.
inline RunBundle make_run_bundle(const TrainConfig& config, const TrainResult& result, const synth::Dataset& data,
                                 const std::vector<std::size_t>& eval_indices) {
  RunBundle b;
  b.mode = result.trace.mode;
  b.config = train_config_json(config);
  b.config["model"] = model_config_json(result.params.config);
  b.config["synth"] = synth_config_json(data.config());
  b.reference = config.reference;
  b.objectives = objective_names(config.guidance);
  for (std::size_t h = 0; h < config.p; ++h) {
    SolutionEntry e{h, std::nullopt};
    if (!result.trace.fixed_weights.empty()) e.weights = result.trace.fixed_weights[h];
    b.solutions.push_back(e);
  }
  for (std::size_t idx : eval_indices) {
    PairResult pr{idx, data[idx], metrics::pre_registration_tre(data[idx]), {}};
    Tape tape(false);
    for (const auto& dvf : forward_multi_head(tape, result.params, pr.pair))
      pr.solutions.push_back(metrics::evaluate_dvf(pr.pair, storage_precision(dvf), config.guidance));
    b.pairs.push_back(std::move(pr));
  }
  b.trace = result.trace;
  b.model = result.params;
  return b;
}

inline metrics::SetReport bundle_report(const RunBundle& b) {
  std::vector<std::vector<metrics::SolutionMetrics>> per_pair;
  std::vector<double> pre;
  for (const auto& pr : b.pairs) {
    std::vector<metrics::SolutionMetrics> sols;
    for (const auto& s : pr.solutions) sols.push_back(s.metrics);
    per_pair.push_back(std::move(sols));
    pre.push_back(pr.pre_tre);
  }
  return metrics::set_report_from(per_pair, pre, b.reference);
}

// ---------------------------------------------------------------------------
// Rendering

namespace detail {

inline std::array<std::uint8_t, 3> magnitude_color(double t) {
  // Blue -> cyan -> yellow -> red.
  t = std::clamp(t, 0.0, 1.0);
  const double r = std::clamp(2.0 * t - 0.5, 0.0, 1.0);
  const double g = t < 0.75 ? std::clamp(2.0 * t, 0.0, 1.0) : std::clamp(4.0 * (1.0 - t), 0.0, 1.0);
  const double bl = std::clamp(1.0 - 2.0 * t, 0.0, 1.0);
  return {static_cast<std::uint8_t>(255 * r), static_cast<std::uint8_t>(255 * g), static_cast<std::uint8_t>(255 * bl)};
}

inline void draw_line(io::Image8& img, double x0, double y0, double x1, double y1, std::array<std::uint8_t, 3> c) {
  const double len = std::max(std::abs(x1 - x0), std::abs(y1 - y0));
  const int steps = std::max(1, static_cast<int>(std::ceil(len)));
  for (int s = 0; s <= steps; ++s) {
    const double t = static_cast<double>(s) / steps;
    const long x = std::lround(x0 + t * (x1 - x0)), y = std::lround(y0 + t * (y1 - y0));
    if (x < 0 || y < 0 || x >= static_cast<long>(img.width) || y >= static_cast<long>(img.height)) continue;
    std::uint8_t* px = img.pixels.data() + (static_cast<std::size_t>(y) * img.width + static_cast<std::size_t>(x)) * 3;
    px[0] = c[0];
    px[1] = c[1];
    px[2] = c[2];
  }
}

}  // namespace detail

inline constexpr std::size_t kOverlayScale = 4;
inline constexpr std::size_t kArrowStride = 4;
inline constexpr double kMinArrow = 0.05;  // voxels; shorter arrows are not drawn

/// Quiver plot of the DVF on the source image, upscaled kOverlayScale times,
/// one arrow per kArrowStride voxels, coloured by displacement magnitude.
inline io::Image8 render_overlay(const Tensor& source, const Tensor& dvf) {
  const std::size_t h = dvf.dim(2), w = dvf.dim(3), s = kOverlayScale;
  io::Image8 img{w * s, h * s, 3, std::vector<std::uint8_t>(w * s * h * s * 3)};
  for (std::size_t y = 0; y < h * s; ++y)
    for (std::size_t x = 0; x < w * s; ++x) {
      const auto v =
          static_cast<std::uint8_t>(std::lround(std::clamp(source[(y / s) * w + x / s], 0.0, 1.0) * 255.0));
      std::fill_n(img.pixels.data() + (y * w * s + x) * 3, 3, v);
    }
  double max_mag = 0.0;
  for (std::size_t i = 0; i < h * w; ++i) max_mag = std::max(max_mag, std::hypot(dvf[i], dvf[h * w + i]));
  const double off = (static_cast<double>(s) - 1.0) / 2.0;
  for (std::size_t y = kArrowStride / 2; y < h; y += kArrowStride)
    for (std::size_t x = kArrowStride / 2; x < w; x += kArrowStride) {
      const double ux = dvf[y * w + x], uy = dvf[h * w + y * w + x];
      const double mag = std::hypot(ux, uy);
      if (mag < kMinArrow) continue;
      const auto color = detail::magnitude_color(mag / max_mag);
      const double x0 = static_cast<double>(x * s) + off, y0 = static_cast<double>(y * s) + off;
      const double x1 = x0 + ux * s, y1 = y0 + uy * s;
      detail::draw_line(img, x0, y0, x1, y1, color);
      const double head = std::min(3.0, 0.4 * mag * s), ang = std::atan2(uy, ux);
      for (double da : {2.6, -2.6})
        detail::draw_line(img, x1, y1, x1 + head * std::cos(ang + da), y1 + head * std::sin(ang + da), color);
    }
  return img;
}

inline std::string pair_dir(std::size_t i) { return "pairs/pair_" + two_digits(i); }
inline std::string sol_dir(std::size_t i, std::size_t s) { return pair_dir(i) + "/sol_" + two_digits(s); }

inline json scatter_json(const RunBundle& b, std::size_t pair_index) {
  const auto& pr = b.pairs.at(pair_index);
  json sols = json::array();
  for (std::size_t s = 0; s < pr.solutions.size(); ++s) {
    const auto& m = pr.solutions[s].metrics;
    const std::string d = sol_dir(pair_index, s);
    const auto& w = b.solutions.at(s).weights;
    sols.push_back({{"id", s},
                    {"losses", m.losses},
                    {"weights", w ? json(*w) : json("dynamic")},
                    {"tre", m.mean_tre},
                    {"folding_pct", m.folding_pct},
                    {"dice_pct", m.dice_pct},
                    {"files", {{"warped", d + "/warped.png"}, {"overlay", d + "/overlay.png"}, {"dvf", d + "/dvf.modvf"}}}});
  }
  return {{"schema_version", kSchemaVersion},
          {"ref_point", b.reference},
          {"objectives", b.objectives},
          {"pair", pair_index},
          {"pre_tre", pr.pre_tre},
          {"files",
           {{"source", pair_dir(pair_index) + "/source.png"}, {"target", pair_dir(pair_index) + "/target.png"}}},
          {"solutions", sols}};
}

/// Overlays and scatter.json files; returns the written relative paths.
inline std::vector<std::string> render_assets(const RunBundle& b, const fs::path& root) {
  std::vector<std::string> files;
  for (std::size_t i = 0; i < b.pairs.size(); ++i) {
    const auto& pr = b.pairs[i];
    for (std::size_t s = 0; s < pr.solutions.size(); ++s) {
      const std::string rel = sol_dir(i, s) + "/overlay.png";
      io::write_png(root / rel, render_overlay(pr.pair.source_image, pr.solutions[s].dvf));
      files.push_back(rel);
    }
    const std::string rel = pair_dir(i) + "/scatter.json";
    io::write_text(root / rel, scatter_json(b, i).dump(1) + "\n");
    files.push_back(rel);
  }
  if (!b.pairs.empty()) {
    io::write_text(root / "scatter.json", scatter_json(b, 0).dump(1) + "\n");
    files.push_back("scatter.json");
  }
  return files;
}

// ---------------------------------------------------------------------------
// Write / read

inline json metrics_json(const RunBundle& b) {
  const auto rep = bundle_report(b);
  json pairs = json::array();
  for (std::size_t i = 0; i < b.pairs.size(); ++i) {
    json sols = json::array();
    for (std::size_t s = 0; s < b.pairs[i].solutions.size(); ++s) {
      const auto& m = b.pairs[i].solutions[s].metrics;
      sols.push_back({{"id", s}, {"losses", m.losses}, {"tre", m.mean_tre}, {"folding_pct", m.folding_pct},
                      {"dice_pct", m.dice_pct}});
    }
    pairs.push_back({{"pair", i},
                     {"dataset_index", b.pairs[i].dataset_index},
                     {"pre_tre", b.pairs[i].pre_tre},
                     {"summary", summary_json(rep.pairs[i].summary)},
                     {"solutions", sols}});
  }
  json mean = json::array();
  for (const auto& m : rep.mean_solutions)
    mean.push_back({{"losses", m.losses}, {"tre", m.mean_tre}, {"folding_pct", m.folding_pct}, {"dice_pct", m.dice_pct}});
  return {{"schema_version", kSchemaVersion},
          {"objectives", b.objectives},
          {"mean_pre_tre", rep.mean_pre_tre},
          {"pairs", pairs},
          {"mean_solutions", mean},
          {"aggregate", summary_json(rep.aggregate)}};
}

inline std::string metrics_csv(const RunBundle& b) {
  std::ostringstream os;
  os << std::setprecision(17) << "pair,solution";
  for (const auto& o : b.objectives) os << ',' << o;
  os << ",tre,folding_pct,dice_pct\n";
  for (std::size_t i = 0; i < b.pairs.size(); ++i)
    for (std::size_t s = 0; s < b.pairs[i].solutions.size(); ++s) {
      const auto& m = b.pairs[i].solutions[s].metrics;
      os << i << ',' << s;
      for (double l : m.losses) os << ',' << l;
      os << ',' << m.mean_tre << ',' << m.folding_pct << ',' << m.dice_pct << '\n';
    }
  return os.str();
}

inline json genmed_json(const std::vector<GenmedTrace>& traces) {
  json a = json::array();
  for (const auto& t : traces) {
    json records = json::array();
    for (const auto& r : t.records) records.push_back({{"iteration", r.iteration}, {"hv", r.hv}, {"objectives", r.objectives}});
    double max_dist = 0.0;
    for (const auto& x : t.decisions) max_dist = std::max(max_dist, genmed::front_distance(x));
    a.push_back({{"reference", t.reference},
                 {"records", records},
                 {"decisions", t.decisions},
                 {"objectives", t.objectives},
                 {"max_front_distance", max_dist},
                 {"edge_clustering", t.objectives.front().size() == 3 ? genmed::edge_clustering(t.objectives) : 0.0}});
  }
  return a;
}

inline std::vector<GenmedTrace> genmed_from(const json& a) {
  std::vector<GenmedTrace> out;
  for (const auto& j : a) {
    GenmedTrace t;
    t.reference = j.at("reference").get<std::vector<double>>();
    for (const auto& r : j.at("records"))
      t.records.push_back({r.at("iteration").get<std::size_t>(), r.at("hv").get<double>(),
                           r.at("objectives").get<hv::PointSet>()});
    t.decisions = j.at("decisions").get<hv::PointSet>();
    t.objectives = j.at("objectives").get<hv::PointSet>();
    out.push_back(std::move(t));
  }
  return out;
}

/// Writes the bundle; manifest.json goes last via an atomic rename.
inline void write_bundle(const RunBundle& b, const fs::path& root) {
  fs::create_directories(root);
  fs::remove(root / "manifest.json");
  std::vector<std::string> files;
  const auto text = [&](const std::string& rel, const std::string& content) {
    io::write_text(root / rel, content);
    files.push_back(rel);
  };

  json pairs = json::array();
  for (std::size_t i = 0; i < b.pairs.size(); ++i) {
    const auto& pr = b.pairs[i];
    const auto written = save_pair(root, root / pair_dir(i), pr.pair);
    files.insert(files.end(), written.begin(), written.end());
    json sols = json::array();
    for (std::size_t s = 0; s < pr.solutions.size(); ++s) {
      const auto& so = pr.solutions[s];
      const std::string d = sol_dir(i, s);
      io::write_dvf(root / d / "dvf.modvf", so.dvf);
      io::write_png(root / d / "warped.png", io::to_gray8(so.warped_image));
      files.insert(files.end(), {d + "/dvf.modvf", d + "/warped.png"});
      json masks = json::array();
      for (std::size_t k = 0; k < so.warped_mask.dim(1); ++k) {
        const std::string rel = d + "/warped_mask_" + std::to_string(k) + ".png";
        io::write_png(root / rel, io::to_gray8(so.warped_mask, k));
        files.push_back(rel);
        masks.push_back(rel);
      }
      sols.push_back({{"id", s},
                      {"losses", so.metrics.losses},
                      {"tre", so.metrics.mean_tre},
                      {"folding_pct", so.metrics.folding_pct},
                      {"dice_pct", so.metrics.dice_pct},
                      {"dvf", d + "/dvf.modvf"},
                      {"warped", d + "/warped.png"},
                      {"warped_masks", masks},
                      {"overlay", d + "/overlay.png"}});
    }
    pairs.push_back({{"dir", pair_dir(i)}, {"dataset_index", pr.dataset_index}, {"pre_tre", pr.pre_tre}, {"solutions", sols}});
  }
  if (!b.pairs.empty()) {
    text("metrics.json", metrics_json(b).dump(1) + "\n");
    text("metrics.csv", metrics_csv(b));
  }
  if (b.trace) text("trace.json", trace_json(*b.trace).dump(1) + "\n");
  if (b.model) {
    io::write_tensors(root / "model.mot", b.model->parameters());
    files.push_back("model.mot");
  }
  if (!b.genmed.empty()) text("genmed.json", genmed_json(b.genmed).dump(1) + "\n");
  const auto assets = render_assets(b, root);
  files.insert(files.end(), assets.begin(), assets.end());

  json solutions = json::array();
  for (const auto& s : b.solutions) solutions.push_back({{"id", s.id}, {"weights", s.weights ? json(*s.weights) : json("dynamic")}});
  json checksums = json::object();
  for (const auto& f : files) checksums[f] = io::sha256_file(root / f);
  json manifest{{"schema_version", kSchemaVersion},
                {"created_utc", utc_timestamp()},
                {"mode", b.mode},
                {"config", b.config},
                {"reference", b.reference},
                {"objectives", b.objectives},
                {"p", b.solutions.size()},
                {"solutions", solutions},
                {"pairs", pairs},
                {"files", checksums}};
  if (b.model) manifest["model"] = model_config_json(b.model->config);
  io::write_text(root / "manifest.json.tmp", manifest.dump(1) + "\n");
  fs::rename(root / "manifest.json.tmp", root / "manifest.json");
}

/// Checks every manifest checksum, then loads the bundle. Warped rasters are
/// recomputed from the stored DVFs and lossless originals.
inline RunBundle read_bundle(const fs::path& root) {
  json manifest;
  try {
    manifest = json::parse(io::read_file(root / "manifest.json"));
  } catch (const json::exception& e) {
    throw io::IntegrityError("manifest.json: " + std::string(e.what()));
  }
  if (!manifest.contains("schema_version") || !manifest["schema_version"].is_number_integer())
    throw io::VersionError("manifest.json: missing schema_version");
  if (manifest["schema_version"].get<int>() != kSchemaVersion)
    throw io::VersionError("manifest.json: unknown schema_version " + manifest["schema_version"].dump());

  try {
    for (const auto& [rel, sum] : manifest.at("files").items()) {
      if (!fs::exists(root / rel)) throw io::IntegrityError(rel + ": referenced file is missing");
      if (io::sha256_file(root / rel) != sum.get<std::string>()) throw io::IntegrityError(rel + ": checksum mismatch");
    }

    RunBundle b;
    b.mode = manifest.at("mode").get<std::string>();
    b.config = manifest.at("config");
    b.reference = manifest.at("reference").get<std::vector<double>>();
    b.objectives = manifest.at("objectives").get<std::vector<std::string>>();
    for (const auto& s : manifest.at("solutions")) {
      SolutionEntry e{s.at("id").get<std::size_t>(), std::nullopt};
      if (s.at("weights").is_array()) e.weights = s.at("weights").get<std::vector<double>>();
      b.solutions.push_back(e);
    }
    if (manifest.at("p").get<std::size_t>() != b.solutions.size())
      throw io::IntegrityError("manifest.json: p does not match the solution list");
    const bool guidance = b.objectives.size() == 3;
    for (const auto& pj : manifest.at("pairs")) {
      PairResult pr{pj.at("dataset_index").get<std::size_t>(), load_pair(root / pj.at("dir").get<std::string>()),
                    pj.at("pre_tre").get<double>(), {}};
      if (pj.at("solutions").size() != b.solutions.size())
        throw io::IntegrityError(pj.at("dir").get<std::string>() + ": solution count differs from p");
      for (const auto& sj : pj.at("solutions")) {
        const Tensor dvf = io::read_dvf(root / sj.at("dvf").get<std::string>());
        metrics::SolutionOutput so = metrics::evaluate_dvf(pr.pair, dvf, guidance);
        so.metrics.losses = sj.at("losses").get<std::vector<double>>();
        so.metrics.mean_tre = sj.at("tre").get<double>();
        so.metrics.folding_pct = sj.at("folding_pct").get<double>();
        so.metrics.dice_pct = sj.at("dice_pct").get<double>();
        pr.solutions.push_back(std::move(so));
      }
      b.pairs.push_back(std::move(pr));
    }
    if (fs::exists(root / "trace.json") && manifest.at("files").contains("trace.json"))
      b.trace = trace_from(json::parse(io::read_file(root / "trace.json")));
    if (manifest.contains("model")) {
      ModelParams params = init_params(0, model_config_from(manifest.at("model")));
      const auto stored = io::read_tensors(root / "model.mot");
      auto dst = params.parameters();
      if (stored.size() != dst.size()) throw io::IntegrityError("model.mot: parameter tensor count mismatch");
      for (std::size_t i = 0; i < dst.size(); ++i) {
        if (stored[i].shape() != dst[i].shape()) throw io::IntegrityError("model.mot: parameter shape mismatch");
        std::copy(stored[i].data().begin(), stored[i].data().end(), dst[i].mutable_data().begin());
      }
      b.model = std::move(params);
    }
    if (manifest.at("files").contains("genmed.json"))
      b.genmed = genmed_from(json::parse(io::read_file(root / "genmed.json")));
    return b;
  } catch (const json::exception& e) {
    throw io::IntegrityError("malformed bundle: " + std::string(e.what()));
  }
}

/// Recomputes every solution's metrics from its stored DVF. Returns the
/// number of values that differ from the stored ones.
inline std::size_t reevaluate(RunBundle& b) {
  std::size_t mismatches = 0;
  const bool guidance = b.objectives.size() == 3;
  for (auto& pr : b.pairs)
    for (auto& so : pr.solutions) {
      const auto fresh = metrics::evaluate_dvf(pr.pair, so.dvf, guidance).metrics;
      mismatches += fresh.losses != so.metrics.losses;
      mismatches += fresh.mean_tre != so.metrics.mean_tre;
      mismatches += fresh.folding_pct != so.metrics.folding_pct;
      mismatches += fresh.dice_pct != so.metrics.dice_pct;
      so.metrics = fresh;
    }
  return mismatches;
}

}  // namespace modir::bundle
