#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "modir/bundle.hpp"
#include "support.hpp"

using namespace modir;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("modir_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const synth::Dataset& small_data() {
  static const synth::Dataset data(synth::SynthConfig{}, 4, 2);
  return data;
}

TrainConfig small_config() {
  TrainConfig c;
  c.p = 3;
  c.iterations = 2;
  c.eval_every = 0;
  return c;
}

const bundle::RunBundle& mo_bundle() {
  static const bundle::RunBundle b = [] {
    const auto c = small_config();
    return bundle::make_run_bundle(c, train_mo(c, small_data()), small_data(), small_data().eval_indices());
  }();
  return b;
}

json read_json(const fs::path& p) { return json::parse(io::read_file(p)); }

void flip_byte(const fs::path& p, std::size_t offset) {
  auto bytes = io::read_file(p);
  bytes.at(offset) ^= 0x01;
  io::write_file(p, bytes.data(), bytes.size());
}

}  // namespace

TEST(DvfRaster, HeaderLayoutAndRoundTrip) {
  std::mt19937_64 rng(601);
  const Tensor u = bundle::storage_precision(testing_support::random_tensor(rng, {1, 2, 3, 5}, -4, 4, false));
  const auto bytes = io::encode_dvf(u);
  ASSERT_EQ(bytes.size(), 16u + 8u * 15u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 6), "MODVF1");
  EXPECT_EQ(bytes[6], 1);
  EXPECT_EQ(bytes[7], 2);
  EXPECT_EQ((std::vector<std::uint8_t>(bytes.begin() + 8, bytes.begin() + 16)),
            (std::vector<std::uint8_t>{3, 0, 0, 0, 5, 0, 0, 0}));
  // First payload value: x-displacement at row 0, column 0, little-endian.
  const float first = static_cast<float>(u[0]);
  std::uint32_t bits;
  std::memcpy(&bits, &first, 4);
  EXPECT_EQ(bytes[16], bits & 0xff);
  EXPECT_EQ(bytes[19], bits >> 24);
  const Tensor back = io::decode_dvf(bytes);
  EXPECT_EQ(back.shape(), u.shape());
  for (std::size_t i = 0; i < u.numel(); ++i) EXPECT_EQ(back[i], u[i]);
  EXPECT_EQ(io::encode_dvf(back), bytes);
}

TEST(DvfRaster, MalformedFilesAreRejected) {
  const auto good = io::encode_dvf(Tensor::zeros({1, 2, 4, 4}));
  auto truncated = good;
  truncated.pop_back();
  EXPECT_THROW(io::decode_dvf(truncated), io::IntegrityError);
  EXPECT_THROW(io::decode_dvf(std::vector<std::uint8_t>(good.begin(), good.begin() + 10)), io::IntegrityError);
  auto magic = good;
  magic[0] = 'X';
  EXPECT_THROW(io::decode_dvf(magic), io::IntegrityError);
  auto version = good;
  version[6] = 2;
  EXPECT_THROW(io::decode_dvf(version), io::VersionError);
  auto ndim = good;
  ndim[7] = 3;
  EXPECT_THROW(io::decode_dvf(ndim), io::IntegrityError);
  auto longer = good;
  longer.push_back(0);
  EXPECT_THROW(io::decode_dvf(longer), io::IntegrityError);
  EXPECT_THROW(io::encode_dvf(Tensor::zeros({1, 3, 4, 4})), ShapeError);
}

TEST(TensorContainer, LosslessRoundTrip) {
  std::mt19937_64 rng(602);
  const std::vector<Tensor> ts{testing_support::random_tensor(rng, {2, 3}, -1, 1, false), Tensor::from({1}, {1e-300}),
                               testing_support::random_tensor(rng, {1, 2, 4, 4}, -9, 9, false)};
  const auto bytes = io::encode_tensors(ts);
  const auto back = io::decode_tensors(bytes);
  ASSERT_EQ(back.size(), ts.size());
  for (std::size_t t = 0; t < ts.size(); ++t) {
    EXPECT_EQ(back[t].shape(), ts[t].shape());
    for (std::size_t i = 0; i < ts[t].numel(); ++i) EXPECT_EQ(back[t][i], ts[t][i]);
  }
  auto extra = bytes;
  extra.push_back(7);
  EXPECT_THROW(io::decode_tensors(extra), io::IntegrityError);
  EXPECT_THROW(io::decode_tensors(std::vector<std::uint8_t>(bytes.begin(), bytes.end() - 3)), io::IntegrityError);
}

TEST(Png, GrayRoundTripAndQuantisation) {
  const fs::path dir = scratch("png");
  Tensor img = Tensor::zeros({1, 1, 3, 4});
  for (std::size_t i = 0; i < 12; ++i) img.mutable_data()[i] = static_cast<double>(i) / 11.0;
  const auto g = io::to_gray8(img);
  io::write_png(dir / "a.png", g);
  const auto back = io::read_png(dir / "a.png");
  EXPECT_EQ(back.width, 4u);
  EXPECT_EQ(back.height, 3u);
  EXPECT_EQ(back.pixels, g.pixels);
  const Tensor t = io::from_gray8(back);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_LE(std::abs(t[i] - img[i]), 0.5 / 255.0 + 1e-12);
  fs::remove_all(dir);
}

TEST(Bundle, RoundTripIsBitExact) {
  const fs::path dir = scratch("roundtrip");
  const auto& b = mo_bundle();
  bundle::write_bundle(b, dir);
  const auto r = bundle::read_bundle(dir);
  ASSERT_EQ(r.pairs.size(), b.pairs.size());
  for (std::size_t i = 0; i < b.pairs.size(); ++i) {
    EXPECT_EQ(r.pairs[i].pre_tre, b.pairs[i].pre_tre);
    for (std::size_t s = 0; s < b.solutions.size(); ++s) {
      const auto& x = b.pairs[i].solutions[s];
      const auto& y = r.pairs[i].solutions[s];
      EXPECT_EQ(x.metrics.losses, y.metrics.losses);
      EXPECT_EQ(x.metrics.mean_tre, y.metrics.mean_tre);
      EXPECT_EQ(x.metrics.folding_pct, y.metrics.folding_pct);
      EXPECT_TRUE(std::equal(x.dvf.data().begin(), x.dvf.data().end(), y.dvf.data().begin()));
      EXPECT_EQ(io::read_file(dir / bundle::sol_dir(i, s) / "dvf.modvf"), io::encode_dvf(x.dvf));
    }
    // Lossless originals.
    EXPECT_TRUE(std::equal(b.pairs[i].pair.source_image.data().begin(), b.pairs[i].pair.source_image.data().end(),
                           r.pairs[i].pair.source_image.data().begin()));
    EXPECT_EQ(r.pairs[i].pair.landmarks.size(), 23u);
  }
  ASSERT_TRUE(r.model.has_value());
  const auto pa = b.model->parameters(), pb = r.model->parameters();
  for (std::size_t t = 0; t < pa.size(); ++t)
    EXPECT_TRUE(std::equal(pa[t].data().begin(), pa[t].data().end(), pb[t].data().begin()));
  ASSERT_TRUE(r.trace.has_value());
  EXPECT_EQ(r.trace->final_losses, b.trace->final_losses);
  auto copy = r;
  EXPECT_EQ(bundle::reevaluate(copy), 0u);
  fs::remove_all(dir);
}

TEST(Bundle, StoredModelReproducesStoredFields) {
  const fs::path dir = scratch("model");
  bundle::write_bundle(mo_bundle(), dir);
  const auto r = bundle::read_bundle(dir);
  Tape tape(false);
  const auto dvfs = forward_multi_head(tape, *r.model, r.pairs[0].pair);
  for (std::size_t s = 0; s < dvfs.size(); ++s) {
    const Tensor f = bundle::storage_precision(dvfs[s]);
    EXPECT_TRUE(std::equal(f.data().begin(), f.data().end(), r.pairs[0].solutions[s].dvf.data().begin()));
  }
  fs::remove_all(dir);
}

TEST(Bundle, ManifestContentsAndRewriteIsStable) {
  const fs::path a = scratch("manifest_a"), b = scratch("manifest_b");
  bundle::write_bundle(mo_bundle(), a);
  bundle::write_bundle(bundle::read_bundle(a), b);
  json ma = read_json(a / "manifest.json"), mb = read_json(b / "manifest.json");
  EXPECT_EQ(ma["schema_version"], 1);
  EXPECT_EQ(ma["p"], 3);
  ASSERT_EQ(ma["solutions"].size(), 3u);
  for (const auto& s : ma["solutions"]) EXPECT_EQ(s["weights"], "dynamic");
  for (const auto& [rel, sum] : ma["files"].items()) EXPECT_EQ(io::sha256_file(a / rel), sum.get<std::string>()) << rel;
  EXPECT_FALSE(fs::exists(a / "manifest.json.tmp"));
  ma.erase("created_utc");
  mb.erase("created_utc");
  EXPECT_EQ(ma, mb);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Bundle, SingleByteCorruptionIsDetected) {
  const fs::path dir = scratch("corrupt");
  bundle::write_bundle(mo_bundle(), dir);
  const json m = read_json(dir / "manifest.json");
  std::vector<std::string> files;
  for (const auto& [rel, sum] : m["files"].items()) files.push_back(rel);
  std::mt19937_64 rng(603);
  for (int trial = 0; trial < 12; ++trial) {
    const std::string rel = files[rng() % files.size()];
    const auto size = fs::file_size(dir / rel);
    const std::size_t offset = rng() % size;
    flip_byte(dir / rel, offset);
    try {
      bundle::read_bundle(dir);
      ADD_FAILURE() << "corruption of " << rel << " at " << offset << " not detected";
    } catch (const io::IntegrityError& e) {
      EXPECT_NE(std::string(e.what()).find(rel), std::string::npos) << e.what();
    }
    flip_byte(dir / rel, offset);
  }
  EXPECT_NO_THROW(bundle::read_bundle(dir));
  fs::remove(dir / files.front());
  EXPECT_THROW(bundle::read_bundle(dir), io::IntegrityError);
  fs::remove_all(dir);
}

TEST(Bundle, UnknownSchemaVersionIsVersionError) {
  const fs::path dir = scratch("version");
  bundle::write_bundle(mo_bundle(), dir);
  json m = read_json(dir / "manifest.json");
  m["schema_version"] = 99;
  io::write_text(dir / "manifest.json", m.dump());
  EXPECT_THROW(bundle::read_bundle(dir), io::VersionError);
  m.erase("schema_version");
  io::write_text(dir / "manifest.json", m.dump());
  EXPECT_THROW(bundle::read_bundle(dir), io::VersionError);
  io::write_text(dir / "manifest.json", "{not json");
  EXPECT_THROW(bundle::read_bundle(dir), io::IntegrityError);
  fs::remove_all(dir);
}

TEST(Bundle, ScatterDataMatchesMetrics) {
  const fs::path dir = scratch("scatter");
  const auto& b = mo_bundle();
  bundle::write_bundle(b, dir);
  const json top = read_json(dir / "scatter.json");
  EXPECT_EQ(top["schema_version"], 1);
  EXPECT_EQ(top["ref_point"], json({1.0, 1.0, 1.0}));
  for (std::size_t i = 0; i < b.pairs.size(); ++i) {
    const json sc = read_json(dir / bundle::pair_dir(i) / "scatter.json");
    ASSERT_EQ(sc["solutions"].size(), b.solutions.size());
    for (std::size_t s = 0; s < b.solutions.size(); ++s) {
      const json& e = sc["solutions"][s];
      EXPECT_EQ(e["id"], s);
      EXPECT_EQ(e["weights"], "dynamic");
      const Tensor dvf = io::read_dvf(dir / e["files"]["dvf"].get<std::string>());
      EXPECT_EQ(e["tre"].get<double>(), metrics::tre(dvf, b.pairs[i].pair.landmarks).mean);
      EXPECT_EQ(e["folding_pct"].get<double>(), metrics::folding_percent(dvf));
      EXPECT_EQ(e["losses"].get<std::vector<double>>(), b.pairs[i].solutions[s].metrics.losses);
      for (double v : e["losses"].get<std::vector<double>>()) EXPECT_TRUE(std::isfinite(v));
      EXPECT_TRUE(fs::exists(dir / e["files"]["warped"].get<std::string>()));
      EXPECT_TRUE(fs::exists(dir / e["files"]["overlay"].get<std::string>()));
    }
  }
  fs::remove_all(dir);
}

TEST(Overlay, ZeroFieldDrawsNoArrows) {
  const auto& pair = small_data()[0];
  const auto img = bundle::render_overlay(pair.source_image, Tensor::zeros({1, 2, 64, 64}));
  ASSERT_EQ(img.channels, 3u);
  EXPECT_EQ(img.width, 256u);
  const auto gray = io::to_gray8(pair.source_image);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const std::uint8_t v = gray.pixels[(y / 4) * 64 + x / 4];
      for (std::size_t c = 0; c < 3; ++c) ASSERT_EQ(img.pixels[(y * img.width + x) * 3 + c], v);
    }
}

TEST(Overlay, NonZeroFieldDrawsColouredArrows) {
  const auto& pair = small_data()[0];
  const auto img = bundle::render_overlay(pair.source_image, *pair.gt_dvf);
  std::size_t coloured = 0;
  for (std::size_t i = 0; i < img.pixels.size(); i += 3)
    coloured += img.pixels[i] != img.pixels[i + 1] || img.pixels[i + 1] != img.pixels[i + 2];
  EXPECT_GT(coloured, 100u);
}

TEST(Bundle, GridManifestListsFixedTriples) {
  const fs::path dir = scratch("grid");
  TrainConfig c;
  c.p = 27;
  c.iterations = 1;
  c.eval_every = 0;
  const auto r = train_grid(c, small_data());
  bundle::write_bundle(bundle::make_run_bundle(c, r, small_data(), {small_data().eval_indices().front()}), dir);
  const json m = read_json(dir / "manifest.json");
  EXPECT_EQ(m["mode"], "grid");
  ASSERT_EQ(m["solutions"].size(), 27u);
  const auto grid = enumerate_grid_weights();
  for (std::size_t h = 0; h < 27; ++h) {
    const auto w = m["solutions"][h]["weights"].get<std::vector<double>>();
    EXPECT_EQ(w, (std::vector<double>{grid[h][0], grid[h][1], grid[h][2]}));
  }
  fs::remove_all(dir);
}

TEST(Dataset, SaveLoadRoundTrip) {
  const fs::path dir = scratch("dataset");
  bundle::save_dataset(dir, small_data());
  const auto back = bundle::load_dataset(dir);
  ASSERT_EQ(back.size(), small_data().size());
  EXPECT_EQ(back.eval_indices(), small_data().eval_indices());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_TRUE(std::equal(back[i].target_mask.data().begin(), back[i].target_mask.data().end(),
                           small_data()[i].target_mask.data().begin()));
    EXPECT_EQ(back[i].landmarks.back().source_y, small_data()[i].landmarks.back().source_y);
  }
  EXPECT_TRUE(fs::exists(dir / "pair_00" / "source.png"));
  fs::remove_all(dir);
}
