#include <gtest/gtest.h>

#include <set>

#include "modir/metrics.hpp"
#include "modir/synth.hpp"

using namespace modir;

namespace {

RegistrationPair make(const synth::SynthConfig& c, std::uint64_t index) {
  auto rng = synth::pair_rng(c, index);
  return synth::gen_pair(c, rng);
}

}  // namespace

TEST(Synth, PerfectPredictionOracle) {
  // Warping the source by the ground truth must recover the target.
  synth::SynthConfig c;
  for (std::uint64_t i = 0; i < 40; ++i) {
    const RegistrationPair pair = make(c, i);
    ASSERT_TRUE(pair.gt_dvf.has_value());
    const auto out = metrics::evaluate_dvf(pair, *pair.gt_dvf, true);
    EXPECT_LE(out.metrics.losses[0], 0.02) << "pair " << i;
    EXPECT_GE(out.metrics.dice_pct, 98.0) << "pair " << i;
    EXPECT_LE(out.metrics.mean_tre, 0.2) << "pair " << i;
  }
}

TEST(Synth, GroundTruthDoesNotFold) {
  synth::SynthConfig c;
  c.magnitude = 8.0;
  for (std::uint64_t i = 0; i < 10; ++i) EXPECT_EQ(metrics::folding_percent(*make(c, i).gt_dvf), 0.0);
}

TEST(Synth, MagnitudeIsPeakDisplacement) {
  synth::SynthConfig c;
  const Tensor u = *make(c, 3).gt_dvf;
  const std::size_t hw = 64 * 64;
  double peak = 0.0;
  for (std::size_t i = 0; i < hw; ++i) peak = std::max(peak, std::hypot(u[i], u[hw + i]));
  EXPECT_NEAR(peak, c.magnitude, 1e-9);
}

TEST(Synth, ZeroMagnitudeWithoutConflictGivesIdenticalImages) {
  synth::SynthConfig c;
  c.magnitude = 0.0;
  c.conflict = false;
  c.noise = 0.0;
  const RegistrationPair pair = make(c, 0);
  for (std::size_t i = 0; i < pair.target_image.numel(); ++i) EXPECT_EQ(pair.source_image[i], pair.target_image[i]);
  for (std::size_t i = 0; i < pair.target_mask.numel(); ++i) EXPECT_EQ(pair.source_mask[i], pair.target_mask[i]);
  EXPECT_EQ(metrics::pre_registration_tre(pair), 0.0);
}

TEST(Synth, PreRegistrationTreIsMeanLandmarkDisplacement) {
  synth::SynthConfig c;
  const RegistrationPair pair = make(c, 4);
  double sum = 0.0;
  for (const auto& lm : pair.landmarks) sum += std::hypot(lm.source_x - lm.target_x, lm.source_y - lm.target_y);
  EXPECT_NEAR(metrics::pre_registration_tre(pair), sum / static_cast<double>(pair.landmarks.size()), 1e-12);
  EXPECT_GT(metrics::pre_registration_tre(pair), 0.0);
}

TEST(Synth, Deterministic) {
  synth::SynthConfig c;
  const RegistrationPair a = make(c, 7), b = make(c, 7);
  EXPECT_TRUE(std::equal(a.source_image.data().begin(), a.source_image.data().end(), b.source_image.data().begin()));
  EXPECT_TRUE(std::equal(a.target_mask.data().begin(), a.target_mask.data().end(), b.target_mask.data().begin()));
  EXPECT_EQ(a.landmarks.size(), b.landmarks.size());
  for (std::size_t i = 0; i < a.landmarks.size(); ++i) EXPECT_EQ(a.landmarks[i].source_x, b.landmarks[i].source_x);
}

TEST(Synth, PairsAndSeedsDiffer) {
  synth::SynthConfig c, d;
  d.seed = 2;
  const RegistrationPair a = make(c, 0), b = make(c, 1), e = make(d, 0);
  EXPECT_FALSE(std::equal(a.target_image.data().begin(), a.target_image.data().end(), b.target_image.data().begin()));
  EXPECT_FALSE(std::equal(a.target_image.data().begin(), a.target_image.data().end(), e.target_image.data().begin()));
}

TEST(Synth, InvariantsOverManyPairs) {
  synth::SynthConfig c;
  for (std::uint64_t i = 0; i < 20; ++i) {
    const RegistrationPair pair = make(c, i);
    EXPECT_EQ(pair.source_image.shape(), (Shape{1, 1, 64, 64}));
    EXPECT_EQ(pair.target_mask.shape(), (Shape{1, 2, 64, 64}));
    for (double v : pair.source_image.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    for (const Tensor* m : {&pair.source_mask, &pair.target_mask}) {
      double ones = 0.0;
      for (double v : m->data()) {
        EXPECT_TRUE(v == 0.0 || v == 1.0);
        ones += v;
      }
      EXPECT_GT(ones, 50.0);
    }
    double overlap = 0.0;
    for (std::size_t k = 0; k < 64 * 64; ++k) overlap += pair.target_mask[k] * pair.target_mask[64 * 64 + k];
    EXPECT_EQ(overlap, 0.0);
    ASSERT_EQ(pair.landmarks.size(), 23u);
    for (const auto& lm : pair.landmarks)
      for (double v : {lm.target_x, lm.target_y, lm.source_x, lm.source_y}) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 63.0);
      }
  }
}

TEST(Synth, ConflictRampChangesSourceOnly) {
  synth::SynthConfig on, off;
  off.conflict = false;
  const RegistrationPair a = make(on, 2), b = make(off, 2);
  EXPECT_TRUE(std::equal(a.target_image.data().begin(), a.target_image.data().end(), b.target_image.data().begin()));
  EXPECT_TRUE(std::equal(a.source_mask.data().begin(), a.source_mask.data().end(), b.source_mask.data().begin()));
  EXPECT_FALSE(std::equal(a.source_image.data().begin(), a.source_image.data().end(), b.source_image.data().begin()));
}

TEST(Synth, InvalidConfigRejected) {
  synth::SynthConfig c;
  c.magnitude = 9.0;
  EXPECT_THROW(make(c, 0), std::invalid_argument);
  c = {};
  c.size = 16;
  EXPECT_THROW(make(c, 0), std::invalid_argument);
  EXPECT_THROW(synth::Dataset(synth::SynthConfig{}, 4, 5), std::invalid_argument);
}

TEST(Dataset, SplitsAreDisjointAndCover) {
  const synth::Dataset data(synth::SynthConfig{}, 10, 7);
  const auto tr = data.train_indices(), ev = data.eval_indices();
  EXPECT_EQ(tr.size(), 7u);
  EXPECT_EQ(ev.size(), 3u);
  std::set<std::size_t> all(tr.begin(), tr.end());
  for (std::size_t i : ev) EXPECT_TRUE(all.insert(i).second);
  EXPECT_EQ(all.size(), 10u);
  const RegistrationPair direct = make(synth::SynthConfig{}, 8);
  EXPECT_TRUE(std::equal(direct.source_image.data().begin(), direct.source_image.data().end(),
                         data[8].source_image.data().begin()));
}
