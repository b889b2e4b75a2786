#include <gtest/gtest.h>

#include <cmath>

#include "area/encoder.hpp"
#include "oracles.hpp"

using namespace area;

namespace {

RawSample sample(std::size_t d_in, std::uint64_t seed, bool caption = false) {
  SeededRng rng(seed);
  RawSample s{gaussian_vec(rng, d_in), 3, 1, std::nullopt};
  if (caption) s.caption = gaussian_vec(rng, d_in);
  return s;
}

std::size_t changed(const Vec& a, const Vec& b) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += a[i] != b[i];
  return n;
}

}  // namespace

TEST(Encoder, VisualIsFrozenAndScaleInvariant) {
  const auto enc = FrozenEncoder::create(Modality::Visual, 16, 64, 42);
  const RawSample x = sample(64, 1);
  const UnitVector a = encode_visual(enc, x);
  EXPECT_EQ(a, encode_visual(enc, x));
  RawSample y = x;
  y.features *= 2.0;
  const UnitVector b = encode_visual(enc, y);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(a[i], b[i], 1e-15);
  EXPECT_NEAR(dot(a, a), 1.0, 1e-12);
}

TEST(Encoder, OutputMatchesNormalizedProjection) {
  const auto enc = FrozenEncoder::create(Modality::Visual, 8, 20, 3);
  const RawSample x = sample(20, 2);
  const Eigen::VectorXd y = oracle::to_eigen(enc.projection()) * oracle::to_eigen(x.features);
  const UnitVector z = encode_visual(enc, x);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(z[i], y(static_cast<Eigen::Index>(i)) / y.norm(), 1e-14);
}

TEST(Encoder, SameSeedSameProjection) {
  const auto a = FrozenEncoder::create(Modality::Textual, 8, 20, 5);
  const auto b = FrozenEncoder::create(Modality::Textual, 8, 20, 5);
  EXPECT_EQ(a.digest(), b.digest());
  EXPECT_NE(a.digest(), FrozenEncoder::create(Modality::Visual, 8, 20, 5).digest());
}

TEST(Encoder, ProjectionEntryVariance) {
  const auto enc = FrozenEncoder::create(Modality::Textual, 64, 256, 9);
  double s = 0.0;
  for (double x : enc.projection().values()) s += x * x;
  const double var = s / static_cast<double>(enc.projection().values().size());
  EXPECT_NEAR(var * 256.0, 1.0, 0.03);
}

TEST(Encoder, ModalityAndShapeErrors) {
  const auto vis = FrozenEncoder::create(Modality::Visual, 4, 8, 1);
  const auto txt = FrozenEncoder::create(Modality::Textual, 4, 8, 1);
  EXPECT_THROW(encode_visual(txt, sample(8, 1)), DomainError);
  EXPECT_THROW(encode_textual_fused(vis, Vec(8, 1.0), std::nullopt), DomainError);
  EXPECT_THROW(encode_visual(vis, sample(9, 1)), DimensionError);
  EXPECT_THROW(encode_visual(vis, RawSample{Vec(8), 0, 0, std::nullopt}), DegeneracyError);
  EXPECT_THROW(FrozenEncoder::create(Modality::Visual, 0, 8, 1), DimensionError);
}

TEST(TextualFusion, Examples) {
  const auto enc = FrozenEncoder::create(Modality::Textual, 16, 32, 7);
  const Vec prompt = sample(32, 3).features;
  const UnitVector only = encode_textual_fused(enc, prompt, std::nullopt);
  EXPECT_EQ(only, enc.encode(prompt));
  const UnitVector same = encode_textual_fused(enc, prompt, prompt);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(same[i], only[i], 1e-15);
  SeededRng rng(8);
  for (int i = 0; i < 50; ++i) {
    const UnitVector f = encode_textual_fused(enc, gaussian_vec(rng, 32), gaussian_vec(rng, 32));
    EXPECT_NEAR(norm(f.vec()), 1.0, 1e-12);
  }
}

TEST(TextualFusion, CancellingInputsRaise) {
  const auto enc = FrozenEncoder::create(Modality::Textual, 4, 8, 7);
  const Vec p = sample(8, 4).features;
  EXPECT_THROW(encode_textual_fused(enc, p, -1.0 * p), DegeneracyError);
}

TEST(Occlude, MinimumRatioReplacesTwoOf100) {
  PerturbationSpec spec;
  spec.rho_min = 0.02;
  spec.rho_max = 0.0200001;
  SeededRng rng(1);
  const RawSample x = sample(100, 5);
  for (int i = 0; i < 100; ++i) {
    const auto occ = occlude_with_block(x, spec, rng);
    EXPECT_EQ(occ.block.length, 2u);
    EXPECT_EQ(changed(occ.sample.features, x.features), 2u);
  }
}

TEST(Occlude, MaskedFractionDistribution) {
  const PerturbationSpec spec;
  SeededRng rng(2);
  const RawSample x = sample(100, 6);
  double sum = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const auto occ = occlude_with_block(x, spec, rng);
    const double frac = static_cast<double>(occ.block.length) / 100.0;
    ASSERT_GE(frac, 0.02);
    ASSERT_LE(frac, 0.4);
    sum += frac;
  }
  EXPECT_NEAR(sum / n, 0.21, 0.01);
}

TEST(Occlude, OutsideBlockBitIdentical) {
  const PerturbationSpec spec;
  SeededRng rng(3);
  const RawSample x = sample(37, 7, true);
  for (int i = 0; i < 200; ++i) {
    const auto occ = occlude_with_block(x, spec, rng);
    ASSERT_GE(occ.block.length, 1u);
    ASSERT_LE(occ.block.length, 36u);
    for (std::size_t j = 0; j < 37; ++j) {
      if (j >= occ.block.start && j < occ.block.start + occ.block.length) continue;
      ASSERT_EQ(occ.sample.features[j], x.features[j]);
      ASSERT_EQ((*occ.sample.caption)[j], (*x.caption)[j]);
    }
    EXPECT_EQ(occ.sample.label, x.label);
  }
}

TEST(Occlude, RejectsTinyInputs) {
  SeededRng rng(4);
  EXPECT_THROW(occlude(sample(3, 1), PerturbationSpec{}, rng), DimensionError);
}

TEST(Augment, IdentityWhenDisabled) {
  PerturbationSpec spec;
  spec.jitter_sigma = 0.0;
  spec.flip_prob = 0.0;
  spec.gray_prob = 0.0;
  SeededRng rng(5);
  const RawSample x = sample(20, 8, true);
  for (const auto& v : augment_views(x, spec, rng)) EXPECT_EQ(v, x);
}

TEST(Augment, ReproducibleAndLabelPreserving) {
  const PerturbationSpec spec;
  SeededRng a(6), b(6);
  const RawSample x = sample(30, 9, true);
  const auto va = augment_views(x, spec, a);
  const auto vb = augment_views(x, spec, b);
  ASSERT_EQ(va.size(), 3u);
  EXPECT_EQ(va, vb);
  for (const auto& v : va) {
    EXPECT_EQ(v.label, x.label);
    EXPECT_EQ(v.task, x.task);
    EXPECT_EQ(v.features.size(), x.features.size());
  }
}

TEST(Augment, JitterEnergyMatchesVariance) {
  PerturbationSpec spec;
  spec.jitter_sigma = 0.3;
  spec.flip_prob = 0.0;
  spec.gray_prob = 0.0;
  spec.views = 1;
  SeededRng rng(7);
  const RawSample x = sample(64, 10);
  double s = 0.0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    const Vec d = augment_views(x, spec, rng).front().features - x.features;
    s += dot(d, d);
  }
  EXPECT_NEAR(s / n, 64 * 0.09, 0.05 * 64 * 0.09);
}

TEST(Augment, FlipAndCollapseTouchOnlyOneBlock) {
  PerturbationSpec spec;
  spec.jitter_sigma = 0.0;
  spec.flip_prob = 1.0;
  spec.gray_prob = 0.0;
  spec.views = 1;
  SeededRng rng(8);
  const RawSample x = sample(100, 11);
  const Vec v = augment_views(x, spec, rng).front().features;
  std::size_t flipped = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    if (v[i] == x.features[i]) continue;
    ASSERT_EQ(v[i], -x.features[i]);
    ++flipped;
  }
  EXPECT_GE(flipped, 2u);
  EXPECT_LE(flipped, 10u);
}

TEST(Perturbation, Validation) {
  PerturbationSpec s;
  EXPECT_NO_THROW(s.validate());
  s.rho_min = 0.5;
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  s.views = 0;
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  s.eta_max = 0.1;
  EXPECT_THROW(s.validate(), ConfigError);
}
