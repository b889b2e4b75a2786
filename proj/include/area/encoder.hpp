#pragma once

// Frozen linear encoders standing in for a contrastive image/text backbone,
// caption fusion, and the input-space perturbations used by the
// regularizers: block occlusion and augmented views.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "area/digest.hpp"
#include "area/errors.hpp"
#include "area/hypersphere.hpp"
#include "area/linalg.hpp"

namespace area {

struct RawSample {
  Vec features;
  std::uint32_t label = 0;
  std::uint32_t task = 0;
  std::optional<Vec> caption;

  bool operator==(const RawSample&) const = default;
};

enum class Modality : std::uint8_t { Visual = 0, Textual = 1 };

// Mixing weight of the independent component in the textual projection.
// Both encoders share a common random map so that matching text and image
// content land near each other, as in a jointly trained embedding space;
// the independent part models the residual modality gap.
inline constexpr double kModalityGap = 0.3;

class FrozenEncoder {
 public:
  FrozenEncoder() = default;
  FrozenEncoder(Modality modality, Mat projection) : modality_(modality), proj_(std::move(projection)) {
    if (!all_finite(proj_)) throw DomainError("FrozenEncoder: non-finite projection");
  }

  // Visual encoder: entries i.i.d. N(0, 1/d_in). The textual encoder of the
  // same seed is sqrt(1 - g^2) * visual + g * independent, g = kModalityGap,
  // which keeps the N(0, 1/d_in) entry law.
  static FrozenEncoder create(Modality modality, std::size_t d, std::size_t d_in, std::uint64_t seed) {
    if (d == 0 || d_in == 0) throw DimensionError("FrozenEncoder: empty dimension");
    const double sd = 1.0 / std::sqrt(static_cast<double>(d_in));
    SeededRng shared(derive_seed(seed, 0x5151));
    Mat p(d, d_in);
    for (double& x : p.values()) x = sd * shared.normal();
    if (modality == Modality::Textual) {
      SeededRng own(derive_seed(seed, 0x7e47));
      const double keep = std::sqrt(1.0 - kModalityGap * kModalityGap);
      for (double& x : p.values()) x = keep * x + kModalityGap * sd * own.normal();
    }
    return FrozenEncoder(modality, std::move(p));
  }

  Modality modality() const noexcept { return modality_; }
  std::size_t out_dim() const noexcept { return proj_.rows(); }
  std::size_t in_dim() const noexcept { return proj_.cols(); }
  const Mat& projection() const noexcept { return proj_; }

  UnitVector encode(const Vec& x) const {
    if (x.size() != in_dim()) {
      throw DimensionError("encode: input length " + std::to_string(x.size()) + ", encoder expects " +
                           std::to_string(in_dim()));
    }
    Vec y = proj_ * x;
    if (norm(y) == 0.0) throw DegeneracyError("encode: projected vector is zero");
    return UnitVector(std::move(y));
  }

  std::uint64_t digest() const {
    Fnv1a64 h;
    h.byte(static_cast<std::uint8_t>(modality_));
    h.u64(proj_.rows());
    h.u64(proj_.cols());
    h.mat(proj_);
    return h.value();
  }

  bool operator==(const FrozenEncoder&) const = default;

 private:
  Modality modality_ = Modality::Visual;
  Mat proj_;
};

inline UnitVector encode_visual(const FrozenEncoder& enc, const RawSample& x) {
  if (enc.modality() != Modality::Visual) throw DomainError("encode_visual: encoder is not visual");
  return enc.encode(x.features);
}

// Norm(g_t(prompt) + g_t(caption)); prompt only when no caption is given.
inline UnitVector encode_textual_fused(const FrozenEncoder& enc, const Vec& class_prompt,
                                       const std::optional<Vec>& caption) {
  if (enc.modality() != Modality::Textual) throw DomainError("encode_textual_fused: encoder is not textual");
  const UnitVector prompt = enc.encode(class_prompt);
  if (!caption) return prompt;
  Vec sum = prompt.vec() + enc.encode(*caption).vec();
  if (norm(sum) < 1e-12) throw DegeneracyError("encode_textual_fused: prompt and caption cancel");
  return UnitVector(std::move(sum));
}

struct PerturbationSpec {
  double rho_min = 0.02;
  double rho_max = 0.4;
  double eta_min = 0.3;  // aspect bounds; unused for 1-D inputs
  double eta_max = 3.3;
  std::size_t views = 3;
  double jitter_sigma = 0.05;
  double flip_prob = 0.5;
  double gray_prob = 0.2;
  // Block length of the flip / collapse transforms, as a fraction of d_in.
  double block_min = 0.02;
  double block_max = 0.1;

  void validate() const {
    if (!(rho_min > 0.0 && rho_min < rho_max && rho_max < 1.0))
      throw ConfigError("perturbation: need 0 < rho_min < rho_max < 1");
    if (!(eta_min > 0.0 && eta_min < eta_max)) throw ConfigError("perturbation: need 0 < eta_min < eta_max");
    if (views == 0) throw ConfigError("perturbation: need at least one view");
    if (!(jitter_sigma >= 0.0)) throw ConfigError("perturbation: jitter_sigma must be >= 0");
    if (!(flip_prob >= 0.0 && flip_prob <= 1.0 && gray_prob >= 0.0 && gray_prob <= 1.0))
      throw ConfigError("perturbation: probabilities must lie in [0, 1]");
    if (!(block_min > 0.0 && block_min <= block_max && block_max < 1.0))
      throw ConfigError("perturbation: need 0 < block_min <= block_max < 1");
  }
};

struct Block {
  std::size_t start = 0;
  std::size_t length = 0;
};

// Contiguous block of round(ratio * n) coordinates, clamped to [1, n-1],
// placed uniformly at random.
inline Block random_block(std::size_t n, double ratio, SeededRng& rng) {
  auto len = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  len = std::clamp<std::size_t>(len, 1, n - 1);
  const std::size_t start = rng.uniform_index(n - len + 1);
  return {start, len};
}

namespace detail {

inline void fill_noise(Vec& v, Block b, SeededRng& rng) {
  for (std::size_t i = b.start; i < b.start + b.length; ++i) v[i] = rng.normal();
}

}  // namespace detail

struct Occlusion {
  RawSample sample;
  Block block;
};

// Replace one contiguous block with i.i.d. standard normal noise. The caption
// (when present) gets the same block with independent noise.
inline Occlusion occlude_with_block(const RawSample& x, const PerturbationSpec& spec, SeededRng& rng) {
  const std::size_t n = x.features.size();
  if (n < 4) throw DimensionError("occlude: need d_in >= 4");
  const double rho = rng.uniform(spec.rho_min, spec.rho_max);
  const Block b = random_block(n, rho, rng);
  Occlusion out{x, b};
  detail::fill_noise(out.sample.features, b, rng);
  if (out.sample.caption) detail::fill_noise(*out.sample.caption, b, rng);
  return out;
}

inline RawSample occlude(const RawSample& x, const PerturbationSpec& spec, SeededRng& rng) {
  return occlude_with_block(x, spec, rng).sample;
}

namespace detail {

inline void augment_in_place(Vec& v, const PerturbationSpec& spec, SeededRng& rng) {
  const std::size_t n = v.size();
  if (spec.jitter_sigma > 0.0)
    for (double& x : v) x += spec.jitter_sigma * rng.normal();
  if (n >= 2 && rng.bernoulli(spec.flip_prob)) {
    const Block b = random_block(n, rng.uniform(spec.block_min, spec.block_max), rng);
    for (std::size_t i = b.start; i < b.start + b.length; ++i) v[i] = -v[i];
  }
  if (n >= 2 && rng.bernoulli(spec.gray_prob)) {
    const Block b = random_block(n, rng.uniform(spec.block_min, spec.block_max), rng);
    double m = 0.0;
    for (std::size_t i = b.start; i < b.start + b.length; ++i) m += v[i];
    m /= static_cast<double>(b.length);
    for (std::size_t i = b.start; i < b.start + b.length; ++i) v[i] = m;
  }
}

}  // namespace detail

// M label-preserving views. Each applies, in order: Gaussian jitter, a sign
// flip of a random block with probability flip_prob, and collapse of a random
// block to its mean with probability gray_prob. Captions get independent
// draws of the same pipeline.
inline std::vector<RawSample> augment_views(const RawSample& x, const PerturbationSpec& spec, SeededRng& rng) {
  if (spec.views == 0) throw DomainError("augment_views: M must be >= 1");
  std::vector<RawSample> views(spec.views, x);
  for (auto& v : views) {
    detail::augment_in_place(v.features, spec, rng);
    if (v.caption) detail::augment_in_place(*v.caption, spec, rng);
  }
  return views;
}

}  // namespace area
