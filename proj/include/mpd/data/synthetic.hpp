#pragma once

#include "mpd/data/records.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace mpd {

class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::invalid_argument(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// Shape of a synthetic gallery dataset.
///
/// Each category has a unit-norm prototype. A product draws a main-item
/// latent around its category prototype; main boxes scatter around that
/// latent, and distractor boxes scatter around fresh latents of another
/// category (or the same one, with probability `distractor_rate`). The raw
/// title is a fixed random linear lift of the main latent plus noise.
/// Noise levels are per-coordinate standard deviations.
struct SyntheticConfig {
  int n_products = 100;
  int n_categories = 9;
  int images_min = 1;
  int images_max = 3;
  int boxes_min = 1;
  int boxes_max = 4;
  double sigma_feat = 0.05;
  double sigma_title = 0.05;
  double distractor_rate = 0.3;
  /// Probability that an image shows the main item (exactly one main box).
  double main_box_prob = 0.9;
  std::uint64_t seed = 0;
  int box_dim = kBoxFeatureDim;
  int title_dim = kRawTitleDim;

  /// Throws ConfigError naming the first bad field.
  void validate() const;
  /// Stable digest of every field, used as dataset provenance.
  std::string hash() const;
};

std::vector<ProductRecord> generate_synthetic(const SyntheticConfig& config);

struct SplitFractions {
  double train = 0.75;
  double val = 0.05;
  double test = 0.20;
};

/// Per-split counts: val and test get floor(n * fraction), at least one each
/// when their fraction is positive; train keeps the remainder.
std::array<std::size_t, 3> split_counts(std::size_t n, const SplitFractions& fractions = {});

/// Seeded shuffle followed by the split_counts allocation.
DatasetBundle split(std::vector<ProductRecord> products, std::uint64_t seed, const SplitFractions& fractions = {});

/// Stream seed for a (seed, index) pair; stable across runs and platforms.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace mpd
