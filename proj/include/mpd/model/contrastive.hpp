#pragma once

#include "mpd/core/grad_check.hpp"
#include "mpd/core/params.hpp"
#include "mpd/core/tensor.hpp"
#include "mpd/data/records.hpp"

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

namespace mpd {

/// Two-branch embedding baseline: boxes and titles are projected into a
/// shared space and compared by cosine distance.
struct ContrastiveConfig {
  int box_dim = kBoxFeatureDim;
  int title_dim = kRawTitleDim;
  int embed_dim = 512;
  double margin = 0.5;
  /// A box is a main product when its distance is strictly below this.
  double eval_threshold = 0.1;

  void validate() const;
  bool operator==(const ContrastiveConfig&) const = default;
};

ParamSet<double> init_contrastive_params(const ContrastiveConfig& config, std::uint64_t seed);
void check_contrastive_params(const ParamSet<double>& params, const ContrastiveConfig& config);

/// (image_branch(f), text_branch(raw_title)), each 1 x embed_dim.
std::pair<Tensor, Tensor> embed_pair(const RowVector<double>& feature, const RowVector<double>& raw_title,
                                     const ParamSet<double>& params, const ContrastiveConfig& config);

/// 1 - cos(a, b). Throws std::domain_error for a zero-norm input.
double cosine_distance(const RowVector<double>& a, const RowVector<double>& b);

/// y d^2 + (1 - y) max(0, margin - d)^2 with d the cosine distance.
double contrastive_loss(const RowVector<double>& image_embedding, const RowVector<double>& text_embedding, int label,
                        double margin);

/// Mean pair loss over rows of `features` / `titles` and its gradient.
LossAndGradient<double> contrastive_loss_and_gradient(const Tensor& features, const Tensor& titles,
                                                      std::vector<int> labels, const ParamSet<double>& params,
                                                      const ContrastiveConfig& config);

struct ContrastivePrediction {
  /// Cosine distance per box in flattened order; empty when undefined
  /// (zero-norm embedding).
  std::vector<std::optional<double>> distances;
  std::vector<int> predicted;
  /// Box positions by ascending distance, undefined distances last, ties by
  /// position.
  std::vector<std::size_t> ranking;
};

/// An absent title, or `gallery_only`, feeds the zero vector to the text
/// branch, which then yields its bias alone.
ContrastivePrediction predict_and_rank(const ProductRecord& product, const ParamSet<double>& params,
                                       const ContrastiveConfig& config, bool gallery_only = false);

}  // namespace mpd
