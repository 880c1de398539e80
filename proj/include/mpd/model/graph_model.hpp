#pragma once

#include "mpd/core/grad_check.hpp"
#include "mpd/core/params.hpp"
#include "mpd/core/tensor.hpp"
#include "mpd/data/records.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mpd {

/// Context-module topology.
///   ng   - no message passing, every box decided on its own
///   icfs - one graph per image, adjacency E E^T
///   pcfs - one graph per product, adjacency E E^T
///   pdfs - one graph per product, adjacency D D^T from a separate head
enum class Variant { ng, icfs, pcfs, pdfs };

std::string to_string(Variant v);
Variant parse_variant(const std::string& name);

struct ModelConfig {
  Variant variant = Variant::pdfs;
  int box_dim = kBoxFeatureDim;
  int title_dim = kRawTitleDim;
  int text_dim = 512;    // projected title t
  int hidden_dim = 512;  // first learner layer
  int embed_dim = 512;   // learner output e_n
  int head_dim = 512;    // decoupled head output d_n
  int node_dim = 512;    // feature updater output
  double leaky_slope = 0.01;
  bool learner_relu_both = false;
  /// Feed the raw title (title_dim) to the classifier instead of t.
  bool classifier_raw_title = false;
  bool adjacency_row_softmax = false;
  /// Gallery-only zeroes t after projection instead of the raw title.
  bool zero_title_after_projection = false;

  void validate() const;
  int classifier_title_dim() const { return classifier_raw_title ? title_dim : text_dim; }
  bool operator==(const ModelConfig&) const = default;
};

/// Shrunken dimensions for tests and gradient checks.
ModelConfig toy_config(Variant variant, int box_dim = 4, int title_dim = 6);

struct BoxNode {
  std::string box_id;
  std::string image_id;
  RowVector<double> feature;
  std::optional<int> label;
  std::optional<BoundingBox> bbox;
};

enum class GraphScope { per_product, per_image };

/// One densely connected graph (self-loops included); edges are implicit.
struct GalleryGraph {
  std::string product_id;
  std::vector<BoxNode> nodes;
  std::optional<RowVector<double>> raw_title;
  GraphScope scope = GraphScope::per_product;
  /// Position of each node in the product's flattened box order.
  std::vector<std::size_t> source_index;

  bool labeled() const;
};

/// ICFS yields one graph per image, every other variant one graph holding
/// all boxes of the gallery. Node order follows the record.
std::vector<GalleryGraph> build_graphs(const ProductRecord& product, Variant variant);

/// Xavier-uniform weights, zero biases, exactly the parameters the variant
/// uses.
ParamSet<double> init_params(const ModelConfig& config, std::uint64_t seed);

/// Throws unless `params` holds exactly the variant's parameters with the
/// configured shapes.
void check_params(const ParamSet<double>& params, const ModelConfig& config);

std::vector<std::string> param_names(const ModelConfig& config);

// Individual stages, on plain matrices.

/// 1 x text_dim. An absent title or `gallery_only` projects the zero vector.
Tensor project_title(const std::optional<RowVector<double>>& raw_title, const ParamSet<double>& params,
                     const ModelConfig& config, bool gallery_only);

struct LearnerOutput {
  Tensor embeddings;                // E, N x embed_dim
  std::optional<Tensor> decoupled;  // D, N x head_dim, PDFS only
};

/// Per node: [f_n, t] -> FC -> ReLU -> FC -> e_n, plus the decoupled head on
/// the hidden layer for PDFS.
LearnerOutput graph_learner(const Tensor& features, const Tensor& title, const ParamSet<double>& params,
                            const ModelConfig& config);

/// Gram matrix of the rows of `rows`.
Tensor adjacency(const Tensor& rows);

Tensor message_pass(const Tensor& adjacency, const Tensor& embeddings);

/// leaky_relu(affine(x)).
Tensor feature_update(const Tensor& x, const ParamSet<double>& params, const ModelConfig& config);

struct Classification {
  Tensor logits;  // N x 2
  Tensor probs;   // N x 2; column 1 is the main-product probability
};

/// `title` is t, or the raw title when classifier_raw_title is set.
Classification classify(const Tensor& node_features, const Tensor& title, const ParamSet<double>& params,
                        const ModelConfig& config);

/// Main-product probability per node, in node order.
std::vector<double> forward(const GalleryGraph& graph, const ParamSet<double>& params, const ModelConfig& config,
                            bool gallery_only = false);

/// Logits of every node of every graph, stacked in graph order.
Tensor forward_logits(std::span<const GalleryGraph> graphs, const ParamSet<double>& params,
                      const ModelConfig& config, bool gallery_only = false);

/// Main-product probability per box in the product's flattened order.
std::vector<double> predict_product(const ProductRecord& product, const ParamSet<double>& params,
                                    const ModelConfig& config, bool gallery_only = false);

/// Mean two-class cross entropy over all nodes of all graphs.
double model_loss(std::span<const GalleryGraph> graphs, const ParamSet<double>& params, const ModelConfig& config,
                  bool gallery_only = false);

LossAndGradient<double> loss_and_gradient(std::span<const GalleryGraph> graphs, const ParamSet<double>& params,
                                          const ModelConfig& config, bool gallery_only = false);

}  // namespace mpd
