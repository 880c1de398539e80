#include "mpd/model/graph_model.hpp"

#include "mpd/core/tape.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>
#include <stdexcept>

namespace mpd {
namespace {

using Var = Tape<double>::Var;

const std::string kTitleW = "title_proj.weight";
const std::string kTitleB = "title_proj.bias";
const std::string kLearner1W = "learner_l1.weight";
const std::string kLearner1B = "learner_l1.bias";
const std::string kLearner2W = "learner_l2.weight";
const std::string kLearner2B = "learner_l2.bias";
const std::string kHeadW = "decoupled_head.weight";
const std::string kHeadB = "decoupled_head.bias";
const std::string kUpdaterW = "updater.weight";
const std::string kUpdaterB = "updater.bias";
const std::string kClassifierW = "classifier.weight";
const std::string kClassifierB = "classifier.bias";

struct Shape {
  int rows;
  int cols;
};

std::vector<std::pair<std::string, Shape>> layout(const ModelConfig& c) {
  std::vector<std::pair<std::string, Shape>> out = {
      {kTitleW, {c.title_dim, c.text_dim}},
      {kTitleB, {1, c.text_dim}},
      {kLearner1W, {c.box_dim + c.text_dim, c.hidden_dim}},
      {kLearner1B, {1, c.hidden_dim}},
      {kLearner2W, {c.hidden_dim, c.embed_dim}},
      {kLearner2B, {1, c.embed_dim}},
      {kUpdaterW, {c.embed_dim, c.node_dim}},
      {kUpdaterB, {1, c.node_dim}},
      {kClassifierW, {c.classifier_title_dim() + c.node_dim, 2}},
      {kClassifierB, {1, 2}},
  };
  if (c.variant == Variant::pdfs) {
    out.push_back({kHeadW, {c.hidden_dim, c.head_dim}});
    out.push_back({kHeadB, {1, c.head_dim}});
  }
  return out;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// Every graph of a batch stacked into shared matrices.
struct StackedBatch {
  Tensor features;                    // nodes x box_dim
  Tensor raw_titles;                  // graphs x title_dim, zero rows where zeroed
  std::vector<bool> title_zeroed;     // per graph
  std::vector<int> graph_of_node;
  std::vector<Eigen::Index> offsets;  // graphs + 1
  std::vector<int> labels;            // empty unless every node is labeled
};

StackedBatch stack(std::span<const GalleryGraph> graphs, const ModelConfig& config, bool gallery_only) {
  if (graphs.empty()) throw std::invalid_argument("graph model: empty batch");
  StackedBatch b;
  Eigen::Index total = 0;
  b.offsets.push_back(0);
  for (const auto& g : graphs) {
    if (g.nodes.empty()) throw std::invalid_argument("graph model: graph '" + g.product_id + "' has no nodes");
    total += static_cast<Eigen::Index>(g.nodes.size());
    b.offsets.push_back(total);
  }
  b.features.resize(total, config.box_dim);
  b.raw_titles = Tensor::Zero(static_cast<Eigen::Index>(graphs.size()), config.title_dim);
  b.graph_of_node.reserve(static_cast<std::size_t>(total));
  bool all_labeled = true;
  Eigen::Index row = 0;
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    const GalleryGraph& g = graphs[gi];
    const bool zeroed = gallery_only || !g.raw_title;
    b.title_zeroed.push_back(zeroed);
    if (!zeroed) {
      if (g.raw_title->size() != config.title_dim) {
        throw DimensionError("graph model: title of '" + g.product_id + "' has " +
                             std::to_string(g.raw_title->size()) + " values, expected " +
                             std::to_string(config.title_dim));
      }
      b.raw_titles.row(static_cast<Eigen::Index>(gi)) = *g.raw_title;
    }
    for (const auto& node : g.nodes) {
      if (node.feature.size() != config.box_dim) {
        throw DimensionError("graph model: box '" + node.box_id + "' feature has " +
                             std::to_string(node.feature.size()) + " values, expected " +
                             std::to_string(config.box_dim));
      }
      b.features.row(row++) = node.feature;
      b.graph_of_node.push_back(static_cast<int>(gi));
      if (node.label) {
        b.labels.push_back(*node.label);
      } else {
        all_labeled = false;
      }
    }
  }
  if (!all_labeled) b.labels.clear();
  return b;
}

/// Records the whole model on a tape and returns the logits node.
class Network {
 public:
  Network(Tape<double>& tape, const ParamSet<double>& params, const ModelConfig& config)
      : tape_(tape), params_(params), config_(config) {}

  Var logits(const StackedBatch& b) {
    const Var raw = tape_.constant(b.raw_titles);
    Var title = affine(raw, "title_proj");
    if (config_.zero_title_after_projection) {
      Tensor mask = Tensor::Ones(b.raw_titles.rows(), config_.text_dim);
      bool any = false;
      for (std::size_t g = 0; g < b.title_zeroed.size(); ++g) {
        if (b.title_zeroed[g]) {
          mask.row(static_cast<Eigen::Index>(g)).setZero();
          any = true;
        }
      }
      if (any) title = tape_.mul(title, tape_.constant(std::move(mask)));
    }

    // [f_n, t] W1 = f_n W1[:box] + t W1[box:]; the title half is computed once
    // per graph and broadcast to its nodes.
    const Var features = tape_.constant(b.features);
    const Var w1 = param(kLearner1W);
    const Var box_part = tape_.matmul(features, tape_.slice_rows(w1, 0, config_.box_dim));
    const Var title_part = tape_.matmul(title, tape_.slice_rows(w1, config_.box_dim, config_.text_dim));
    const Var hidden =
        tape_.relu(tape_.add_bias(tape_.add(box_part, tape_.gather_rows(title_part, b.graph_of_node)),
                                  param(kLearner1B)));
    Var embeddings = affine(hidden, "learner_l2");
    if (config_.learner_relu_both) embeddings = tape_.relu(embeddings);

    Var propagated = embeddings;
    if (config_.variant != Variant::ng) {
      const bool decoupled = config_.variant == Variant::pdfs;
      const Var affinity_rows = decoupled ? affine(hidden, "decoupled_head") : embeddings;
      std::vector<Var> blocks;
      blocks.reserve(b.offsets.size() - 1);
      for (std::size_t g = 0; g + 1 < b.offsets.size(); ++g) {
        const Eigen::Index start = b.offsets[g];
        const Eigen::Index count = b.offsets[g + 1] - start;
        const Var e = tape_.slice_rows(embeddings, start, count);
        const Var s = decoupled ? tape_.slice_rows(affinity_rows, start, count) : e;
        Var a = tape_.matmul_nt(s, s);
        if (config_.adjacency_row_softmax) a = tape_.row_softmax(a);
        blocks.push_back(tape_.matmul(a, e));
      }
      propagated = blocks.size() == 1 ? blocks.front() : tape_.vstack(blocks);
    }

    const Var nodes = tape_.leaky_relu(affine(propagated, "updater"), config_.leaky_slope);

    const Var wc = param(kClassifierW);
    const int title_rows = config_.classifier_title_dim();
    const Var classifier_title = config_.classifier_raw_title ? raw : title;
    const Var from_title = tape_.matmul(classifier_title, tape_.slice_rows(wc, 0, title_rows));
    const Var from_nodes = tape_.matmul(nodes, tape_.slice_rows(wc, title_rows, config_.node_dim));
    return tape_.add_bias(tape_.add(from_nodes, tape_.gather_rows(from_title, b.graph_of_node)),
                          param(kClassifierB));
  }

 private:
  Var param(const std::string& name) { return tape_.parameter(params_, name); }
  Var affine(Var x, const std::string& layer) {
    return tape_.affine(x, param(layer + ".weight"), param(layer + ".bias"));
  }

  Tape<double>& tape_;
  const ParamSet<double>& params_;
  const ModelConfig& config_;
};

Tensor title_rows(const ParamSet<double>& params, const std::string& name, int start, int count) {
  return params.at(name).middleRows(start, count);
}

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::ng: return "ng";
    case Variant::icfs: return "icfs";
    case Variant::pcfs: return "pcfs";
    case Variant::pdfs: return "pdfs";
  }
  return "?";
}

Variant parse_variant(const std::string& name) {
  std::string lower;
  for (char c : name) lower.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (lower == "ng") return Variant::ng;
  if (lower == "icfs") return Variant::icfs;
  if (lower == "pcfs") return Variant::pcfs;
  if (lower == "pdfs") return Variant::pdfs;
  throw std::invalid_argument("unknown variant '" + name + "' (ng, icfs, pcfs, pdfs)");
}

void ModelConfig::validate() const {
  const std::pair<const char*, int> dims[] = {{"box_dim", box_dim},       {"title_dim", title_dim},
                                              {"text_dim", text_dim},     {"hidden_dim", hidden_dim},
                                              {"embed_dim", embed_dim},   {"head_dim", head_dim},
                                              {"node_dim", node_dim}};
  for (const auto& [name, value] : dims) {
    if (value < 1) throw std::invalid_argument(std::string("model config: ") + name + " must be >= 1");
  }
  if (!(leaky_slope > 0 && leaky_slope < 1)) throw std::invalid_argument("model config: leaky_slope must lie in (0, 1)");
}

ModelConfig toy_config(Variant variant, int box_dim, int title_dim) {
  ModelConfig c;
  c.variant = variant;
  c.box_dim = box_dim;
  c.title_dim = title_dim;
  c.text_dim = 3;
  c.hidden_dim = 5;
  c.embed_dim = 4;
  c.head_dim = 3;
  c.node_dim = 4;
  return c;
}

bool GalleryGraph::labeled() const {
  for (const auto& n : nodes) {
    if (!n.label) return false;
  }
  return true;
}

std::vector<GalleryGraph> build_graphs(const ProductRecord& product, Variant variant) {
  if (product.box_count() == 0) {
    throw std::invalid_argument("build_graphs: product '" + product.product_id + "' has no boxes");
  }
  const auto node = [](const ImageRecord& image, const BoxRecord& box) {
    return BoxNode{box.box_id, image.image_id, box.feature, box.label, box.bbox};
  };
  std::vector<GalleryGraph> graphs;
  std::size_t position = 0;
  if (variant == Variant::icfs) {
    for (const auto& image : product.images) {
      if (image.boxes.empty()) continue;
      GalleryGraph g{product.product_id, {}, product.raw_title, GraphScope::per_image, {}};
      for (const auto& box : image.boxes) {
        g.nodes.push_back(node(image, box));
        g.source_index.push_back(position++);
      }
      graphs.push_back(std::move(g));
    }
    return graphs;
  }
  GalleryGraph g{product.product_id, {}, product.raw_title, GraphScope::per_product, {}};
  for (const auto& image : product.images) {
    for (const auto& box : image.boxes) {
      g.nodes.push_back(node(image, box));
      g.source_index.push_back(position++);
    }
  }
  graphs.push_back(std::move(g));
  return graphs;
}

std::vector<std::string> param_names(const ModelConfig& config) {
  std::vector<std::string> names;
  for (const auto& [name, _] : layout(config)) names.push_back(name);
  std::sort(names.begin(), names.end());
  return names;
}

ParamSet<double> init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  auto entries = layout(config);
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::mt19937_64 rng(seed);
  ParamSet<double> params;
  for (const auto& [name, shape] : entries) {
    Tensor value = Tensor::Zero(shape.rows, shape.cols);
    if (ends_with(name, ".weight")) {
      const double bound = std::sqrt(6.0 / static_cast<double>(shape.rows + shape.cols));
      std::uniform_real_distribution<double> uniform(-bound, bound);
      for (Eigen::Index i = 0; i < value.size(); ++i) value.data()[i] = uniform(rng);
    }
    params.add(name, std::move(value));
  }
  return params;
}

void check_params(const ParamSet<double>& params, const ModelConfig& config) {
  const auto entries = layout(config);
  if (params.size() != entries.size()) {
    throw std::invalid_argument("parameters do not match variant " + to_string(config.variant) + ": expected " +
                                std::to_string(entries.size()) + " tensors, found " +
                                std::to_string(params.size()));
  }
  for (const auto& [name, shape] : entries) {
    if (!params.contains(name)) {
      throw std::invalid_argument("parameters do not match variant " + to_string(config.variant) + ": missing '" +
                                  name + "'");
    }
    const Tensor& v = params.at(name);
    if (v.rows() != shape.rows || v.cols() != shape.cols) {
      throw DimensionError("parameter '" + name + "' is " + shape_string(v) + ", expected [" +
                           std::to_string(shape.rows) + "x" + std::to_string(shape.cols) + "]");
    }
  }
}

Tensor project_title(const std::optional<RowVector<double>>& raw_title, const ParamSet<double>& params,
                     const ModelConfig& config, bool gallery_only) {
  Tensor raw = Tensor::Zero(1, config.title_dim);
  const bool zeroed = gallery_only || !raw_title;
  if (!zeroed) {
    if (raw_title->size() != config.title_dim) {
      throw DimensionError("project_title: title has " + std::to_string(raw_title->size()) + " values, expected " +
                           std::to_string(config.title_dim));
    }
    raw.row(0) = *raw_title;
  }
  if (zeroed && config.zero_title_after_projection) return Tensor::Zero(1, config.text_dim);
  return affine<double>(raw, params.at(kTitleW), params.at(kTitleB));
}

LearnerOutput graph_learner(const Tensor& features, const Tensor& title, const ParamSet<double>& params,
                            const ModelConfig& config) {
  if (features.cols() != config.box_dim) {
    throw DimensionError("graph_learner: features " + shape_string(features) + ", expected " +
                         std::to_string(config.box_dim) + " columns");
  }
  if (title.rows() != 1 || title.cols() != config.text_dim) {
    throw DimensionError("graph_learner: title " + shape_string(title) + ", expected [1x" +
                         std::to_string(config.text_dim) + "]");
  }
  const Tensor box_part = matmul<double>(features, title_rows(params, kLearner1W, 0, config.box_dim));
  const Tensor title_part = matmul<double>(title, title_rows(params, kLearner1W, config.box_dim, config.text_dim));
  Tensor hidden = box_part;
  hidden.rowwise() += title_part.row(0);
  hidden.rowwise() += params.at(kLearner1B).row(0);
  hidden = activation<double>(hidden, Activation::relu());

  LearnerOutput out;
  out.embeddings = affine<double>(hidden, params.at(kLearner2W), params.at(kLearner2B));
  if (config.learner_relu_both) out.embeddings = activation<double>(out.embeddings, Activation::relu());
  if (config.variant == Variant::pdfs) {
    out.decoupled = affine<double>(hidden, params.at(kHeadW), params.at(kHeadB));
  }
  return out;
}

Tensor adjacency(const Tensor& rows) { return matmul_nt<double>(rows, rows); }

Tensor message_pass(const Tensor& adjacency, const Tensor& embeddings) {
  if (adjacency.rows() != adjacency.cols() || adjacency.cols() != embeddings.rows()) {
    throw DimensionError("message_pass: adjacency " + shape_string(adjacency) + " vs embeddings " +
                         shape_string(embeddings));
  }
  return matmul<double>(adjacency, embeddings);
}

Tensor feature_update(const Tensor& x, const ParamSet<double>& params, const ModelConfig& config) {
  return activation<double>(affine<double>(x, params.at(kUpdaterW), params.at(kUpdaterB)),
                            Activation::leaky_relu(config.leaky_slope));
}

Classification classify(const Tensor& node_features, const Tensor& title, const ParamSet<double>& params,
                        const ModelConfig& config) {
  const int title_dim = config.classifier_title_dim();
  if (title.rows() != 1 || title.cols() != title_dim) {
    throw DimensionError("classify: title " + shape_string(title) + ", expected [1x" + std::to_string(title_dim) +
                         "]");
  }
  if (node_features.cols() != config.node_dim) {
    throw DimensionError("classify: node features " + shape_string(node_features) + ", expected " +
                         std::to_string(config.node_dim) + " columns");
  }
  const Tensor from_title = matmul<double>(title, title_rows(params, kClassifierW, 0, title_dim));
  Classification out;
  out.logits = matmul<double>(node_features, title_rows(params, kClassifierW, title_dim, config.node_dim));
  out.logits.rowwise() += from_title.row(0);
  out.logits.rowwise() += params.at(kClassifierB).row(0);
  out.probs = softmax_rows<double>(out.logits);
  return out;
}

Tensor forward_logits(std::span<const GalleryGraph> graphs, const ParamSet<double>& params,
                      const ModelConfig& config, bool gallery_only) {
  const StackedBatch batch = stack(graphs, config, gallery_only);
  Tape<double> tape;
  Network net(tape, params, config);
  return tape.value(net.logits(batch));
}

namespace {

Tensor batch_logits(const StackedBatch& batch, const ParamSet<double>& params, const ModelConfig& config) {
  Tape<double> tape;
  Network net(tape, params, config);
  return tape.value(net.logits(batch));
}

}  // namespace

std::vector<double> forward(const GalleryGraph& graph, const ParamSet<double>& params, const ModelConfig& config,
                            bool gallery_only) {
  const Tensor probs = softmax_rows<double>(forward_logits(std::span(&graph, 1), params, config, gallery_only));
  std::vector<double> out(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index r = 0; r < probs.rows(); ++r) out[static_cast<std::size_t>(r)] = probs(r, 1);
  return out;
}

std::vector<double> predict_product(const ProductRecord& product, const ParamSet<double>& params,
                                    const ModelConfig& config, bool gallery_only) {
  const std::vector<GalleryGraph> graphs = build_graphs(product, config.variant);
  const Tensor probs = softmax_rows<double>(forward_logits(graphs, params, config, gallery_only));
  std::vector<double> out(product.box_count());
  Eigen::Index row = 0;
  for (const auto& g : graphs) {
    for (std::size_t source : g.source_index) out[source] = probs(row++, 1);
  }
  return out;
}

double model_loss(std::span<const GalleryGraph> graphs, const ParamSet<double>& params, const ModelConfig& config,
                  bool gallery_only) {
  const StackedBatch batch = stack(graphs, config, gallery_only);
  if (batch.labels.empty()) throw std::invalid_argument("model_loss: every node needs a label");
  return two_class_ce<double>(batch_logits(batch, params, config), batch.labels);
}

LossAndGradient<double> loss_and_gradient(std::span<const GalleryGraph> graphs, const ParamSet<double>& params,
                                          const ModelConfig& config, bool gallery_only) {
  StackedBatch batch = stack(graphs, config, gallery_only);
  if (batch.labels.empty()) throw std::invalid_argument("loss_and_gradient: every node needs a label");
  Tape<double> tape;
  Network net(tape, params, config);
  const Var loss = tape.two_class_ce(net.logits(batch), std::move(batch.labels));
  LossAndGradient<double> out;
  out.loss = tape.scalar(loss);
  out.gradient = tape.backward(loss, params);
  return out;
}

}  // namespace mpd
