#include "mpd/eval/evaluate.hpp"

#include "mpd/core/parallel.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

namespace mpd {
namespace {

ProductPrediction skeleton(const ProductRecord& product) {
  ProductPrediction out;
  out.product_id = product.product_id;
  for (const auto& image : product.images) {
    for (const auto& box : image.boxes) {
      NodePrediction node;
      node.index = out.nodes.size();
      node.image_id = image.image_id;
      node.box_id = box.box_id;
      node.truth = box.label;
      out.nodes.push_back(std::move(node));
    }
  }
  return out;
}

}  // namespace

ProductPrediction predict(const TrainedModel& model, const ProductRecord& product, bool gallery_only) {
  ProductPrediction out = skeleton(product);
  if (model.kind == ModelKind::contrastive) {
    ContrastivePrediction c = predict_and_rank(product, model.params, model.contrastive, gallery_only);
    for (auto& node : out.nodes) {
      const auto& d = c.distances[node.index];
      node.score = d ? *d : std::numeric_limits<double>::infinity();
      node.predicted = c.predicted[node.index];
    }
    out.ranking = std::move(c.ranking);
    return out;
  }
  const std::vector<double> probs = predict_product(product, model.params, model.graph, gallery_only);
  for (auto& node : out.nodes) {
    node.score = probs[node.index];
    node.predicted = node.score > 0.5 ? 1 : 0;
  }
  out.ranking.resize(out.nodes.size());
  std::iota(out.ranking.begin(), out.ranking.end(), std::size_t{0});
  std::stable_sort(out.ranking.begin(), out.ranking.end(),
                   [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  return out;
}

std::vector<ProductPrediction> predict_all(const TrainedModel& model, std::span<const ProductRecord> products,
                                           bool gallery_only, int threads) {
  std::vector<ProductPrediction> out(products.size());
  parallel_for(products.size(), threads,
               [&](std::size_t i) { out[i] = predict(model, products[i], gallery_only); });
  return out;
}

MetricsReport evaluate(const TrainedModel& model, std::span<const ProductRecord> products, Condition condition,
                       int threads) {
  const auto predictions = predict_all(model, products, condition == Condition::gallery_only, threads);
  return summarize(predictions, condition, model.name());
}

}  // namespace mpd
