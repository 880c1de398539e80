#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace mpd {

struct NodePrediction {
  std::size_t index = 0;  // position in the product's flattened box order
  std::string image_id;
  std::string box_id;
  double score = 0;  // main-product probability, or cosine distance
  int predicted = 0;
  std::optional<int> truth;
};

struct ProductPrediction {
  std::string product_id;
  std::vector<NodePrediction> nodes;
  /// Node positions from most to least likely main product.
  std::vector<std::size_t> ranking;
};

/// Products whose box count exceeds this share the last curve bucket.
inline constexpr int kMaxCurveBucket = 20;

/// All-boxes-correct rate over products.
double product_accuracy(std::span<const ProductPrediction> predictions);

/// Per image all-correct, then per product all-images-correct.
double icfs_product_accuracy(std::span<const ProductPrediction> predictions);

/// (P@1, R@1): top-ranked box positive; R@1 divides the hit by the
/// product's positive count.
std::pair<double, double> precision_recall_at_1(std::span<const ProductPrediction> predictions);

/// Mean over products of average precision along the full ranking.
double mean_ap(std::span<const ProductPrediction> predictions);

struct CurvePoint {
  std::size_t count = 0;
  double accuracy = 0;
  bool operator==(const CurvePoint&) const = default;
};

/// Product accuracy bucketed by min(box count, 20); empty buckets omitted.
std::map<int, CurvePoint> accuracy_by_graph_size(std::span<const ProductPrediction> predictions);

enum class Condition { normal, gallery_only };

std::string to_string(Condition c);

struct MetricsReport {
  std::string model;
  Condition condition = Condition::normal;
  std::size_t products = 0;
  double product_accuracy = 0;
  double p_at_1 = 0;
  double r_at_1 = 0;
  double map = 0;
  std::map<int, CurvePoint> curve;

  bool operator==(const MetricsReport&) const = default;
};

MetricsReport summarize(std::span<const ProductPrediction> predictions, Condition condition, std::string model);

/// Pretty-printed JSON object.
std::string to_json(const MetricsReport& report);

/// "size,count,accuracy" header plus one row per bucket.
std::string curve_csv(const MetricsReport& report);

}  // namespace mpd
