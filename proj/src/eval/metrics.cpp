#include "mpd/eval/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <stdexcept>

namespace mpd {
namespace {

void require_nonempty(std::span<const ProductPrediction> predictions, const char* metric) {
  if (predictions.empty()) throw std::invalid_argument(std::string(metric) + ": no products");
}

int truth_of(const NodePrediction& node, const std::string& product_id) {
  if (!node.truth) throw std::invalid_argument("product '" + product_id + "' has an unlabeled box");
  return *node.truth;
}

bool all_correct(const ProductPrediction& p) {
  for (const auto& node : p.nodes) {
    if (node.predicted != truth_of(node, p.product_id)) return false;
  }
  return true;
}

std::size_t positives(const ProductPrediction& p) {
  std::size_t n = 0;
  for (const auto& node : p.nodes) n += truth_of(node, p.product_id) == 1 ? 1 : 0;
  if (n == 0) throw std::invalid_argument("product '" + p.product_id + "' has no positive box");
  return n;
}

const NodePrediction& at_rank(const ProductPrediction& p, std::size_t rank) {
  if (p.ranking.size() != p.nodes.size()) {
    throw std::invalid_argument("product '" + p.product_id + "': ranking does not cover every box");
  }
  return p.nodes.at(p.ranking[rank]);
}

}  // namespace

double product_accuracy(std::span<const ProductPrediction> predictions) {
  require_nonempty(predictions, "product_accuracy");
  std::size_t correct = 0;
  for (const auto& p : predictions) correct += all_correct(p) ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

double icfs_product_accuracy(std::span<const ProductPrediction> predictions) {
  require_nonempty(predictions, "icfs_product_accuracy");
  std::size_t correct = 0;
  for (const auto& p : predictions) {
    std::map<std::string, bool> image_ok;
    for (const auto& node : p.nodes) {
      auto [it, _] = image_ok.emplace(node.image_id, true);
      it->second = it->second && node.predicted == truth_of(node, p.product_id);
    }
    correct += std::all_of(image_ok.begin(), image_ok.end(), [](const auto& kv) { return kv.second; }) ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(predictions.size());
}

std::pair<double, double> precision_recall_at_1(std::span<const ProductPrediction> predictions) {
  require_nonempty(predictions, "precision_recall_at_1");
  double precision = 0;
  double recall = 0;
  for (const auto& p : predictions) {
    const std::size_t n_pos = positives(p);
    const double hit = truth_of(at_rank(p, 0), p.product_id) == 1 ? 1.0 : 0.0;
    precision += hit;
    recall += hit / static_cast<double>(n_pos);
  }
  const double n = static_cast<double>(predictions.size());
  return {precision / n, recall / n};
}

double mean_ap(std::span<const ProductPrediction> predictions) {
  require_nonempty(predictions, "mean_ap");
  double total = 0;
  for (const auto& p : predictions) {
    const std::size_t n_pos = positives(p);
    std::size_t hits = 0;
    double sum = 0;
    for (std::size_t k = 0; k < p.nodes.size(); ++k) {
      if (truth_of(at_rank(p, k), p.product_id) == 1) {
        ++hits;
        sum += static_cast<double>(hits) / static_cast<double>(k + 1);
      }
    }
    total += sum / static_cast<double>(n_pos);
  }
  return total / static_cast<double>(predictions.size());
}

std::map<int, CurvePoint> accuracy_by_graph_size(std::span<const ProductPrediction> predictions) {
  std::map<int, std::pair<std::size_t, std::size_t>> tally;  // bucket -> (count, correct)
  for (const auto& p : predictions) {
    const int bucket = static_cast<int>(std::min<std::size_t>(p.nodes.size(), kMaxCurveBucket));
    auto& [count, correct] = tally[bucket];
    ++count;
    correct += all_correct(p) ? 1 : 0;
  }
  std::map<int, CurvePoint> curve;
  for (const auto& [bucket, t] : tally) {
    curve[bucket] = CurvePoint{t.first, static_cast<double>(t.second) / static_cast<double>(t.first)};
  }
  return curve;
}

std::string to_string(Condition c) { return c == Condition::normal ? "normal" : "gallery_only"; }

MetricsReport summarize(std::span<const ProductPrediction> predictions, Condition condition, std::string model) {
  MetricsReport r;
  r.model = std::move(model);
  r.condition = condition;
  r.products = predictions.size();
  r.product_accuracy = product_accuracy(predictions);
  std::tie(r.p_at_1, r.r_at_1) = precision_recall_at_1(predictions);
  r.map = mean_ap(predictions);
  r.curve = accuracy_by_graph_size(predictions);
  return r;
}

std::string to_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["model"] = report.model;
  j["condition"] = to_string(report.condition);
  j["products"] = report.products;
  j["product_accuracy"] = report.product_accuracy;
  j["p_at_1"] = report.p_at_1;
  j["r_at_1"] = report.r_at_1;
  j["map"] = report.map;
  nlohmann::ordered_json curve = nlohmann::ordered_json::array();
  for (const auto& [size, point] : report.curve) {
    curve.push_back({{"size", size}, {"count", point.count}, {"accuracy", point.accuracy}});
  }
  j["curve"] = std::move(curve);
  return j.dump(2);
}

std::string curve_csv(const MetricsReport& report) {
  std::string out = "size,count,accuracy\n";
  char acc[32];
  for (const auto& [size, point] : report.curve) {
    const auto end = std::to_chars(acc, acc + sizeof acc, point.accuracy).ptr;
    out += std::to_string(size) + "," + std::to_string(point.count) + "," + std::string(acc, end) + "\n";
  }
  return out;
}

}  // namespace mpd
