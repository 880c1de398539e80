#include "mpd/train/training.hpp"

#include "mpd/core/parallel.hpp"
#include "mpd/data/synthetic.hpp"
#include "mpd/eval/evaluate.hpp"
#include "mpd/model/graph_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace mpd {
namespace {

constexpr std::uint64_t kShuffleStream = 0x5348554646ull;

bool is_title_proj(const std::string& name) { return name.rfind("title_proj.", 0) == 0; }

struct BatchStep {
  double loss = 0;
  GradientMap<double> gradient;
};

// The batch is cut into one contiguous chunk per worker; each chunk runs on a
// single tape and the chunk gradients are combined with box-count weights in
// chunk order. The result is reproducible for a fixed thread count.
BatchStep graph_batch(const TrainedModel& model, const std::vector<std::vector<GalleryGraph>>& graphs,
                      const std::vector<std::size_t>& sizes, const std::vector<std::size_t>& batch,
                      const TrainConfig& config) {
  const std::size_t chunks = std::min<std::size_t>(batch.size(), static_cast<std::size_t>(config.threads));
  std::vector<LossAndGradient<double>> parts(chunks);
  std::vector<double> weights(chunks, 0.0);
  double total = 0;
  for (std::size_t idx : batch) total += static_cast<double>(sizes[idx]);
  parallel_for(chunks, config.threads, [&](std::size_t c) {
    std::vector<GalleryGraph> chunk;
    std::size_t boxes = 0;
    for (std::size_t k = batch.size() * c / chunks; k < batch.size() * (c + 1) / chunks; ++k) {
      const auto& g = graphs[batch[k]];
      chunk.insert(chunk.end(), g.begin(), g.end());
      boxes += sizes[batch[k]];
    }
    parts[c] = loss_and_gradient(chunk, model.params, model.graph, config.gallery_only);
    weights[c] = static_cast<double>(boxes) / total;
  });
  if (chunks == 1) return {parts[0].loss, std::move(parts[0].gradient)};
  BatchStep out;
  out.gradient = model.params.zeros_like();
  for (std::size_t c = 0; c < chunks; ++c) {
    out.loss += weights[c] * parts[c].loss;
    for (auto& [name, g] : out.gradient) g += weights[c] * parts[c].gradient.at(name);
  }
  return out;
}

struct PairSet {
  Tensor features;
  Tensor titles;
  std::vector<int> labels;
};

PairSet collect_pairs(std::span<const ProductRecord> products, const ContrastiveConfig& cc, bool gallery_only) {
  std::size_t n = 0;
  for (const auto& p : products) n += p.box_count();
  PairSet s;
  s.features.resize(static_cast<Eigen::Index>(n), cc.box_dim);
  s.titles = Tensor::Zero(static_cast<Eigen::Index>(n), cc.title_dim);
  Eigen::Index row = 0;
  for (const auto& p : products) {
    for (const auto& image : p.images) {
      for (const auto& box : image.boxes) {
        if (box.feature.size() != cc.box_dim) throw DimensionError("training pair: feature dim mismatch");
        s.features.row(row) = box.feature;
        if (p.raw_title && !gallery_only) {
          if (p.raw_title->size() != cc.title_dim) throw DimensionError("training pair: title dim mismatch");
          s.titles.row(row) = *p.raw_title;
        }
        s.labels.push_back(*box.label);
        ++row;
      }
    }
  }
  return s;
}

BatchStep contrastive_batch(const TrainedModel& model, const PairSet& pairs, const std::vector<std::size_t>& batch) {
  Tensor f(static_cast<Eigen::Index>(batch.size()), pairs.features.cols());
  Tensor t(static_cast<Eigen::Index>(batch.size()), pairs.titles.cols());
  std::vector<int> labels;
  labels.reserve(batch.size());
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const auto row = static_cast<Eigen::Index>(batch[k]);
    f.row(static_cast<Eigen::Index>(k)) = pairs.features.row(row);
    t.row(static_cast<Eigen::Index>(k)) = pairs.titles.row(row);
    labels.push_back(pairs.labels[batch[k]]);
  }
  auto lg = contrastive_loss_and_gradient(f, t, std::move(labels), model.params, model.contrastive);
  return {lg.loss, std::move(lg.gradient)};
}

bool gradient_finite(const GradientMap<double>& g) {
  for (const auto& [_, m] : g) {
    if (!all_finite(m)) return false;
  }
  return true;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train config: batch size must be >= 1");
  if (!(learning_rate >= 0) || !(title_proj_learning_rate >= 0)) {
    throw std::invalid_argument("train config: learning rates must be >= 0");
  }
  if (!(clip_norm >= 0)) throw std::invalid_argument("train config: clip norm must be >= 0");
  if (threads < 1) throw std::invalid_argument("train config: threads must be >= 1");
}

int best_epoch(std::span<const EpochLog> log) {
  if (log.empty()) throw std::invalid_argument("best_epoch: empty log");
  const auto best = std::max_element(log.begin(), log.end(), [](const EpochLog& a, const EpochLog& b) {
    return a.val_product_accuracy < b.val_product_accuracy;
  });
  return best->epoch;
}

TrainConfig default_train_config(ModelKind kind) {
  TrainConfig c;
  if (kind == ModelKind::contrastive) {
    c.epochs = 35;
    c.batch_size = 32;
  }
  return c;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                   int epoch) {
  if (batch_size == 0) throw std::invalid_argument("make_batches: batch size must be >= 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Hand-rolled Fisher-Yates: std::shuffle's draw pattern is library-specific.
  std::mt19937_64 rng(derive_seed(derive_seed(seed, kShuffleStream), static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

TrainResult train(TrainedModel model, std::span<const ProductRecord> train_set,
                  std::span<const ProductRecord> val_set, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  model.check();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  if (val_set.empty()) throw std::invalid_argument("train: empty validation set");
  for (const auto& p : train_set) {
    if (!p.labeled()) throw std::invalid_argument("train: product '" + p.product_id + "' is not fully labeled");
  }
  for (const auto& p : val_set) {
    if (!p.labeled()) throw std::invalid_argument("train: validation product '" + p.product_id + "' is not labeled");
  }

  std::vector<std::vector<GalleryGraph>> graphs;
  std::vector<std::size_t> sizes;
  PairSet pairs;
  std::size_t units = 0;
  if (model.kind == ModelKind::graph) {
    for (const auto& p : train_set) {
      graphs.push_back(build_graphs(p, model.graph.variant));
      sizes.push_back(p.box_count());
    }
    units = train_set.size();
  } else {
    pairs = collect_pairs(train_set, model.contrastive, config.gallery_only);
    units = pairs.labels.size();
  }

  const auto lr = [&config](const std::string& name) {
    return is_title_proj(name) ? config.title_proj_learning_rate : config.learning_rate;
  };

  TrainResult result;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto batches = make_batches(units, static_cast<std::size_t>(config.batch_size), config.seed, epoch);
    double loss_sum = 0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      BatchStep step = model.kind == ModelKind::graph ? graph_batch(model, graphs, sizes, batches[b], config)
                                                      : contrastive_batch(model, pairs, batches[b]);
      if (!std::isfinite(step.loss) || !gradient_finite(step.gradient)) {
        const int batch_no = static_cast<int>(b) + 1;
        throw TrainingDiverged(epoch, batch_no,
                               "non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batch_no) + " (try a lower learning rate or --clip-norm)");
      }
      if (config.clip_norm > 0) {
        const double norm = gradient_norm(step.gradient);
        if (norm > config.clip_norm) {
          for (auto& [_, g] : step.gradient) g *= config.clip_norm / norm;
        }
      }
      adam_step<double>(model.params, step.gradient, lr, config.adam);
      loss_sum += step.loss;
    }
    EpochLog entry;
    entry.epoch = epoch;
    entry.mean_loss = loss_sum / static_cast<double>(batches.size());
    entry.val_product_accuracy = evaluate(model, val_set, Condition::normal, config.threads).product_accuracy;
    result.log.push_back(entry);
    if (best_epoch(result.log) == epoch) {
      result.best_epoch = epoch;
      result.model.kind = model.kind;
      result.model.graph = model.graph;
      result.model.contrastive = model.contrastive;
      result.model.params = model.params.values_only();
    }
    if (on_epoch) on_epoch(entry);
    if (config.stop_at_val_accuracy && entry.val_product_accuracy >= *config.stop_at_val_accuracy) break;
  }
  return result;
}

}  // namespace mpd
