#pragma once

#include "mpd/core/params.hpp"
#include "mpd/data/records.hpp"
#include "mpd/model/trained_model.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace mpd {

struct TrainConfig {
  int epochs = 25;
  /// Products per batch for graph models, pairs per batch for the baseline.
  int batch_size = 6;
  double learning_rate = 1e-4;
  double title_proj_learning_rate = 1e-4;
  AdamOptions adam;
  std::uint64_t seed = 0;
  /// Train with the title zeroed, as in gallery-only evaluation.
  bool gallery_only = false;
  /// Rescale the gradient to this global norm when larger; 0 disables.
  double clip_norm = 0;
  int threads = 1;
  /// Stop after the first epoch whose validation product accuracy reaches
  /// this value.
  std::optional<double> stop_at_val_accuracy;

  void validate() const;
};

/// 25 epochs of 6 products for graph models, 35 epochs of 32 pairs for the
/// baseline.
TrainConfig default_train_config(ModelKind kind);

struct EpochLog {
  int epoch = 0;  // 1-based
  double mean_loss = 0;
  double val_product_accuracy = 0;
};

/// Epoch with the highest validation product accuracy; the earliest on ties.
int best_epoch(std::span<const EpochLog> log);

struct TrainResult {
  /// Parameters from the epoch with the best validation product accuracy,
  /// the earliest such epoch on ties.
  TrainedModel model;
  int best_epoch = 0;
  std::vector<EpochLog> log;
};

/// Raised when a batch produces a non-finite loss.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int epoch, int batch, const std::string& what)
      : std::runtime_error(what), epoch_(epoch), batch_(batch) {}
  int epoch() const { return epoch_; }
  int batch() const { return batch_; }

 private:
  int epoch_;
  int batch_;
};

/// Seeded permutation of [0, n) cut into consecutive batches; the last batch
/// may be short. Depends only on (n, batch_size, seed, epoch).
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                   int epoch);

using EpochCallback = std::function<void(const EpochLog&)>;

/// Trains from `initial`. Training products must be fully labeled and `val`
/// non-empty. Results are bit-reproducible for a fixed `config.threads`;
/// different thread counts regroup the gradient sum.
TrainResult train(TrainedModel initial, std::span<const ProductRecord> train_set,
                  std::span<const ProductRecord> val_set, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

}  // namespace mpd
