#pragma once

#include "mpd/core/params.hpp"
#include "mpd/model/contrastive.hpp"
#include "mpd/model/graph_model.hpp"

#include <string>

namespace mpd {

enum class ModelKind { graph, contrastive };

/// A model family plus its configuration and parameters; `graph` is read
/// only for ModelKind::graph, `contrastive` only for the baseline.
struct TrainedModel {
  ModelKind kind = ModelKind::graph;
  ModelConfig graph;
  ContrastiveConfig contrastive;
  ParamSet<double> params;

  /// "ng", "icfs", "pcfs", "pdfs" or "contrastive".
  std::string name() const;
  void check() const;
};

/// Fresh parameters for `name` (a variant or "contrastive"). The variant
/// field of `graph` is replaced by the one named.
TrainedModel make_model(const std::string& name, ModelConfig graph, const ContrastiveConfig& contrastive,
                        std::uint64_t seed);

}  // namespace mpd
