#include "mpd/model/trained_model.hpp"

#include <algorithm>
#include <cctype>

namespace mpd {

std::string TrainedModel::name() const {
  return kind == ModelKind::contrastive ? "contrastive" : to_string(graph.variant);
}

void TrainedModel::check() const {
  if (kind == ModelKind::contrastive) {
    contrastive.validate();
    check_contrastive_params(params, contrastive);
  } else {
    graph.validate();
    check_params(params, graph);
  }
}

TrainedModel make_model(const std::string& name, ModelConfig graph, const ContrastiveConfig& contrastive,
                        std::uint64_t seed) {
  std::string lower = name;
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  TrainedModel m;
  if (lower == "contrastive") {
    m.kind = ModelKind::contrastive;
    m.contrastive = contrastive;
    m.params = init_contrastive_params(m.contrastive, seed);
  } else {
    m.kind = ModelKind::graph;
    graph.variant = parse_variant(lower);
    m.graph = graph;
    m.params = init_params(m.graph, seed);
  }
  return m;
}

}  // namespace mpd
