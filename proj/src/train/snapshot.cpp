#include "mpd/train/snapshot.hpp"

#include "mpd/data/byte_io.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>

namespace mpd {
namespace {

constexpr char kMagic[6] = {'M', 'P', 'D', 'S', '1', '\0'};

nlohmann::ordered_json header(const TrainedModel& m) {
  nlohmann::ordered_json j;
  j["kind"] = m.kind == ModelKind::contrastive ? "contrastive" : "graph";
  if (m.kind == ModelKind::contrastive) {
    const auto& c = m.contrastive;
    j["box_dim"] = c.box_dim;
    j["title_dim"] = c.title_dim;
    j["embed_dim"] = c.embed_dim;
    j["margin"] = c.margin;
    j["eval_threshold"] = c.eval_threshold;
  } else {
    const auto& c = m.graph;
    j["variant"] = to_string(c.variant);
    j["box_dim"] = c.box_dim;
    j["title_dim"] = c.title_dim;
    j["text_dim"] = c.text_dim;
    j["hidden_dim"] = c.hidden_dim;
    j["embed_dim"] = c.embed_dim;
    j["head_dim"] = c.head_dim;
    j["node_dim"] = c.node_dim;
    j["leaky_slope"] = c.leaky_slope;
    j["learner_relu_both"] = c.learner_relu_both;
    j["classifier_raw_title"] = c.classifier_raw_title;
    j["adjacency_row_softmax"] = c.adjacency_row_softmax;
    j["zero_title_after_projection"] = c.zero_title_after_projection;
  }
  return j;
}

TrainedModel from_header(const nlohmann::json& j) {
  TrainedModel m;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "contrastive") {
    m.kind = ModelKind::contrastive;
    auto& c = m.contrastive;
    c.box_dim = j.at("box_dim").get<int>();
    c.title_dim = j.at("title_dim").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.margin = j.at("margin").get<double>();
    c.eval_threshold = j.at("eval_threshold").get<double>();
  } else if (kind == "graph") {
    m.kind = ModelKind::graph;
    auto& c = m.graph;
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.box_dim = j.at("box_dim").get<int>();
    c.title_dim = j.at("title_dim").get<int>();
    c.text_dim = j.at("text_dim").get<int>();
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.head_dim = j.at("head_dim").get<int>();
    c.node_dim = j.at("node_dim").get<int>();
    c.leaky_slope = j.at("leaky_slope").get<double>();
    c.learner_relu_both = j.at("learner_relu_both").get<bool>();
    c.classifier_raw_title = j.at("classifier_raw_title").get<bool>();
    c.adjacency_row_softmax = j.at("adjacency_row_softmax").get<bool>();
    c.zero_title_after_projection = j.at("zero_title_after_projection").get<bool>();
  } else {
    throw CorruptionError("corrupt snapshot: unknown model kind '" + kind + "'");
  }
  return m;
}

}  // namespace

std::vector<std::uint8_t> encode_snapshot(const TrainedModel& model) {
  model.check();
  std::vector<std::uint8_t> out(kMagic, kMagic + sizeof kMagic);
  bytes::put_id(out, header(model).dump());
  bytes::put_u32(out, static_cast<std::uint32_t>(model.params.size()));
  for (const auto& name : model.params.names()) {
    const Tensor& v = model.params.at(name);
    bytes::put_id(out, name);
    bytes::put_u32(out, static_cast<std::uint32_t>(v.rows()));
    bytes::put_u32(out, static_cast<std::uint32_t>(v.cols()));
    for (Eigen::Index i = 0; i < v.size(); ++i) bytes::put_f64(out, v.data()[i]);
  }
  return out;
}

TrainedModel decode_snapshot(const std::vector<std::uint8_t>& data) {
  if (data.size() < sizeof kMagic || std::memcmp(data.data(), kMagic, sizeof kMagic) != 0) {
    throw CorruptionError("not a model snapshot (bad magic)");
  }
  bytes::Reader r(std::span<const std::uint8_t>(data).subspan(sizeof kMagic));
  TrainedModel m;
  const std::string head = r.id("header");
  try {
    m = from_header(nlohmann::json::parse(head));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("corrupt snapshot header: ") + e.what());
  }
  const std::uint32_t n = r.count(12, "parameter count");
  for (std::uint32_t k = 0; k < n; ++k) {
    std::string name = r.id("parameter name");
    const std::uint32_t rows = r.u32("rows");
    const std::uint32_t cols = r.u32("cols");
    const std::uint64_t size = static_cast<std::uint64_t>(rows) * cols;
    r.need(size * 8, "parameter values");
    Tensor v(rows, cols);
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = r.f64("parameter values");
    if (m.params.contains(name)) throw CorruptionError("corrupt snapshot: duplicate parameter '" + name + "'");
    m.params.add(std::move(name), std::move(v));
  }
  if (r.remaining() != 0) {
    throw CorruptionError("corrupt snapshot: " + std::to_string(r.remaining()) + " trailing bytes");
  }
  m.check();
  return m;
}

void save_snapshot(const TrainedModel& model, const std::filesystem::path& path) {
  const auto data = encode_snapshot(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

TrainedModel load_snapshot(const std::filesystem::path& path) { return decode_snapshot(read_file_bytes(path)); }

std::string describe_model(const TrainedModel& model) { return header(model).dump(2); }

}  // namespace mpd
