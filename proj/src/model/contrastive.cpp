#include "mpd/model/contrastive.hpp"

#include "mpd/core/tape.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace mpd {
namespace {

const std::string kImageW = "image_branch.weight";
const std::string kImageB = "image_branch.bias";
const std::string kTextW = "text_branch.weight";
const std::string kTextB = "text_branch.bias";

}  // namespace

void ContrastiveConfig::validate() const {
  if (box_dim < 1 || title_dim < 1 || embed_dim < 1) throw std::invalid_argument("contrastive config: dims must be >= 1");
  if (!(margin > 0)) throw std::invalid_argument("contrastive config: margin must be > 0");
  if (!(eval_threshold > 0 && eval_threshold < 2)) {
    throw std::invalid_argument("contrastive config: eval_threshold must lie in (0, 2)");
  }
}

ParamSet<double> init_contrastive_params(const ContrastiveConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const auto xavier = [&rng](int rows, int cols) {
    const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> uniform(-bound, bound);
    Tensor w(rows, cols);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = uniform(rng);
    return w;
  };
  ParamSet<double> params;
  params.add(kImageB, Tensor::Zero(1, config.embed_dim));
  params.add(kImageW, xavier(config.box_dim, config.embed_dim));
  params.add(kTextB, Tensor::Zero(1, config.embed_dim));
  params.add(kTextW, xavier(config.title_dim, config.embed_dim));
  return params;
}

void check_contrastive_params(const ParamSet<double>& params, const ContrastiveConfig& config) {
  const std::pair<const std::string*, std::pair<int, int>> expected[] = {
      {&kImageW, {config.box_dim, config.embed_dim}},
      {&kImageB, {1, config.embed_dim}},
      {&kTextW, {config.title_dim, config.embed_dim}},
      {&kTextB, {1, config.embed_dim}},
  };
  if (params.size() != 4) throw std::invalid_argument("parameters do not match the contrastive model");
  for (const auto& [name, shape] : expected) {
    if (!params.contains(*name)) throw std::invalid_argument("contrastive parameters: missing '" + *name + "'");
    const Tensor& v = params.at(*name);
    if (v.rows() != shape.first || v.cols() != shape.second) {
      throw DimensionError("contrastive parameter '" + *name + "' is " + shape_string(v));
    }
  }
}

std::pair<Tensor, Tensor> embed_pair(const RowVector<double>& feature, const RowVector<double>& raw_title,
                                     const ParamSet<double>& params, const ContrastiveConfig& config) {
  if (feature.size() != config.box_dim) {
    throw DimensionError("embed_pair: feature has " + std::to_string(feature.size()) + " values, expected " +
                         std::to_string(config.box_dim));
  }
  if (raw_title.size() != config.title_dim) {
    throw DimensionError("embed_pair: title has " + std::to_string(raw_title.size()) + " values, expected " +
                         std::to_string(config.title_dim));
  }
  const Tensor f = feature;
  const Tensor t = raw_title;
  return {affine<double>(f, params.at(kImageW), params.at(kImageB)),
          affine<double>(t, params.at(kTextW), params.at(kTextB))};
}

double cosine_distance(const RowVector<double>& a, const RowVector<double>& b) {
  if (a.size() != b.size()) throw DimensionError("cosine_distance: lengths differ");
  const double na = a.norm();
  const double nb = b.norm();
  if (!(na > 0) || !(nb > 0)) throw std::domain_error("cosine_distance: zero-norm vector");
  return 1.0 - a.dot(b) / (na * nb);
}

double contrastive_loss(const RowVector<double>& image_embedding, const RowVector<double>& text_embedding, int label,
                        double margin) {
  if (label != 0 && label != 1) throw std::invalid_argument("contrastive_loss: label must be 0 or 1");
  const double d = cosine_distance(image_embedding, text_embedding);
  if (label == 1) return d * d;
  const double hinge = std::max(0.0, margin - d);
  return hinge * hinge;
}

LossAndGradient<double> contrastive_loss_and_gradient(const Tensor& features, const Tensor& titles,
                                                      std::vector<int> labels, const ParamSet<double>& params,
                                                      const ContrastiveConfig& config) {
  if (features.rows() != titles.rows()) throw DimensionError("contrastive: feature and title row counts differ");
  Tape<double> tape;
  const auto z_img = tape.affine(tape.constant(features), tape.parameter(params, kImageW),
                                 tape.parameter(params, kImageB));
  const auto z_txt = tape.affine(tape.constant(titles), tape.parameter(params, kTextW),
                                 tape.parameter(params, kTextB));
  const auto loss = tape.contrastive_loss(z_img, z_txt, std::move(labels), config.margin);
  LossAndGradient<double> out;
  out.loss = tape.scalar(loss);
  out.gradient = tape.backward(loss, params);
  return out;
}

ContrastivePrediction predict_and_rank(const ProductRecord& product, const ParamSet<double>& params,
                                       const ContrastiveConfig& config, bool gallery_only) {
  const std::size_t n = product.box_count();
  Tensor features(static_cast<Eigen::Index>(n), config.box_dim);
  Eigen::Index row = 0;
  for (const auto& image : product.images) {
    for (const auto& box : image.boxes) {
      if (box.feature.size() != config.box_dim) throw DimensionError("predict_and_rank: feature dim mismatch");
      features.row(row++) = box.feature;
    }
  }
  Tensor title = Tensor::Zero(1, config.title_dim);
  if (!gallery_only && product.raw_title) {
    if (product.raw_title->size() != config.title_dim) throw DimensionError("predict_and_rank: title dim mismatch");
    title.row(0) = *product.raw_title;
  }
  const Tensor z_img = affine<double>(features, params.at(kImageW), params.at(kImageB));
  const Tensor z_txt = affine<double>(title, params.at(kTextW), params.at(kTextB));
  const bool text_defined = z_txt.norm() > 0;

  ContrastivePrediction out;
  out.distances.resize(n);
  out.predicted.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const RowVector<double> zi = z_img.row(static_cast<Eigen::Index>(i));
    if (!text_defined || !(zi.norm() > 0)) continue;
    const double d = cosine_distance(zi, z_txt.row(0));
    out.distances[i] = d;
    out.predicted[i] = d < config.eval_threshold ? 1 : 0;
  }
  out.ranking.resize(n);
  std::iota(out.ranking.begin(), out.ranking.end(), std::size_t{0});
  std::stable_sort(out.ranking.begin(), out.ranking.end(), [&](std::size_t a, std::size_t b) {
    const auto& da = out.distances[a];
    const auto& db = out.distances[b];
    if (da && db) return *da < *db;
    return da.has_value() && !db.has_value();
  });
  return out;
}

}  // namespace mpd
