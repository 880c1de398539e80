#include "mpd/model/graph_model.hpp"

#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace mpd;
using test::naive_matmul;
using test::random_matrix;
using test::toy_product;

namespace {

const Variant kAllVariants[] = {Variant::ng, Variant::icfs, Variant::pcfs, Variant::pdfs};

Tensor row_bias(const Tensor& x, const Tensor& bias) {
  Tensor out = x;
  for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) += bias.row(0);
  return out;
}

// Straight from the model definition, with naive loops and no shortcuts:
// the learner sees the concatenation [f, t] as one input.
std::vector<double> oracle_probs(const Tensor& features, const std::optional<RowVector<double>>& raw_title,
                                 const ParamSet<double>& p, const ModelConfig& c) {
  Tensor raw = Tensor::Zero(1, c.title_dim);
  if (raw_title) raw.row(0) = *raw_title;
  const Tensor t = row_bias(naive_matmul(raw, p.at("title_proj.weight")), p.at("title_proj.bias"));
  const auto n = features.rows();
  Tensor input(n, c.box_dim + c.text_dim);
  for (Eigen::Index i = 0; i < n; ++i) input.row(i) << features.row(i), t.row(0);
  const Tensor hidden =
      row_bias(naive_matmul(input, p.at("learner_l1.weight")), p.at("learner_l1.bias")).cwiseMax(0.0);
  const Tensor e = row_bias(naive_matmul(hidden, p.at("learner_l2.weight")), p.at("learner_l2.bias"));
  Tensor x = e;
  if (c.variant != Variant::ng) {
    const Tensor basis =
        c.variant == Variant::pdfs
            ? row_bias(naive_matmul(hidden, p.at("decoupled_head.weight")), p.at("decoupled_head.bias"))
            : e;
    x = naive_matmul(naive_matmul(basis, basis.transpose()), e);
  }
  Tensor h = row_bias(naive_matmul(x, p.at("updater.weight")), p.at("updater.bias"));
  h = h.unaryExpr([&](double v) { return v > 0 ? v : c.leaky_slope * v; });
  Tensor joined(n, c.node_dim + c.text_dim);
  for (Eigen::Index i = 0; i < n; ++i) joined.row(i) << t.row(0), h.row(i);
  const Tensor logits = row_bias(naive_matmul(joined, p.at("classifier.weight")), p.at("classifier.bias"));
  std::vector<double> probs;
  for (Eigen::Index i = 0; i < n; ++i) {
    probs.push_back(1.0 / (1.0 + std::exp(logits(i, 0) - logits(i, 1))));
  }
  return probs;
}

Tensor features_of(const GalleryGraph& g) {
  Tensor f(static_cast<Eigen::Index>(g.nodes.size()), g.nodes.front().feature.size());
  for (std::size_t i = 0; i < g.nodes.size(); ++i) f.row(static_cast<Eigen::Index>(i)) = g.nodes[i].feature;
  return f;
}

// Slightly larger than the defaults so the adjacency term matters.
ModelConfig small(Variant v) {
  ModelConfig c = toy_config(v, 5, 7);
  c.text_dim = 3;
  c.hidden_dim = 6;
  c.embed_dim = 4;
  c.head_dim = 3;
  c.node_dim = 5;
  return c;
}

}  // namespace

TEST_CASE("variant names") {
  for (Variant v : kAllVariants) CHECK(parse_variant(to_string(v)) == v);
  CHECK(to_string(Variant::pdfs) == "pdfs");
  CHECK_THROWS(parse_variant("gcn"));
}

TEST_CASE("adjacency and message passing examples") {
  const Tensor e = (Tensor(2, 2) << 1, 2, 3, 4).finished();
  const Tensor a = adjacency(e);
  CHECK(a == (Tensor(2, 2) << 5, 11, 11, 25).finished());
  CHECK(message_pass(a, e) == (Tensor(2, 2) << 38, 54, 86, 122).finished());
  const Tensor e2 = 2.0 * e;
  CHECK(message_pass(adjacency(e2), e2) == 8.0 * message_pass(a, e));
  CHECK_THROWS_AS(message_pass(Tensor::Zero(3, 3), e), DimensionError);
}

TEST_CASE("adjacency is symmetric with a non-negative diagonal") {
  std::mt19937_64 rng(20);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor a = adjacency(random_matrix(rng, 1 + rng() % 9, 1 + rng() % 6));
    CHECK(a == a.transpose());
    CHECK((a.diagonal().array() >= 0).all());
  }
}

TEST_CASE("build_graphs follows the variant") {
  std::mt19937_64 rng(21);
  const ProductRecord p = toy_product(rng, "p", {2, 3}, 4, 6);
  for (Variant v : {Variant::ng, Variant::pcfs, Variant::pdfs}) {
    const auto graphs = build_graphs(p, v);
    REQUIRE(graphs.size() == 1);
    CHECK(graphs[0].nodes.size() == 5);
    CHECK(graphs[0].scope == GraphScope::per_product);
    CHECK(graphs[0].source_index == std::vector<std::size_t>{0, 1, 2, 3, 4});
  }
  const auto per_image = build_graphs(p, Variant::icfs);
  REQUIRE(per_image.size() == 2);
  CHECK(per_image[0].nodes.size() == 2);
  CHECK(per_image[1].nodes.size() == 3);
  CHECK(per_image[1].source_index == std::vector<std::size_t>{2, 3, 4});
  CHECK(per_image[1].nodes[0].image_id == p.images[1].image_id);
  CHECK(per_image[0].scope == GraphScope::per_image);
}

TEST_CASE("init_params creates exactly the variant's parameters") {
  for (Variant v : kAllVariants) {
    const ModelConfig c = small(v);
    const auto p = init_params(c, 1);
    CHECK_NOTHROW(check_params(p, c));
    CHECK(p.contains("decoupled_head.weight") == (v == Variant::pdfs));
    CHECK(p.at("learner_l1.weight").rows() == c.box_dim + c.text_dim);
    CHECK(p.at("classifier.weight").rows() == c.node_dim + c.text_dim);
    CHECK(p.at("classifier.weight").cols() == 2);
    CHECK(p.at("updater.bias").isZero(0));
    const double bound = std::sqrt(6.0 / (c.hidden_dim + c.embed_dim));
    CHECK(p.at("learner_l2.weight").cwiseAbs().maxCoeff() <= bound);
    CHECK(init_params(c, 1) == p);
    CHECK_FALSE(init_params(c, 2) == p);
  }
  const auto pdfs = init_params(small(Variant::pdfs), 3);
  CHECK_THROWS(check_params(pdfs, small(Variant::pcfs)));
  ModelConfig wider = small(Variant::pdfs);
  wider.node_dim = 9;
  CHECK_THROWS(check_params(pdfs, wider));
}

TEST_CASE("forward agrees with a from-scratch oracle") {
  std::mt19937_64 rng(22);
  for (Variant v : kAllVariants) {
    const ModelConfig c = small(v);
    const auto params = init_params(c, 4);
    for (int trial = 0; trial < 10; ++trial) {
      const ProductRecord p = toy_product(rng, "p", {3, 1, 4}, c.box_dim, c.title_dim, trial % 3 != 0);
      const auto got = predict_product(p, params, c);
      std::vector<double> want;
      for (const auto& g : build_graphs(p, v)) {
        const auto part = oracle_probs(features_of(g), p.raw_title, params, c);
        want.insert(want.end(), part.begin(), part.end());
      }
      REQUIRE(got.size() == want.size());
      for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("zero classifier gives chance loss") {
  std::mt19937_64 rng(23);
  for (Variant v : kAllVariants) {
    const ModelConfig c = small(v);
    auto params = init_params(c, 5);
    params.at("classifier.weight").setZero();
    const ProductRecord p = toy_product(rng, "p", {2, 3}, c.box_dim, c.title_dim);
    const auto graphs = build_graphs(p, v);
    CHECK(model_loss(graphs, params, c) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    for (double prob : predict_product(p, params, c)) CHECK(prob == 0.5);
  }
}

TEST_CASE("gallery-only equals a zero title") {
  std::mt19937_64 rng(24);
  for (Variant v : kAllVariants) {
    const ModelConfig c = small(v);
    const auto params = init_params(c, 6);
    ProductRecord p = toy_product(rng, "p", {2, 2, 1}, c.box_dim, c.title_dim);
    const auto gallery_only = predict_product(p, params, c, true);
    p.raw_title = RowVector<double>::Zero(c.title_dim);
    CHECK(predict_product(p, params, c) == gallery_only);
    p.raw_title.reset();
    CHECK(predict_product(p, params, c) == gallery_only);
  }
}

TEST_CASE("zeroing after projection drops the projection bias") {
  std::mt19937_64 rng(25);
  ModelConfig c = small(Variant::pcfs);
  c.zero_title_after_projection = true;
  auto params = init_params(c, 7);
  params.at("title_proj.bias").setConstant(0.3);
  CHECK(project_title(std::nullopt, params, c, false).isZero(0));
  c.zero_title_after_projection = false;
  CHECK(project_title(std::nullopt, params, c, false) == Tensor::Constant(1, c.text_dim, 0.3));
  const auto title = test::random_row(rng, c.title_dim);
  CHECK_FALSE(project_title(title, params, c, true) == project_title(title, params, c, false));
  CHECK_THROWS_AS(project_title(test::random_row(rng, 3), params, c, false), DimensionError);
}

TEST_CASE("whole-graph variants are permutation equivariant") {
  std::mt19937_64 rng(26);
  for (Variant v : kAllVariants) {
    const ModelConfig c = small(v);
    const auto params = init_params(c, 8);
    for (int trial = 0; trial < 20; ++trial) {
      ProductRecord p = toy_product(rng, "p", {7}, c.box_dim, c.title_dim);
      const auto before = predict_product(p, params, c);
      std::vector<std::size_t> perm(7);
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      ProductRecord q = p;
      for (std::size_t i = 0; i < 7; ++i) q.images[0].boxes[i] = p.images[0].boxes[perm[i]];
      const auto after = predict_product(q, params, c);
      for (std::size_t i = 0; i < 7; ++i) CHECK(std::abs(after[i] - before[perm[i]]) < 1e-9);
    }
  }
}

TEST_CASE("ng decides each box alone, icfs each image alone") {
  std::mt19937_64 rng(27);
  for (Variant v : {Variant::ng, Variant::icfs}) {
    const ModelConfig c = small(v);
    const auto params = init_params(c, 9);
    for (int trial = 0; trial < 20; ++trial) {
      const ProductRecord p = toy_product(rng, "p", {3, 4}, c.box_dim, c.title_dim);
      ProductRecord q = p;
      q.images[1].boxes[2].feature = test::random_row(rng, c.box_dim);
      const auto a = predict_product(p, params, c);
      const auto b = predict_product(q, params, c);
      // Image 0 never sees image 1; under ng neither do its siblings.
      const std::size_t untouched = v == Variant::ng ? 6 : 3;
      for (std::size_t i = 0; i < 7; ++i) {
        if (i < untouched && i != 5) CHECK(a[i] == b[i]);
      }
      if (v == Variant::ng) CHECK(a[6] == b[6]);
      CHECK(a[5] != b[5]);
    }
  }
}

TEST_CASE("pcfs couples boxes across images") {
  std::mt19937_64 rng(28);
  const ModelConfig c = small(Variant::pcfs);
  const auto params = init_params(c, 10);
  const ProductRecord p = toy_product(rng, "p", {3, 4}, c.box_dim, c.title_dim);
  ProductRecord q = p;
  q.images[1].boxes[2].feature = test::random_row(rng, c.box_dim);
  CHECK(predict_product(p, params, c)[0] != predict_product(q, params, c)[0]);
}

TEST_CASE("gradients match finite differences for every variant") {
  std::mt19937_64 rng(29);
  for (Variant v : kAllVariants) {
    for (bool gallery_only : {false, true}) {
      ModelConfig c = small(v);
      const auto params = init_params(c, 11);
      const ProductRecord a = toy_product(rng, "a", {2, 3}, c.box_dim, c.title_dim);
      const ProductRecord b = toy_product(rng, "b", {1, 2}, c.box_dim, c.title_dim);
      auto graphs = build_graphs(a, v);
      for (auto& g : build_graphs(b, v)) graphs.push_back(std::move(g));
      const LossClosure<double> f = [&](const ParamSet<double>& q) {
        return loss_and_gradient(graphs, q, c, gallery_only);
      };
      CAPTURE(to_string(v));
      CHECK(grad_check<double>(f, params, 1e-6) < 1e-6);
      CHECK(loss_and_gradient(graphs, params, c, gallery_only).loss ==
            doctest::Approx(model_loss(graphs, params, c, gallery_only)).epsilon(1e-12));
    }
  }
}

TEST_CASE("optional switches keep gradients exact") {
  std::mt19937_64 rng(30);
  ModelConfig c = small(Variant::pdfs);
  c.learner_relu_both = true;
  c.classifier_raw_title = true;
  c.adjacency_row_softmax = true;
  const auto params = init_params(c, 12);
  CHECK(params.at("classifier.weight").rows() == c.node_dim + c.title_dim);
  const ProductRecord p = toy_product(rng, "p", {2, 3}, c.box_dim, c.title_dim);
  const auto graphs = build_graphs(p, c.variant);
  const LossClosure<double> f = [&](const ParamSet<double>& q) { return loss_and_gradient(graphs, q, c); };
  CHECK(grad_check<double>(f, params, 1e-6) < 1e-6);
}

TEST_CASE("model config validation") {
  ModelConfig c = small(Variant::ng);
  c.hidden_dim = 0;
  CHECK_THROWS(c.validate());
  c = small(Variant::ng);
  c.leaky_slope = 1.5;
  CHECK_THROWS(c.validate());
}

TEST_CASE("unlabeled graphs cannot be trained on") {
  std::mt19937_64 rng(31);
  const ModelConfig c = small(Variant::pcfs);
  ProductRecord p = toy_product(rng, "p", {2}, c.box_dim, c.title_dim);
  for (auto& box : p.images[0].boxes) box.label.reset();
  const auto graphs = build_graphs(p, c.variant);
  CHECK_FALSE(graphs[0].labeled());
  CHECK_THROWS(model_loss(graphs, init_params(c, 1), c));
}
