#include "mpd/model/contrastive.hpp"

#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace mpd;
using test::random_matrix;
using test::random_row;

namespace {

ContrastiveConfig plane() {
  ContrastiveConfig c;
  c.box_dim = 2;
  c.title_dim = 2;
  c.embed_dim = 2;
  return c;
}

// Identity branches with zero bias: embeddings equal the inputs.
ParamSet<double> identity_params() {
  ParamSet<double> p;
  p.add("image_branch.weight", Tensor::Identity(2, 2));
  p.add("image_branch.bias", Tensor::Zero(1, 2));
  p.add("text_branch.weight", Tensor::Identity(2, 2));
  p.add("text_branch.bias", Tensor::Zero(1, 2));
  return p;
}

// Unit vector at cosine distance d from [1, 0].
RowVector<double> at_distance(double d) {
  RowVector<double> v(2);
  v << 1 - d, std::sqrt(1 - (1 - d) * (1 - d));
  return v;
}

ProductRecord product_at(std::initializer_list<double> distances) {
  ProductRecord p;
  p.product_id = "p";
  p.raw_title = RowVector<double>::Unit(2, 0);
  ImageRecord image;
  image.image_id = "i";
  int k = 0;
  for (double d : distances) {
    BoxRecord b;
    b.box_id = "b" + std::to_string(k++);
    b.feature = at_distance(d);
    b.label = 0;
    image.boxes.push_back(b);
  }
  p.images.push_back(image);
  return p;
}

}  // namespace

TEST_CASE("cosine distance examples") {
  RowVector<double> a(2), b(2);
  a << 1, 0;
  b << 1, 1;
  CHECK(cosine_distance(a, b) == doctest::Approx(1 - 1 / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(cosine_distance(a, a) == doctest::Approx(0.0));
  CHECK(cosine_distance(a, -a) == doctest::Approx(2.0));
  CHECK_THROWS_AS(cosine_distance(a, RowVector<double>::Zero(2)), std::domain_error);
}

TEST_CASE("contrastive loss examples") {
  const RowVector<double> t = RowVector<double>::Unit(2, 0);
  const RowVector<double> f = at_distance(0.3);
  CHECK(contrastive_loss(f, t, 0, 0.5) == doctest::Approx(0.04).epsilon(1e-12));
  CHECK(contrastive_loss(f, t, 1, 0.5) == doctest::Approx(0.09).epsilon(1e-12));
  CHECK(contrastive_loss(at_distance(0.7), t, 0, 0.5) == 0.0);
  CHECK_THROWS(contrastive_loss(f, t, 2, 0.5));
}

TEST_CASE("ranking is by ascending distance") {
  const auto r = predict_and_rank(product_at({0.3, 0.05, 0.2}), identity_params(), plane());
  CHECK(r.ranking == std::vector<std::size_t>{1, 2, 0});
  CHECK(r.predicted == std::vector<int>{0, 1, 0});
  CHECK(*r.distances[1] == doctest::Approx(0.05).epsilon(1e-12));
}

TEST_CASE("threshold is strict and ties rank by position") {
  // A distance equal to the threshold is negative; a hair below is positive.
  ContrastiveConfig c = plane();
  c.eval_threshold = cosine_distance(at_distance(0.1), RowVector<double>::Unit(2, 0));
  const auto r = predict_and_rank(product_at({0.1, 0.1 - 1e-9, 0.4, 0.4}), identity_params(), c);
  CHECK(r.predicted == std::vector<int>{0, 1, 0, 0});
  CHECK(r.ranking == std::vector<std::size_t>{1, 0, 2, 3});
}

TEST_CASE("gallery-only with a zero text bias leaves distances undefined") {
  const auto r = predict_and_rank(product_at({0.3, 0.05}), identity_params(), plane(), true);
  CHECK_FALSE(r.distances[0].has_value());
  CHECK(r.predicted == std::vector<int>{0, 0});
  CHECK(r.ranking == std::vector<std::size_t>{0, 1});

  // A nonzero bias defines the text embedding on its own.
  auto params = identity_params();
  params.at("text_branch.bias") << 1, 0;
  const auto biased = predict_and_rank(product_at({0.3, 0.05}), params, plane(), true);
  CHECK(biased.ranking == std::vector<std::size_t>{1, 0});
  ProductRecord untitled = product_at({0.3, 0.05});
  untitled.raw_title.reset();
  const auto absent = predict_and_rank(untitled, params, plane());
  CHECK(absent.distances == biased.distances);
}

TEST_CASE("contrastive gradients match finite differences") {
  std::mt19937_64 rng(40);
  ContrastiveConfig c;
  c.box_dim = 5;
  c.title_dim = 4;
  c.embed_dim = 3;
  const auto params = init_contrastive_params(c, 1);
  CHECK_NOTHROW(check_contrastive_params(params, c));
  const Tensor f = random_matrix(rng, 8, 5);
  const Tensor t = random_matrix(rng, 8, 4);
  const std::vector<int> y{1, 0, 0, 1, 0, 1, 0, 0};
  const LossClosure<double> closure = [&](const ParamSet<double>& q) {
    return contrastive_loss_and_gradient(f, t, y, q, c);
  };
  CHECK(grad_check<double>(closure, params, 1e-6) < 1e-6);

  double mean = 0;
  for (Eigen::Index i = 0; i < 8; ++i) {
    const auto [zi, zt] = embed_pair(f.row(i), t.row(i), params, c);
    mean += contrastive_loss(zi.row(0), zt.row(0), y[static_cast<std::size_t>(i)], c.margin) / 8;
  }
  CHECK(closure(params).loss == doctest::Approx(mean).epsilon(1e-12));
}

TEST_CASE("contrastive config and parameter checks") {
  ContrastiveConfig c = plane();
  c.eval_threshold = 0;
  CHECK_THROWS(c.validate());
  c = plane();
  c.margin = -1;
  CHECK_THROWS(c.validate());
  auto params = identity_params();
  ContrastiveConfig wide = plane();
  wide.embed_dim = 3;
  CHECK_THROWS(check_contrastive_params(params, wide));
  std::mt19937_64 rng(41);
  CHECK_THROWS_AS(embed_pair(random_row(rng, 3), random_row(rng, 2), params, plane()), DimensionError);
}
