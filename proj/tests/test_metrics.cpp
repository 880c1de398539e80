#include "mpd/eval/evaluate.hpp"
#include "mpd/eval/metrics.hpp"
#include "mpd/model/trained_model.hpp"

#include "metric_oracle.hpp"
#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>

using namespace mpd;
using namespace mpd::test;

TEST_CASE("product accuracy examples") {
  CHECK(product_accuracy(std::vector{ranked("a", {1, 0, 0})}) == 1.0);
  const std::vector three{ranked("a", {1, 0}), ranked("b", {1}), ranked("c", {1, 0, 0, 1}, {1, 0, 1, 1})};
  CHECK(product_accuracy(three) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(product_accuracy(std::vector{ranked("a", {1, 0}, {0, 0}), ranked("b", {1}, {0})}) == 0.0);
  CHECK_THROWS(product_accuracy(std::vector<ProductPrediction>{}));
}

TEST_CASE("icfs accuracy examples") {
  // Nodes 0-1 form image 0, nodes 2-3 image 1; image 1 has one error.
  const std::vector one{ranked("a", {1, 0, 1, 0}, {1, 0, 1, 1})};
  CHECK(icfs_product_accuracy(one) == 0.0);
  const std::vector single{ranked("s", {1}), ranked("t", {0, 1}, {1, 1})};
  CHECK(icfs_product_accuracy(single) == product_accuracy(single));
}

TEST_CASE("precision and recall at 1 examples") {
  const auto [p, r] = precision_recall_at_1(std::vector{ranked("a", {1, 0, 1})});
  CHECK(p == 1.0);
  CHECK(r == 0.5);
  const auto [p0, r0] = precision_recall_at_1(std::vector{ranked("a", {0, 1})});
  CHECK(p0 == 0.0);
  CHECK(r0 == 0.0);
  const auto [p1, r1] = precision_recall_at_1(std::vector{ranked("a", {1})});
  CHECK(p1 == 1.0);
  CHECK(r1 == 1.0);
  CHECK_THROWS(precision_recall_at_1(std::vector{ranked("a", {0, 0})}));
}

TEST_CASE("average precision examples") {
  CHECK(mean_ap(std::vector{ranked("a", {1, 0, 1})}) == doctest::Approx((1.0 + 2.0 / 3.0) / 2).epsilon(1e-15));
  CHECK(mean_ap(std::vector{ranked("a", {1, 1, 0, 0})}) == 1.0);
  CHECK(mean_ap(std::vector{ranked("a", {1})}) == 1.0);
  ProductPrediction unlabeled = ranked("a", {1});
  unlabeled.nodes[0].truth.reset();
  CHECK_THROWS(mean_ap(std::vector{unlabeled}));
}

TEST_CASE("metrics agree with a brute-force oracle") {
  std::mt19937_64 rng(60);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto preds = random_predictions(rng);
    const OracleMetrics want = oracle(preds);
    const auto [p1, r1] = precision_recall_at_1(preds);
    REQUIRE(product_accuracy(preds) == want.accuracy);
    REQUIRE(icfs_product_accuracy(preds) == want.accuracy);
    REQUIRE(p1 == want.p1);
    REQUIRE(r1 == want.r1);
    REQUIRE(mean_ap(preds) == want.map);
    for (double v : {want.accuracy, want.p1, want.r1, want.map}) {
      CHECK(v >= 0);
      CHECK(v <= 1);
    }
    std::size_t total = 0;
    for (const auto& [size, point] : accuracy_by_graph_size(preds)) {
      CHECK(size >= 1);
      CHECK(size <= kMaxCurveBucket);
      total += point.count;
    }
    REQUIRE(total == preds.size());
  }
}

TEST_CASE("graph-size curve") {
  std::vector<int> big(35, 0);
  big[0] = 1;
  const auto curve = accuracy_by_graph_size(std::vector{ranked("big", big)});
  REQUIRE(curve.size() == 1);
  CHECK(curve.begin()->first == 20);

  const std::vector threes{ranked("a", {1, 0, 0}), ranked("b", {0, 1, 0})};
  const auto flat = accuracy_by_graph_size(threes);
  CHECK(flat == std::map<int, CurvePoint>{{3, CurvePoint{2, 1.0}}});

  const std::vector mixed{ranked("a", {1}), ranked("b", {1, 0}, {0, 0}), ranked("c", {0, 1})};
  const auto m = accuracy_by_graph_size(mixed);
  CHECK(m.at(1) == CurvePoint{1, 1.0});
  CHECK(m.at(2) == CurvePoint{2, 0.5});
}

TEST_CASE("report serialization") {
  const std::vector preds{ranked("a", {1, 0}), ranked("b", {1, 0, 1}, {1, 1, 1})};
  const MetricsReport r = summarize(preds, Condition::gallery_only, "pdfs");
  CHECK(r.products == 2);
  CHECK(r.product_accuracy == 0.5);
  const std::string json = to_json(r);
  CHECK(json.find("\"condition\": \"gallery_only\"") != std::string::npos);
  CHECK(json.find("\"model\": \"pdfs\"") != std::string::npos);
  CHECK(curve_csv(r) == "size,count,accuracy\n2,1,1\n3,1,0\n");
}

TEST_CASE("perfect predictions score one everywhere") {
  std::mt19937_64 rng(61);
  auto preds = random_predictions(rng);
  for (auto& p : preds) {
    for (auto& n : p.nodes) n.predicted = *n.truth;
    std::stable_sort(p.ranking.begin(), p.ranking.end(),
                     [&](std::size_t a, std::size_t b) { return *p.nodes[a].truth > *p.nodes[b].truth; });
  }
  const MetricsReport r = summarize(preds, Condition::normal, "oracle");
  CHECK(r.product_accuracy == 1.0);
  CHECK(r.p_at_1 == 1.0);
  CHECK(r.map == 1.0);
}

TEST_CASE("a zero classifier predicts nothing and ties keep box order") {
  std::mt19937_64 rng(62);
  TrainedModel model = make_model("pcfs", toy_config(Variant::pcfs), {}, 3);
  model.params.at("classifier.weight").setZero();
  std::vector<ProductRecord> products;
  for (int i = 0; i < 5; ++i) products.push_back(test::toy_product(rng, "p" + std::to_string(i), {2, 3}, 4, 6));
  const auto preds = predict_all(model, products);
  for (const auto& p : preds) {
    CHECK(p.ranking == std::vector<std::size_t>{0, 1, 2, 3, 4});
    for (const auto& n : p.nodes) {
      CHECK(n.score == 0.5);
      CHECK(n.predicted == 0);
    }
  }
  CHECK(evaluate(model, products).product_accuracy == 0.0);
}

TEST_CASE("predictions carry ids and follow the flattened box order") {
  std::mt19937_64 rng(63);
  const TrainedModel model = make_model("icfs", toy_config(Variant::icfs), {}, 4);
  const ProductRecord p = test::toy_product(rng, "q", {1, 3}, 4, 6);
  const ProductPrediction pred = predict(model, p);
  REQUIRE(pred.nodes.size() == 4);
  CHECK(pred.nodes[2].box_id == p.images[1].boxes[1].box_id);
  CHECK(pred.nodes[2].image_id == p.images[1].image_id);
  CHECK(pred.nodes[2].truth == p.images[1].boxes[1].label);
  for (std::size_t k = 1; k < pred.ranking.size(); ++k) {
    CHECK(pred.nodes[pred.ranking[k - 1]].score >= pred.nodes[pred.ranking[k]].score);
  }
  const auto probs = predict_product(p, model.params, model.graph);
  for (std::size_t i = 0; i < 4; ++i) CHECK(pred.nodes[i].score == probs[i]);
}

TEST_CASE("gallery-only changes nothing when titles are zero") {
  std::mt19937_64 rng(64);
  for (const char* name : {"ng", "pdfs", "contrastive"}) {
    ContrastiveConfig cc;
    cc.box_dim = 4;
    cc.title_dim = 6;
    cc.embed_dim = 3;
    const TrainedModel model = make_model(name, toy_config(Variant::pdfs), cc, 5);
    std::vector<ProductRecord> products;
    for (int i = 0; i < 20; ++i) {
      products.push_back(test::toy_product(rng, "p" + std::to_string(i), {1, 2, 2}, 4, 6));
      products.back().raw_title = RowVector<double>::Zero(6);
    }
    const MetricsReport normal = evaluate(model, products, Condition::normal);
    MetricsReport gallery = evaluate(model, products, Condition::gallery_only);
    CHECK(gallery.condition == Condition::gallery_only);
    gallery.condition = Condition::normal;
    CHECK(gallery == normal);
  }
}

TEST_CASE("parallel prediction matches serial") {
  std::mt19937_64 rng(65);
  const TrainedModel model = make_model("pdfs", toy_config(Variant::pdfs), {}, 6);
  std::vector<ProductRecord> products;
  for (int i = 0; i < 17; ++i) products.push_back(test::toy_product(rng, "p" + std::to_string(i), {2, 1}, 4, 6));
  CHECK(evaluate(model, products, Condition::normal, 1) == evaluate(model, products, Condition::normal, 4));
}
