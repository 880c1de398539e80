#pragma once

#include "mpd/data/records.hpp"
#include "mpd/eval/metrics.hpp"
#include "mpd/model/trained_model.hpp"

#include <span>
#include <vector>

namespace mpd {

/// Scores, thresholded decisions and ranking for every box of a product.
/// Classifier scores rank descending, contrastive distances ascending; ties
/// keep box order. Labels, when present, are copied into `truth`.
ProductPrediction predict(const TrainedModel& model, const ProductRecord& product, bool gallery_only = false);

std::vector<ProductPrediction> predict_all(const TrainedModel& model, std::span<const ProductRecord> products,
                                           bool gallery_only = false, int threads = 1);

MetricsReport evaluate(const TrainedModel& model, std::span<const ProductRecord> products,
                       Condition condition = Condition::normal, int threads = 1);

}  // namespace mpd
