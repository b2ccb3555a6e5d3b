#pragma once

#include <string>
#include <vector>

#include "ovg/loss.hpp"

namespace ovg {

struct SegmentPrediction {
    double start_s = 0.0;
    double end_s = 0.0;
    double score = 0.0;
    int source_model = -1;
};

// Temporal IoU of two intervals; zero-length union counts as 0.
double tiou(double a_start, double a_end, double b_start, double b_end);

// Per-point decoding: segment [t - d_start, t + d_end] clamped to
// [0, duration], score = sigmoid(logit). Segments shorter than a small floor
// after clamping are dropped; the top `pre_nms_topk` survivors above
// `score_floor` are returned sorted by score (ties keep point order).
std::vector<SegmentPrediction> decode(const std::vector<PyramidPoint>& points,
                                      const std::vector<double>& logits,
                                      const std::vector<std::array<double, 2>>& offsets,
                                      double duration_s, int pre_nms_topk, double score_floor);

// Gaussian SoftNMS: repeatedly emit the highest-scored remaining segment and
// decay the rest by exp(-tIoU^2 / sigma). Stops after `keep` emissions or
// when no remaining score is positive. Output order is emission order, so
// scores are non-increasing and the global maximum is always emitted first.
std::vector<SegmentPrediction> soft_nms(std::vector<SegmentPrediction> preds, double sigma,
                                        int keep);

// Multi-model fusion: pool every model's predictions, then SoftNMS the pool.
std::vector<SegmentPrediction> ensemble_merge(
    const std::vector<std::vector<SegmentPrediction>>& per_model, double sigma, int keep);

// Predictions file: one JSON object per line,
//   {"query_id": ..., "predictions": [[start_s, end_s, score], ...]}
// sorted by score descending.
struct QueryPredictions {
    std::string query_id;
    std::vector<SegmentPrediction> predictions;
};

void write_predictions(const std::string& path, const std::vector<QueryPredictions>& preds);
std::vector<QueryPredictions> read_predictions(const std::string& path);

}  // namespace ovg
