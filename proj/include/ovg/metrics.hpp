#pragma once

#include <json.hpp>
#include <map>
#include <string>
#include <vector>

#include "ovg/postprocess.hpp"

namespace ovg {

struct GroundTruth {
    double start_s = 0.0;
    double end_s = 0.0;
};

struct PerQueryRecord {
    std::string query_id;
    bool hit_r1_03 = false;
    bool hit_r1_05 = false;
    bool hit_r5_03 = false;
    bool hit_r5_05 = false;
    double top1_iou = 0.0;
    bool missing = false;  // no predictions were supplied for this query
};

// Percentages rendered at two decimals; mean_r1 = (r1_03 + r1_05) / 2 before
// rounding.
struct EvalReport {
    double r1_03 = 0.0;
    double r1_05 = 0.0;
    double r5_03 = 0.0;
    double r5_05 = 0.0;
    double mean_r1 = 0.0;
    int n_queries = 0;
    int n_missing = 0;
    std::vector<PerQueryRecord> per_query;
};

// Fraction (x100) of queries whose top-k predictions contain a segment with
// tIoU >= thr against the single ground truth. Queries without predictions
// count as misses.
double recall_at_k(const std::vector<QueryPredictions>& preds,
                   const std::map<std::string, GroundTruth>& gt, int k, double thr);

double mean_r1(double r1_03, double r1_05);

// Half-up rounding to two decimals (table rendering rule).
double round2(double x);

EvalReport evaluate(const std::vector<QueryPredictions>& preds,
                    const std::map<std::string, GroundTruth>& gt);

// Aligned text table with columns:
//   R@1 0.3 | R@1 0.5 | Mean | R@5 0.3 | R@5 0.5
std::string render_table(const EvalReport& report);

nlohmann::json report_to_json(const EvalReport& report);

}  // namespace ovg
