#include "ovg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "ovg/errors.hpp"

namespace ovg {

namespace {

bool hit_within_topk(const std::vector<SegmentPrediction>& preds, const GroundTruth& gt, int k,
                     double thr) {
    const int n = std::min<int>(k, static_cast<int>(preds.size()));
    for (int i = 0; i < n; ++i)
        if (tiou(preds[static_cast<std::size_t>(i)].start_s,
                 preds[static_cast<std::size_t>(i)].end_s, gt.start_s, gt.end_s) >= thr)
            return true;
    return false;
}

}  // namespace

double recall_at_k(const std::vector<QueryPredictions>& preds,
                   const std::map<std::string, GroundTruth>& gt, int k, double thr) {
    if (gt.empty()) throw DataError("recall_at_k: no ground-truth queries");
    std::map<std::string, const std::vector<SegmentPrediction>*> by_id;
    for (const auto& q : preds) by_id[q.query_id] = &q.predictions;
    int hits = 0;
    for (const auto& [qid, seg] : gt) {
        auto it = by_id.find(qid);
        if (it == by_id.end()) continue;  // counted as a miss
        if (hit_within_topk(*it->second, seg, k, thr)) ++hits;
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(gt.size());
}

double mean_r1(double r1_03, double r1_05) { return 0.5 * (r1_03 + r1_05); }

double round2(double x) { return std::floor(x * 100.0 + 0.5) / 100.0; }

EvalReport evaluate(const std::vector<QueryPredictions>& preds,
                    const std::map<std::string, GroundTruth>& gt) {
    if (gt.empty()) throw DataError("evaluate: no ground-truth queries");
    std::map<std::string, const std::vector<SegmentPrediction>*> by_id;
    for (const auto& q : preds) by_id[q.query_id] = &q.predictions;

    EvalReport rep;
    rep.n_queries = static_cast<int>(gt.size());
    int h13 = 0, h15 = 0, h53 = 0, h55 = 0;
    for (const auto& [qid, seg] : gt) {
        PerQueryRecord rec;
        rec.query_id = qid;
        auto it = by_id.find(qid);
        if (it == by_id.end() || it->second->empty()) {
            rec.missing = true;
            ++rep.n_missing;
        } else {
            const auto& p = *it->second;
            rec.top1_iou = tiou(p[0].start_s, p[0].end_s, seg.start_s, seg.end_s);
            rec.hit_r1_03 = hit_within_topk(p, seg, 1, 0.3);
            rec.hit_r1_05 = hit_within_topk(p, seg, 1, 0.5);
            rec.hit_r5_03 = hit_within_topk(p, seg, 5, 0.3);
            rec.hit_r5_05 = hit_within_topk(p, seg, 5, 0.5);
        }
        h13 += rec.hit_r1_03;
        h15 += rec.hit_r1_05;
        h53 += rec.hit_r5_03;
        h55 += rec.hit_r5_05;
        rep.per_query.push_back(std::move(rec));
    }
    const double n = static_cast<double>(rep.n_queries);
    rep.r1_03 = 100.0 * h13 / n;
    rep.r1_05 = 100.0 * h15 / n;
    rep.r5_03 = 100.0 * h53 / n;
    rep.r5_05 = 100.0 * h55 / n;
    rep.mean_r1 = mean_r1(rep.r1_03, rep.r1_05);
    return rep;
}

std::string render_table(const EvalReport& rep) {
    char buf[256];
    std::ostringstream out;
    out << "R@1 0.3 | R@1 0.5 | Mean | R@5 0.3 | R@5 0.5\n";
    std::snprintf(buf, sizeof(buf), "%7.2f | %7.2f | %5.2f | %7.2f | %7.2f\n", round2(rep.r1_03),
                  round2(rep.r1_05), round2(rep.mean_r1), round2(rep.r5_03), round2(rep.r5_05));
    out << buf;
    return out.str();
}

nlohmann::json report_to_json(const EvalReport& rep) {
    nlohmann::json j;
    j["r1_03"] = round2(rep.r1_03);
    j["r1_05"] = round2(rep.r1_05);
    j["r5_03"] = round2(rep.r5_03);
    j["r5_05"] = round2(rep.r5_05);
    j["mean_r1"] = round2(rep.mean_r1);
    j["n_queries"] = rep.n_queries;
    j["n_missing"] = rep.n_missing;
    auto arr = nlohmann::json::array();
    for (const auto& q : rep.per_query) {
        nlohmann::json r;
        r["query_id"] = q.query_id;
        r["hit_r1_03"] = q.hit_r1_03;
        r["hit_r1_05"] = q.hit_r1_05;
        r["hit_r5_03"] = q.hit_r5_03;
        r["hit_r5_05"] = q.hit_r5_05;
        r["top1_iou"] = q.top1_iou;
        if (q.missing) r["missing"] = true;
        arr.push_back(std::move(r));
    }
    j["per_query"] = arr;
    return j;
}

}  // namespace ovg
