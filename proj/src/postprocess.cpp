#include "ovg/postprocess.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "ovg/errors.hpp"

namespace ovg {

namespace {
constexpr double kMinSegmentLen = 1e-4;  // seconds; drops degenerate decodes

double sigmoid_d(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}
}  // namespace

double tiou(double a_start, double a_end, double b_start, double b_end) {
    const double inter = std::min(a_end, b_end) - std::max(a_start, b_start);
    if (inter <= 0.0) return 0.0;
    const double uni = (a_end - a_start) + (b_end - b_start) - inter;
    if (uni <= 0.0) return 0.0;
    return inter / uni;
}

std::vector<SegmentPrediction> decode(const std::vector<PyramidPoint>& points,
                                      const std::vector<double>& logits,
                                      const std::vector<std::array<double, 2>>& offsets,
                                      double duration_s, int pre_nms_topk, double score_floor) {
    if (points.size() != logits.size() || points.size() != offsets.size())
        throw ShapeError("decode: points/logits/offsets must align");
    std::vector<SegmentPrediction> out;
    out.reserve(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
        const double t = points[i].time_s;
        double s = std::clamp(t - offsets[i][0], 0.0, duration_s);
        double e = std::clamp(t + offsets[i][1], 0.0, duration_s);
        if (e - s < kMinSegmentLen) continue;
        const double score = sigmoid_d(logits[i]);
        if (score < score_floor) continue;
        out.push_back({s, e, score, -1});
    }
    std::stable_sort(out.begin(), out.end(),
                     [](const SegmentPrediction& a, const SegmentPrediction& b) {
                         return a.score > b.score;
                     });
    if (pre_nms_topk > 0 && static_cast<int>(out.size()) > pre_nms_topk)
        out.resize(static_cast<std::size_t>(pre_nms_topk));
    return out;
}

std::vector<SegmentPrediction> soft_nms(std::vector<SegmentPrediction> preds, double sigma,
                                        int keep) {
    if (sigma <= 0.0) throw ConfigError("soft_nms: sigma must be positive");
    if (keep < 1) throw ConfigError("soft_nms: keep must be >= 1");
    std::vector<SegmentPrediction> out;
    std::vector<char> alive(preds.size(), 1);
    while (static_cast<int>(out.size()) < keep) {
        int best = -1;
        for (std::size_t i = 0; i < preds.size(); ++i) {
            if (!alive[i] || preds[i].score <= 0.0) continue;
            if (best < 0 || preds[i].score > preds[static_cast<std::size_t>(best)].score)
                best = static_cast<int>(i);
        }
        if (best < 0) break;
        const SegmentPrediction chosen = preds[static_cast<std::size_t>(best)];
        alive[static_cast<std::size_t>(best)] = 0;
        out.push_back(chosen);
        for (std::size_t i = 0; i < preds.size(); ++i) {
            if (!alive[i]) continue;
            const double ov =
                tiou(chosen.start_s, chosen.end_s, preds[i].start_s, preds[i].end_s);
            if (ov > 0.0) preds[i].score *= std::exp(-(ov * ov) / sigma);
        }
    }
    return out;
}

std::vector<SegmentPrediction> ensemble_merge(
    const std::vector<std::vector<SegmentPrediction>>& per_model, double sigma, int keep) {
    if (per_model.empty()) throw DataError("ensemble_merge: no model predictions");
    std::vector<SegmentPrediction> pool;
    for (std::size_t m = 0; m < per_model.size(); ++m)
        for (SegmentPrediction p : per_model[m]) {
            p.source_model = static_cast<int>(m);
            pool.push_back(p);
        }
    return soft_nms(std::move(pool), sigma, keep);
}

void write_predictions(const std::string& path, const std::vector<QueryPredictions>& preds) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("write_predictions: cannot open " + path);
    for (const auto& q : preds) {
        nlohmann::json j;
        j["query_id"] = q.query_id;
        auto arr = nlohmann::json::array();
        for (const auto& p : q.predictions)
            arr.push_back(nlohmann::json::array({p.start_s, p.end_s, p.score}));
        j["predictions"] = arr;
        out << j.dump() << "\n";
    }
}

std::vector<QueryPredictions> read_predictions(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("read_predictions: cannot open " + path);
    std::vector<QueryPredictions> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": bad JSON: " + e.what());
        }
        QueryPredictions q;
        if (!j.contains("query_id") || !j.contains("predictions"))
            throw DataError(path + ":" + std::to_string(line_no) +
                            ": missing query_id/predictions");
        q.query_id = j["query_id"].get<std::string>();
        for (const auto& row : j["predictions"]) {
            if (!row.is_array() || row.size() != 3)
                throw DataError(path + ":" + std::to_string(line_no) +
                                ": prediction rows must be [start, end, score]");
            q.predictions.push_back(
                {row[0].get<double>(), row[1].get<double>(), row[2].get<double>(), -1});
        }
        out.push_back(std::move(q));
    }
    return out;
}

}  // namespace ovg
