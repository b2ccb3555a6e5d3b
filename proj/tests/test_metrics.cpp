#include <doctest.h>

#include "ovg/metrics.hpp"
#include "ovg/rng.hpp"

using namespace ovg;

namespace {

QueryPredictions exact_hit(const std::string& id, double s, double e) {
    return {id, {{s, e, 0.9, -1}}};
}

}  // namespace

TEST_CASE("mean_r1 reproduces the reported table arithmetic") {
    CHECK(round2(mean_r1(27.02, 19.28)) == doctest::Approx(23.15).epsilon(1e-12));
    CHECK(round2(mean_r1(28.43, 19.95)) == doctest::Approx(24.19).epsilon(1e-12));
    CHECK(mean_r1(42.0, 42.0) == 42.0);
}

TEST_CASE("round2 is half-up at two decimals") {
    CHECK(round2(23.145) == doctest::Approx(23.15));
    CHECK(round2(23.144999) == doctest::Approx(23.14));
    CHECK(round2(0.005) == doctest::Approx(0.01));
}

TEST_CASE("perfect predictions score 100 on every metric") {
    std::map<std::string, GroundTruth> gt;
    std::vector<QueryPredictions> preds;
    for (int i = 0; i < 7; ++i) {
        const std::string id = "q" + std::to_string(i);
        gt[id] = {10.0 * i, 10.0 * i + 5.0};
        preds.push_back(exact_hit(id, 10.0 * i, 10.0 * i + 5.0));
    }
    auto rep = evaluate(preds, gt);
    CHECK(rep.r1_03 == 100.0);
    CHECK(rep.r1_05 == 100.0);
    CHECK(rep.r5_03 == 100.0);
    CHECK(rep.r5_05 == 100.0);
    CHECK(rep.mean_r1 == 100.0);
}

TEST_CASE("recall is monotone in k and antitone in the threshold") {
    Rng rng(501);
    std::map<std::string, GroundTruth> gt;
    std::vector<QueryPredictions> preds;
    for (int i = 0; i < 25; ++i) {
        const std::string id = "q" + std::to_string(i);
        const double s = rng.uniform(0.0, 50.0);
        const double e = s + rng.uniform(2.0, 10.0);
        gt[id] = {s, e};
        QueryPredictions qp;
        qp.query_id = id;
        for (int r = 0; r < 6; ++r) {
            const double js = s + rng.uniform(-4.0, 4.0);
            const double len = (e - s) * rng.uniform(0.4, 1.4);
            qp.predictions.push_back({std::max(0.0, js), std::max(0.0, js) + len,
                                      1.0 - 0.1 * r, -1});
        }
        preds.push_back(qp);
    }
    const double r1 = recall_at_k(preds, gt, 1, 0.5);
    const double r5 = recall_at_k(preds, gt, 5, 0.5);
    const double r5_loose = recall_at_k(preds, gt, 5, 0.3);
    CHECK(r5 >= r1);
    CHECK(r5_loose >= r5);
}

TEST_CASE("recall with planted hits at known ranks matches enumeration") {
    // 10 queries; query i's first matching prediction sits at rank i (1-based),
    // so R@k at IoU 0.5 counts exactly the queries with rank <= k.
    std::map<std::string, GroundTruth> gt;
    std::vector<QueryPredictions> preds;
    for (int i = 1; i <= 10; ++i) {
        const std::string id = "q" + std::to_string(i);
        gt[id] = {100.0, 110.0};
        QueryPredictions qp;
        qp.query_id = id;
        for (int r = 1; r <= 10; ++r) {
            if (r == i)
                qp.predictions.push_back({100.0, 110.0, 1.0 - 0.05 * r, -1});
            else
                qp.predictions.push_back({0.0, 5.0, 1.0 - 0.05 * r, -1});  // never overlaps
        }
        preds.push_back(qp);
    }
    CHECK(recall_at_k(preds, gt, 1, 0.5) == doctest::Approx(10.0));
    CHECK(recall_at_k(preds, gt, 3, 0.5) == doctest::Approx(30.0));
    CHECK(recall_at_k(preds, gt, 5, 0.5) == doctest::Approx(50.0));
    CHECK(recall_at_k(preds, gt, 10, 0.5) == doctest::Approx(100.0));
}

TEST_CASE("queries without predictions count as misses and are flagged") {
    std::map<std::string, GroundTruth> gt;
    gt["hit"] = {0.0, 10.0};
    gt["missing"] = {5.0, 15.0};
    std::vector<QueryPredictions> preds{exact_hit("hit", 0.0, 10.0)};
    auto rep = evaluate(preds, gt);
    CHECK(rep.n_queries == 2);
    CHECK(rep.n_missing == 1);
    CHECK(rep.r1_05 == doctest::Approx(50.0));
    bool saw_missing = false;
    for (const auto& q : rep.per_query)
        if (q.query_id == "missing") saw_missing = q.missing;
    CHECK(saw_missing);
}

TEST_CASE("report mean identity survives rounding") {
    Rng rng(503);
    for (int trial = 0; trial < 50; ++trial) {
        const double a = rng.uniform(0.0, 100.0);
        const double b = rng.uniform(0.0, 100.0);
        const double mean_of_rounded = round2(mean_r1(a, b));
        const double identity = (round2(a) + round2(b)) / 2.0;
        CHECK(std::abs(mean_of_rounded - identity) <= 5e-3 + 1e-12);
    }
}

TEST_CASE("table rendering uses the exact column header") {
    EvalReport rep;
    rep.r1_03 = 27.02;
    rep.r1_05 = 19.28;
    rep.mean_r1 = mean_r1(27.02, 19.28);
    rep.r5_03 = 43.66;
    rep.r5_05 = 30.87;
    const std::string table = render_table(rep);
    CHECK(table.find("R@1 0.3 | R@1 0.5 | Mean | R@5 0.3 | R@5 0.5") == 0);
    CHECK(table.find("23.15") != std::string::npos);
}
