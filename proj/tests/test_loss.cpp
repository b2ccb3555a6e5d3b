#include <doctest.h>

#include <cmath>

#include "ovg/loss.hpp"
#include "testutil.hpp"

using namespace ovg;
using ovg::test::finite_diff_check;

namespace {

std::vector<PyramidPoint> grid_points(const std::vector<int>& lengths, double stride0_s,
                                      double r0) {
    std::vector<PyramidPoint> pts;
    const int n_levels = static_cast<int>(lengths.size());
    int stride = 1;
    for (int l = 0; l < n_levels; ++l) {
        double lo, hi;
        regression_range(l, n_levels, r0, &lo, &hi);
        for (int i = 0; i < lengths[static_cast<std::size_t>(l)]; ++i)
            pts.push_back({l, i, i * stride * stride0_s, lo, hi});
        stride *= 2;
    }
    return pts;
}

}  // namespace

TEST_CASE("assignment basics: boundary point, outside point, bad segment") {
    auto pts = grid_points({16, 8, 4}, 1.0, 4.0);
    const double s = 4.0, e = 10.0;
    auto ta = assign_targets(pts, s, e);
    // point exactly at s on level 0: offsets (0, e-s); max offset 6 > r0=4, so
    // level 0 rejects it but level 1 (range (4,8]) accepts its own point at 4
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (ta.label[i] && pts[i].time_s == s) {
            CHECK(ta.d_start[i] == 0.0);
            CHECK(ta.d_end[i] == e - s);
        }
        if (pts[i].time_s < s || pts[i].time_s > e) CHECK(ta.label[i] == 0);
    }
    CHECK_FALSE(ta.positives.empty());
    CHECK_THROWS_AS((void)assign_targets(pts, 5.0, 5.0), DataError);
    CHECK_THROWS_AS((void)assign_targets(pts, 7.0, 3.0), DataError);
}

TEST_CASE("assignment matches exhaustive oracle on random instances") {
    Rng rng(211);
    for (int trial = 0; trial < 200; ++trial) {
        const int n_levels = rng.uniform_int(1, 5);
        std::vector<int> lengths;
        int len0 = rng.uniform_int(8, 64);
        for (int l = 0; l < n_levels; ++l) {
            lengths.push_back(len0);
            len0 = (len0 + 1) / 2;
        }
        const double stride0 = rng.uniform(0.25, 2.0);
        const double r0 = 4.0 * stride0;
        auto pts = grid_points(lengths, stride0, r0);
        const double duration = lengths[0] * stride0;
        const double a = rng.uniform(0.0, duration * 0.9);
        const double b = a + rng.uniform(0.05, duration - a);
        auto ta = assign_targets(pts, a, b);

        // independent rule evaluation
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const double t = pts[i].time_s;
            const int l = pts[i].level;
            const bool inside = t >= a && t <= b;
            const double m = std::max(t - a, b - t);
            const double lo = l == 0 ? 0.0 : r0 * std::pow(2.0, l - 1);
            const double hi = l == n_levels - 1 ? std::numeric_limits<double>::infinity()
                                                : r0 * std::pow(2.0, l);
            const bool want = inside && m > lo && m <= hi;
            CHECK(static_cast<bool>(ta.label[i]) == want);
            if (want) {
                CHECK(ta.d_start[i] == doctest::Approx(t - a).epsilon(1e-12));
                CHECK(ta.d_end[i] == doctest::Approx(b - t).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("gaussian weight peaks at the center and is symmetric") {
    Tensor<double> rho = Tensor<double>::zeros(3, 1, true);  // sigmoid -> 0.5
    Tensor<double> tau = Tensor<double>::zeros(3, 1, true);
    // segment [0,8]: mu = 4
    CHECK(gaussian_asl_weight(rho, tau, 1, 4.0, 0.0, 8.0, 0.25).item() == doctest::Approx(1.0));
    const double w_left = gaussian_asl_weight(rho, tau, 1, 3.0, 0.0, 8.0, 0.25).item();
    const double w_right = gaussian_asl_weight(rho, tau, 1, 5.0, 0.0, 8.0, 0.25).item();
    CHECK(w_left == doctest::Approx(w_right).epsilon(1e-12));
    CHECK(w_left < 1.0);
    CHECK(w_left > 0.0);
}

TEST_CASE("gaussian weight hand value: rho=0.5 tau=0.25 segment [0,8] point t=2") {
    Tensor<double> rho = Tensor<double>::zeros(1, 1, true);
    Tensor<double> tau(Mat<double>(Mat<double>::Constant(1, 1, std::log(0.25 / 0.75))), true);
    const double w = gaussian_asl_weight(rho, tau, 0, 2.0, 0.0, 8.0, 0.25).item();
    // mu = 4, sigma = 0.25*8 = 2 -> w = exp(-(2-4)^2 / (2*4)) = exp(-0.5)
    CHECK(w == doctest::Approx(std::exp(-0.5)).epsilon(1e-9));
}

TEST_CASE("gaussian weight gradients flow into rho and tau") {
    Tensor<double> rho(Mat<double>(Mat<double>::Constant(2, 1, 0.3)), true);
    Tensor<double> tau(Mat<double>(Mat<double>::Constant(2, 1, -0.2)), true);
    auto res = finite_diff_check({rho, tau}, [&] {
        return gaussian_asl_weight(rho, tau, 1, 2.5, 1.0, 7.0, 0.25);
    });
    CHECK(res.ok);
}

TEST_CASE("focal loss: saturated positive vanishes, all-negative closed form") {
    std::vector<PyramidPoint> pts = grid_points({1}, 1.0, 4.0);
    TargetAssignment ta;
    ta.label = {1};
    ta.d_start = {0.5};
    ta.d_end = {0.5};
    ta.positives = {0};
    Tensor<double> logits(Mat<double>(Mat<double>::Constant(1, 1, 50.0)));
    Tensor<double> w = Tensor<double>::ones(1, 1);
    CHECK(focal_bce_loss(logits, ta, w, 2.0, 0.25).item() <= 1e-12);

    // four negatives at logit 0: per point p = 0.5, term = p^2 * log 2
    TargetAssignment none;
    none.label = {0, 0, 0, 0};
    none.d_start.resize(4, 0.0);
    none.d_end.resize(4, 0.0);
    Tensor<double> z0 = Tensor<double>::zeros(4, 1);
    Tensor<double> w0 = Tensor<double>::ones(0, 1);
    const double want = 4.0 * 0.25 * std::log(2.0);
    CHECK(focal_bce_loss(z0, none, w0, 2.0, 0.25).item() == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("doubling a positive's weight doubles its contribution") {
    TargetAssignment ta;
    ta.label = {1, 0};
    ta.d_start = {1.0, 0.0};
    ta.d_end = {1.0, 0.0};
    ta.positives = {0};
    Tensor<double> logits(Mat<double>(Mat<double>::Constant(2, 1, 0.4)));
    Tensor<double> w1 = Tensor<double>::ones(1, 1);
    Tensor<double> w2(Mat<double>(Mat<double>::Constant(1, 1, 2.0)));
    Tensor<double> w0 = Tensor<double>::zeros(1, 1);
    const double base = focal_bce_loss(logits, ta, w0, 2.0, 0.25).item();  // negatives only
    const double l1 = focal_bce_loss(logits, ta, w1, 2.0, 0.25).item();
    const double l2 = focal_bce_loss(logits, ta, w2, 2.0, 0.25).item();
    CHECK(l2 - base == doctest::Approx(2.0 * (l1 - base)).epsilon(1e-12));
}

TEST_CASE("diou is zero for exact predictions") {
    std::vector<PyramidPoint> pts = grid_points({8}, 1.0, 4.0);
    auto ta = assign_targets(pts, 2.0, 5.0);
    REQUIRE_FALSE(ta.positives.empty());
    Mat<double> off = Mat<double>::Zero(static_cast<Index>(pts.size()), 2);
    for (Index i : ta.positives) {
        off(i, 0) = ta.d_start[static_cast<std::size_t>(i)];
        off(i, 1) = ta.d_end[static_cast<std::size_t>(i)];
    }
    Tensor<double> w = Tensor<double>::ones(static_cast<Index>(ta.positives.size()), 1);
    CHECK(diou_regression_loss(Tensor<double>(off), ta, pts, w).item() <= 1e-12);
}

TEST_CASE("diou hand value: disjoint intervals") {
    // point at t=4; gt [4,6]; prediction [0,2] (offsets 4 and -2 reproduce the
    // interval arithmetic even though trained offsets are nonnegative)
    std::vector<PyramidPoint> pts{{0, 4, 4.0, 0.0, std::numeric_limits<double>::infinity()}};
    TargetAssignment ta;
    ta.label = {1};
    ta.d_start = {0.0};
    ta.d_end = {2.0};
    ta.positives = {0};
    Mat<double> off(1, 2);
    off << 4.0, -2.0;
    Tensor<double> w = Tensor<double>::ones(1, 1);
    const double loss = diou_regression_loss(Tensor<double>(off), ta, pts, w).item();
    CHECK(loss == doctest::Approx(1.0 + 16.0 / 36.0).epsilon(1e-9));
}

TEST_CASE("diou is invariant to uniform time rescaling") {
    Rng rng(251);
    for (int trial = 0; trial < 20; ++trial) {
        const double t = rng.uniform(2.0, 20.0);
        std::vector<PyramidPoint> pts{{0, 0, t, 0.0, std::numeric_limits<double>::infinity()}};
        TargetAssignment ta;
        ta.label = {1};
        ta.d_start = {rng.uniform(0.5, 4.0)};
        ta.d_end = {rng.uniform(0.5, 4.0)};
        ta.positives = {0};
        Mat<double> off(1, 2);
        off << rng.uniform(0.1, 5.0), rng.uniform(0.1, 5.0);
        Tensor<double> w = Tensor<double>::ones(1, 1);
        const double base = diou_regression_loss(Tensor<double>(off), ta, pts, w).item();

        const double c = 7.0;
        std::vector<PyramidPoint> pts2{
            {0, 0, c * t, 0.0, std::numeric_limits<double>::infinity()}};
        TargetAssignment ta2 = ta;
        ta2.d_start[0] *= c;
        ta2.d_end[0] *= c;
        Mat<double> off2 = off * c;
        const double scaled = diou_regression_loss(Tensor<double>(off2), ta2, pts2, w).item();
        CHECK(scaled == doctest::Approx(base).epsilon(1e-9));
    }
}

TEST_CASE("diou gradients vs finite differences") {
    std::vector<PyramidPoint> pts = grid_points({6}, 1.0, 4.0);
    auto ta = assign_targets(pts, 1.0, 4.5);
    REQUIRE_FALSE(ta.positives.empty());
    Rng rng(257);
    Mat<double> off(static_cast<Index>(pts.size()), 2);
    for (Index i = 0; i < off.rows(); ++i) {
        off(i, 0) = rng.uniform(0.3, 3.0);
        off(i, 1) = rng.uniform(0.3, 3.0);
    }
    Tensor<double> offsets(off, true);
    Tensor<double> w = Tensor<double>::ones(static_cast<Index>(ta.positives.size()), 1);
    auto res = finite_diff_check({offsets}, [&] {
        return diou_regression_loss(offsets, ta, pts, w);
    });
    CHECK(res.ok);
}

TEST_CASE("asl off forces unit weights and rho/tau independence") {
    auto pts = grid_points({16, 8}, 1.0, 4.0);
    auto ta = assign_targets(pts, 3.0, 9.0);
    REQUIRE_FALSE(ta.positives.empty());
    Tensor<double> rho(Mat<double>(Mat<double>::Constant(2, 1, 0.7)), true);
    Tensor<double> tau(Mat<double>(Mat<double>::Constant(2, 1, -0.4)), true);
    Tensor<double> w_off =
        gaussian_asl_weights(rho, tau, pts, ta, 3.0, 9.0, 0.25, /*asl_on=*/false);
    CHECK(w_off.value().minCoeff() == 1.0);
    CHECK(w_off.value().maxCoeff() == 1.0);

    Rng rng(263);
    Mat<double> logits_m(static_cast<Index>(pts.size()), 1);
    Mat<double> off_m(static_cast<Index>(pts.size()), 2);
    for (Index i = 0; i < logits_m.rows(); ++i) {
        logits_m(i, 0) = rng.normal();
        off_m(i, 0) = rng.uniform(0.2, 4.0);
        off_m(i, 1) = rng.uniform(0.2, 4.0);
    }
    FlatOutputs<double> flat;
    flat.logits = Tensor<double>(logits_m);
    flat.offsets = Tensor<double>(off_m);
    flat.points = pts;
    LossConfig cfg;
    auto l1 = total_loss(flat, 3.0, 9.0, rho, tau, cfg, /*asl_on=*/false);
    rho.value_mut().setConstant(-2.0);
    tau.value_mut().setConstant(1.9);
    auto l2 = total_loss(flat, 3.0, 9.0, rho, tau, cfg, /*asl_on=*/false);
    CHECK(l1.total.item() == l2.total.item());
}

TEST_CASE("no positives leaves the classification term only") {
    auto pts = grid_points({8}, 1.0, 4.0);
    // segment placed past every grid point
    FlatOutputs<double> flat;
    flat.points = pts;
    Rng rng(269);
    Mat<double> lg(8, 1);
    for (Index i = 0; i < 8; ++i) lg(i, 0) = rng.normal();
    flat.logits = Tensor<double>(lg);
    flat.offsets = Tensor<double>::zeros(8, 2);
    Tensor<double> rho = Tensor<double>::zeros(1, 1, true);
    Tensor<double> tau = Tensor<double>::zeros(1, 1, true);
    LossConfig cfg;
    auto res = total_loss(flat, 7.4, 7.6, rho, tau, cfg, true);
    CHECK(res.n_pos == 0);
    CHECK(res.reg == 0.0);
    CHECK(res.total.item() == doctest::Approx(res.cls));
}

TEST_CASE("total loss gradients through rho, tau, logits and offsets") {
    auto pts = grid_points({12, 6}, 1.0, 4.0);
    Rng rng(271);
    Mat<double> lg(static_cast<Index>(pts.size()), 1);
    Mat<double> off(static_cast<Index>(pts.size()), 2);
    for (Index i = 0; i < lg.rows(); ++i) {
        lg(i, 0) = rng.normal();
        off(i, 0) = rng.uniform(0.3, 4.0);
        off(i, 1) = rng.uniform(0.3, 4.0);
    }
    Tensor<double> logits(lg, true);
    Tensor<double> offsets(off, true);
    Tensor<double> rho(Mat<double>(Mat<double>::Constant(2, 1, 0.25)), true);
    Tensor<double> tau(Mat<double>(Mat<double>::Constant(2, 1, -0.5)), true);
    LossConfig cfg;
    auto res = finite_diff_check({logits, offsets, rho, tau}, [&] {
        FlatOutputs<double> flat;
        flat.logits = logits;
        flat.offsets = offsets;
        flat.points = pts;
        return total_loss(flat, 2.5, 8.5, rho, tau, cfg, true).total;
    });
    CHECK(res.ok);
    CHECK(res.max_rel <= 1e-4);
}
