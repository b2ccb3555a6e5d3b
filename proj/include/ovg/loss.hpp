#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "ovg/config.hpp"
#include "ovg/model.hpp"
#include "ovg/tensor.hpp"

namespace ovg {

// A candidate prediction site on the pyramid. `time_s` is the point's clock
// position; the regression range bounds max(d_start, d_end) for a positive.
struct PyramidPoint {
    int level = 0;
    Index index = 0;
    double time_s = 0.0;
    double range_min_s = 0.0;
    double range_max_s = std::numeric_limits<double>::infinity();
};

struct TargetAssignment {
    std::vector<std::uint8_t> label;
    std::vector<double> d_start;  // meaningful where label == 1
    std::vector<double> d_end;
    std::vector<Index> positives;  // flat indices with label == 1
};

// Model outputs flattened across levels, restricted to valid positions and
// aligned with `points`.
template <typename S>
struct FlatOutputs {
    Tensor<S> logits;   // N x 1
    Tensor<S> offsets;  // N x 2 (seconds)
    std::vector<PyramidPoint> points;
};

// Geometric regression ranges: level 0 covers (0, r0], level l covers
// (2^(l-1) r0, 2^l r0], and the top level is unbounded above.
inline void regression_range(int level, int n_levels, double r0, double* lo, double* hi) {
    *lo = level == 0 ? 0.0 : std::ldexp(r0, level - 1);
    *hi = level == n_levels - 1 ? std::numeric_limits<double>::infinity()
                                : std::ldexp(r0, level);
}

template <typename S>
FlatOutputs<S> flatten_outputs(const ModelOutput<S>& out, double base_stride_s,
                               double duration_s, double range_base_strides) {
    FlatOutputs<S> flat;
    const int n_levels = static_cast<int>(out.levels.size());
    const double r0 = range_base_strides * base_stride_s;
    std::vector<Tensor<S>> logit_parts, offset_parts;
    for (int l = 0; l < n_levels; ++l) {
        const auto& lvl = out.levels[static_cast<std::size_t>(l)];
        double lo, hi;
        regression_range(l, n_levels, r0, &lo, &hi);
        std::vector<Index> keep;
        for (Index i = 0; i < lvl.logits.rows(); ++i) {
            if (!lvl.valid.is_valid(i)) continue;
            const double t = static_cast<double>(i) * lvl.stride * base_stride_s;
            if (t > duration_s + 1e-9) continue;
            keep.push_back(i);
            flat.points.push_back({l, i, t, lo, hi});
        }
        if (keep.empty()) continue;
        logit_parts.push_back(gather_rows(lvl.logits, keep));
        offset_parts.push_back(gather_rows(lvl.offsets, keep));
    }
    flat.logits = concat_rows(logit_parts);
    flat.offsets = concat_rows(offset_parts);
    return flat;
}

// Point labeling for one ground-truth segment: positive iff the point lies
// inside [s, e] and max(t-s, e-t) falls in the level's regression range.
inline TargetAssignment assign_targets(const std::vector<PyramidPoint>& points, double s,
                                       double e) {
    if (!(s < e)) throw DataError("assign_targets: segment end must exceed start");
    if (s < 0.0) throw DataError("assign_targets: negative segment start");
    TargetAssignment ta;
    ta.label.resize(points.size(), 0);
    ta.d_start.resize(points.size(), 0.0);
    ta.d_end.resize(points.size(), 0.0);
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto& p = points[i];
        if (p.time_s < s || p.time_s > e) continue;
        const double ds = p.time_s - s;
        const double de = e - p.time_s;
        const double m = std::max(ds, de);
        if (m <= p.range_min_s || m > p.range_max_s) continue;
        ta.label[i] = 1;
        ta.d_start[i] = ds;
        ta.d_end[i] = de;
        ta.positives.push_back(static_cast<Index>(i));
    }
    return ta;
}

// Learnable Gaussian weight for one positive point:
//   mu = s + sigmoid(rho_l) * (e - s)
//   sigma = max(sigmoid(tau_l) * (e - s), sigma_floor)
//   w = exp(-(t - mu)^2 / (2 sigma^2))       in (0, 1], 1 exactly at mu.
// Gradients flow into rho_raw/tau_raw rows of the point's level.
template <typename S>
Tensor<S> gaussian_asl_weight(const Tensor<S>& rho_raw, const Tensor<S>& tau_raw, int level,
                              double time_s, double s, double e, double sigma_floor_s) {
    const S len = static_cast<S>(e - s);
    Tensor<S> rho = sigmoid(slice_rows(rho_raw, level, 1));
    Tensor<S> tau = sigmoid(slice_rows(tau_raw, level, 1));
    Tensor<S> mu = add_const(scale(rho, len), static_cast<S>(s));
    Tensor<S> sigma = clamp_min(scale(tau, len), static_cast<S>(sigma_floor_s));
    Tensor<S> diff = sub(Tensor<S>::scalar(static_cast<S>(time_s)), mu);
    return exp_t(neg(div(square(diff), scale(square(sigma), S(2)))));
}

// Weights for all positives, as an n_pos x 1 column aligned with
// assignment.positives. With ASL off this is a constant ones column.
template <typename S>
Tensor<S> gaussian_asl_weights(const Tensor<S>& rho_raw, const Tensor<S>& tau_raw,
                               const std::vector<PyramidPoint>& points,
                               const TargetAssignment& ta, double s, double e,
                               double sigma_floor_s, bool asl_on) {
    const Index n_pos = static_cast<Index>(ta.positives.size());
    if (!asl_on || n_pos == 0) return Tensor<S>::ones(std::max<Index>(n_pos, 0), 1);
    std::vector<Tensor<S>> parts;
    parts.reserve(static_cast<std::size_t>(n_pos));
    for (Index i : ta.positives) {
        const auto& p = points[static_cast<std::size_t>(i)];
        parts.push_back(gaussian_asl_weight(rho_raw, tau_raw, p.level, p.time_s, s, e,
                                            sigma_floor_s));
    }
    return concat_rows(parts);
}

// Sigmoid focal loss over all points. Positives are weighted by alpha and by
// their per-point weight; negatives carry neither. Normalized by the number
// of positives (minimum 1).
template <typename S>
Tensor<S> focal_bce_loss(const Tensor<S>& logits, const TargetAssignment& ta,
                         const Tensor<S>& pos_weights, double gamma, double alpha) {
    const Index n = logits.rows();
    if (static_cast<std::size_t>(n) != ta.label.size())
        throw ShapeError("focal_bce_loss: label count mismatch");
    const Index n_pos = static_cast<Index>(ta.positives.size());
    std::vector<Index> negatives;
    negatives.reserve(static_cast<std::size_t>(n - n_pos));
    for (Index i = 0; i < n; ++i)
        if (!ta.label[static_cast<std::size_t>(i)]) negatives.push_back(i);

    Tensor<S> total = Tensor<S>::scalar(S(0));
    if (n_pos > 0) {
        Tensor<S> zp = gather_rows(logits, ta.positives);
        Tensor<S> p = sigmoid(zp);
        Tensor<S> focus = pow_const(add_const(neg(p), S(1)), static_cast<S>(gamma));
        Tensor<S> ce = softplus(neg(zp));
        Tensor<S> terms = mul(pos_weights, mul(focus, ce));
        total = add(total, scale(sum_all(terms), static_cast<S>(alpha)));
    }
    if (!negatives.empty()) {
        Tensor<S> zn = gather_rows(logits, negatives);
        Tensor<S> p = sigmoid(zn);
        Tensor<S> focus = pow_const(p, static_cast<S>(gamma));
        Tensor<S> ce = softplus(zn);
        total = add(total, sum_all(mul(focus, ce)));
    }
    return scale(total, S(1) / static_cast<S>(std::max<Index>(n_pos, 1)));
}

// 1-D distance-IoU loss over positives:
//   loss = 1 - IoU(pred, gt) + (center delta)^2 / (enclosing length)^2
// weighted per point, mean over positives. Degenerate predictions are kept
// finite by an epsilon floor on interval lengths.
template <typename S>
Tensor<S> diou_regression_loss(const Tensor<S>& offsets, const TargetAssignment& ta,
                               const std::vector<PyramidPoint>& points,
                               const Tensor<S>& pos_weights) {
    const Index n_pos = static_cast<Index>(ta.positives.size());
    if (n_pos == 0) return Tensor<S>::scalar(S(0));
    constexpr S eps_len = S(1e-4);

    std::vector<S> t_v, gs_v, ge_v;
    for (Index i : ta.positives) {
        const auto idx = static_cast<std::size_t>(i);
        t_v.push_back(static_cast<S>(points[idx].time_s));
        gs_v.push_back(static_cast<S>(points[idx].time_s - ta.d_start[idx]));
        ge_v.push_back(static_cast<S>(points[idx].time_s + ta.d_end[idx]));
    }
    Tensor<S> t = Tensor<S>::column(t_v);
    Tensor<S> gs = Tensor<S>::column(gs_v);
    Tensor<S> ge = Tensor<S>::column(ge_v);

    Tensor<S> pred = gather_rows(offsets, ta.positives);
    Tensor<S> ps = sub(t, slice_cols(pred, 0, 1));
    Tensor<S> pe = add(t, slice_cols(pred, 1, 1));

    Tensor<S> inter = clamp_min(sub(min_elt(pe, ge), max_elt(ps, gs)), S(0));
    Tensor<S> len_p = clamp_min(sub(pe, ps), eps_len);
    Tensor<S> len_g = sub(ge, gs);
    Tensor<S> uni = clamp_min(sub(add(len_p, len_g), inter), eps_len);
    Tensor<S> iou = div(inter, uni);

    Tensor<S> dc = scale(sub(add(ps, pe), add(gs, ge)), S(0.5));
    Tensor<S> enc = clamp_min(sub(max_elt(pe, ge), min_elt(ps, gs)), eps_len);
    Tensor<S> diou = add(add_const(neg(iou), S(1)), div(square(dc), square(enc)));

    return scale(sum_all(mul(pos_weights, diou)), S(1) / static_cast<S>(n_pos));
}

template <typename S>
struct LossResult {
    Tensor<S> total;
    double cls = 0.0;
    double reg = 0.0;
    int n_pos = 0;
};

// total = focal + lambda_reg * diou, with both per-point terms of each
// positive scaled by its Gaussian weight. With no positives in the batch the
// classification term stands alone (callers flag this in logs).
template <typename S>
LossResult<S> total_loss(const FlatOutputs<S>& flat, double gt_start, double gt_end,
                         const Tensor<S>& rho_raw, const Tensor<S>& tau_raw,
                         const LossConfig& cfg, bool asl_on) {
    TargetAssignment ta = assign_targets(flat.points, gt_start, gt_end);
    Tensor<S> w = gaussian_asl_weights(rho_raw, tau_raw, flat.points, ta, gt_start, gt_end,
                                       cfg.sigma_floor_s, asl_on);
    Tensor<S> cls = focal_bce_loss(flat.logits, ta, w, cfg.focal_gamma, cfg.focal_alpha);
    LossResult<S> res;
    res.n_pos = static_cast<int>(ta.positives.size());
    res.cls = static_cast<double>(cls.item());
    if (res.n_pos > 0) {
        Tensor<S> reg = diou_regression_loss(flat.offsets, ta, flat.points, w);
        res.reg = static_cast<double>(reg.item());
        res.total = add(cls, scale(reg, static_cast<S>(cfg.lambda_reg)));
    } else {
        res.total = cls;
    }
    return res;
}

}  // namespace ovg
