#include "ovg/gradcheck.hpp"

#include <cmath>
#include <functional>
#include <sstream>

#include "ovg/loss.hpp"
#include "ovg/model.hpp"

namespace ovg {

namespace {

constexpr double kStep = 1e-5;
constexpr double kRelTol = 1e-4;
constexpr double kAbsTol = 1e-7;

struct Coord {
    Tensor<double>* leaf;
    Index i, j;
};

Mat<double> randn(Index r, Index c, Rng& rng) {
    Mat<double> m(r, c);
    for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < c; ++j) m(i, j) = rng.normal();
    return m;
}

// Checks selected coordinates (all coordinates when `coords` is empty).
GradcheckEntry check_coords(const std::string& name, std::vector<Tensor<double>> leaves,
                            const std::function<Tensor<double>()>& loss_fn,
                            const std::vector<Coord>& coords = {}) {
    GradcheckEntry entry;
    entry.name = name;
    for (auto& l : leaves) l.zero_grad();
    loss_fn().backward();

    auto probe = [&](Tensor<double>& leaf, Index i, Index j) {
        const double analytic = leaf.grad()(i, j);
        const double orig = leaf.value()(i, j);
        leaf.value_mut()(i, j) = orig + kStep;
        const double lp = loss_fn().item();
        leaf.value_mut()(i, j) = orig - kStep;
        const double lm = loss_fn().item();
        leaf.value_mut()(i, j) = orig;
        const double fd = (lp - lm) / (2.0 * kStep);
        const double abs_err = std::abs(fd - analytic);
        entry.max_abs = std::max(entry.max_abs, abs_err);
        if (abs_err > kAbsTol) {
            const double rel = abs_err / std::max({std::abs(fd), std::abs(analytic), 1e-12});
            entry.max_rel = std::max(entry.max_rel, rel);
            if (rel > kRelTol) entry.pass = false;
        }
        ++entry.n_coords;
    };

    if (coords.empty()) {
        for (auto& leaf : leaves)
            for (Index i = 0; i < leaf.rows(); ++i)
                for (Index j = 0; j < leaf.cols(); ++j) probe(leaf, i, j);
    } else {
        for (const auto& c : coords) probe(*c.leaf, c.i, c.j);
    }
    return entry;
}

GradcheckEntry check_matmul(Rng& rng) {
    Tensor<double> a(randn(3, 4, rng), true);
    Tensor<double> b(randn(4, 2, rng), true);
    Tensor<double> w(randn(3, 2, rng));
    return check_coords("matmul", {a, b}, [&] { return sum_all(mul(matmul(a, b), w)); });
}

GradcheckEntry check_softmax(Rng& rng) {
    Tensor<double> x(randn(3, 6, rng), true);
    Tensor<double> w(randn(3, 6, rng));
    AttentionMask mask = AttentionMask::first(5, 6);
    return check_coords("softmax(masked)", {x},
                        [&] { return sum_all(mul(softmax(x, 1, &mask), w)); });
}

GradcheckEntry check_layer_norm(Rng& rng) {
    Tensor<double> x(randn(3, 5, rng), true);
    Tensor<double> gamma(randn(1, 5, rng), true);
    Tensor<double> beta(randn(1, 5, rng), true);
    Tensor<double> w(randn(3, 5, rng));
    return check_coords("layer_norm", {x, gamma, beta},
                        [&] { return sum_all(mul(layer_norm(x, gamma, beta), w)); });
}

GradcheckEntry check_attention(Rng& rng) {
    MultiHeadAttention<double> mha(8, 4, rng);
    Tensor<double> x(randn(6, 8, rng), true);
    Tensor<double> w(randn(6, 8, rng));
    AttentionMask mask = AttentionMask::all(6);
    return check_coords(
        "multi_head_attention(window=3)",
        {x, mha.wq.weight, mha.wk.weight, mha.wv.weight, mha.wo.weight},
        [&] { return sum_all(mul(mha.forward(x, x, x, &mask, &mask, 3), w)); });
}

GradcheckEntry check_pointwise(Rng& rng) {
    Tensor<double> x(Mat<double>(randn(2, 8, rng).array() + 0.55), true);
    return check_coords("pointwise(gelu,relu,sigmoid)", {x}, [&] {
        return sum_all(add(gelu(x), add(relu(x), sigmoid(x))));
    });
}

GradcheckEntry check_conv1d(Rng& rng) {
    Tensor<double> x(randn(8, 3, rng), true);
    std::vector<Tensor<double>> taps;
    for (int k = 0; k < 3; ++k) taps.emplace_back(randn(3, 2, rng), true);
    Tensor<double> bias(randn(1, 2, rng), true);
    Tensor<double> w(randn(4, 2, rng));
    return check_coords("conv1d(stride=2)", {x, taps[0], taps[1], taps[2], bias}, [&] {
        return sum_all(mul(conv1d(x, taps, &bias, 2), w));
    });
}

GradcheckEntry check_gate(Rng& rng) {
    GateFusion<double> gate(5, rng);
    Tensor<double> a(randn(4, 5, rng), true);
    Tensor<double> b(randn(4, 5, rng), true);
    Tensor<double> w(randn(4, 5, rng));
    return check_coords("gate_fusion",
                        {a, b, gate.lin1.weight, gate.lin1.bias, gate.lin2.weight,
                         gate.lin2.bias},
                        [&] { return sum_all(mul(gate.forward(a, b), w)); });
}

GradcheckEntry check_asl(Rng&) {
    Tensor<double> rho(Mat<double>(Mat<double>::Constant(2, 1, 0.37)), true);
    Tensor<double> tau(Mat<double>(Mat<double>::Constant(2, 1, -0.21)), true);
    return check_coords("gaussian_asl_weight", {rho, tau}, [&] {
        return gaussian_asl_weight(rho, tau, 1, 3.25, 1.0, 9.0, 0.25);
    });
}

GradcheckEntry check_losses(Rng& rng) {
    std::vector<PyramidPoint> pts;
    const int n_levels = 2;
    const double r0 = 4.0;
    int stride = 1;
    for (int l = 0; l < n_levels; ++l) {
        double lo, hi;
        regression_range(l, n_levels, r0, &lo, &hi);
        for (int i = 0; i < (l == 0 ? 12 : 6); ++i)
            pts.push_back({l, i, static_cast<double>(i * stride), lo, hi});
        stride *= 2;
    }
    Mat<double> lg = randn(static_cast<Index>(pts.size()), 1, rng);
    Mat<double> off(static_cast<Index>(pts.size()), 2);
    for (Index i = 0; i < off.rows(); ++i) {
        off(i, 0) = rng.uniform(0.3, 4.0);
        off(i, 1) = rng.uniform(0.3, 4.0);
    }
    Tensor<double> logits(lg, true);
    Tensor<double> offsets(off, true);
    Tensor<double> rho(Mat<double>(Mat<double>::Constant(2, 1, 0.1)), true);
    Tensor<double> tau(Mat<double>(Mat<double>::Constant(2, 1, -0.3)), true);
    LossConfig cfg;
    return check_coords("total_loss(focal+diou+asl)", {logits, offsets, rho, tau}, [&] {
        FlatOutputs<double> flat;
        flat.logits = logits;
        flat.offsets = offsets;
        flat.points = pts;
        return total_loss(flat, 2.5, 8.5, rho, tau, cfg, true).total;
    });
}

GradcheckEntry check_full_model(std::uint64_t seed) {
    ModelConfig cfg;
    cfg.model_dim = 16;
    cfg.heads = 4;
    cfg.text_blocks = 2;
    cfg.object_blocks = 1;
    cfg.mm_blocks = 1;
    cfg.pyramid_levels = 3;
    cfg.mha_window = 5;
    cfg.ffn_expansion = 2;
    cfg.object_branch = true;
    cfg.video_dim = 8;
    cfg.text_dim = 6;
    cfg.object_dim = 6;

    GroundingModel<double> model(cfg, seed);
    Rng rng(derive_seed(seed, "gradcheck-data"));
    const Index t = 24, n_obj = 8;
    ModelInput<double> in;
    in.video = Tensor<double>(randn(t, cfg.video_dim, rng));
    in.video_valid = AttentionMask::all(t);
    in.text = Tensor<double>(randn(3, cfg.text_dim, rng));
    in.text_valid = AttentionMask::all(3);
    in.objects = Tensor<double>(randn(n_obj, cfg.object_dim, rng));
    for (Index i = 0; i < n_obj; ++i)
        in.object_frames.push_back(static_cast<int>((5 * i) % t));
    in.base_stride_s = 1.0;
    in.duration_s = static_cast<double>(t);

    LossConfig loss_cfg;
    auto loss_fn = [&]() {
        ModelOutput<double> out = model.forward(in);
        FlatOutputs<double> flat =
            flatten_outputs(out, in.base_stride_s, in.duration_s, loss_cfg.range_base_strides);
        return total_loss(flat, 6.0, 17.0, model.rho_raw(), model.tau_raw(), loss_cfg, true)
            .total;
    };

    // Sample >= 200 coordinates: every ASL parameter, a slice of each gate
    // MLP, and a stratified sample across all remaining parameter groups.
    auto params = model.parameters();
    std::vector<Tensor<double>> leaves;
    std::vector<std::string> names;
    for (auto& [name, p] : params) {
        leaves.push_back(p);
        names.push_back(name);
    }
    std::vector<Coord> coords;
    Rng pick(derive_seed(seed, "gradcheck-pick"));
    for (std::size_t k = 0; k < leaves.size(); ++k) {
        auto& leaf = leaves[k];
        const bool is_asl = names[k].rfind("asl.", 0) == 0;
        const bool is_gate = names[k].find(".gate.") != std::string::npos;
        Index want = 1;
        if (is_asl)
            want = leaf.rows() * leaf.cols();
        else if (is_gate)
            want = std::min<Index>(4, leaf.rows() * leaf.cols());
        for (Index c = 0; c < want; ++c) {
            const Index i = is_asl ? c : static_cast<Index>(pick.uniform_int(
                                             0, static_cast<int>(leaf.rows() - 1)));
            const Index j = is_asl ? 0 : static_cast<Index>(pick.uniform_int(
                                             0, static_cast<int>(leaf.cols() - 1)));
            coords.push_back({&leaves[k], i, j});
        }
    }
    std::size_t k = 0;
    while (coords.size() < 200) {
        auto& leaf = leaves[k % leaves.size()];
        coords.push_back({&leaf,
                          static_cast<Index>(pick.uniform_int(0, static_cast<int>(leaf.rows() - 1))),
                          static_cast<Index>(pick.uniform_int(0, static_cast<int>(leaf.cols() - 1)))});
        ++k;
    }
    return check_coords("full_model_total_loss", leaves, loss_fn, coords);
}

}  // namespace

std::string GradcheckReport::to_string() const {
    std::ostringstream out;
    char buf[160];
    for (const auto& e : entries) {
        std::snprintf(buf, sizeof(buf), "%-34s %6d coords  max_rel %.3e  max_abs %.3e  %s\n",
                      e.name.c_str(), e.n_coords, e.max_rel, e.max_abs,
                      e.pass ? "ok" : "FAIL");
        out << buf;
    }
    std::snprintf(buf, sizeof(buf), "overall max_rel %.3e  %s\n", max_rel,
                  pass ? "PASS" : "FAIL");
    out << buf;
    return out.str();
}

GradcheckReport run_gradcheck(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "gradcheck-ops"));
    GradcheckReport report;
    report.entries.push_back(check_matmul(rng));
    report.entries.push_back(check_softmax(rng));
    report.entries.push_back(check_layer_norm(rng));
    report.entries.push_back(check_attention(rng));
    report.entries.push_back(check_pointwise(rng));
    report.entries.push_back(check_conv1d(rng));
    report.entries.push_back(check_gate(rng));
    report.entries.push_back(check_asl(rng));
    report.entries.push_back(check_losses(rng));
    report.entries.push_back(check_full_model(seed));
    for (const auto& e : report.entries) {
        report.max_rel = std::max(report.max_rel, e.max_rel);
        report.pass = report.pass && e.pass;
    }
    return report;
}

}  // namespace ovg
