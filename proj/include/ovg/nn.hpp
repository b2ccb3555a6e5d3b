#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "ovg/config.hpp"
#include "ovg/tensor.hpp"

namespace ovg {

// Named parameter registry. Registration order defines the serialization
// order of checkpoints, so modules must collect in construction order.
template <typename S>
using ParamList = std::vector<std::pair<std::string, Tensor<S>>>;

template <typename S>
struct Linear {
    Tensor<S> weight;  // in x out
    Tensor<S> bias;    // 1 x out

    Linear() = default;
    Linear(Index in, Index out, Rng& rng) {
        const S std_dev = static_cast<S>(std::sqrt(2.0 / static_cast<double>(in + out)));
        weight = Tensor<S>::randn(in, out, rng, std_dev, true);
        bias = Tensor<S>::zeros(1, out, true);
    }

    Tensor<S> forward(const Tensor<S>& x) const { return add(matmul(x, weight), bias); }

    void collect(const std::string& prefix, ParamList<S>& out) const {
        out.emplace_back(prefix + ".weight", weight);
        out.emplace_back(prefix + ".bias", bias);
    }
};

template <typename S>
struct LayerNorm {
    Tensor<S> gamma;
    Tensor<S> beta;
    S eps = S(1e-5);

    LayerNorm() = default;
    explicit LayerNorm(Index dim) {
        gamma = Tensor<S>::ones(1, dim, true);
        beta = Tensor<S>::zeros(1, dim, true);
    }

    Tensor<S> forward(const Tensor<S>& x) const { return layer_norm(x, gamma, beta, eps); }

    void collect(const std::string& prefix, ParamList<S>& out) const {
        out.emplace_back(prefix + ".gamma", gamma);
        out.emplace_back(prefix + ".beta", beta);
    }
};

template <typename S>
struct FeedForward {
    Linear<S> lin1;
    Linear<S> lin2;

    FeedForward() = default;
    FeedForward(Index dim, Index expansion, Rng& rng)
        : lin1(dim, dim * expansion, rng), lin2(dim * expansion, dim, rng) {}

    Tensor<S> forward(const Tensor<S>& x) const { return lin2.forward(gelu(lin1.forward(x))); }

    void collect(const std::string& prefix, ParamList<S>& out) const {
        lin1.collect(prefix + ".lin1", out);
        lin2.collect(prefix + ".lin2", out);
    }
};

// Scaled dot-product multi-head attention with optional sliding window.
// The window applies between query/key positions of the same sequence:
// position t sees [t-r, t+r] with r = (window-1)/2. Invalid query rows yield
// zero output rows; invalid key positions are excluded exactly.
template <typename S>
struct MultiHeadAttention {
    Linear<S> wq, wk, wv, wo;
    int heads = 1;

    MultiHeadAttention() = default;
    MultiHeadAttention(Index dim, int n_heads, Rng& rng)
        : wq(dim, dim, rng), wk(dim, dim, rng), wv(dim, dim, rng), wo(dim, dim, rng),
          heads(n_heads) {
        if (dim % n_heads != 0) throw ConfigError("attention dim not divisible by heads");
        // tied query/key start: scores begin as a similarity kernel x^T W^T W y,
        // which biases attention toward matching content from the first step
        wq.weight.value_mut() = wk.weight.value();
    }

    // `score_bias` (Lq x Lk), when given, is added to every head's scores
    // before the softmax; relative-position biases enter through it.
    Tensor<S> forward(const Tensor<S>& q_in, const Tensor<S>& k_in, const Tensor<S>& v_in,
                      const AttentionMask* q_mask, const AttentionMask* kv_mask,
                      Index window = -1, const Tensor<S>* score_bias = nullptr) const {
        const Index dim = wq.weight.cols();
        const Index dh = dim / heads;
        const S att_scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

        Tensor<S> q = wq.forward(q_in);
        Tensor<S> k = wk.forward(k_in);
        Tensor<S> v = wv.forward(v_in);

        SoftmaxMask mask;
        mask.row_valid = q_mask;
        mask.col_valid = kv_mask;
        mask.band_radius = window > 0 ? (window - 1) / 2 : -1;
        if (mask.band_radius >= 0 && q_in.rows() != k_in.rows())
            throw ShapeError("windowed attention requires a shared sequence");
        if (score_bias &&
            (score_bias->rows() != q_in.rows() || score_bias->cols() != k_in.rows()))
            throw ShapeError("attention score bias shape mismatch");

        std::vector<Tensor<S>> head_outs;
        head_outs.reserve(static_cast<std::size_t>(heads));
        for (int h = 0; h < heads; ++h) {
            Tensor<S> qh = slice_cols(q, h * dh, dh);
            Tensor<S> kh = slice_cols(k, h * dh, dh);
            Tensor<S> vh = slice_cols(v, h * dh, dh);
            Tensor<S> scores = scale(matmul(qh, transpose(kh)), att_scale);
            if (score_bias) scores = add(scores, *score_bias);
            Tensor<S> attn = softmax_masked_rows(scores, mask);
            head_outs.push_back(matmul(attn, vh));
        }
        return wo.forward(concat_cols(head_outs));
    }

    void collect(const std::string& prefix, ParamList<S>& out) const {
        wq.collect(prefix + ".wq", out);
        wk.collect(prefix + ".wk", out);
        wv.collect(prefix + ".wv", out);
        wo.collect(prefix + ".wo", out);
    }
};

template <typename S>
struct Conv1dLayer {
    std::vector<Tensor<S>> taps;  // kernel_size entries of in x out
    Tensor<S> bias;
    Index stride = 1;

    Conv1dLayer() = default;
    Conv1dLayer(Index in, Index out, Index kernel_size, Index stride_, Rng& rng)
        : stride(stride_) {
        const S std_dev =
            static_cast<S>(std::sqrt(2.0 / static_cast<double>(in * kernel_size + out)));
        for (Index k = 0; k < kernel_size; ++k)
            taps.push_back(Tensor<S>::randn(in, out, rng, std_dev, true));
        bias = Tensor<S>::zeros(1, out, true);
    }

    Tensor<S> forward(const Tensor<S>& x) const { return conv1d(x, taps, &bias, stride); }

    void collect(const std::string& prefix, ParamList<S>& out) const {
        for (std::size_t k = 0; k < taps.size(); ++k)
            out.emplace_back(prefix + ".tap" + std::to_string(k), taps[k]);
        out.emplace_back(prefix + ".bias", bias);
    }
};

// Standard sinusoidal position encoding rows for arbitrary integer positions.
template <typename S>
Mat<S> sinusoid_rows(const std::vector<int>& positions, Index dim) {
    Mat<S> pe(static_cast<Index>(positions.size()), dim);
    for (Index r = 0; r < pe.rows(); ++r) {
        const double pos = static_cast<double>(positions[static_cast<std::size_t>(r)]);
        for (Index j = 0; j < dim; j += 2) {
            const double freq = std::pow(10000.0, -static_cast<double>(j) / static_cast<double>(dim));
            pe(r, j) = static_cast<S>(std::sin(pos * freq));
            if (j + 1 < dim) pe(r, j + 1) = static_cast<S>(std::cos(pos * freq));
        }
    }
    return pe;
}

template <typename S>
Mat<S> sinusoid_range(Index n, Index dim) {
    std::vector<int> pos(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) pos[static_cast<std::size_t>(i)] = static_cast<int>(i);
    return sinusoid_rows<S>(pos, dim);
}

}  // namespace ovg
