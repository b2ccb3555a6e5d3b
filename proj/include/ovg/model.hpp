#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ovg/config.hpp"
#include "ovg/nn.hpp"
#include "ovg/tensor.hpp"

namespace ovg {

// Pre-norm self-attention block: x += MHA(LN(x)); x += FFN(LN(x)).
template <typename S>
struct SelfAttnBlock {
    LayerNorm<S> ln1, ln2;
    MultiHeadAttention<S> mha;
    FeedForward<S> ffn;

    SelfAttnBlock() = default;
    SelfAttnBlock(Index dim, int heads, Index expansion, Rng& rng)
        : ln1(dim), ln2(dim), mha(dim, heads, rng), ffn(dim, expansion, rng) {}

    Tensor<S> forward(const Tensor<S>& x, const AttentionMask* mask, Index window,
                      double drop, Rng* rng) const {
        Tensor<S> h = ln1.forward(x);
        Tensor<S> att = mha.forward(h, h, h, mask, mask, window);
        if (drop > 0.0 && rng) att = dropout(att, drop, *rng);
        Tensor<S> y = add(x, att);
        Tensor<S> f = ffn.forward(ln2.forward(y));
        if (drop > 0.0 && rng) f = dropout(f, drop, *rng);
        return add(y, f);
    }

    void collect(const std::string& p, ParamList<S>& out) const {
        ln1.collect(p + ".ln1", out);
        mha.collect(p + ".mha", out);
        ln2.collect(p + ".ln2", out);
        ffn.collect(p + ".ffn", out);
    }
};

// Cross-attention followed by FFN. `apply` runs the usual sequential
// residual composition; `delta` returns the total update so callers can
// blend branch updates before adding them onto the trunk.
template <typename S>
struct CrossAttnBranch {
    LayerNorm<S> ln1, ln2;
    MultiHeadAttention<S> attn;
    FeedForward<S> ffn;

    CrossAttnBranch() = default;
    CrossAttnBranch(Index dim, int heads, Index expansion, Rng& rng)
        : ln1(dim), ln2(dim), attn(dim, heads, rng), ffn(dim, expansion, rng) {}

    // q_pos / k_pos are optional position encodings injected into the
    // attention's query and key inputs only (values stay content-only), so
    // temporal alignment stays visible regardless of residual-stream mixing.
    Tensor<S> apply(const Tensor<S>& x, const Tensor<S>& mem, const AttentionMask* x_mask,
                    const AttentionMask* mem_mask, double drop, Rng* rng,
                    const Tensor<S>* q_pos = nullptr, const Tensor<S>* k_pos = nullptr,
                    const Tensor<S>* score_bias = nullptr) const {
        return add(x, delta(x, mem, x_mask, mem_mask, drop, rng, q_pos, k_pos, score_bias));
    }

    Tensor<S> delta(const Tensor<S>& x, const Tensor<S>& mem, const AttentionMask* x_mask,
                    const AttentionMask* mem_mask, double drop, Rng* rng,
                    const Tensor<S>* q_pos = nullptr, const Tensor<S>* k_pos = nullptr,
                    const Tensor<S>* score_bias = nullptr) const {
        Tensor<S> q_in = ln1.forward(x);
        if (q_pos) q_in = add(q_in, *q_pos);
        Tensor<S> k_in = k_pos ? add(mem, *k_pos) : mem;
        Tensor<S> u = attn.forward(q_in, k_in, mem, x_mask, mem_mask, -1, score_bias);
        if (drop > 0.0 && rng) u = dropout(u, drop, *rng);
        Tensor<S> s = add(x, u);
        Tensor<S> f = ffn.forward(ln2.forward(s));
        if (drop > 0.0 && rng) f = dropout(f, drop, *rng);
        return add(u, f);
    }

    void collect(const std::string& p, ParamList<S>& out) const {
        ln1.collect(p + ".ln1", out);
        attn.collect(p + ".attn", out);
        ln2.collect(p + ".ln2", out);
        ffn.collect(p + ".ffn", out);
    }
};

// Elementwise gate: g = sigmoid(MLP(concat(a, b))), output g*a + (1-g)*b.
// Every output element lies in the closed interval between the inputs.
template <typename S>
struct GateFusion {
    Linear<S> lin1;  // 2*dim -> dim
    Linear<S> lin2;  // dim -> dim

    GateFusion() = default;
    GateFusion(Index dim, Rng& rng) : lin1(2 * dim, dim, rng), lin2(dim, dim, rng) {}

    Tensor<S> gate(const Tensor<S>& a, const Tensor<S>& b) const {
        return sigmoid(lin2.forward(gelu(lin1.forward(concat_cols<S>({a, b})))));
    }

    Tensor<S> forward(const Tensor<S>& a, const Tensor<S>& b) const {
        if (a.rows() != b.rows() || a.cols() != b.cols())
            throw ShapeError("gate_fusion: branch shapes differ");
        Tensor<S> g = gate(a, b);
        return add(mul(g, a), mul(add_const(neg(g), S(1)), b));
    }

    void collect(const std::string& p, ParamList<S>& out) const {
        lin1.collect(p + ".lin1", out);
        lin2.collect(p + ".lin2", out);
    }
};

// Object-encoder block. Default: text cross-attention + FFN only, so each
// token's output is a function of that token and the text alone. The SA+CA
// variant inserts object self-attention first, which couples tokens.
template <typename S>
struct ObjectEncoderBlock {
    std::optional<SelfAttnBlock<S>> self_attn;  // SA+CA variant only
    CrossAttnBranch<S> cross;

    ObjectEncoderBlock() = default;
    ObjectEncoderBlock(Index dim, int heads, Index expansion, bool with_self, Rng& rng) {
        if (with_self) self_attn.emplace(dim, heads, expansion, rng);
        cross = CrossAttnBranch<S>(dim, heads, expansion, rng);
    }

    Tensor<S> forward(const Tensor<S>& x, const Tensor<S>& text, const AttentionMask* x_mask,
                      const AttentionMask* text_mask, double drop, Rng* rng) const {
        Tensor<S> h = x;
        if (self_attn) h = self_attn->forward(h, x_mask, -1, drop, rng);
        return cross.apply(h, text, x_mask, text_mask, drop, rng);
    }

    void collect(const std::string& p, ParamList<S>& out) const {
        if (self_attn) self_attn->collect(p + ".sa", out);
        cross.collect(p + ".ca", out);
    }
};

// Multi-modal block: windowed self-attention trunk, then a text branch and
// an object branch whose updates are gate-fused (default) or applied
// sequentially (SOA variant).
template <typename S>
struct MultiModalBlock {
    LayerNorm<S> ln;
    MultiHeadAttention<S> mha;
    CrossAttnBranch<S> text_branch;
    std::optional<CrossAttnBranch<S>> object_branch;
    std::optional<GateFusion<S>> gate;

    MultiModalBlock() = default;
    MultiModalBlock(Index dim, int heads, Index expansion, bool with_object, Rng& rng)
        : ln(dim), mha(dim, heads, rng), text_branch(dim, heads, expansion, rng) {
        if (with_object) {
            object_branch.emplace(dim, heads, expansion, rng);
            gate.emplace(dim, rng);
        }
    }

    Tensor<S> forward(const Tensor<S>& v, const Tensor<S>& text, const Tensor<S>* obj,
                      const AttentionMask* v_mask, const AttentionMask* text_mask,
                      const AttentionMask* obj_mask, Index window, MmVariant variant,
                      double drop, Rng* rng, const Tensor<S>* video_pos = nullptr,
                      const Tensor<S>* obj_pos = nullptr,
                      const Tensor<S>* obj_bias = nullptr) const {
        Tensor<S> h = ln.forward(v);
        Tensor<S> att = mha.forward(h, h, h, v_mask, v_mask, window);
        if (drop > 0.0 && rng) att = dropout(att, drop, *rng);
        Tensor<S> v1 = add(v, att);

        if (!object_branch || obj == nullptr) {
            return add(v1, text_branch.delta(v1, text, v_mask, text_mask, drop, rng));
        }
        if (variant == MmVariant::SOA) {
            Tensor<S> v2 = text_branch.apply(v1, text, v_mask, text_mask, drop, rng);
            return object_branch->apply(v2, *obj, v_mask, obj_mask, drop, rng, video_pos,
                                        obj_pos, obj_bias);
        }
        Tensor<S> bt = text_branch.delta(v1, text, v_mask, text_mask, drop, rng);
        Tensor<S> bo = object_branch->delta(v1, *obj, v_mask, obj_mask, drop, rng, video_pos,
                                            obj_pos, obj_bias);
        return add(v1, gate->forward(bt, bo));
    }

    void collect(const std::string& p, ParamList<S>& out) const {
        ln.collect(p + ".ln", out);
        mha.collect(p + ".mha", out);
        text_branch.collect(p + ".text", out);
        if (object_branch) object_branch->collect(p + ".obj", out);
        if (gate) gate->collect(p + ".gate", out);
    }
};

// Shared-across-levels prediction head: two conv+LN+relu stages and a final
// conv. Invalid rows are zeroed around every conv so padding cannot leak
// into valid positions.
template <typename S>
struct ConvHead {
    Conv1dLayer<S> conv1, conv2, conv_out;
    LayerNorm<S> ln1, ln2;

    ConvHead() = default;
    ConvHead(Index dim, Index out_channels, Rng& rng)
        : conv1(dim, dim, 3, 1, rng),
          conv2(dim, dim, 3, 1, rng),
          conv_out(dim, out_channels, 3, 1, rng),
          ln1(dim),
          ln2(dim) {}

    Tensor<S> forward(const Tensor<S>& x, const AttentionMask& mask) const {
        Tensor<S> h = zero_invalid_rows(x, mask);
        h = relu(ln1.forward(conv1.forward(h)));
        h = zero_invalid_rows(h, mask);
        h = relu(ln2.forward(conv2.forward(h)));
        h = zero_invalid_rows(h, mask);
        return conv_out.forward(h);
    }

    void collect(const std::string& p, ParamList<S>& out) const {
        conv1.collect(p + ".conv1", out);
        ln1.collect(p + ".ln1", out);
        conv2.collect(p + ".conv2", out);
        ln2.collect(p + ".ln2", out);
        conv_out.collect(p + ".out", out);
    }
};

template <typename S>
struct ModelInput {
    Tensor<S> video;  // T x video_dim
    AttentionMask video_valid;
    Tensor<S> text;  // L x text_dim, L >= 1
    AttentionMask text_valid;
    Tensor<S> objects;  // N_o x object_dim; 0x0 when absent
    std::vector<int> object_frames;
    double base_stride_s = 1.0;
    double duration_s = 0.0;
};

template <typename S>
struct LevelOutput {
    Tensor<S> feat;     // T_l x model_dim
    Tensor<S> logits;   // T_l x 1
    Tensor<S> offsets;  // T_l x 2, nonnegative, seconds
    AttentionMask valid;
    int stride = 1;  // in base strides, 2^level
};

template <typename S>
struct ModelOutput {
    std::vector<LevelOutput<S>> levels;
    Tensor<S> text_feat;
    Tensor<S> object_feat;
    Tensor<S> mm_feat;
};

// Full grounding model: text encoder, object encoder, multi-modal encoder
// with gated dual branches, multi-scale pyramid, shared prediction heads and
// per-level Gaussian loss-weight parameters.
template <typename S>
class GroundingModel {
   public:
    GroundingModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
        cfg_.validate();
        Rng rng(derive_seed(seed, "model-init"));
        const Index d = cfg_.model_dim;

        video_in_ = Linear<S>(cfg_.video_dim, d, rng);
        text_in_ = Linear<S>(cfg_.text_dim, d, rng);
        for (int b = 0; b < cfg_.text_blocks; ++b)
            text_blocks_.emplace_back(d, cfg_.heads, cfg_.ffn_expansion, rng);
        text_final_ = LayerNorm<S>(d);

        if (cfg_.object_branch) {
            object_in_ = Linear<S>(cfg_.object_dim, d, rng);
            // when the object and text inputs share a width, start them in the
            // same basis so cross-modal similarity is visible immediately
            if (cfg_.object_dim == cfg_.text_dim)
                object_in_.weight.value_mut() = text_in_.weight.value();
            const bool with_self = cfg_.object_encoder_variant == ObjectEncoderVariant::SA_CA;
            for (int b = 0; b < cfg_.object_blocks; ++b)
                object_blocks_.emplace_back(d, cfg_.heads, cfg_.ffn_expansion, with_self, rng);
            object_final_ = LayerNorm<S>(d);
        }

        for (int b = 0; b < cfg_.mm_blocks; ++b)
            mm_blocks_.emplace_back(d, cfg_.heads, cfg_.ffn_expansion, cfg_.object_branch, rng);
        mm_final_ = LayerNorm<S>(d);

        for (int l = 0; l < cfg_.pyramid_levels; ++l) {
            if (l > 0) pyramid_downs_.emplace_back(d, d, 3, 2, rng);
            pyramid_blocks_.emplace_back(d, cfg_.heads, cfg_.ffn_expansion, rng);
        }

        cls_head_ = ConvHead<S>(d, 1, rng);
        reg_head_ = ConvHead<S>(d, 2, rng);
        // detection prior ~1% keeps early classification loss tame
        cls_head_.conv_out.bias.value_mut()(0, 0) = static_cast<S>(-std::log(99.0));
        // start regression offsets away from the dead ReLU region
        reg_head_.conv_out.bias.value_mut().setConstant(S(1));

        rho_raw_ = Tensor<S>::zeros(cfg_.pyramid_levels, 1, true);
        tau_raw_ = Tensor<S>::zeros(cfg_.pyramid_levels, 1, true);
    }

    const ModelConfig& config() const { return cfg_; }

    ParamList<S> parameters() const {
        ParamList<S> out;
        video_in_.collect("video_in", out);
        text_in_.collect("text_in", out);
        for (std::size_t b = 0; b < text_blocks_.size(); ++b)
            text_blocks_[b].collect("text_enc.block" + std::to_string(b), out);
        text_final_.collect("text_enc.final", out);
        if (cfg_.object_branch) {
            object_in_.collect("object_in", out);
            for (std::size_t b = 0; b < object_blocks_.size(); ++b)
                object_blocks_[b].collect("object_enc.block" + std::to_string(b), out);
            object_final_.collect("object_enc.final", out);
        }
        for (std::size_t b = 0; b < mm_blocks_.size(); ++b)
            mm_blocks_[b].collect("mm_enc.block" + std::to_string(b), out);
        mm_final_.collect("mm_enc.final", out);
        for (std::size_t l = 0; l < pyramid_downs_.size(); ++l)
            pyramid_downs_[l].collect("pyramid.down" + std::to_string(l + 1), out);
        for (std::size_t l = 0; l < pyramid_blocks_.size(); ++l)
            pyramid_blocks_[l].collect("pyramid.block" + std::to_string(l), out);
        cls_head_.collect("cls_head", out);
        reg_head_.collect("reg_head", out);
        out.emplace_back("asl.rho_raw", rho_raw_);
        out.emplace_back("asl.tau_raw", tau_raw_);
        return out;
    }

    // Copies text-encoder attention/FFN weights into the object encoder's
    // cross-attention/FFN, and each multi-modal text branch into its object
    // branch. Deep copies; idempotent.
    void init_object_params_from_text() {
        if (!cfg_.object_branch) return;
        const std::size_t nb = std::min(object_blocks_.size(), text_blocks_.size());
        for (std::size_t b = 0; b < nb; ++b) {
            copy_mha(text_blocks_[b].mha, object_blocks_[b].cross.attn);
            copy_ffn(text_blocks_[b].ffn, object_blocks_[b].cross.ffn);
        }
        for (auto& blk : mm_blocks_) {
            if (!blk.object_branch) continue;
            copy_mha(blk.text_branch.attn, blk.object_branch->attn);
            copy_ffn(blk.text_branch.ffn, blk.object_branch->ffn);
        }
    }

    Tensor<S> encode_text(const Tensor<S>& text, const AttentionMask& mask, Rng* rng = nullptr) const {
        if (text.rows() < 1) throw DataError("text encoder: empty text");
        if (mask.count_valid() < 1) throw DataError("text encoder: no valid tokens");
        Tensor<S> pe(sinusoid_range<S>(text.rows(), cfg_.model_dim), false);
        Tensor<S> h = add(scale(text_in_.forward(text), embed_scale()), pe);
        for (const auto& blk : text_blocks_)
            h = blk.forward(h, &mask, -1, cfg_.dropout, rng);
        return zero_invalid_rows(text_final_.forward(h), mask);
    }

    Tensor<S> encode_objects(const Tensor<S>& objects, const std::vector<int>& frames,
                             const AttentionMask& mask, const Tensor<S>& text_feat,
                             const AttentionMask& text_mask, Rng* rng = nullptr) const {
        if (!cfg_.object_branch) throw ConfigError("object encoder disabled by config");
        if (objects.rows() == 0) throw DataError("object encoder: no object tokens");
        if (static_cast<Index>(frames.size()) != objects.rows())
            throw ShapeError("object encoder: frame index count mismatch");
        Tensor<S> pe(sinusoid_rows<S>(frames, cfg_.model_dim), false);
        Tensor<S> h = add(scale(object_in_.forward(objects), embed_scale()), pe);
        for (const auto& blk : object_blocks_)
            h = blk.forward(h, text_feat, &mask, &text_mask, cfg_.dropout, rng);
        return zero_invalid_rows(object_final_.forward(h), mask);
    }

    Tensor<S> encode_multimodal(const Tensor<S>& video, const AttentionMask& v_mask,
                                const Tensor<S>& text_feat, const AttentionMask& text_mask,
                                const Tensor<S>* obj_feat, const AttentionMask* obj_mask,
                                const std::vector<int>* obj_frames = nullptr,
                                Rng* rng = nullptr) const {
        Tensor<S> pe(sinusoid_range<S>(video.rows(), cfg_.model_dim), false);
        Tensor<S> h = add(scale(video_in_.forward(video), embed_scale()), pe);
        Tensor<S> obj_pe, obj_bias;
        const bool with_pos = obj_feat != nullptr && obj_frames != nullptr;
        if (with_pos) {
            obj_pe = Tensor<S>(sinusoid_rows<S>(*obj_frames, cfg_.model_dim), false);
            // Gaussian relative-position bias: position t prefers object
            // tokens detected near frame t, with width set by the MHA window
            const double sigma = static_cast<double>(cfg_.mha_window);
            Mat<S> bias(video.rows(), static_cast<Index>(obj_frames->size()));
            for (Index t = 0; t < bias.rows(); ++t)
                for (Index j = 0; j < bias.cols(); ++j) {
                    const double d = static_cast<double>(t) -
                                     (*obj_frames)[static_cast<std::size_t>(j)];
                    bias(t, j) = static_cast<S>(-(d * d) / (2.0 * sigma * sigma));
                }
            obj_bias = Tensor<S>(std::move(bias), false);
        }
        for (const auto& blk : mm_blocks_)
            h = blk.forward(h, text_feat, obj_feat, &v_mask, &text_mask, obj_mask,
                            cfg_.mha_window, cfg_.mm_variant, cfg_.dropout, rng,
                            with_pos ? &pe : nullptr, with_pos ? &obj_pe : nullptr,
                            with_pos ? &obj_bias : nullptr);
        return mm_final_.forward(h);
    }

    // Stride-2 feature pyramid; level l has ceil(T / 2^l) positions.
    std::vector<std::pair<Tensor<S>, AttentionMask>> encode_pyramid(
        const Tensor<S>& x, const AttentionMask& mask, Rng* rng = nullptr) const {
        const Index min_len = Index(1) << (cfg_.pyramid_levels - 1);
        if (x.rows() < min_len)
            throw ConfigError("pyramid: sequence length " + std::to_string(x.rows()) +
                              " is shorter than 2^(levels-1) = " + std::to_string(min_len) +
                              "; reduce pyramid_levels or lengthen the clip");
        std::vector<std::pair<Tensor<S>, AttentionMask>> levels;
        Tensor<S> h = x;
        AttentionMask m = mask;
        for (int l = 0; l < cfg_.pyramid_levels; ++l) {
            if (l > 0) {
                h = zero_invalid_rows(h, m);
                h = pyramid_downs_[static_cast<std::size_t>(l - 1)].forward(h);
                AttentionMask down;
                down.valid.resize(static_cast<std::size_t>(h.rows()));
                for (Index t = 0; t < h.rows(); ++t)
                    down.valid[static_cast<std::size_t>(t)] =
                        (2 * t < m.length() && m.is_valid(2 * t)) ? 1 : 0;
                m = down;
            }
            h = pyramid_blocks_[static_cast<std::size_t>(l)].forward(h, &m, cfg_.mha_window,
                                                                     cfg_.dropout, rng);
            levels.emplace_back(h, m);
        }
        return levels;
    }

    ModelOutput<S> forward(const ModelInput<S>& in, Rng* rng = nullptr) const {
        ModelOutput<S> out;
        AttentionMask text_mask = in.text_valid.length() == in.text.rows()
                                      ? in.text_valid
                                      : AttentionMask::all(in.text.rows());
        AttentionMask video_mask = in.video_valid.length() == in.video.rows()
                                       ? in.video_valid
                                       : AttentionMask::all(in.video.rows());
        out.text_feat = encode_text(in.text, text_mask, rng);

        const Tensor<S>* obj_ptr = nullptr;
        AttentionMask obj_mask;
        if (cfg_.object_branch) {
            if (in.objects.rows() == 0)
                throw DataError("object branch is on but no object tokens were provided");
            obj_mask = AttentionMask::all(in.objects.rows());
            out.object_feat = encode_objects(in.objects, in.object_frames, obj_mask,
                                             out.text_feat, text_mask, rng);
            obj_ptr = &out.object_feat;
        }

        out.mm_feat = encode_multimodal(in.video, video_mask, out.text_feat, text_mask, obj_ptr,
                                        cfg_.object_branch ? &obj_mask : nullptr,
                                        cfg_.object_branch ? &in.object_frames : nullptr, rng);

        auto pyramid = encode_pyramid(out.mm_feat, video_mask, rng);
        out.levels.reserve(pyramid.size());
        int stride = 1;
        for (auto& [feat, m] : pyramid) {
            LevelOutput<S> lvl;
            lvl.feat = feat;
            lvl.valid = m;
            lvl.stride = stride;
            lvl.logits = cls_head_.forward(feat, m);
            const S scale_s = static_cast<S>(stride * in.base_stride_s);
            lvl.offsets = scale(relu(reg_head_.forward(feat, m)), scale_s);
            out.levels.push_back(std::move(lvl));
            stride *= 2;
        }
        return out;
    }

    // input projections are scaled up against the position encoding, as in
    // the standard transformer embedding convention
    S embed_scale() const { return static_cast<S>(std::sqrt(static_cast<double>(cfg_.model_dim))); }

    Tensor<S>& rho_raw() { return rho_raw_; }
    Tensor<S>& tau_raw() { return tau_raw_; }
    const Tensor<S>& rho_raw() const { return rho_raw_; }
    const Tensor<S>& tau_raw() const { return tau_raw_; }

    // test access
    Linear<S>& video_in() { return video_in_; }
    Linear<S>& text_in() { return text_in_; }
    Linear<S>& object_in() { return object_in_; }
    std::vector<SelfAttnBlock<S>>& text_encoder_blocks() { return text_blocks_; }
    std::vector<ObjectEncoderBlock<S>>& object_encoder_blocks() { return object_blocks_; }
    std::vector<MultiModalBlock<S>>& multimodal_blocks() { return mm_blocks_; }
    ConvHead<S>& cls_head() { return cls_head_; }
    ConvHead<S>& reg_head() { return reg_head_; }

   private:
    static void copy_mha(const MultiHeadAttention<S>& src, MultiHeadAttention<S>& dst) {
        dst.wq.weight.value_mut() = src.wq.weight.value();
        dst.wq.bias.value_mut() = src.wq.bias.value();
        dst.wk.weight.value_mut() = src.wk.weight.value();
        dst.wk.bias.value_mut() = src.wk.bias.value();
        dst.wv.weight.value_mut() = src.wv.weight.value();
        dst.wv.bias.value_mut() = src.wv.bias.value();
        dst.wo.weight.value_mut() = src.wo.weight.value();
        dst.wo.bias.value_mut() = src.wo.bias.value();
    }
    static void copy_ffn(const FeedForward<S>& src, FeedForward<S>& dst) {
        dst.lin1.weight.value_mut() = src.lin1.weight.value();
        dst.lin1.bias.value_mut() = src.lin1.bias.value();
        dst.lin2.weight.value_mut() = src.lin2.weight.value();
        dst.lin2.bias.value_mut() = src.lin2.bias.value();
    }

    ModelConfig cfg_;
    Linear<S> video_in_, text_in_, object_in_;
    std::vector<SelfAttnBlock<S>> text_blocks_;
    LayerNorm<S> text_final_;
    std::vector<ObjectEncoderBlock<S>> object_blocks_;
    LayerNorm<S> object_final_;
    std::vector<MultiModalBlock<S>> mm_blocks_;
    LayerNorm<S> mm_final_;
    std::vector<Conv1dLayer<S>> pyramid_downs_;
    std::vector<SelfAttnBlock<S>> pyramid_blocks_;
    ConvHead<S> cls_head_, reg_head_;
    Tensor<S> rho_raw_, tau_raw_;
};

}  // namespace ovg
