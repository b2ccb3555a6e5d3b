#pragma once

#include <json.hpp>
#include <string>

#include "ovg/errors.hpp"
#include "ovg/hash.hpp"

namespace ovg {

enum class ObjectEncoderVariant { CA, SA_CA };
enum class MmVariant { Gated, SOA };

// Architecture hyperparameters. Every parameter shape is a function of this
// struct alone, including the raw input feature widths.
struct ModelConfig {
    int model_dim = 384;
    int heads = 4;
    int text_blocks = 4;
    int object_blocks = 4;
    int mm_blocks = 4;
    int pyramid_levels = 6;
    int mha_window = 9;  // odd; self-attention radius (mha_window-1)/2
    int ffn_expansion = 4;
    bool object_branch = true;
    ObjectEncoderVariant object_encoder_variant = ObjectEncoderVariant::CA;
    MmVariant mm_variant = MmVariant::Gated;
    bool asl = true;
    int max_object_tokens = 512;
    int top_k_per_frame = 5;
    double dropout = 0.0;

    // input feature widths (video stream after concatenation, text tokens,
    // object class embeddings)
    int video_dim = 0;
    int text_dim = 0;
    int object_dim = 0;

    void validate() const {
        if (model_dim <= 0 || heads <= 0 || model_dim % heads != 0)
            throw ConfigError("model_dim must be a positive multiple of heads");
        if (pyramid_levels < 1) throw ConfigError("pyramid_levels must be >= 1");
        if (mha_window < 1 || mha_window % 2 == 0)
            throw ConfigError("mha_window must be a positive odd integer");
        if (text_blocks < 1 || mm_blocks < 1 || object_blocks < 1)
            throw ConfigError("block counts must be >= 1");
        if (ffn_expansion < 1) throw ConfigError("ffn_expansion must be >= 1");
        if (video_dim <= 0 || text_dim <= 0)
            throw ConfigError("video_dim and text_dim must be set");
        if (object_branch && object_dim <= 0)
            throw ConfigError("object_dim must be set when the object branch is on");
        if (max_object_tokens < 1) throw ConfigError("max_object_tokens must be >= 1");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
    }
};

// Loss hyperparameters; defaults are the declared project choices.
struct LossConfig {
    double focal_gamma = 2.0;
    double focal_alpha = 0.25;
    double lambda_reg = 1.0;
    double sigma_floor_s = 0.25;       // floor on the Gaussian width, seconds
    double range_base_strides = 4.0;   // regression range base, in strides
};

// Decoding / deduplication parameters.
struct PostprocessConfig {
    int pre_nms_topk = 200;
    double score_floor = 1e-3;
    double softnms_sigma = 0.5;
    int keep = 5;
};

struct TrainConfig {
    int batch_size = 4;
    double base_lr = 1e-4;
    int warmup_epochs = 4;
    int total_epochs = 10;
    std::uint64_t seed = 1;
    double weight_decay = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double clip_grad_norm = 1.0;
    ModelConfig model;
    LossConfig loss;
    PostprocessConfig post;

    void validate() const {
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (warmup_epochs >= total_epochs)
            throw ConfigError("warmup_epochs must be < total_epochs");
        if (base_lr <= 0.0) throw ConfigError("base_lr must be positive");
        model.validate();
    }
};

inline std::string to_string(ObjectEncoderVariant v) {
    return v == ObjectEncoderVariant::CA ? "CA" : "SA+CA";
}
inline std::string to_string(MmVariant v) { return v == MmVariant::Gated ? "gated" : "SOA"; }

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"model_dim", c.model_dim},
                       {"heads", c.heads},
                       {"text_blocks", c.text_blocks},
                       {"object_blocks", c.object_blocks},
                       {"mm_blocks", c.mm_blocks},
                       {"pyramid_levels", c.pyramid_levels},
                       {"mha_window", c.mha_window},
                       {"ffn_expansion", c.ffn_expansion},
                       {"object_branch", c.object_branch ? "on" : "off"},
                       {"object_encoder_variant", to_string(c.object_encoder_variant)},
                       {"mm_variant", to_string(c.mm_variant)},
                       {"asl", c.asl ? "on" : "off"},
                       {"max_object_tokens", c.max_object_tokens},
                       {"top_k_per_frame", c.top_k_per_frame},
                       {"dropout", c.dropout},
                       {"video_dim", c.video_dim},
                       {"text_dim", c.text_dim},
                       {"object_dim", c.object_dim}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    get("model_dim", c.model_dim);
    get("heads", c.heads);
    get("text_blocks", c.text_blocks);
    get("object_blocks", c.object_blocks);
    get("mm_blocks", c.mm_blocks);
    get("pyramid_levels", c.pyramid_levels);
    get("mha_window", c.mha_window);
    get("ffn_expansion", c.ffn_expansion);
    get("max_object_tokens", c.max_object_tokens);
    get("top_k_per_frame", c.top_k_per_frame);
    get("dropout", c.dropout);
    get("video_dim", c.video_dim);
    get("text_dim", c.text_dim);
    get("object_dim", c.object_dim);
    if (j.contains("object_branch")) {
        const std::string s = j.at("object_branch").get<std::string>();
        if (s != "on" && s != "off") throw ConfigError("object_branch must be on|off");
        c.object_branch = (s == "on");
    }
    if (j.contains("object_encoder_variant")) {
        const std::string s = j.at("object_encoder_variant").get<std::string>();
        if (s == "CA")
            c.object_encoder_variant = ObjectEncoderVariant::CA;
        else if (s == "SA+CA")
            c.object_encoder_variant = ObjectEncoderVariant::SA_CA;
        else
            throw ConfigError("object_encoder_variant must be CA|SA+CA");
    }
    if (j.contains("mm_variant")) {
        const std::string s = j.at("mm_variant").get<std::string>();
        if (s == "gated")
            c.mm_variant = MmVariant::Gated;
        else if (s == "SOA")
            c.mm_variant = MmVariant::SOA;
        else
            throw ConfigError("mm_variant must be gated|SOA");
    }
    if (j.contains("asl")) {
        const std::string s = j.at("asl").get<std::string>();
        if (s != "on" && s != "off") throw ConfigError("asl must be on|off");
        c.asl = (s == "on");
    }
}

inline void to_json(nlohmann::json& j, const LossConfig& c) {
    j = nlohmann::json{{"focal_gamma", c.focal_gamma},
                       {"focal_alpha", c.focal_alpha},
                       {"lambda_reg", c.lambda_reg},
                       {"sigma_floor_s", c.sigma_floor_s},
                       {"range_base_strides", c.range_base_strides}};
}
inline void from_json(const nlohmann::json& j, LossConfig& c) {
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    get("focal_gamma", c.focal_gamma);
    get("focal_alpha", c.focal_alpha);
    get("lambda_reg", c.lambda_reg);
    get("sigma_floor_s", c.sigma_floor_s);
    get("range_base_strides", c.range_base_strides);
}

inline void to_json(nlohmann::json& j, const PostprocessConfig& c) {
    j = nlohmann::json{{"pre_nms_topk", c.pre_nms_topk},
                       {"score_floor", c.score_floor},
                       {"softnms_sigma", c.softnms_sigma},
                       {"keep", c.keep}};
}
inline void from_json(const nlohmann::json& j, PostprocessConfig& c) {
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    get("pre_nms_topk", c.pre_nms_topk);
    get("score_floor", c.score_floor);
    get("softnms_sigma", c.softnms_sigma);
    get("keep", c.keep);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"batch_size", c.batch_size},
                       {"base_lr", c.base_lr},
                       {"warmup_epochs", c.warmup_epochs},
                       {"total_epochs", c.total_epochs},
                       {"seed", c.seed},
                       {"weight_decay", c.weight_decay},
                       {"beta1", c.beta1},
                       {"beta2", c.beta2},
                       {"adam_eps", c.adam_eps},
                       {"clip_grad_norm", c.clip_grad_norm},
                       {"model", c.model},
                       {"loss", c.loss},
                       {"post", c.post}};
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    auto get = [&](const char* key, auto& field) {
        if (j.contains(key)) j.at(key).get_to(field);
    };
    get("batch_size", c.batch_size);
    get("base_lr", c.base_lr);
    get("warmup_epochs", c.warmup_epochs);
    get("total_epochs", c.total_epochs);
    get("seed", c.seed);
    get("weight_decay", c.weight_decay);
    get("beta1", c.beta1);
    get("beta2", c.beta2);
    get("adam_eps", c.adam_eps);
    get("clip_grad_norm", c.clip_grad_norm);
    get("model", c.model);
    get("loss", c.loss);
    get("post", c.post);
}

// Stable hash of the architecture configuration (nlohmann serializes object
// keys in sorted order, so the dump is canonical).
inline std::string model_config_hash(const ModelConfig& c) {
    nlohmann::json j = c;
    return hash_hex(fnv1a64(j.dump()));
}

}  // namespace ovg
