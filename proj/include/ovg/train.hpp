#pragma once

#include <json.hpp>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "ovg/data.hpp"
#include "ovg/loss.hpp"
#include "ovg/metrics.hpp"
#include "ovg/model.hpp"
#include "ovg/postprocess.hpp"

namespace ovg {

// Linear warmup to base_lr over warmup_epochs, then cosine decay that reaches
// (numerically) zero on the final step.
double lr_at(long step, long steps_per_epoch, const TrainConfig& cfg);

// Decoupled weight decay Adam over a parameter list. Gradients live on the
// parameter tensors; step() consumes them and leaves them zeroed.
template <typename S>
class AdamW {
   public:
    AdamW(ParamList<S> params, const TrainConfig& cfg)
        : params_(std::move(params)), cfg_(cfg) {
        for (auto& [name, p] : params_) {
            m_.push_back(Mat<S>::Zero(p.rows(), p.cols()));
            v_.push_back(Mat<S>::Zero(p.rows(), p.cols()));
        }
    }

    void zero_grad() {
        for (auto& [name, p] : params_) p.zero_grad();
    }

    double grad_norm() const {
        double sq = 0.0;
        for (const auto& [name, p] : params_) {
            if (!p.node()->grad.size()) continue;
            sq += static_cast<double>(p.grad().template cast<double>().squaredNorm());
        }
        return std::sqrt(sq);
    }

    void step(double lr) {
        ++t_;
        double clip_scale = 1.0;
        if (cfg_.clip_grad_norm > 0.0) {
            const double norm = grad_norm();
            if (norm > cfg_.clip_grad_norm) clip_scale = cfg_.clip_grad_norm / norm;
        }
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i].second;
            Mat<S> g = p.grad() * static_cast<S>(clip_scale);
            m_[i] = static_cast<S>(cfg_.beta1) * m_[i] + static_cast<S>(1.0 - cfg_.beta1) * g;
            v_[i] = static_cast<S>(cfg_.beta2) * v_[i] +
                    static_cast<S>(1.0 - cfg_.beta2) * g.cwiseProduct(g).eval();
            Mat<S> mhat = m_[i] / static_cast<S>(bc1);
            Mat<S> vhat = v_[i] / static_cast<S>(bc2);
            Mat<S> denom = vhat.cwiseSqrt().array() + static_cast<S>(cfg_.adam_eps);
            p.value_mut() -=
                static_cast<S>(lr) *
                (mhat.cwiseQuotient(denom) + static_cast<S>(cfg_.weight_decay) * p.value());
            p.zero_grad();
        }
    }

    long step_count() const { return t_; }
    void set_step_count(long t) { t_ = t; }
    ParamList<S>& params() { return params_; }
    std::vector<Mat<S>>& moment1() { return m_; }
    std::vector<Mat<S>>& moment2() { return v_; }

   private:
    ParamList<S> params_;
    TrainConfig cfg_;
    std::vector<Mat<S>> m_, v_;
    long t_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints: "OVCK" magic, u32 LE header length, header JSON, then raw
// FMX1 blocks — model parameters first, in declared order, then Adam moments.
// ---------------------------------------------------------------------------

struct Checkpoint {
    TrainConfig cfg;
    int epoch = 0;
    long adam_step = 0;
    std::string model_hash;
    nlohmann::json metrics;
    std::vector<std::pair<std::string, MatF>> params;
    std::vector<std::pair<std::string, MatF>> adam_m;
    std::vector<std::pair<std::string, MatF>> adam_v;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

Checkpoint snapshot_model(const GroundingModel<float>& model, const TrainConfig& cfg, int epoch,
                          const nlohmann::json& metrics, AdamW<float>* opt);
void restore_model(const Checkpoint& ckpt, GroundingModel<float>& model);

// ---------------------------------------------------------------------------
// Training / inference driver
// ---------------------------------------------------------------------------

struct TrainLog {
    std::vector<double> epoch_mean_loss;
    std::vector<double> step_lrs;
    std::set<std::string> seen_videos;
    int batches_without_positives = 0;
};

struct TrainedModel {
    std::unique_ptr<GroundingModel<float>> model;
    TrainLog log;
    TrainConfig cfg;
};

ModelInput<float> make_model_input(const Dataset& ds, const LoadedQuery& q, bool object_branch);

// Runs the full schedule over the train split; with fold_holdout set, videos
// of that fold are excluded from every batch. Deterministic for a fixed
// config and seed.
TrainedModel train(const TrainConfig& cfg, const DatasetManifest& data,
                   std::optional<int> fold_holdout = std::nullopt,
                   std::ostream* log_stream = nullptr);

// Decode one query's raw outputs into scored segments.
std::vector<SegmentPrediction> decode_output(const ModelOutput<float>& out, double base_stride_s,
                                             double duration_s, double range_base_strides,
                                             const PostprocessConfig& post);

// Per query: run every model, decode, pool and SoftNMS.
std::vector<QueryPredictions> predict_models(
    const std::vector<const GroundingModel<float>*>& models, const Dataset& ds,
    const LossConfig& loss_cfg, const PostprocessConfig& post);

// Checkpoint-file driven prediction; all checkpoints must share the model
// config hash. Writes the predictions .jsonl and returns it.
std::vector<QueryPredictions> predict(const std::vector<std::string>& checkpoint_paths,
                                      const DatasetManifest& data, Split split,
                                      const std::string& out_path);

// Score a predictions file against an annotations file.
EvalReport evaluate_files(const std::string& predictions_path,
                          const std::string& annotations_path);

struct AblationRow {
    std::string label;
    std::string config_hash;
    EvalReport report;
};

// Trains and evaluates the four architecture variants with a shared seed:
// SA+CA object encoder, SOA fusion, ASL off, and the full default model.
std::vector<AblationRow> run_ablation(const TrainConfig& base, const DatasetManifest& data,
                                      std::ostream* log_stream = nullptr);

std::string render_ablation_table(const std::vector<AblationRow>& rows);

}  // namespace ovg
