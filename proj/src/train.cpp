#include "ovg/train.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ovg {

double lr_at(long step, long steps_per_epoch, const TrainConfig& cfg) {
    if (step < 0) throw ConfigError("lr_at: negative step");
    const long warmup = static_cast<long>(cfg.warmup_epochs) * steps_per_epoch;
    const long total = static_cast<long>(cfg.total_epochs) * steps_per_epoch;
    if (step < warmup)
        return cfg.base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
    const long span = std::max<long>(1, total - 1 - warmup);
    const double progress =
        std::min(1.0, static_cast<double>(step - warmup) / static_cast<double>(span));
    return cfg.base_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

ModelInput<float> make_model_input(const Dataset& ds, const LoadedQuery& q, bool object_branch) {
    const LoadedVideo& video = ds.video_of(q);
    ModelInput<float> in;
    in.video = Tensor<float>(video.features);
    in.video_valid = AttentionMask::all(video.features.rows());
    in.text = Tensor<float>(q.text_emb);
    in.text_valid = AttentionMask::all(q.text_emb.rows());
    if (object_branch && video.objects.size() > 0) {
        in.objects = Tensor<float>(video.objects.embeddings);
        in.object_frames = video.objects.frame_index;
    } else {
        in.objects = Tensor<float>::zeros(0, 0);
    }
    in.base_stride_s = ds.base_stride_s;
    in.duration_s = q.ann.duration_s;
    return in;
}

TrainedModel train(const TrainConfig& cfg, const DatasetManifest& data,
                   std::optional<int> fold_holdout, std::ostream* log_stream) {
    cfg.validate();
    Dataset ds = load_dataset(data, Split::Train, cfg.model.top_k_per_frame,
                              cfg.model.max_object_tokens);
    if (ds.queries.empty()) throw DataError("train: no training queries");

    std::vector<std::size_t> usable;
    if (fold_holdout) {
        FoldSplit folds = make_folds(all_video_ids(data), cfg.seed);
        for (std::size_t i = 0; i < ds.queries.size(); ++i)
            if (folds.fold_of(ds.queries[i].ann.video_id) != *fold_holdout) usable.push_back(i);
        if (usable.empty()) throw DataError("train: holdout fold leaves no training data");
    } else {
        for (std::size_t i = 0; i < ds.queries.size(); ++i) usable.push_back(i);
    }

    TrainedModel result;
    result.cfg = cfg;
    result.model = std::make_unique<GroundingModel<float>>(cfg.model, cfg.seed);
    result.model->init_object_params_from_text();
    AdamW<float> opt(result.model->parameters(), cfg);

    const long n = static_cast<long>(usable.size());
    const long steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    Rng shuffle_rng(derive_seed(cfg.seed, "epoch-shuffle"));

    long step = 0;
    for (int epoch = 0; epoch < cfg.total_epochs; ++epoch) {
        std::vector<int> perm = shuffle_rng.permutation(static_cast<int>(n));
        double epoch_loss = 0.0;
        long epoch_batches = 0;
        for (long b0 = 0; b0 < n; b0 += cfg.batch_size) {
            const long b1 = std::min<long>(n, b0 + cfg.batch_size);
            std::vector<std::string> batch_ids;
            Tensor<float> batch_loss = Tensor<float>::scalar(0.0f);
            int batch_pos = 0;
            for (long k = b0; k < b1; ++k) {
                const LoadedQuery& q =
                    ds.queries[usable[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])]];
                batch_ids.push_back(q.ann.query_id);
                result.log.seen_videos.insert(q.ann.video_id);
                ModelInput<float> in = make_model_input(ds, q, cfg.model.object_branch);
                ModelOutput<float> out = result.model->forward(in);
                FlatOutputs<float> flat = flatten_outputs(out, in.base_stride_s, in.duration_s,
                                                          cfg.loss.range_base_strides);
                LossResult<float> lr = total_loss(flat, q.ann.start_s, q.ann.end_s,
                                                  result.model->rho_raw(),
                                                  result.model->tau_raw(), cfg.loss,
                                                  cfg.model.asl);
                batch_pos += lr.n_pos;
                batch_loss = add(batch_loss, lr.total);
            }
            batch_loss = scale(batch_loss, 1.0f / static_cast<float>(b1 - b0));
            if (batch_pos == 0) ++result.log.batches_without_positives;

            const double lr_now = lr_at(step, steps_per_epoch, cfg);
            result.log.step_lrs.push_back(lr_now);
            if (!std::isfinite(static_cast<double>(batch_loss.item()))) {
                std::ostringstream msg;
                msg << "train: non-finite loss at step " << step << " (lr " << lr_now
                    << "; batch:";
                for (const auto& id : batch_ids) msg << " " << id;
                msg << ")";
                throw NumericError(msg.str());
            }
            opt.zero_grad();
            batch_loss.backward();
            opt.step(lr_now);
            epoch_loss += static_cast<double>(batch_loss.item());
            ++epoch_batches;
            ++step;
        }
        const double mean_loss = epoch_loss / static_cast<double>(epoch_batches);
        result.log.epoch_mean_loss.push_back(mean_loss);
        if (log_stream)
            (*log_stream) << "epoch " << epoch << " mean_loss " << mean_loss
                          << (result.log.batches_without_positives
                                  ? " (some batches had no positives)"
                                  : "")
                          << "\n";
    }
    return result;
}

std::vector<SegmentPrediction> decode_output(const ModelOutput<float>& out, double base_stride_s,
                                             double duration_s, double range_base_strides,
                                             const PostprocessConfig& post) {
    NoGradGuard guard;
    FlatOutputs<float> flat = flatten_outputs(out, base_stride_s, duration_s, range_base_strides);
    std::vector<double> logits;
    std::vector<std::array<double, 2>> offsets;
    logits.reserve(flat.points.size());
    offsets.reserve(flat.points.size());
    for (Index i = 0; i < flat.logits.rows(); ++i) {
        logits.push_back(static_cast<double>(flat.logits.value()(i, 0)));
        offsets.push_back({static_cast<double>(flat.offsets.value()(i, 0)),
                           static_cast<double>(flat.offsets.value()(i, 1))});
    }
    return decode(flat.points, logits, offsets, duration_s, post.pre_nms_topk, post.score_floor);
}

std::vector<QueryPredictions> predict_models(
    const std::vector<const GroundingModel<float>*>& models, const Dataset& ds,
    const LossConfig& loss_cfg, const PostprocessConfig& post) {
    if (models.empty()) throw ConfigError("predict: no models");
    NoGradGuard guard;
    std::vector<QueryPredictions> out;
    out.reserve(ds.queries.size());
    for (const auto& q : ds.queries) {
        std::vector<std::vector<SegmentPrediction>> per_model;
        per_model.reserve(models.size());
        for (const auto* model : models) {
            ModelInput<float> in = make_model_input(ds, q, model->config().object_branch);
            ModelOutput<float> mo = model->forward(in);
            per_model.push_back(decode_output(mo, in.base_stride_s, in.duration_s,
                                              loss_cfg.range_base_strides, post));
        }
        QueryPredictions qp;
        qp.query_id = q.ann.query_id;
        qp.predictions = ensemble_merge(per_model, post.softnms_sigma, post.keep);
        out.push_back(std::move(qp));
    }
    return out;
}

std::vector<QueryPredictions> predict(const std::vector<std::string>& checkpoint_paths,
                                      const DatasetManifest& data, Split split,
                                      const std::string& out_path) {
    if (checkpoint_paths.empty()) throw ConfigError("predict: no checkpoints");
    std::vector<Checkpoint> ckpts;
    for (const auto& path : checkpoint_paths) ckpts.push_back(read_checkpoint(path));
    for (const auto& c : ckpts)
        if (c.model_hash != ckpts.front().model_hash)
            throw ConfigError("predict: checkpoints have mismatched model config hashes");

    std::vector<std::unique_ptr<GroundingModel<float>>> models;
    std::vector<const GroundingModel<float>*> model_ptrs;
    for (const auto& c : ckpts) {
        auto m = std::make_unique<GroundingModel<float>>(c.cfg.model, c.cfg.seed);
        restore_model(c, *m);
        model_ptrs.push_back(m.get());
        models.push_back(std::move(m));
    }
    const TrainConfig& cfg = ckpts.front().cfg;
    Dataset ds = load_dataset(data, split, cfg.model.top_k_per_frame,
                              cfg.model.max_object_tokens);
    auto preds = predict_models(model_ptrs, ds, cfg.loss, cfg.post);
    write_predictions(out_path, preds);
    return preds;
}

EvalReport evaluate_files(const std::string& predictions_path,
                          const std::string& annotations_path) {
    auto preds = read_predictions(predictions_path);
    std::map<std::string, GroundTruth> gt;
    for (const auto& ann : read_annotations(annotations_path))
        gt[ann.query_id] = {ann.start_s, ann.end_s};
    return evaluate(preds, gt);
}

std::vector<AblationRow> run_ablation(const TrainConfig& base, const DatasetManifest& data,
                                      std::ostream* log_stream) {
    struct Variant {
        std::string label;
        TrainConfig cfg;
    };
    std::vector<Variant> variants;
    {
        TrainConfig c = base;
        c.model.object_encoder_variant = ObjectEncoderVariant::SA_CA;
        variants.push_back({"SA+CA", c});
    }
    {
        TrainConfig c = base;
        c.model.mm_variant = MmVariant::SOA;
        variants.push_back({"SOA", c});
    }
    {
        TrainConfig c = base;
        c.model.asl = false;
        variants.push_back({"w/o ASL", c});
    }
    variants.push_back({"full", base});

    std::vector<AblationRow> rows;
    for (auto& variant : variants) {
        if (log_stream) (*log_stream) << "[ablate] training variant " << variant.label << "\n";
        TrainedModel tm = train(variant.cfg, data, std::nullopt, log_stream);
        Dataset eval_ds = load_dataset(data, Split::Eval, variant.cfg.model.top_k_per_frame,
                                       variant.cfg.model.max_object_tokens);
        auto preds = predict_models({tm.model.get()}, eval_ds, variant.cfg.loss, variant.cfg.post);
        std::map<std::string, GroundTruth> gt;
        for (const auto& q : eval_ds.queries)
            gt[q.ann.query_id] = {q.ann.start_s, q.ann.end_s};
        AblationRow row;
        row.label = variant.label;
        row.config_hash = model_config_hash(variant.cfg.model);
        row.report = evaluate(preds, gt);
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string render_ablation_table(const std::vector<AblationRow>& rows) {
    std::ostringstream out;
    out << "variant  | config hash      | R@1 0.3 | R@1 0.5 | Mean | R@5 0.3 | R@5 0.5\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%-8s | %s | %7.2f | %7.2f | %5.2f | %7.2f | %7.2f\n",
                      r.label.c_str(), r.config_hash.c_str(), round2(r.report.r1_03),
                      round2(r.report.r1_05), round2(r.report.mean_r1), round2(r.report.r5_03),
                      round2(r.report.r5_05));
        out << buf;
    }
    return out.str();
}

}  // namespace ovg
