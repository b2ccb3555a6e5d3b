#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ovg/gradcheck.hpp"
#include "ovg/train.hpp"
#include "testutil.hpp"

using namespace ovg;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny_train_config() {
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.base_lr = 2e-3;
    cfg.warmup_epochs = 1;
    cfg.total_epochs = 2;
    cfg.seed = 3;
    cfg.model.model_dim = 32;
    cfg.model.heads = 4;
    cfg.model.text_blocks = 1;
    cfg.model.object_blocks = 1;
    cfg.model.mm_blocks = 1;
    cfg.model.pyramid_levels = 3;
    cfg.model.mha_window = 5;
    cfg.model.ffn_expansion = 2;
    cfg.model.video_dim = 6;
    cfg.model.text_dim = 4;
    cfg.model.object_dim = 4;
    return cfg;
}

std::string make_tiny_dataset(const fs::path& dir) {
    SynthParams p;
    p.n_videos = 4;
    p.frames = 64;
    p.video_dim = 6;
    p.vocab_size = 16;
    p.target_classes = 12;
    p.class_dim = 4;
    p.n_train = 16;
    p.n_eval = 6;
    p.min_len = 12;
    p.max_len = 28;
    p.seed = 9;
    synth_generate(p, dir.string());
    return dir.string();
}

}  // namespace

TEST_CASE("lr schedule: warmup end, final step, monotone decay") {
    TrainConfig cfg;
    cfg.base_lr = 1e-4;
    cfg.warmup_epochs = 4;
    cfg.total_epochs = 10;
    const long spe = 50;
    const long warmup = 4 * spe;
    const long total = 10 * spe;

    CHECK(lr_at(warmup, spe, cfg) == cfg.base_lr);  // first decay step sits at the peak
    CHECK(lr_at(warmup - 1, spe, cfg) == doctest::Approx(cfg.base_lr));
    CHECK(lr_at(total - 1, spe, cfg) <= 1e-8 * cfg.base_lr);

    // midpoint of the decay stretch
    const long mid = warmup + (total - 1 - warmup) / 2;
    CHECK(lr_at(mid, spe, cfg) == doctest::Approx(cfg.base_lr / 2).epsilon(0.02));

    // monotone non-increasing after warmup, increasing during warmup
    for (long s = 1; s < warmup; ++s) CHECK(lr_at(s, spe, cfg) >= lr_at(s - 1, spe, cfg));
    for (long s = warmup + 1; s < total; ++s) CHECK(lr_at(s, spe, cfg) <= lr_at(s - 1, spe, cfg));
}

TEST_CASE("adamw moves parameters against the gradient and decays weights") {
    TrainConfig cfg = tiny_train_config();
    Tensor<float> w(Mat<float>(Mat<float>::Constant(2, 2, 1.0f)), true);
    ParamList<float> params{{"w", w}};
    AdamW<float> opt(params, cfg);
    Tensor<float> loss = sum_all(square(w));
    opt.zero_grad();
    loss.backward();
    opt.step(1e-2);
    CHECK(w.value()(0, 0) < 1.0f);
    CHECK(w.grad().cwiseAbs().maxCoeff() == 0.0f);  // step consumes gradients
}

TEST_CASE("two-epoch smoke training reduces the loss deterministically") {
    auto dir = ovg::test::make_temp_dir("ovg-train-smoke");
    make_tiny_dataset(dir);
    DatasetManifest data = read_manifest(dir.string());
    TrainConfig cfg = tiny_train_config();

    TrainedModel a = train(cfg, data);
    REQUIRE(a.log.epoch_mean_loss.size() == 2);
    CHECK(a.log.epoch_mean_loss.back() < a.log.epoch_mean_loss.front());

    TrainedModel b = train(cfg, data);
    REQUIRE(b.log.epoch_mean_loss.size() == a.log.epoch_mean_loss.size());
    for (std::size_t i = 0; i < a.log.epoch_mean_loss.size(); ++i)
        CHECK(a.log.epoch_mean_loss[i] == b.log.epoch_mean_loss[i]);
    fs::remove_all(dir);
}

TEST_CASE("fold holdout keeps the held-out videos out of every batch") {
    auto dir = ovg::test::make_temp_dir("ovg-train-folds");
    make_tiny_dataset(dir);
    DatasetManifest data = read_manifest(dir.string());
    TrainConfig cfg = tiny_train_config();
    cfg.total_epochs = 2;
    cfg.warmup_epochs = 1;

    FoldSplit folds = make_folds(all_video_ids(data), cfg.seed, 5);
    int holdout = -1;
    for (const auto& [id, f] : folds.assignment) {
        holdout = f;  // pick a fold that actually contains a video
        break;
    }
    REQUIRE(holdout >= 0);
    TrainedModel tm = train(cfg, data, holdout);
    for (const auto& vid : tm.log.seen_videos) CHECK(folds.fold_of(vid) != holdout);
    bool excluded_any = false;
    for (const auto& [id, f] : folds.assignment)
        if (f == holdout && !tm.log.seen_videos.count(id)) excluded_any = true;
    CHECK(excluded_any);
    fs::remove_all(dir);
}

TEST_CASE("checkpoint round trip reproduces forward outputs bit-exactly") {
    auto dir = ovg::test::make_temp_dir("ovg-ckpt");
    make_tiny_dataset(dir);
    DatasetManifest data = read_manifest(dir.string());
    TrainConfig cfg = tiny_train_config();
    cfg.total_epochs = 2;
    TrainedModel tm = train(cfg, data);

    const std::string path = (dir / "model.ovck").string();
    save_checkpoint(path, snapshot_model(*tm.model, cfg, 2, {}, nullptr));
    Checkpoint ckpt = read_checkpoint(path);
    CHECK(ckpt.model_hash == model_config_hash(cfg.model));
    CHECK(ckpt.epoch == 2);

    GroundingModel<float> restored(ckpt.cfg.model, ckpt.cfg.seed);
    restore_model(ckpt, restored);

    Dataset ds = load_dataset(data, Split::Eval, cfg.model.top_k_per_frame,
                              cfg.model.max_object_tokens);
    NoGradGuard guard;
    ModelInput<float> in = make_model_input(ds, ds.queries[0], true);
    auto out_a = tm.model->forward(in);
    auto out_b = restored.forward(in);
    for (std::size_t l = 0; l < out_a.levels.size(); ++l) {
        const auto& va = out_a.levels[l].logits.value();
        const auto& vb = out_b.levels[l].logits.value();
        CHECK(std::memcmp(va.data(), vb.data(), sizeof(float) * va.size()) == 0);
        const auto& oa = out_a.levels[l].offsets.value();
        const auto& ob = out_b.levels[l].offsets.value();
        CHECK(std::memcmp(oa.data(), ob.data(), sizeof(float) * oa.size()) == 0);
    }

    // corrupting the file yields a positioned data error
    std::string bytes;
    {
        std::ifstream inf(path, std::ios::binary);
        bytes.assign((std::istreambuf_iterator<char>(inf)), std::istreambuf_iterator<char>());
    }
    {
        std::ofstream outf(path, std::ios::binary | std::ios::trunc);
        outf.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_AS((void)read_checkpoint(path), DataError);
    fs::remove_all(dir);
}

TEST_CASE("single checkpoint prediction equals decode plus soft_nms; ensembles replay") {
    auto dir = ovg::test::make_temp_dir("ovg-predict");
    make_tiny_dataset(dir);
    DatasetManifest data = read_manifest(dir.string());
    TrainConfig cfg = tiny_train_config();
    cfg.total_epochs = 2;
    TrainedModel tm1 = train(cfg, data);
    TrainConfig cfg2 = cfg;
    cfg2.seed = 17;
    TrainedModel tm2 = train(cfg2, data);

    Dataset ds = load_dataset(data, Split::Eval, cfg.model.top_k_per_frame,
                              cfg.model.max_object_tokens);

    auto single = predict_models({tm1.model.get()}, ds, cfg.loss, cfg.post);
    CHECK(single.size() == ds.queries.size());
    {
        NoGradGuard guard;
        ModelInput<float> in = make_model_input(ds, ds.queries[0], true);
        auto raw = decode_output(tm1.model->forward(in), in.base_stride_s, in.duration_s,
                                 cfg.loss.range_base_strides, cfg.post);
        auto want = soft_nms(raw, cfg.post.softnms_sigma, cfg.post.keep);
        REQUIRE(single[0].predictions.size() == want.size());
        for (std::size_t i = 0; i < want.size(); ++i) {
            CHECK(single[0].predictions[i].start_s == want[i].start_s);
            CHECK(single[0].predictions[i].score == want[i].score);
        }
    }

    // two-model ensemble equals pool-then-softnms over dumped raw predictions
    auto merged = predict_models({tm1.model.get(), tm2.model.get()}, ds, cfg.loss, cfg.post);
    {
        NoGradGuard guard;
        for (std::size_t qi = 0; qi < ds.queries.size(); ++qi) {
            ModelInput<float> in = make_model_input(ds, ds.queries[qi], true);
            std::vector<std::vector<SegmentPrediction>> per_model;
            per_model.push_back(decode_output(tm1.model->forward(in), in.base_stride_s,
                                              in.duration_s, cfg.loss.range_base_strides,
                                              cfg.post));
            per_model.push_back(decode_output(tm2.model->forward(in), in.base_stride_s,
                                              in.duration_s, cfg.loss.range_base_strides,
                                              cfg.post));
            auto want = ensemble_merge(per_model, cfg.post.softnms_sigma, cfg.post.keep);
            REQUIRE(merged[qi].predictions.size() == want.size());
            for (std::size_t i = 0; i < want.size(); ++i) {
                CHECK(merged[qi].predictions[i].start_s == want[i].start_s);
                CHECK(merged[qi].predictions[i].score == want[i].score);
            }
        }
    }
    fs::remove_all(dir);
}

TEST_CASE("checkpoint-file prediction path writes one line per query") {
    auto dir = ovg::test::make_temp_dir("ovg-predict-cli");
    make_tiny_dataset(dir);
    DatasetManifest data = read_manifest(dir.string());
    TrainConfig cfg = tiny_train_config();
    cfg.total_epochs = 2;
    TrainedModel tm = train(cfg, data);
    const std::string ckpt = (dir / "m.ovck").string();
    save_checkpoint(ckpt, snapshot_model(*tm.model, cfg, 2, {}, nullptr));

    const std::string preds_path = (dir / "preds.jsonl").string();
    auto preds = predict({ckpt}, data, Split::Eval, preds_path);
    auto back = read_predictions(preds_path);
    CHECK(back.size() == 6);  // eval query count of the tiny dataset

    // mismatched model configs across checkpoints are rejected
    TrainConfig other = cfg;
    other.model.mha_window = 7;
    GroundingModel<float> other_model(other.model, 5);
    const std::string ckpt2 = (dir / "m2.ovck").string();
    save_checkpoint(ckpt2, snapshot_model(other_model, other, 0, {}, nullptr));
    CHECK_THROWS_AS((void)predict({ckpt, ckpt2}, data, Split::Eval, preds_path), ConfigError);
    fs::remove_all(dir);
}

TEST_CASE("gradcheck passes on a fresh model and reports per-op errors") {
    GradcheckReport rep = run_gradcheck(13);
    CHECK(rep.pass);
    CHECK(rep.max_rel <= 1e-4);
    CHECK(rep.entries.size() >= 9);
    bool has_full_model = false;
    int model_coords = 0;
    for (const auto& e : rep.entries) {
        CHECK(e.pass);
        if (e.name == "full_model_total_loss") {
            has_full_model = true;
            model_coords = e.n_coords;
        }
    }
    CHECK(has_full_model);
    CHECK(model_coords >= 200);
    CHECK(rep.to_string().find("matmul") != std::string::npos);
}

TEST_CASE("a corrupted backward rule is caught by the finite-difference check") {
    Rng rng(701);
    Mat<double> av(3, 3), bv(3, 3);
    for (Index i = 0; i < 3; ++i)
        for (Index j = 0; j < 3; ++j) {
            av(i, j) = rng.normal();
            bv(i, j) = rng.normal();
        }
    Tensor<double> a(av, true);
    Tensor<double> b(bv, true);

    // deliberately wrong backward: gradient of a*b claimed to be 2*b
    auto broken_mul = [](const Tensor<double>& x, const Tensor<double>& y) {
        Mat<double> out = x.value().cwiseProduct(y.value());
        auto xn = x.node();
        auto yn = y.node();
        return Tensor<double>::make_op(std::move(out), {x, y},
                                       [xn, yn](Tensor<double>::Node& self) {
                                           if (xn->requires_grad) {
                                               xn->ensure_grad();
                                               xn->grad +=
                                                   2.0 * self.grad.cwiseProduct(yn->value);
                                           }
                                           if (yn->requires_grad) {
                                               yn->ensure_grad();
                                               yn->grad += self.grad.cwiseProduct(xn->value);
                                           }
                                       });
    };
    auto res = ovg::test::finite_diff_check({a, b}, [&] { return sum_all(broken_mul(a, b)); });
    CHECK_FALSE(res.ok);
}

TEST_CASE("training aborts with diagnostics when the loss blows up") {
    auto dir = ovg::test::make_temp_dir("ovg-train-nan");
    make_tiny_dataset(dir);
    DatasetManifest data = read_manifest(dir.string());
    TrainConfig cfg = tiny_train_config();
    cfg.base_lr = 1e18;  // guaranteed blow-up
    cfg.clip_grad_norm = 0.0;
    cfg.total_epochs = 3;
    cfg.warmup_epochs = 1;
    try {
        (void)train(cfg, data);
        FAIL("expected a NumericError");
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("lr") != std::string::npos);
        CHECK(msg.find("query") != std::string::npos);
    }
    fs::remove_all(dir);
}
