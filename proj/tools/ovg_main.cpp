// ovg: train, run and evaluate the object-aware video grounding model.
//
// Exit codes: 0 success, 1 runtime failure, 2 config error, 3 data error,
// 4 gradient-check failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "ovg/gradcheck.hpp"
#include "ovg/train.hpp"

namespace {

using namespace ovg;

TrainConfig load_train_config(const std::string& config_path, const std::string& profile,
                              std::optional<std::uint64_t> seed_override) {
    TrainConfig cfg;
    if (profile == "nlq") {
        cfg.batch_size = 4;
        cfg.base_lr = 1e-4;
        cfg.model.object_branch = true;
    } else if (profile == "goalstep") {
        cfg.batch_size = 8;
        cfg.base_lr = 2e-4;
        cfg.model.object_branch = false;
    } else if (!profile.empty()) {
        throw ConfigError("unknown profile '" + profile + "' (want nlq|goalstep)");
    }
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw ConfigError("cannot open config " + config_path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(config_path + ": bad JSON: " + e.what());
        }
        try {
            j.get_to(cfg);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(config_path + ": " + e.what());
        }
    }
    if (seed_override) cfg.seed = *seed_override;
    cfg.validate();
    return cfg;
}

std::map<std::string, GroundTruth> ground_truth_of(const std::string& annotations) {
    std::map<std::string, GroundTruth> gt;
    for (const auto& ann : read_annotations(annotations))
        gt[ann.query_id] = {ann.start_s, ann.end_s};
    return gt;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"object-aware natural-language video grounding"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand

    std::string config_path, profile;
    std::optional<std::uint64_t> seed_override;
    app.add_option("--config", config_path, "training/model config JSON");
    app.add_option("--profile", profile, "preset: nlq or goalstep");
    app.add_option("--seed", seed_override, "seed override");

    // train
    auto* cmd_train = app.add_subcommand("train", "train one model");
    std::string train_data, train_out;
    int fold_holdout = -1;
    cmd_train->add_option("--data", train_data, "dataset directory (manifest.json)")->required();
    cmd_train->add_option("--out", train_out, "output checkpoint path")->required();
    cmd_train->add_option("--fold-holdout", fold_holdout,
                          "exclude this fold (0..4) from training");

    // predict
    auto* cmd_predict = app.add_subcommand("predict", "ensemble inference");
    std::string pred_data, pred_out, pred_split = "eval";
    std::vector<std::string> pred_ckpts;
    cmd_predict->add_option("--data", pred_data, "dataset directory")->required();
    cmd_predict->add_option("--checkpoints", pred_ckpts, "checkpoint files")->required();
    cmd_predict->add_option("--out", pred_out, "predictions .jsonl output")->required();
    cmd_predict->add_option("--split", pred_split, "train or eval (default eval)");

    // evaluate
    auto* cmd_eval = app.add_subcommand("evaluate", "score predictions");
    std::string eval_preds, eval_anns, eval_out;
    cmd_eval->add_option("--predictions", eval_preds, "predictions .jsonl")->required();
    cmd_eval->add_option("--annotations", eval_anns, "annotations .jsonl")->required();
    cmd_eval->add_option("--out", eval_out, "write report JSON here");

    // ablate
    auto* cmd_ablate = app.add_subcommand("ablate", "train/evaluate architecture variants");
    std::string abl_data, abl_out;
    cmd_ablate->add_option("--data", abl_data, "dataset directory")->required();
    cmd_ablate->add_option("--out", abl_out, "write rows JSON here");

    // synth
    auto* cmd_synth = app.add_subcommand("synth", "generate a synthetic benchmark");
    SynthParams sp;
    std::string synth_out;
    cmd_synth->add_option("--out", synth_out, "output directory")->required();
    cmd_synth->add_option("--videos", sp.n_videos, "number of videos");
    cmd_synth->add_option("--frames", sp.frames, "frames per video");
    cmd_synth->add_option("--video-dim", sp.video_dim, "video feature width");
    cmd_synth->add_option("--vocab", sp.vocab_size, "object vocabulary size");
    cmd_synth->add_option("--train-queries", sp.n_train, "training queries");
    cmd_synth->add_option("--eval-queries", sp.n_eval, "evaluation queries");

    // gradcheck
    auto* cmd_grad = app.add_subcommand("gradcheck", "finite-difference gradient audit");

    // folds
    auto* cmd_folds = app.add_subcommand("folds", "print the 5-fold video assignment");
    std::string folds_data;
    int n_folds = 5;
    cmd_folds->add_option("--data", folds_data, "dataset directory")->required();
    cmd_folds->add_option("--n-folds", n_folds, "number of folds (default 5)");

    CLI11_PARSE(app, argc, argv);

    try {
        const std::uint64_t seed = seed_override.value_or(1);

        if (*cmd_train) {
            TrainConfig cfg = load_train_config(config_path, profile, seed_override);
            DatasetManifest data = read_manifest(train_data);
            std::optional<int> holdout;
            if (fold_holdout >= 0) holdout = fold_holdout;
            TrainedModel tm = train(cfg, data, holdout, &std::cout);
            nlohmann::json metrics;
            metrics["epoch_mean_loss"] = tm.log.epoch_mean_loss;
            save_checkpoint(train_out,
                            snapshot_model(*tm.model, cfg, cfg.total_epochs, metrics, nullptr));
            std::cout << "saved " << train_out << "\n";
        } else if (*cmd_predict) {
            DatasetManifest data = read_manifest(pred_data);
            if (pred_split != "train" && pred_split != "eval")
                throw ConfigError("--split must be train or eval");
            predict(pred_ckpts, data, pred_split == "train" ? Split::Train : Split::Eval,
                    pred_out);
            std::cout << "wrote " << pred_out << "\n";
        } else if (*cmd_eval) {
            EvalReport rep = evaluate_files(eval_preds, eval_anns);
            std::cout << render_table(rep);
            if (rep.n_missing > 0)
                std::cout << "missing predictions for " << rep.n_missing << " queries\n";
            if (!eval_out.empty()) {
                std::ofstream out(eval_out, std::ios::binary | std::ios::trunc);
                out << report_to_json(rep).dump(2) << "\n";
            }
        } else if (*cmd_ablate) {
            TrainConfig cfg = load_train_config(config_path, profile, seed_override);
            DatasetManifest data = read_manifest(abl_data);
            auto rows = run_ablation(cfg, data, &std::cout);
            std::cout << render_ablation_table(rows);
            if (!abl_out.empty()) {
                nlohmann::json j = nlohmann::json::array();
                for (const auto& r : rows)
                    j.push_back({{"label", r.label},
                                 {"config_hash", r.config_hash},
                                 {"report", report_to_json(r.report)}});
                std::ofstream out(abl_out, std::ios::binary | std::ios::trunc);
                out << j.dump(2) << "\n";
            }
        } else if (*cmd_synth) {
            if (seed_override) sp.seed = *seed_override;
            synth_generate(sp, synth_out);
            std::cout << "generated " << synth_out << "\n";
        } else if (*cmd_grad) {
            GradcheckReport rep = run_gradcheck(seed);
            std::cout << rep.to_string();
            if (!rep.pass) return 4;
        } else if (*cmd_folds) {
            DatasetManifest data = read_manifest(folds_data);
            FoldSplit split = make_folds(all_video_ids(data), seed, n_folds);
            std::vector<int> sizes(static_cast<std::size_t>(n_folds), 0);
            for (const auto& [id, fold] : split.assignment) {
                std::cout << id << "\t" << fold << "\n";
                ++sizes[static_cast<std::size_t>(fold)];
            }
            for (int f = 0; f < n_folds; ++f)
                std::cout << "# fold " << f << ": " << sizes[static_cast<std::size_t>(f)]
                          << " videos\n";
        }
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
