#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ovg/config.hpp"
#include "ovg/errors.hpp"

namespace ovg {

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Float matrix file (.fmx): "FMX1", u32 LE rows, u32 LE cols, then rows*cols
// float32 LE row-major, no padding. Loaders reject malformed input with the
// offending byte offset.
void write_fmx(const std::string& path, const MatF& m);
MatF read_fmx(const std::string& path);

struct VideoFeatureSequence {
    std::string video_id;
    MatF features;  // T x D_in
    double base_stride_s = 0.0;
    double duration_s = 0.0;
};

VideoFeatureSequence load_feature_file(const std::string& path);

// Channel-axis concatenation of two aligned feature streams.
VideoFeatureSequence concat_feature_streams(const VideoFeatureSequence& a,
                                            const VideoFeatureSequence& b);

// Raw detector output row: {"t": frame, "class_id": id, "score": s}.
struct Detection {
    int frame = 0;
    int class_id = 0;
    double score = 0.0;
};

std::vector<Detection> read_objects_jsonl(const std::string& path);

struct ObjectTokenSequence {
    MatF embeddings;  // N_o x D_obj
    std::vector<int> frame_index;
    std::vector<double> confidence;
    std::vector<int> class_id;

    Eigen::Index size() const { return embeddings.rows(); }
};

// Token selection: keep the top_k highest-score detections per frame, then
// cap globally at max_tokens by score; ties break by (frame, class_id)
// ascending. Token embedding = class-table row of class_id. Final order is
// (frame, class_id, score desc).
ObjectTokenSequence build_object_tokens(const std::vector<Detection>& detections,
                                        const MatF& class_table, int top_k, int max_tokens);

ObjectTokenSequence load_objects(const std::string& path, const MatF& class_table, int top_k,
                                 int max_tokens);

struct QueryAnnotation {
    std::string query_id;
    std::string video_id;
    std::string text_emb_path;  // resolved
    std::string objects_path;   // resolved; empty when absent
    double start_s = 0.0;
    double end_s = 0.0;
    double duration_s = 0.0;
};

// Annotations (.jsonl): {"query_id","video_id","text_emb","segment":[s,e],
// "duration_s", "objects"?}; relative paths resolve against the file's
// directory.
std::vector<QueryAnnotation> read_annotations(const std::string& path);

struct FoldSplit {
    int n_folds = 5;
    std::map<std::string, int> assignment;

    int fold_of(const std::string& video_id) const {
        auto it = assignment.find(video_id);
        if (it == assignment.end()) throw DataError("fold_of: unknown video " + video_id);
        return it->second;
    }
};

// fold(video_id) = fnv1a64(video_id bytes ++ seed as 8 LE bytes) mod n_folds.
FoldSplit make_folds(const std::vector<std::string>& video_ids, std::uint64_t seed,
                     int n_folds = 5);

// ---------------------------------------------------------------------------
// Synthetic benchmark generator. Video features are pure noise drawn from a
// stream keyed only by (seed, video); the answer segment is recoverable from
// the object files alone: each query's target class is planted exclusively
// inside its ground-truth interval, and the query text embeds that class.
// ---------------------------------------------------------------------------

struct SynthParams {
    int n_videos = 20;
    int frames = 256;
    int video_dim = 64;
    int vocab_size = 64;
    int target_classes = 48;  // class ids below this can be query targets
    int class_dim = 64;
    int n_train = 200;
    int n_eval = 50;
    std::uint64_t seed = 42;
    double base_stride_s = 1.0;
    int min_len = 24;
    int max_len = 72;
    int plant_every = 1;       // in-segment plant spacing, frames
    double bg_per_frame = 0.25; // background detection rate
};

struct DatasetManifest {
    std::string root;  // directory containing the manifest
    std::string features_dir;
    std::string features_dir2;  // optional second stream
    std::string class_table_path;
    std::string annotations_train;
    std::string annotations_eval;
    double base_stride_s = 1.0;
};

void synth_generate(const SynthParams& params, const std::string& out_dir);

DatasetManifest read_manifest(const std::string& dir);

struct LoadedVideo {
    std::string video_id;
    MatF features;
    ObjectTokenSequence objects;
    double duration_s = 0.0;
};

struct LoadedQuery {
    QueryAnnotation ann;
    MatF text_emb;
    int video_index = -1;
};

struct Dataset {
    std::vector<LoadedVideo> videos;
    std::vector<LoadedQuery> queries;
    MatF class_table;
    double base_stride_s = 1.0;

    const LoadedVideo& video_of(const LoadedQuery& q) const {
        return videos[static_cast<std::size_t>(q.video_index)];
    }
};

enum class Split { Train, Eval };

Dataset load_dataset(const DatasetManifest& manifest, Split split, int top_k_per_frame,
                     int max_object_tokens);

// Union of video ids across both annotation files (train and eval are folded
// together).
std::vector<std::string> all_video_ids(const DatasetManifest& manifest);

}  // namespace ovg
