#include "ovg/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "ovg/rng.hpp"

namespace fs = std::filesystem;

namespace ovg {

namespace {

void put_u32_le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

std::string resolve_relative(const std::string& base_file, const std::string& p) {
    if (p.empty()) return p;
    fs::path path(p);
    if (path.is_absolute()) return p;
    return (fs::path(base_file).parent_path() / path).string();
}

}  // namespace

void write_fmx(const std::string& path, const MatF& m) {
    std::string bytes;
    bytes.reserve(12 + sizeof(float) * static_cast<std::size_t>(m.size()));
    bytes += "FMX1";
    put_u32_le(bytes, static_cast<std::uint32_t>(m.rows()));
    put_u32_le(bytes, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            const auto u = std::bit_cast<std::uint32_t>(m(i, j));
            put_u32_le(bytes, u);
        }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("write_fmx: cannot open " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write_fmx: short write to " + path);
}

MatF read_fmx(const std::string& path) {
    const std::string bytes = read_file_bytes(path);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 4 || std::memcmp(p, "FMX1", 4) != 0)
        throw DataError(path + ": bad magic at byte offset 0 (want \"FMX1\")");
    if (bytes.size() < 12)
        throw DataError(path + ": truncated header at byte offset " +
                        std::to_string(bytes.size()));
    const std::uint32_t rows = get_u32_le(p + 4);
    const std::uint32_t cols = get_u32_le(p + 8);
    const std::size_t want = 12 + 4ull * rows * cols;
    if (bytes.size() < want)
        throw DataError(path + ": truncated payload at byte offset " +
                        std::to_string(bytes.size()) + " (want " + std::to_string(want) +
                        " bytes for " + std::to_string(rows) + "x" + std::to_string(cols) + ")");
    if (bytes.size() > want)
        throw DataError(path + ": trailing bytes at offset " + std::to_string(want));
    MatF m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    std::size_t at = 12;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j, at += 4) {
            const float v = std::bit_cast<float>(get_u32_le(p + at));
            if (!std::isfinite(v))
                throw DataError(path + ": non-finite value at byte offset " + std::to_string(at));
            m(i, j) = v;
        }
    return m;
}

VideoFeatureSequence load_feature_file(const std::string& path) {
    VideoFeatureSequence seq;
    seq.features = read_fmx(path);
    seq.video_id = fs::path(path).stem().string();
    return seq;
}

VideoFeatureSequence concat_feature_streams(const VideoFeatureSequence& a,
                                            const VideoFeatureSequence& b) {
    if (a.video_id != b.video_id)
        throw DataError("concat_feature_streams: video ids differ (" + a.video_id + " vs " +
                        b.video_id + ")");
    if (b.features.size() == 0 && b.features.rows() == 0) {
        return a;
    }
    if (a.features.rows() != b.features.rows())
        throw DataError("concat_feature_streams: length mismatch for " + a.video_id + " (" +
                        std::to_string(a.features.rows()) + " vs " +
                        std::to_string(b.features.rows()) + ")");
    VideoFeatureSequence out = a;
    out.features.resize(a.features.rows(), a.features.cols() + b.features.cols());
    out.features.leftCols(a.features.cols()) = a.features;
    out.features.rightCols(b.features.cols()) = b.features;
    return out;
}

std::vector<Detection> read_objects_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("read_objects: cannot open " + path);
    std::vector<Detection> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": bad JSON: " + e.what());
        }
        if (!j.contains("t") || !j.contains("class_id") || !j.contains("score"))
            throw DataError(path + ":" + std::to_string(line_no) +
                            ": detection needs t/class_id/score");
        out.push_back({j["t"].get<int>(), j["class_id"].get<int>(), j["score"].get<double>()});
    }
    return out;
}

ObjectTokenSequence build_object_tokens(const std::vector<Detection>& detections,
                                        const MatF& class_table, int top_k, int max_tokens) {
    for (const auto& d : detections)
        if (d.class_id < 0 || d.class_id >= class_table.rows())
            throw DataError("object token: unknown class_id " + std::to_string(d.class_id) +
                            " (table has " + std::to_string(class_table.rows()) + " rows)");

    // score-descending order, deterministic tie-break
    auto by_rank = [](const Detection& a, const Detection& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.frame != b.frame) return a.frame < b.frame;
        return a.class_id < b.class_id;
    };

    std::map<int, std::vector<Detection>> per_frame;
    for (const auto& d : detections) per_frame[d.frame].push_back(d);
    std::vector<Detection> kept;
    for (auto& [frame, dets] : per_frame) {
        std::sort(dets.begin(), dets.end(), by_rank);
        const std::size_t n = std::min<std::size_t>(dets.size(), static_cast<std::size_t>(top_k));
        kept.insert(kept.end(), dets.begin(), dets.begin() + static_cast<long>(n));
    }
    std::sort(kept.begin(), kept.end(), by_rank);
    if (static_cast<int>(kept.size()) > max_tokens)
        kept.resize(static_cast<std::size_t>(max_tokens));
    std::sort(kept.begin(), kept.end(), [](const Detection& a, const Detection& b) {
        if (a.frame != b.frame) return a.frame < b.frame;
        if (a.class_id != b.class_id) return a.class_id < b.class_id;
        return a.score > b.score;
    });

    ObjectTokenSequence seq;
    seq.embeddings.resize(static_cast<Eigen::Index>(kept.size()), class_table.cols());
    for (std::size_t i = 0; i < kept.size(); ++i) {
        seq.embeddings.row(static_cast<Eigen::Index>(i)) = class_table.row(kept[i].class_id);
        seq.frame_index.push_back(kept[i].frame);
        seq.confidence.push_back(kept[i].score);
        seq.class_id.push_back(kept[i].class_id);
    }
    return seq;
}

ObjectTokenSequence load_objects(const std::string& path, const MatF& class_table, int top_k,
                                 int max_tokens) {
    return build_object_tokens(read_objects_jsonl(path), class_table, top_k, max_tokens);
}

std::vector<QueryAnnotation> read_annotations(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("read_annotations: cannot open " + path);
    std::vector<QueryAnnotation> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": bad JSON: " + e.what());
        }
        QueryAnnotation a;
        try {
            a.query_id = j.at("query_id").get<std::string>();
            a.video_id = j.at("video_id").get<std::string>();
            a.text_emb_path = resolve_relative(path, j.at("text_emb").get<std::string>());
            a.start_s = j.at("segment").at(0).get<double>();
            a.end_s = j.at("segment").at(1).get<double>();
            a.duration_s = j.at("duration_s").get<double>();
            if (j.contains("objects"))
                a.objects_path = resolve_relative(path, j.at("objects").get<std::string>());
        } catch (const nlohmann::json::exception& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (!(a.start_s >= 0.0 && a.start_s < a.end_s && a.end_s <= a.duration_s + 1e-6))
            throw DataError(path + ":" + std::to_string(line_no) +
                            ": segment must satisfy 0 <= start < end <= duration");
        out.push_back(std::move(a));
    }
    return out;
}

FoldSplit make_folds(const std::vector<std::string>& video_ids, std::uint64_t seed, int n_folds) {
    if (video_ids.empty()) throw DataError("make_folds: no video ids");
    if (n_folds < 1) throw ConfigError("make_folds: n_folds must be >= 1");
    FoldSplit split;
    split.n_folds = n_folds;
    for (const auto& id : video_ids) {
        std::uint64_t h = fnv1a64(id);
        h = fnv1a64_u64(seed, h);
        split.assignment[id] = static_cast<int>(h % static_cast<std::uint64_t>(n_folds));
    }
    return split;
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

namespace {

MatF randn_matf(Eigen::Index r, Eigen::Index c, Rng& rng) {
    MatF m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = static_cast<float>(rng.normal());
    return m;
}

std::string video_name(int v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "video%03d", v);
    return buf;
}

std::string query_name(int q) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "query%04d", q);
    return buf;
}

struct SynthQuery {
    int video = 0;
    int cls = 0;
    int start_f = 0;
    int end_f = 0;  // exclusive
};

}  // namespace

void synth_generate(const SynthParams& p, const std::string& out_dir) {
    if (p.frames < 64) throw ConfigError("synth: frames must be >= 64");
    if (p.target_classes >= p.vocab_size)
        throw ConfigError("synth: target_classes must leave room for background classes");
    if (p.max_len >= p.frames) throw ConfigError("synth: max_len must be < frames");

    fs::create_directories(out_dir);
    fs::create_directories(fs::path(out_dir) / "features");
    fs::create_directories(fs::path(out_dir) / "text");
    fs::create_directories(fs::path(out_dir) / "objects");

    // class embeddings, unit norm; orthonormalized when the width allows so
    // distinct classes have zero cross-talk
    Rng rng_table(derive_seed(p.seed, "class-table"));
    MatF table = randn_matf(p.vocab_size, p.class_dim, rng_table);
    if (p.vocab_size <= p.class_dim) {
        for (Eigen::Index i = 0; i < table.rows(); ++i) {
            for (Eigen::Index j = 0; j < i; ++j)
                table.row(i) -= table.row(i).dot(table.row(j)) * table.row(j);
            table.row(i).normalize();
        }
    } else {
        for (Eigen::Index i = 0; i < table.rows(); ++i) table.row(i).normalize();
    }
    write_fmx((fs::path(out_dir) / "class_table.fmx").string(), table);

    Rng rng_qtok(derive_seed(p.seed, "query-token"));
    MatF query_token = randn_matf(1, p.class_dim, rng_qtok);
    query_token.row(0).normalize();

    // video features: independent of every query decision by construction
    for (int v = 0; v < p.n_videos; ++v) {
        Rng rng_feat(derive_seed(p.seed, "video-feat", static_cast<std::uint64_t>(v)));
        write_fmx((fs::path(out_dir) / "features" / (video_name(v) + ".fmx")).string(),
                  randn_matf(p.frames, p.video_dim, rng_feat));
    }

    // queries: one unused target class per (video, query)
    const int n_total = p.n_train + p.n_eval;
    std::vector<std::set<int>> used(static_cast<std::size_t>(p.n_videos));
    std::vector<SynthQuery> queries;
    for (int q = 0; q < n_total; ++q) {
        SynthQuery sq;
        sq.video = q % p.n_videos;
        Rng rng_q(derive_seed(p.seed, "query", static_cast<std::uint64_t>(q)));
        auto& taken = used[static_cast<std::size_t>(sq.video)];
        if (static_cast<int>(taken.size()) >= p.target_classes)
            throw ConfigError("synth: more queries per video than target classes");
        do {
            sq.cls = rng_q.uniform_int(0, p.target_classes - 1);
        } while (taken.count(sq.cls));
        taken.insert(sq.cls);
        const int len = rng_q.uniform_int(p.min_len, p.max_len);
        sq.start_f = rng_q.uniform_int(0, p.frames - len);
        sq.end_f = sq.start_f + len;
        queries.push_back(sq);

        MatF text(2, p.class_dim);
        text.row(0) = table.row(sq.cls);
        text.row(1) = query_token.row(0);
        write_fmx((fs::path(out_dir) / "text" / (query_name(q) + ".fmx")).string(), text);
    }

    // object files: planted target evidence strictly inside each query's
    // segment plus uniform background clutter from non-target classes
    for (int v = 0; v < p.n_videos; ++v) {
        std::vector<Detection> dets;
        Rng rng_bg(derive_seed(p.seed, "video-bg", static_cast<std::uint64_t>(v)));
        for (int t = 0; t < p.frames; ++t) {
            if (rng_bg.uniform() < p.bg_per_frame) {
                Detection d;
                d.frame = t;
                d.class_id = rng_bg.uniform_int(p.target_classes, p.vocab_size - 1);
                d.score = rng_bg.uniform(0.2, 0.7);
                dets.push_back(d);
            }
        }
        for (int q = 0; q < n_total; ++q) {
            if (queries[static_cast<std::size_t>(q)].video != v) continue;
            const auto& sq = queries[static_cast<std::size_t>(q)];
            Rng rng_plant(derive_seed(p.seed, "plant", static_cast<std::uint64_t>(q)));
            for (int t = sq.start_f; t < sq.end_f; t += p.plant_every)
                dets.push_back({t, sq.cls, rng_plant.uniform(0.85, 1.0)});
        }
        std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
            if (a.frame != b.frame) return a.frame < b.frame;
            if (a.class_id != b.class_id) return a.class_id < b.class_id;
            return a.score < b.score;
        });
        std::ofstream out(fs::path(out_dir) / "objects" / (video_name(v) + ".jsonl"),
                          std::ios::binary | std::ios::trunc);
        for (const auto& d : dets) {
            nlohmann::json j;
            j["t"] = d.frame;
            j["class_id"] = d.class_id;
            j["score"] = d.score;
            out << j.dump() << "\n";
        }
    }

    auto write_split = [&](const std::string& name, int begin, int end) {
        std::ofstream out(fs::path(out_dir) / name, std::ios::binary | std::ios::trunc);
        for (int q = begin; q < end; ++q) {
            const auto& sq = queries[static_cast<std::size_t>(q)];
            nlohmann::json j;
            j["query_id"] = query_name(q);
            j["video_id"] = video_name(sq.video);
            j["text_emb"] = "text/" + query_name(q) + ".fmx";
            j["segment"] = nlohmann::json::array(
                {sq.start_f * p.base_stride_s, sq.end_f * p.base_stride_s});
            j["duration_s"] = p.frames * p.base_stride_s;
            j["objects"] = "objects/" + video_name(sq.video) + ".jsonl";
            out << j.dump() << "\n";
        }
    };
    write_split("train.jsonl", 0, p.n_train);
    write_split("eval.jsonl", p.n_train, n_total);

    nlohmann::json manifest;
    manifest["base_stride_s"] = p.base_stride_s;
    manifest["class_table"] = "class_table.fmx";
    manifest["features_dir"] = "features";
    manifest["annotations_train"] = "train.jsonl";
    manifest["annotations_eval"] = "eval.jsonl";
    manifest["generator"] = {{"seed", p.seed},
                             {"n_videos", p.n_videos},
                             {"frames", p.frames},
                             {"video_dim", p.video_dim},
                             {"vocab_size", p.vocab_size},
                             {"target_classes", p.target_classes},
                             {"class_dim", p.class_dim},
                             {"n_train", p.n_train},
                             {"n_eval", p.n_eval},
                             {"min_len", p.min_len},
                             {"max_len", p.max_len},
                             {"plant_every", p.plant_every},
                             {"bg_per_frame", p.bg_per_frame}};
    std::ofstream mout(fs::path(out_dir) / "manifest.json", std::ios::binary | std::ios::trunc);
    mout << manifest.dump(2) << "\n";
}

DatasetManifest read_manifest(const std::string& dir) {
    const std::string path = (fs::path(dir) / "manifest.json").string();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("read_manifest: cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": bad JSON: " + e.what());
    }
    DatasetManifest m;
    m.root = dir;
    m.base_stride_s = j.value("base_stride_s", 1.0);
    m.features_dir = resolve_relative(path, j.value("features_dir", "features"));
    if (j.contains("features_dir2"))
        m.features_dir2 = resolve_relative(path, j["features_dir2"].get<std::string>());
    m.class_table_path = resolve_relative(path, j.value("class_table", std::string()));
    m.annotations_train = resolve_relative(path, j.value("annotations_train", std::string()));
    m.annotations_eval = resolve_relative(path, j.value("annotations_eval", std::string()));
    return m;
}

Dataset load_dataset(const DatasetManifest& manifest, Split split, int top_k_per_frame,
                     int max_object_tokens) {
    const std::string ann_path =
        split == Split::Train ? manifest.annotations_train : manifest.annotations_eval;
    if (ann_path.empty()) throw DataError("load_dataset: manifest lacks the requested split");
    Dataset ds;
    ds.base_stride_s = manifest.base_stride_s;
    if (!manifest.class_table_path.empty()) ds.class_table = read_fmx(manifest.class_table_path);

    std::map<std::string, int> video_index;
    for (const auto& ann : read_annotations(ann_path)) {
        LoadedQuery q;
        q.ann = ann;
        q.text_emb = read_fmx(ann.text_emb_path);
        auto it = video_index.find(ann.video_id);
        if (it == video_index.end()) {
            LoadedVideo v;
            v.video_id = ann.video_id;
            VideoFeatureSequence seq = load_feature_file(
                (fs::path(manifest.features_dir) / (ann.video_id + ".fmx")).string());
            if (!manifest.features_dir2.empty()) {
                VideoFeatureSequence second = load_feature_file(
                    (fs::path(manifest.features_dir2) / (ann.video_id + ".fmx")).string());
                seq = concat_feature_streams(seq, second);
            }
            v.features = std::move(seq.features);
            v.duration_s = ann.duration_s;
            if (!ann.objects_path.empty()) {
                if (ds.class_table.rows() == 0)
                    throw DataError("load_dataset: objects present but no class table");
                v.objects = load_objects(ann.objects_path, ds.class_table, top_k_per_frame,
                                         max_object_tokens);
            }
            video_index[ann.video_id] = static_cast<int>(ds.videos.size());
            ds.videos.push_back(std::move(v));
            it = video_index.find(ann.video_id);
        }
        q.video_index = it->second;
        ds.queries.push_back(std::move(q));
    }
    return ds;
}

std::vector<std::string> all_video_ids(const DatasetManifest& manifest) {
    std::set<std::string> ids;
    for (const auto& path : {manifest.annotations_train, manifest.annotations_eval}) {
        if (path.empty()) continue;
        for (const auto& ann : read_annotations(path)) ids.insert(ann.video_id);
    }
    return {ids.begin(), ids.end()};
}

}  // namespace ovg
