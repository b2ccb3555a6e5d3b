#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "ovg/data.hpp"
#include "ovg/hash.hpp"
#include "ovg/postprocess.hpp"
#include "ovg/rng.hpp"
#include "testutil.hpp"

using namespace ovg;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void spit(const fs::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

MatF random_matf(Eigen::Index r, Eigen::Index c, Rng& rng) {
    MatF m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) m(i, j) = static_cast<float>(rng.normal());
    return m;
}

}  // namespace

TEST_CASE("fmx round trip is bit-identical") {
    auto dir = ovg::test::make_temp_dir("ovg-fmx");
    Rng rng(601);
    MatF m = random_matf(17, 9, rng);
    const auto p1 = dir / "a.fmx";
    const auto p2 = dir / "b.fmx";
    write_fmx(p1.string(), m);
    MatF back = read_fmx(p1.string());
    REQUIRE(back.rows() == m.rows());
    REQUIRE(back.cols() == m.cols());
    CHECK(std::memcmp(back.data(), m.data(), sizeof(float) * static_cast<std::size_t>(m.size())) ==
          0);
    write_fmx(p2.string(), back);
    CHECK(slurp(p1) == slurp(p2));
    fs::remove_all(dir);
}

TEST_CASE("fmx hand-built fixture decodes to the expected rows") {
    auto dir = ovg::test::make_temp_dir("ovg-fmx-fix");
    std::string bytes = "FMX1";
    auto push_u32 = [&](std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    };
    push_u32(3);
    push_u32(2);
    for (int v = 1; v <= 6; ++v) {
        float f = static_cast<float>(v);
        std::uint32_t u;
        std::memcpy(&u, &f, 4);
        push_u32(u);
    }
    const auto path = dir / "fixture.fmx";
    spit(path, bytes);
    MatF m = read_fmx(path.string());
    REQUIRE(m.rows() == 3);
    REQUIRE(m.cols() == 2);
    CHECK(m(0, 0) == 1.0f);
    CHECK(m(0, 1) == 2.0f);
    CHECK(m(1, 0) == 3.0f);
    CHECK(m(1, 1) == 4.0f);
    CHECK(m(2, 0) == 5.0f);
    CHECK(m(2, 1) == 6.0f);
    fs::remove_all(dir);
}

TEST_CASE("fmx loader reports positioned errors") {
    auto dir = ovg::test::make_temp_dir("ovg-fmx-err");
    Rng rng(607);
    MatF m = random_matf(4, 3, rng);
    const auto good = dir / "good.fmx";
    write_fmx(good.string(), m);
    std::string bytes = slurp(good);

    // truncated payload
    spit(dir / "short.fmx", bytes.substr(0, bytes.size() - 5));
    CHECK_THROWS_WITH_AS((void)read_fmx((dir / "short.fmx").string()),
                         doctest::Contains("truncated payload"), DataError);

    // bad magic
    std::string bad = bytes;
    bad[0] = 'X';
    spit(dir / "magic.fmx", bad);
    CHECK_THROWS_WITH_AS((void)read_fmx((dir / "magic.fmx").string()),
                         doctest::Contains("byte offset 0"), DataError);

    // non-finite payload value
    std::string naned = bytes;
    const std::uint32_t quiet_nan = 0x7fc00000u;
    for (int i = 0; i < 4; ++i)
        naned[12 + i] = static_cast<char>((quiet_nan >> (8 * i)) & 0xff);
    spit(dir / "nan.fmx", naned);
    CHECK_THROWS_WITH_AS((void)read_fmx((dir / "nan.fmx").string()),
                         doctest::Contains("non-finite value at byte offset 12"), DataError);

    // trailing garbage
    spit(dir / "long.fmx", bytes + "zz");
    CHECK_THROWS_WITH_AS((void)read_fmx((dir / "long.fmx").string()),
                         doctest::Contains("trailing"), DataError);
    fs::remove_all(dir);
}

TEST_CASE("feature stream concatenation keeps channel order and originals") {
    Rng rng(613);
    VideoFeatureSequence a, b;
    a.video_id = b.video_id = "vid";
    a.features = random_matf(6, 2, rng);
    b.features = random_matf(6, 3, rng);
    auto cat = concat_feature_streams(a, b);
    REQUIRE(cat.features.cols() == 5);
    CHECK(cat.features.leftCols(2) == a.features);
    CHECK(cat.features.rightCols(3) == b.features);

    VideoFeatureSequence empty;
    empty.video_id = "vid";
    empty.features = MatF(0, 0);
    auto same = concat_feature_streams(a, empty);
    CHECK(same.features == a.features);

    VideoFeatureSequence wrong = b;
    wrong.features = random_matf(5, 3, rng);
    CHECK_THROWS_AS((void)concat_feature_streams(a, wrong), DataError);
}

TEST_CASE("object token selection matches the exhaustive sort oracle") {
    Rng rng(617);
    MatF table = random_matf(10, 4, rng);

    // 3 frames x 7 detections, keep top 5 per frame, cap 12
    std::vector<Detection> dets;
    for (int f = 0; f < 3; ++f)
        for (int d = 0; d < 7; ++d)
            dets.push_back({f, rng.uniform_int(0, 9), rng.uniform(0.0, 1.0)});
    auto tokens = build_object_tokens(dets, table, 5, 12);
    CHECK(tokens.size() == 12);

    // oracle: per-frame sort by (score desc, frame, class), take 5; then cap
    auto rank = [](const Detection& a, const Detection& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.frame != b.frame) return a.frame < b.frame;
        return a.class_id < b.class_id;
    };
    std::vector<Detection> kept;
    for (int f = 0; f < 3; ++f) {
        std::vector<Detection> frame;
        for (const auto& d : dets)
            if (d.frame == f) frame.push_back(d);
        std::sort(frame.begin(), frame.end(), rank);
        frame.resize(5);
        kept.insert(kept.end(), frame.begin(), frame.end());
    }
    std::sort(kept.begin(), kept.end(), rank);
    kept.resize(12);
    std::multiset<std::pair<int, int>> want, got;
    for (const auto& d : kept) want.insert({d.frame, d.class_id});
    for (std::size_t i = 0; i < 12; ++i)
        got.insert({tokens.frame_index[i], tokens.class_id[i]});
    CHECK(want == got);

    // embeddings come from the class table
    for (std::size_t i = 0; i < 12; ++i)
        CHECK(tokens.embeddings.row(static_cast<Eigen::Index>(i)) ==
              table.row(tokens.class_id[i]));
}

TEST_CASE("duplicate detections stay distinct; unknown classes are rejected") {
    Rng rng(619);
    MatF table = random_matf(4, 3, rng);
    std::vector<Detection> dup{{2, 1, 0.9}, {2, 1, 0.9}};
    auto tokens = build_object_tokens(dup, table, 5, 16);
    CHECK(tokens.size() == 2);

    std::vector<Detection> bad{{0, 7, 0.5}};
    CHECK_THROWS_WITH_AS((void)build_object_tokens(bad, table, 5, 16),
                         doctest::Contains("class_id 7"), DataError);

    CHECK(build_object_tokens({}, table, 5, 16).size() == 0);
}

TEST_CASE("fold assignment is a pure deterministic partition") {
    std::vector<std::string> ids;
    for (int i = 0; i < 100; ++i) ids.push_back("video" + std::to_string(i));
    auto split1 = make_folds(ids, 7);
    auto split2 = make_folds(ids, 7);
    CHECK(split1.assignment == split2.assignment);

    std::vector<int> sizes(5, 0);
    for (const auto& id : ids) {
        const int f = split1.fold_of(id);
        REQUIRE(f >= 0);
        REQUIRE(f < 5);
        ++sizes[static_cast<std::size_t>(f)];
    }
    CHECK(sizes[0] + sizes[1] + sizes[2] + sizes[3] + sizes[4] == 100);

    // independent FNV-1a reference: hash(id bytes ++ seed LE64) mod 5
    for (const auto& id : ids) {
        std::uint64_t h = 14695981039346656037ull;
        for (unsigned char c : id) {
            h ^= c;
            h *= 1099511628211ull;
        }
        const std::uint64_t seed = 7;
        for (int b = 0; b < 8; ++b) {
            h ^= (seed >> (8 * b)) & 0xff;
            h *= 1099511628211ull;
        }
        CHECK(split1.fold_of(id) == static_cast<int>(h % 5));
    }

    // frozen reference counts for (100 ids, seed 7)
    CHECK(sizes == std::vector<int>{21, 15, 22, 21, 21});

    auto other_seed = make_folds(ids, 8);
    CHECK(other_seed.assignment != split1.assignment);
}

TEST_CASE("synthetic generation is byte-deterministic and object-keyed") {
    auto dir = ovg::test::make_temp_dir("ovg-synth");
    SynthParams p;
    p.n_videos = 4;
    p.frames = 96;
    p.video_dim = 8;
    p.vocab_size = 24;
    p.target_classes = 16;
    p.class_dim = 6;
    p.n_train = 12;
    p.n_eval = 4;
    p.min_len = 16;
    p.max_len = 40;
    p.seed = 11;

    const auto d1 = dir / "one";
    const auto d2 = dir / "two";
    synth_generate(p, d1.string());
    synth_generate(p, d2.string());
    for (const auto& entry : fs::recursive_directory_iterator(d1)) {
        if (!entry.is_regular_file()) continue;
        const auto rel = fs::relative(entry.path(), d1);
        CHECK(slurp(entry.path()) == slurp(d2 / rel));
    }

    // target classes appear only inside their query's segment
    DatasetManifest manifest = read_manifest(d1.string());
    for (const auto& split : {manifest.annotations_train, manifest.annotations_eval}) {
        for (const auto& ann : read_annotations(split)) {
            MatF text = read_fmx(ann.text_emb_path);
            MatF table = read_fmx(manifest.class_table_path);
            int target = -1;
            for (Eigen::Index c = 0; c < table.rows(); ++c)
                if (table.row(c) == text.row(0)) target = static_cast<int>(c);
            REQUIRE(target >= 0);
            int inside = 0;
            for (const auto& det : read_objects_jsonl(ann.objects_path)) {
                if (det.class_id != target) continue;
                const double t_s = det.frame * manifest.base_stride_s;
                const bool in_segment = t_s >= ann.start_s && t_s < ann.end_s;
                CHECK(in_segment);
                ++inside;
            }
            CHECK(inside >= 1);
        }
    }
    fs::remove_all(dir);
}

TEST_CASE("video features do not depend on query generation") {
    auto dir = ovg::test::make_temp_dir("ovg-synth-indep");
    SynthParams p;
    p.n_videos = 3;
    p.frames = 64;
    p.video_dim = 6;
    p.vocab_size = 16;
    p.target_classes = 10;
    p.class_dim = 4;
    p.min_len = 12;
    p.max_len = 24;
    p.seed = 21;
    p.n_train = 6;
    p.n_eval = 3;
    synth_generate(p, (dir / "a").string());
    p.n_train = 9;  // different query plan, same seed
    p.n_eval = 0;
    synth_generate(p, (dir / "b").string());
    for (int v = 0; v < 3; ++v) {
        char name[32];
        std::snprintf(name, sizeof(name), "video%03d.fmx", v);
        CHECK(slurp(dir / "a" / "features" / name) == slurp(dir / "b" / "features" / name));
    }
    fs::remove_all(dir);
}

TEST_CASE("video features alone cannot beat chance on the synthetic task") {
    auto dir = ovg::test::make_temp_dir("ovg-synth-ceiling");
    SynthParams p;
    p.n_videos = 10;
    p.frames = 128;
    p.video_dim = 12;
    p.vocab_size = 32;
    p.target_classes = 24;
    p.class_dim = 8;
    p.n_train = 30;
    p.n_eval = 10;
    p.min_len = 12;
    p.max_len = 32;
    p.seed = 33;
    synth_generate(p, dir.string());
    DatasetManifest manifest = read_manifest(dir.string());
    auto anns = read_annotations(manifest.annotations_train);
    auto eanns = read_annotations(manifest.annotations_eval);
    anns.insert(anns.end(), eanns.begin(), eanns.end());

    // hypothesis grid over (start, length)
    std::vector<std::pair<double, double>> hypotheses;
    for (int len : {12, 16, 20, 24, 32})
        for (int start = 0; start + len <= p.frames; start += 4)
            hypotheses.emplace_back(start, start + len);

    // (a) best constant guesser: even cherry-picking a hypothesis on the
    // answers themselves stays near chance
    double best_const = 0.0;
    for (const auto& [hs, he] : hypotheses) {
        int hits = 0;
        for (const auto& ann : anns)
            if (tiou(hs, he, ann.start_s, ann.end_s) >= 0.5) ++hits;
        best_const = std::max(best_const, static_cast<double>(hits) / anns.size());
    }
    CHECK(best_const <= 0.40);

    // (b) matched-filter decoder over features: correlate the query text
    // against windowed feature averages through a fixed random readout
    Rng rng(47);
    MatF readout = random_matf(static_cast<Eigen::Index>(p.class_dim),
                               static_cast<Eigen::Index>(p.video_dim), rng);
    int hits = 0;
    for (const auto& ann : anns) {
        MatF feats = read_fmx((fs::path(manifest.features_dir) / (ann.video_id + ".fmx")).string());
        MatF text = read_fmx(ann.text_emb_path);
        Eigen::RowVectorXf probe = text.row(0) * readout;  // class emb -> feature space
        double best_score = -1e30;
        std::pair<double, double> best_h{0, 0};
        for (const auto& [hs, he] : hypotheses) {
            Eigen::RowVectorXf mean = feats.middleRows(static_cast<Eigen::Index>(hs),
                                                       static_cast<Eigen::Index>(he - hs))
                                          .colwise()
                                          .mean();
            const double score = static_cast<double>(probe.dot(mean));
            if (score > best_score) {
                best_score = score;
                best_h = {hs, he};
            }
        }
        if (tiou(best_h.first, best_h.second, ann.start_s, ann.end_s) >= 0.5) ++hits;
    }
    CHECK(static_cast<double>(hits) / anns.size() <= 0.40);
    fs::remove_all(dir);
}

TEST_CASE("dataset loading binds queries to videos and tokens") {
    auto dir = ovg::test::make_temp_dir("ovg-load");
    SynthParams p;
    p.n_videos = 3;
    p.frames = 64;
    p.video_dim = 6;
    p.vocab_size = 16;
    p.target_classes = 10;
    p.class_dim = 4;
    p.n_train = 6;
    p.n_eval = 3;
    p.min_len = 12;
    p.max_len = 24;
    p.seed = 5;
    synth_generate(p, dir.string());
    auto manifest = read_manifest(dir.string());
    Dataset ds = load_dataset(manifest, Split::Train, 5, 128);
    CHECK(ds.queries.size() == 6);
    CHECK(ds.videos.size() == 3);
    for (const auto& q : ds.queries) {
        CHECK(q.text_emb.rows() == 2);
        const auto& video = ds.video_of(q);
        CHECK(video.features.rows() == 64);
        CHECK(video.objects.size() > 0);
        CHECK(q.ann.end_s <= q.ann.duration_s);
    }
    auto ids = all_video_ids(manifest);
    CHECK(ids.size() == 3);
    fs::remove_all(dir);
}
