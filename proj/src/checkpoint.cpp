#include <bit>
#include <cstring>
#include <fstream>

#include "ovg/train.hpp"

namespace ovg {

namespace {

void put_u32_le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void append_fmx_block(std::string& out, const MatF& m) {
    out += "FMX1";
    put_u32_le(out, static_cast<std::uint32_t>(m.rows()));
    put_u32_le(out, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            put_u32_le(out, std::bit_cast<std::uint32_t>(m(i, j)));
}

MatF read_fmx_block(const std::string& bytes, std::size_t& at, const std::string& path,
                    const std::string& name) {
    auto fail = [&](const std::string& what) {
        throw DataError(path + ": block '" + name + "': " + what + " at byte offset " +
                        std::to_string(at));
    };
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (at + 12 > bytes.size()) fail("truncated block header");
    if (std::memcmp(p + at, "FMX1", 4) != 0) fail("bad block magic");
    const std::uint32_t rows = get_u32_le(p + at + 4);
    const std::uint32_t cols = get_u32_le(p + at + 8);
    at += 12;
    if (at + 4ull * rows * cols > bytes.size()) fail("truncated block payload");
    MatF m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j, at += 4)
            m(i, j) = std::bit_cast<float>(get_u32_le(p + at));
    return m;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    nlohmann::json header;
    header["format"] = 1;
    header["config"] = ckpt.cfg;
    header["model_hash"] = ckpt.model_hash;
    header["epoch"] = ckpt.epoch;
    header["adam_step"] = ckpt.adam_step;
    header["metrics"] = ckpt.metrics;
    auto names = nlohmann::json::array();
    for (const auto& [name, m] : ckpt.params) names.push_back(name);
    header["params"] = names;
    header["has_adam"] = !ckpt.adam_m.empty();

    const std::string hjson = header.dump();
    std::string bytes = "OVCK";
    put_u32_le(bytes, static_cast<std::uint32_t>(hjson.size()));
    bytes += hjson;
    for (const auto& [name, m] : ckpt.params) append_fmx_block(bytes, m);
    for (const auto& [name, m] : ckpt.adam_m) append_fmx_block(bytes, m);
    for (const auto& [name, m] : ckpt.adam_v) append_fmx_block(bytes, m);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("save_checkpoint: cannot open " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("save_checkpoint: short write to " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("read_checkpoint: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (bytes.size() < 8 || std::memcmp(p, "OVCK", 4) != 0)
        throw DataError(path + ": bad checkpoint magic at byte offset 0");
    const std::uint32_t hlen = get_u32_le(p + 4);
    if (8ull + hlen > bytes.size())
        throw DataError(path + ": truncated header at byte offset " +
                        std::to_string(bytes.size()));
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(8, hlen));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": bad header JSON: " + e.what());
    }

    Checkpoint ckpt;
    ckpt.cfg = header.at("config").get<TrainConfig>();
    ckpt.model_hash = header.value("model_hash", std::string());
    ckpt.epoch = header.value("epoch", 0);
    ckpt.adam_step = header.value("adam_step", 0l);
    if (header.contains("metrics")) ckpt.metrics = header["metrics"];

    std::size_t at = 8 + hlen;
    for (const auto& name : header.at("params")) {
        const std::string n = name.get<std::string>();
        ckpt.params.emplace_back(n, read_fmx_block(bytes, at, path, n));
    }
    if (header.value("has_adam", false)) {
        for (const auto& [name, m] : ckpt.params)
            ckpt.adam_m.emplace_back(name, read_fmx_block(bytes, at, path, "adam.m." + name));
        for (const auto& [name, m] : ckpt.params)
            ckpt.adam_v.emplace_back(name, read_fmx_block(bytes, at, path, "adam.v." + name));
    }
    if (at != bytes.size())
        throw DataError(path + ": trailing bytes at offset " + std::to_string(at));
    return ckpt;
}

Checkpoint snapshot_model(const GroundingModel<float>& model, const TrainConfig& cfg, int epoch,
                          const nlohmann::json& metrics, AdamW<float>* opt) {
    Checkpoint ckpt;
    ckpt.cfg = cfg;
    ckpt.epoch = epoch;
    ckpt.metrics = metrics;
    ckpt.model_hash = model_config_hash(cfg.model);
    for (const auto& [name, p] : model.parameters()) ckpt.params.emplace_back(name, p.value());
    if (opt) {
        ckpt.adam_step = opt->step_count();
        auto& params = opt->params();
        for (std::size_t i = 0; i < params.size(); ++i) {
            ckpt.adam_m.emplace_back(params[i].first, opt->moment1()[i]);
            ckpt.adam_v.emplace_back(params[i].first, opt->moment2()[i]);
        }
    }
    return ckpt;
}

void restore_model(const Checkpoint& ckpt, GroundingModel<float>& model) {
    auto params = model.parameters();
    if (params.size() != ckpt.params.size())
        throw DataError("restore_model: parameter count mismatch (" +
                        std::to_string(params.size()) + " vs " +
                        std::to_string(ckpt.params.size()) + ")");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].first != ckpt.params[i].first)
            throw DataError("restore_model: parameter order mismatch at '" + params[i].first +
                            "' vs '" + ckpt.params[i].first + "'");
        const MatF& src = ckpt.params[i].second;
        auto& dst = params[i].second;
        if (dst.rows() != src.rows() || dst.cols() != src.cols())
            throw DataError("restore_model: shape mismatch for '" + params[i].first + "'");
        dst.value_mut() = src;
    }
}

}  // namespace ovg
