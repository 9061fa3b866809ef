#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ecw/common.hpp"
#include "ecw/image.hpp"
#include "ecw/rng.hpp"

namespace ecw {

// One manifest row. Paths are stored relative to the manifest's directory.
struct FrameRecord {
    std::string id;
    std::string image;
    std::string mask;
    std::string category;
    double speed_mps = 0.0;
    std::uint64_t seed = 0;
    double t = 0.0;
};

inline void to_json(nlohmann::json& j, const FrameRecord& r) {
    j = nlohmann::json{{"id", r.id},           {"image", r.image},
                       {"mask", r.mask},       {"category", r.category},
                       {"speed_mps", r.speed_mps}, {"seed", r.seed},
                       {"t", r.t}};
}

inline void from_json(const nlohmann::json& j, FrameRecord& r) {
    r.id = j.at("id").get<std::string>();
    r.image = j.at("image").get<std::string>();
    r.mask = j.at("mask").get<std::string>();
    r.category = j.at("category").get<std::string>();
    r.speed_mps = j.at("speed_mps").get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.t = j.at("t").get<double>();
}

inline void write_manifest(const std::filesystem::path& path,
                           const std::vector<FrameRecord>& records) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoFailure("cannot write manifest: " + path.string());
    for (const auto& r : records) {
        nlohmann::json j = r;
        out << j.dump() << "\n";
    }
    if (!out) throw IoFailure("short write on manifest: " + path.string());
}

inline std::vector<FrameRecord> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoFailure("cannot open manifest: " + path.string());
    std::vector<FrameRecord> records;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            records.push_back(nlohmann::json::parse(line).get<FrameRecord>());
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("manifest " + path.string() + " line " +
                              std::to_string(lineno) + ": " + e.what());
        }
    }
    return records;
}

// An (image, target) pair held in memory as network-ready tensors.
struct LabeledFrame {
    std::string id;
    Tensor<float> image;
    Tensor<float> mask;
};

// Loads manifest rows into tensors; relative paths resolve against the
// manifest's own directory.
inline std::vector<LabeledFrame> load_frames(const std::filesystem::path& manifest_path,
                                             const std::vector<FrameRecord>& records) {
    const auto base = manifest_path.parent_path();
    std::vector<LabeledFrame> frames;
    frames.reserve(records.size());
    for (const auto& r : records) {
        LabeledFrame f;
        f.id = r.id;
        f.image = image_to_tensor(read_pgm((base / r.image).string()));
        f.mask = mask_to_tensor(read_pgm((base / r.mask).string()));
        frames.push_back(std::move(f));
    }
    return frames;
}

// Order-sensitive digest of the dataset bytes, used to stamp training runs.
inline std::uint64_t dataset_digest(const std::filesystem::path& manifest_path,
                                    const std::vector<FrameRecord>& records) {
    const auto base = manifest_path.parent_path();
    std::uint32_t crc = 0;
    auto add_file = [&](const std::filesystem::path& p) {
        std::ifstream in(p, std::ios::binary);
        if (!in) throw IoFailure("cannot hash: " + p.string());
        char buf[65536];
        while (in.read(buf, sizeof buf) || in.gcount() > 0)
            crc = crc32(buf, static_cast<std::size_t>(in.gcount()), crc);
    };
    std::uint64_t ids = 0xcbf29ce484222325ULL;
    for (const auto& r : records) {
        ids = hash_combine(ids, fnv1a64(r.id));
        add_file(base / r.image);
        add_file(base / r.mask);
    }
    return hash_combine(ids, crc);
}

} // namespace ecw
