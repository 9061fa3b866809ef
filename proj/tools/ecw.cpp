#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ecw/bench.hpp"
#include "ecw/camera.hpp"
#include "ecw/checkpoint.hpp"
#include "ecw/common.hpp"
#include "ecw/dataset.hpp"
#include "ecw/eval.hpp"
#include "ecw/hough.hpp"
#include "ecw/image.hpp"
#include "ecw/network.hpp"
#include "ecw/rng.hpp"
#include "ecw/scene.hpp"
#include "ecw/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load_json(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ecw::IoFailure("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ecw::ConfigError(path.string() + ": " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ecw::IoFailure("cannot write " + path.string());
    out << text;
    if (!out) throw ecw::IoFailure("short write on " + path.string());
}

void make_dirs(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ecw::IoFailure("cannot create " + dir.string() + ": " + ec.message());
}

// The resolved-configuration echo every subcommand leaves next to its outputs.
// Pure inputs only (no outcomes, no timestamps), so identical runs write
// identical bytes.
void write_run_json(const fs::path& dir, const json& resolved) {
    write_text(dir / "run.json", resolved.dump(2) + "\n");
}

std::string hex64(std::uint64_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// ---- gen-data ----

struct SequenceEntry {
    std::string id;
    ecw::SceneSpec spec;
    ecw::MotionProfile motion;
};

struct Catalog {
    std::int64_t width = 160;
    std::int64_t height = 96;
    std::int64_t frames_per_spec = 30;
    std::vector<ecw::SceneSpec> specs;       // flat dataset mode
    std::vector<SequenceEntry> sequences;    // sequence mode
};

Catalog parse_catalog(const json& j, std::optional<std::uint64_t> reseed) {
    Catalog c;
    try {
        c.width = j.value("width", c.width);
        c.height = j.value("height", c.height);
        const bool flat = j.contains("specs");
        const bool seq = j.contains("sequences");
        if (flat == seq)
            throw ecw::ConfigError("catalog must declare exactly one of 'specs' or 'sequences'");
        if (flat) {
            c.frames_per_spec = j.value("frames_per_spec", c.frames_per_spec);
            for (const auto& js : j.at("specs")) c.specs.push_back(js.get<ecw::SceneSpec>());
        } else {
            for (const auto& je : j.at("sequences")) {
                SequenceEntry e;
                e.id = je.at("id").get<std::string>();
                e.spec = je.at("spec").get<ecw::SceneSpec>();
                if (je.contains("motion")) e.motion = je.at("motion").get<ecw::MotionProfile>();
                c.sequences.push_back(std::move(e));
            }
        }
    } catch (const json::exception& e) {
        throw ecw::ConfigError(std::string("catalog: ") + e.what());
    }
    if (c.width < 16 || c.height < 16)
        throw ecw::ConfigError("catalog dims must be at least 16x16");
    if (!c.specs.empty() && c.frames_per_spec < 1)
        throw ecw::ConfigError("frames_per_spec must be >= 1");
    std::map<std::string, int> seen;
    for (auto& e : c.sequences) {
        if (e.id.empty() || e.id.find('/') != std::string::npos ||
            e.id.find('\\') != std::string::npos)
            throw ecw::ConfigError("sequence id '" + e.id + "' is not a valid directory name");
        if (++seen[e.id] > 1) throw ecw::ConfigError("duplicate sequence id '" + e.id + "'");
        ecw::validate(e.motion);
    }
    // --seed folds into every spec seed so one flag reseeds the whole catalog
    if (reseed) {
        for (auto& s : c.specs) s.seed = ecw::hash_combine(*reseed, s.seed);
        for (auto& e : c.sequences) e.spec.seed = ecw::hash_combine(*reseed, e.spec.seed);
    }
    for (const auto& s : c.specs) ecw::validate(s);
    for (const auto& e : c.sequences) ecw::validate(e.spec);
    return c;
}

json catalog_to_json(const Catalog& c) {
    json j{{"width", c.width}, {"height", c.height}};
    if (!c.specs.empty()) {
        j["frames_per_spec"] = c.frames_per_spec;
        j["specs"] = c.specs;
    } else {
        json list = json::array();
        for (const auto& e : c.sequences)
            list.push_back(json{{"id", e.id}, {"spec", e.spec}, {"motion", e.motion}});
        j["sequences"] = list;
    }
    return j;
}

int cmd_gen_data(const fs::path& catalog_path, const fs::path& out_dir,
                 std::optional<std::uint64_t> seed) {
    const Catalog cat = parse_catalog(load_json(catalog_path), seed);
    const auto cam = ecw::default_camera(cat.width, cat.height);
    make_dirs(out_dir);

    json run{{"subcommand", "gen-data"},
             {"catalog_path", catalog_path.string()},
             {"out_dir", out_dir.string()},
             {"camera", cam},
             {"resolved_catalog", catalog_to_json(cat)}};
    if (seed) run["seed"] = *seed;
    write_run_json(out_dir, run);

    std::map<std::string, std::int64_t> histogram;
    std::int64_t total = 0;
    if (!cat.specs.empty()) {
        const auto records = ecw::build_dataset(cat.specs, cat.frames_per_spec, cam, out_dir);
        for (const auto& r : records) ++histogram[r.category];
        total = static_cast<std::int64_t>(records.size());
        std::printf("dataset digest %s\n",
                    hex64(ecw::dataset_digest(out_dir / "manifest.jsonl", records)).c_str());
    } else {
        for (const auto& e : cat.sequences) {
            const auto s = ecw::generate_sequence(e.spec, cam, e.motion);
            ecw::write_sequence(out_dir / e.id, s, cam, e.id);
            histogram[ecw::to_string(e.spec.degradation)] +=
                static_cast<std::int64_t>(s.frames.size());
            total += static_cast<std::int64_t>(s.frames.size());
            std::printf("sequence %s: %zu frames (%s)\n", e.id.c_str(), s.frames.size(),
                        ecw::to_string(e.spec.degradation));
        }
    }
    std::printf("%lld frames under %s\n", static_cast<long long>(total),
                out_dir.string().c_str());
    for (const auto& [category, n] : histogram)
        std::printf("  %-16s %lld\n", category.c_str(), static_cast<long long>(n));
    return 0;
}

// ---- train ----

int cmd_train(const fs::path& manifest_path, const fs::path& out_dir,
              const std::string& net_path, const std::string& config_path,
              std::optional<std::int64_t> epochs, std::optional<std::uint64_t> seed,
              std::optional<std::int64_t> batch_size) {
    const auto records = ecw::read_manifest(manifest_path);
    if (records.empty()) throw ecw::EmptyDataset("manifest lists no frames");
    const auto frames = ecw::load_frames(manifest_path, records);

    ecw::NetworkSpec spec;
    if (!net_path.empty())
        spec = load_json(net_path).get<ecw::NetworkSpec>();
    else
        spec = ecw::make_corridor_spec(frames[0].image.shape.h, frames[0].image.shape.w,
                                       ecw::kDeskChannels);
    ecw::validate_spec(spec);

    ecw::TrainConfig cfg;
    if (!config_path.empty()) cfg = load_json(config_path).get<ecw::TrainConfig>();
    if (epochs) cfg.epochs = *epochs;
    if (seed) cfg.seed = *seed;
    if (batch_size) cfg.batch_size = *batch_size;
    ecw::validate(cfg);

    make_dirs(out_dir);
    const auto digest = hex64(ecw::dataset_digest(manifest_path, records));
    write_run_json(out_dir, json{{"subcommand", "train"},
                                 {"manifest", manifest_path.string()},
                                 {"out_dir", out_dir.string()},
                                 {"network", spec},
                                 {"train", cfg},
                                 {"dataset_digest", digest}});

    const auto result =
        ecw::train(spec, frames, cfg, [](std::int64_t epoch, const ecw::EpochLoss& l) {
            std::printf("epoch %3lld  train %.6f  val %.6f\n", static_cast<long long>(epoch),
                        l.train_rmse, l.val_rmse);
            std::fflush(stdout);
        });

    ecw::write_loss_csv(out_dir / "loss.csv", result.history);
    json meta{{"train", cfg}, {"dataset_digest", digest},
              {"best_epoch", result.history.best_epoch}};
    meta["checkpoint"] = "best";
    ecw::save_checkpoint(result.best, out_dir / "best.ecnw1", meta);
    meta["checkpoint"] = "final";
    ecw::save_checkpoint(result.final_net, out_dir / "final.ecnw1", meta);

    const auto& best = result.history.epochs[static_cast<std::size_t>(
        result.history.best_epoch - 1)];
    std::printf("best epoch %lld  val %.6f  (%zu train / %zu val frames)\n",
                static_cast<long long>(result.history.best_epoch), best.val_rmse,
                result.train_ids.size(), result.val_ids.size());
    return 0;
}

// ---- infer ----

void write_f32(const fs::path& path, const ecw::Tensor<float>& t) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ecw::IoFailure("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!out) throw ecw::IoFailure("short write on " + path.string());
}

int cmd_infer(const fs::path& checkpoint, const fs::path& input, const fs::path& out_dir,
              bool overlay, bool raw, double threshold) {
    if (threshold <= 0.0 || threshold >= 1.0)
        throw ecw::ConfigError("threshold must lie in (0, 1)");
    const auto loaded = ecw::load_checkpoint(checkpoint);

    struct Item {
        std::string stem;
        fs::path path;
    };
    std::vector<Item> items;
    if (input.extension() == ".jsonl") {
        const auto base = input.parent_path();
        for (const auto& r : ecw::read_manifest(input)) items.push_back({r.id, base / r.image});
        if (items.empty()) throw ecw::EmptyDataset("manifest lists no frames");
    } else {
        items.push_back({input.stem().string(), input});
    }

    make_dirs(out_dir);
    write_run_json(out_dir, json{{"subcommand", "infer"},
                                 {"checkpoint", checkpoint.string()},
                                 {"input", input.string()},
                                 {"out_dir", out_dir.string()},
                                 {"overlay", overlay},
                                 {"raw", raw},
                                 {"threshold", threshold}});

    double forward_seconds = 0.0;
    for (const auto& item : items) {
        const auto img = ecw::read_pgm(item.path.string());
        const auto x = ecw::image_to_tensor(img);
        const auto t0 = std::chrono::steady_clock::now();
        const auto prob = loaded.network.forward(x);
        forward_seconds += std::chrono::duration<double>(
                               std::chrono::steady_clock::now() - t0).count();
        ecw::write_pgm((out_dir / (item.stem + "_mask.pgm")).string(),
                       ecw::tensor_to_image(prob));
        if (raw) write_f32(out_dir / (item.stem + "_mask.f32"), prob);
        if (overlay)
            ecw::write_ppm((out_dir / (item.stem + "_overlay.ppm")).string(),
                           ecw::render_overlay(img, prob, threshold));
    }
    const double fps = forward_seconds > 0.0
                           ? static_cast<double>(items.size()) / forward_seconds
                           : 0.0;
    std::printf("%zu frame(s), forward %.3f s, %.1f frames/s\n", items.size(),
                forward_seconds, fps);
    return 0;
}

// ---- eval ----

int cmd_eval(const fs::path& checkpoint, const fs::path& manifest_path, const fs::path& out_dir,
             double threshold, const std::string& split, double val_fraction) {
    if (threshold <= 0.0 || threshold >= 1.0)
        throw ecw::ConfigError("threshold must lie in (0, 1)");
    if (!(val_fraction > 0.0 && val_fraction < 1.0))
        throw ecw::ConfigError("val-fraction must lie in (0, 1)");
    const auto loaded = ecw::load_checkpoint(checkpoint);

    auto records = ecw::read_manifest(manifest_path);
    if (split != "all") {
        std::vector<ecw::FrameRecord> kept;
        for (auto& r : records) {
            const bool val = ecw::is_validation_id(r.id, val_fraction);
            if (val == (split == "val")) kept.push_back(std::move(r));
        }
        records = std::move(kept);
    }
    if (records.empty()) throw ecw::EmptyDataset("no frames in the '" + split + "' split");

    make_dirs(out_dir);
    write_run_json(out_dir, json{{"subcommand", "eval"},
                                 {"checkpoint", checkpoint.string()},
                                 {"manifest", manifest_path.string()},
                                 {"out_dir", out_dir.string()},
                                 {"threshold", threshold},
                                 {"split", split},
                                 {"val_fraction", val_fraction}});

    const auto base = manifest_path.parent_path();
    json per_frame = json::array();
    double sum = 0.0;
    for (const auto& r : records) {
        const auto img = ecw::read_pgm((base / r.image).string());
        const auto truth = ecw::read_pgm((base / r.mask).string());
        const auto prob = loaded.network.forward(ecw::image_to_tensor(img));
        const double v = ecw::iou(ecw::threshold_mask(prob, static_cast<float>(threshold)),
                                  truth);
        per_frame.push_back(json{{"id", r.id}, {"iou", v}});
        sum += v;
    }
    const double mean = sum / static_cast<double>(records.size());
    write_text(out_dir / "eval.json", json{{"threshold", threshold},
                                           {"split", split},
                                           {"n_frames", records.size()},
                                           {"mean_iou", mean},
                                           {"frames", per_frame}}
                                          .dump(2) +
                                         "\n");
    std::printf("mean IoU %.4f over %zu frame(s) [split %s]\n", mean, records.size(),
                split.c_str());
    return 0;
}

// ---- bench ----

int cmd_bench(const fs::path& sequences_dir, const fs::path& checkpoint, const fs::path& out_dir,
              const std::string& hough_path, const std::string& kpi_path, int jobs) {
    if (jobs < 1) throw ecw::ConfigError("--jobs must be >= 1");
    const auto loaded = ecw::load_checkpoint(checkpoint);
    ecw::HoughConfig hough;
    if (!hough_path.empty()) hough = load_json(hough_path).get<ecw::HoughConfig>();
    ecw::KpiConfig kpi;
    if (!kpi_path.empty()) kpi = load_json(kpi_path).get<ecw::KpiConfig>();

    const auto dirs = ecw::list_sequence_dirs(sequences_dir);
    if (dirs.empty())
        throw ecw::ConfigError("no sequence directories under " + sequences_dir.string());
    const auto cam = load_json(dirs.front() / "meta.json").at("camera").get<ecw::CameraModel>();

    make_dirs(out_dir);
    write_run_json(out_dir, json{{"subcommand", "bench"},
                                 {"sequences_dir", sequences_dir.string()},
                                 {"checkpoint", checkpoint.string()},
                                 {"out_dir", out_dir.string()},
                                 {"hough", hough},
                                 {"kpi", kpi},
                                 {"camera", cam},
                                 {"jobs", jobs}});

    std::vector<ecw::BenchSequence> seqs;
    seqs.reserve(dirs.size());
    for (const auto& d : dirs) seqs.push_back(ecw::load_bench_sequence(d));

    // per-sequence evaluation is pure, so worker count never changes results;
    // aggregation stays in directory order
    std::vector<ecw::SequenceResult> results(seqs.size());
    if (jobs == 1 || seqs.size() == 1) {
        for (std::size_t i = 0; i < seqs.size(); ++i)
            results[i] = ecw::benchmark_sequence(seqs[i], loaded.network, hough, cam, kpi);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        const auto n_workers = std::min<std::size_t>(static_cast<std::size_t>(jobs),
                                                     seqs.size());
        for (std::size_t w = 0; w < n_workers; ++w)
            pool.emplace_back([&] {
                for (std::size_t i; (i = next.fetch_add(1)) < seqs.size();)
                    results[i] =
                        ecw::benchmark_sequence(seqs[i], loaded.network, hough, cam, kpi);
            });
        for (auto& t : pool) t.join();
    }

    const auto report = ecw::aggregate_results(std::move(results));
    write_text(out_dir / "report.json", json(report).dump(2) + "\n");
    const auto table = ecw::render_report_text(report);
    write_text(out_dir / "report.txt", table);
    std::fputs(table.c_str(), stdout);
    return 0;
}

// ---- overlay ----

int cmd_overlay(const fs::path& image_path, const fs::path& mask_path, const fs::path& out_path,
                double threshold) {
    if (threshold <= 0.0 || threshold >= 1.0)
        throw ecw::ConfigError("threshold must lie in (0, 1)");
    const auto img = ecw::read_pgm(image_path.string());
    const auto prob = ecw::image_to_tensor(ecw::read_pgm(mask_path.string()));
    const auto rgb = ecw::render_overlay(img, prob, threshold);
    if (out_path.has_parent_path()) make_dirs(out_path.parent_path());
    ecw::write_ppm(out_path.string(), rgb);
    write_run_json(out_path.has_parent_path() ? out_path.parent_path() : fs::path("."),
                   json{{"subcommand", "overlay"},
                        {"image", image_path.string()},
                        {"mask", mask_path.string()},
                        {"out", out_path.string()},
                        {"threshold", threshold}});
    std::printf("wrote %s\n", out_path.string().c_str());
    return 0;
}

// Stable scripting contract: 0 ok, 2 config/spec, 3 I/O, 4 shape, 5 checkpoint.
int mapped_exit(const ecw::Error& e) {
    if (dynamic_cast<const ecw::CorruptCheckpoint*>(&e)) return 5;
    if (dynamic_cast<const ecw::VersionMismatch*>(&e)) return 5;
    if (dynamic_cast<const ecw::IoFailure*>(&e)) return 3;
    if (dynamic_cast<const ecw::ShapeMismatch*>(&e)) return 4;
    if (dynamic_cast<const ecw::IndivisibleShape*>(&e)) return 4;
    return 2;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"ego-corridor perception workbench"};
    app.require_subcommand(1);

    std::string catalog, out_dir, manifest, checkpoint, input, image, mask, out_path;
    std::string net_path, config_path, hough_path, kpi_path;
    std::string split = "all";
    std::optional<std::uint64_t> seed;
    std::optional<std::int64_t> epochs, batch_size;
    double threshold = 0.5;
    double val_fraction = 0.1;
    bool overlay_flag = false, raw_flag = false;
    int jobs = 1;

    auto* gen = app.add_subcommand("gen-data", "render a synthetic dataset or sequence set");
    gen->add_option("catalog", catalog, "catalog JSON")->required();
    gen->add_option("out_dir", out_dir, "output directory")->required();
    gen->add_option("--seed", seed, "fold this seed into every spec seed");

    auto* train = app.add_subcommand("train", "train the corridor network");
    train->add_option("manifest", manifest, "dataset manifest (JSON Lines)")->required();
    train->add_option("out_dir", out_dir, "output directory")->required();
    train->add_option("--net", net_path, "network spec JSON (default: desk profile)");
    train->add_option("--config", config_path, "training config JSON");
    train->add_option("--epochs", epochs, "override epoch count");
    train->add_option("--seed", seed, "override training seed");
    train->add_option("--batch-size", batch_size, "override batch size");

    auto* infer = app.add_subcommand("infer", "run the network over frames");
    infer->add_option("checkpoint", checkpoint, "ECNW1 checkpoint")->required();
    infer->add_option("input", input, "input PGM or manifest (.jsonl)")->required();
    infer->add_option("out_dir", out_dir, "output directory")->required();
    infer->add_flag("--overlay", overlay_flag, "also write overlay PPMs");
    infer->add_flag("--raw", raw_flag, "also write float32 masks");
    infer->add_option("--threshold", threshold, "overlay binarization threshold");

    auto* eval = app.add_subcommand("eval", "mean IoU of a checkpoint against a manifest");
    eval->add_option("checkpoint", checkpoint, "ECNW1 checkpoint")->required();
    eval->add_option("manifest", manifest, "dataset manifest (JSON Lines)")->required();
    eval->add_option("out_dir", out_dir, "output directory")->required();
    eval->add_option("--threshold", threshold, "binarization threshold");
    eval->add_option("--split", split, "frame subset: all, val or train")
        ->check(CLI::IsMember({"all", "val", "train"}));
    eval->add_option("--val-fraction", val_fraction, "validation fraction for the id split");

    auto* bench = app.add_subcommand("bench", "compare both detectors over sequences");
    bench->add_option("sequences_dir", input, "directory of sequence directories")->required();
    bench->add_option("checkpoint", checkpoint, "ECNW1 checkpoint")->required();
    bench->add_option("out_dir", out_dir, "output directory")->required();
    bench->add_option("--hough", hough_path, "Hough baseline config JSON");
    bench->add_option("--kpi", kpi_path, "KPI config JSON");
    bench->add_option("--jobs", jobs, "worker threads (results are order-stable)");

    auto* overlay = app.add_subcommand("overlay", "tint a corridor mask over a frame");
    overlay->add_option("image", image, "input frame PGM")->required();
    overlay->add_option("mask", mask, "corridor mask PGM")->required();
    overlay->add_option("out", out_path, "output PPM path")->required();
    overlay->add_option("--threshold", threshold, "binarization threshold");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(catalog, out_dir, seed);
        if (train->parsed())
            return cmd_train(manifest, out_dir, net_path, config_path, epochs, seed,
                             batch_size);
        if (infer->parsed())
            return cmd_infer(checkpoint, input, out_dir, overlay_flag, raw_flag, threshold);
        if (eval->parsed())
            return cmd_eval(checkpoint, manifest, out_dir, threshold, split, val_fraction);
        if (bench->parsed())
            return cmd_bench(input, checkpoint, out_dir, hough_path, kpi_path, jobs);
        if (overlay->parsed()) return cmd_overlay(image, mask, out_path, threshold);
    } catch (const ecw::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return mapped_exit(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
