#include "terraseg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "terraseg/features.hpp"
#include "terraseg/gbt.hpp"
#include "terraseg/geometry.hpp"
#include "terraseg/harmonize.hpp"
#include "terraseg/io.hpp"
#include "terraseg/metrics.hpp"
#include "terraseg/rasterize.hpp"
#include "terraseg/rng.hpp"
#include "terraseg/stitch.hpp"
#include "terraseg/synth.hpp"
#include "terraseg/unet.hpp"

namespace fs = std::filesystem;

namespace terraseg {

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f.good()) throw validation_error("cannot open config: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return from_text(ss.str());
}

RunConfig RunConfig::from_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream ss(text);
    std::string line;
    size_t line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto trim = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r");
            if (a == std::string::npos) return std::string();
            size_t b = s.find_last_not_of(" \t\r");
            return s.substr(a, b - a + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw validation_error("config line " + std::to_string(line_no) + ": missing '='");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
            value = value.substr(1, value.size() - 2);
        if (key.empty()) throw validation_error("config line " + std::to_string(line_no) +
                                                ": empty key");
        cfg.kv_[key] = value;
    }
    return cfg;
}

void RunConfig::set(const std::string& key, const std::string& value) { kv_[key] = value; }
bool RunConfig::has(const std::string& key) const { return kv_.count(key) != 0; }

std::string RunConfig::get(const std::string& key, const std::string& fallback) const {
    auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
}

double RunConfig::get_num(const std::string& key, double fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
        return std::stod(it->second);
    } catch (const std::exception&) {
        throw validation_error("config key " + key + ": not a number: " + it->second);
    }
}

int64_t RunConfig::get_int(const std::string& key, int64_t fallback) const {
    return static_cast<int64_t>(get_num(key, static_cast<double>(fallback)));
}

bool RunConfig::get_bool(const std::string& key, bool fallback) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    if (it->second == "true" || it->second == "1") return true;
    if (it->second == "false" || it->second == "0") return false;
    throw validation_error("config key " + key + ": not a bool: " + it->second);
}

uint64_t fnv1a64_bytes(const void* data, size_t len) {
    const uint8_t* p = static_cast<const uint8_t*>(data);
    uint64_t h = 1469598103934665603ULL;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

uint64_t fnv1a64_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f.good()) throw pipeline_error("cannot hash missing artifact: " + path);
    uint64_t h = 1469598103934665603ULL;
    char buf[65536];
    while (f.read(buf, sizeof(buf)) || f.gcount() > 0) {
        std::streamsize got = f.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<uint8_t>(buf[i]);
            h *= 1099511628211ULL;
        }
        if (got < static_cast<std::streamsize>(sizeof(buf))) break;
    }
    return h;
}

namespace {

struct StageGuard {
    const char* stage;
    template <typename Fn>
    auto run(Fn&& fn) -> decltype(fn()) {
        try {
            return fn();
        } catch (const validation_error& e) {
            throw validation_error(std::string("stage ") + stage + ": " + e.what());
        } catch (const std::exception& e) {
            throw pipeline_error(std::string("stage ") + stage + ": " + e.what());
        }
    }
};

FeatureTable filter_rows(const FeatureTable& t, const PointCloud& cloud, double min_x,
                         double max_x) {
    FeatureTable out;
    for (size_t i = 0; i < t.rows.size(); ++i) {
        const auto& p = cloud.records[t.point_ids[i]];
        if (p.x < min_x || p.x >= max_x) continue;
        out.rows.push_back(t.rows[i]);
        out.point_ids.push_back(t.point_ids[i]);
        out.labels.push_back(t.labels[i]);
        out.tags.push_back(t.tags[i]);
    }
    return out;
}

FeatureTable subsample_rows(const FeatureTable& t, size_t cap, Rng& rng) {
    if (t.rows.size() <= cap) return t;
    std::vector<size_t> ids(t.rows.size());
    for (size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    rng.shuffle(ids);
    ids.resize(cap);
    std::sort(ids.begin(), ids.end());
    FeatureTable out;
    for (size_t i : ids) {
        out.rows.push_back(t.rows[i]);
        out.point_ids.push_back(t.point_ids[i]);
        out.labels.push_back(t.labels[i]);
        out.tags.push_back(t.tags[i]);
    }
    return out;
}

std::vector<std::string> channel_group(const std::string& name) {
    if (name == "all")
        return {"ground", "return_num", "z", "r", "g", "b", "nir", "intensity"};
    if (name == "intensity") return {"intensity"};
    if (name == "color") return {"r", "g", "b", "nir"};
    if (name == "lidar") return {"ground", "return_num", "z"};
    throw validation_error("unknown channel group: " + name);
}

} // namespace

PipelineResult run_pipeline(const RunConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    PipelineResult result;
    auto artifact = [&](const std::string& name) { return (fs::path(out_dir) / name).string(); };
    auto note = [&](const std::string& path) {
        result.artifacts.push_back({path, fnv1a64_file(path)});
    };

    uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed", 7));
    Rng rng(seed);

    // --- world ---------------------------------------------------------
    PointCloud cloud;
    Raster ortho, classes;
    PolygonSet labels, roads, grain;
    bool have_classes = false;
    if (cfg.has("points")) {
        StageGuard g{"load"};
        g.run([&] {
            cloud = load_points(cfg.get("points", ""),
                                point_format_from_path(cfg.get("points", "")));
            ortho = load_raster(cfg.get("ortho", ""));
            labels = load_polygons(cfg.get("labels", ""));
            roads = load_polygons(cfg.get("roads", ""));
            grain = load_polygons(cfg.get("grain", ""));
            if (cfg.has("classes")) {
                classes = load_raster(cfg.get("classes", ""));
                have_classes = true;
            }
            return 0;
        });
    } else {
        StageGuard g{"synth"};
        g.run([&] {
            WorldSpec spec;
            spec.seed = seed;
            spec.extent = cfg.get_num("world.extent", 160.0);
            spec.density = cfg.get_num("world.density", 8.0);
            World world = generate_world(spec);
            cloud = std::move(world.points);
            ortho = std::move(world.ortho);
            labels = std::move(world.labels);
            roads = std::move(world.roads);
            grain = std::move(world.grain);
            classes = std::move(world.classes);
            have_classes = true;
            save_points(artifact("points.bin"), cloud, PointFormat::Bin);
            save_raster(artifact("ortho.tsrg"), ortho);
            save_polygons(artifact("labels.geojson"), labels);
            save_polygons(artifact("roads.geojson"), roads);
            save_polygons(artifact("grain.geojson"), grain);
            save_raster(artifact("classes.tsrg"), classes);
            note(artifact("points.bin"));
            note(artifact("ortho.tsrg"));
            note(artifact("labels.geojson"));
            note(artifact("roads.geojson"));
            note(artifact("grain.geojson"));
            note(artifact("classes.tsrg"));
            return 0;
        });
    }

    // --- colorize ------------------------------------------------------
    {
        StageGuard g{"colorize"};
        g.run([&] {
            size_t missing = colorize(cloud, ortho);
            if (missing > 0)
                std::cerr << "colorize: " << missing << " points outside ortho coverage\n";
            return 0;
        });
    }

    // --- encoder -------------------------------------------------------
    bool encoder_enabled = cfg.get_bool("encoder.enabled", true);
    if (encoder_enabled) {
        StageGuard g{"train-encoder"};
        g.run([&] {
            HarmonizeConfig hc;
            hc.alpha = cfg.get_num("encoder.alpha", 1.0);
            hc.beta = cfg.get_num("encoder.beta", 0.3);
            hc.gamma = cfg.get_num("encoder.gamma", 1.0);
            hc.batch_n = static_cast<int>(cfg.get_int("encoder.batch_n", 512));
            hc.max_epochs = static_cast<int>(cfg.get_int("encoder.epochs", 600));
            hc.cell_size = cfg.get_num("encoder.cell_size", 40.0);
            hc.min_points = static_cast<int>(cfg.get_int("encoder.min_points", 50));
            hc.seed = seed;
            EmbedDataset ds = build_embed_dataset(cloud, grain, roads, hc);
            EncoderModel enc = train_encoder(ds, hc);
            save_encoder(artifact("encoder.tsnn"), enc);
            note(artifact("encoder.tsnn"));
            encode_cloud(enc, cloud);
            save_points(artifact("points_encoded.bin"), cloud, PointFormat::Bin);
            note(artifact("points_encoded.bin"));
            return 0;
        });
    }

    BBox bb = cloud.bbox();
    double extent_x = bb.max_x - bb.min_x;
    double split_train = bb.min_x + cfg.get_num("split.train_frac", 0.5) * extent_x;
    double split_eval = bb.min_x + cfg.get_num("split.eval_frac", 0.5) * extent_x;
    double cell = cfg.get_num("cellsize", 0.2);

    nlohmann::json report;

    // --- gbt branch ------------------------------------------------------
    if (cfg.get_bool("gbt.enabled", true)) {
        StageGuard g{"gbt"};
        g.run([&] {
            SpatialIndex index = build_index(cloud, 1.0);
            FeatureTable table = build_feature_table(
                cloud, index,
                encoder_enabled ? IntensitySource::Encoded : IntensitySource::Raw);
            attach_labels(table, cloud, labels);

            Rng sub = rng.fork(11);
            size_t cap = static_cast<size_t>(cfg.get_int("gbt.rows", 16000));
            FeatureTable region_train = filter_rows(table, cloud, bb.min_x, split_train);
            FeatureTable region_eval = filter_rows(table, cloud, split_eval, bb.max_x + 1.0);
            region_train = subsample_rows(region_train, cap, sub);
            region_eval = subsample_rows(region_eval, cap, sub);

            // Hold out a slice of the training region for early stopping.
            size_t holdout = region_train.rows.size() / 5;
            FeatureTable tr, va;
            for (size_t i = 0; i < region_train.rows.size(); ++i) {
                FeatureTable& dst = i < holdout ? va : tr;
                dst.rows.push_back(region_train.rows[i]);
                dst.point_ids.push_back(region_train.point_ids[i]);
                dst.labels.push_back(region_train.labels[i]);
                dst.tags.push_back(region_train.tags[i]);
            }
            save_feature_table(artifact("features_train.csv"), tr);
            save_feature_table(artifact("features_valid.csv"), va);
            save_feature_table(artifact("features_eval.csv"), region_eval);
            note(artifact("features_train.csv"));
            note(artifact("features_valid.csv"));
            note(artifact("features_eval.csv"));

            GbtConfig gc;
            gc.num_trees = static_cast<int>(cfg.get_int("gbt.num_trees", 200));
            gc.max_depth = static_cast<int>(cfg.get_int("gbt.max_depth", 7));
            gc.learning_rate = cfg.get_num("gbt.learning_rate", 0.1);
            gc.min_leaf = static_cast<int>(cfg.get_int("gbt.min_leaf", 20));
            gc.num_bins = static_cast<int>(cfg.get_int("gbt.num_bins", 64));
            gc.l2_lambda = cfg.get_num("gbt.l2_lambda", 1.0);
            gc.patience = static_cast<int>(cfg.get_int("gbt.patience", 20));
            gc.seed = seed;
            GbtModel model = fit_gbt(tr, va, gc);
            save_gbt(artifact("gbt.tsgb"), model, gc);
            note(artifact("gbt.tsgb"));

            auto probs = predict_gbt(model, region_eval);
            // Rasterize predictions and labels over the evaluation region.
            BBox eb{split_eval, bb.min_y, bb.max_x, bb.max_y};
            GridSpec grid = GridSpec::covering(eb, cell);
            Raster pred =
                rasterize_point_predictions(cloud, region_eval.point_ids, probs, grid);
            auto pl = label_points(cloud, labels);
            Raster lab = rasterize_labels(cloud, pl, grid);
            save_raster(artifact("gbt_pred.tsrg"), pred);
            note(artifact("gbt_pred.tsrg"));
            EvalReport rep = evaluate_rasters(pred, lab, nullptr);
            report["gbt"] = nlohmann::json::parse(rep.to_json());
            result.gbt_auc = rep.auc;
            result.ran_gbt = true;
            return 0;
        });
    }

    // --- unet branch -----------------------------------------------------
    if (cfg.get_bool("unet.enabled", true)) {
        StageGuard g{"unet"};
        g.run([&] {
            GridSpec grid = GridSpec::covering(bb, cell);
            Raster feat = rasterize_features(cloud, grid);
            auto pl = label_points(cloud, labels);
            Raster lab = rasterize_labels(cloud, pl, grid);
            save_raster(artifact("features.tsrg"), feat);
            save_raster(artifact("labels.tsrg"), lab);
            note(artifact("features.tsrg"));
            note(artifact("labels.tsrg"));

            auto channels = channel_group(cfg.get("unet.channels", "all"));
            int tile = static_cast<int>(cfg.get_int("unet.tile", 96));
            int stride = static_cast<int>(cfg.get_int("unet.stride", 96));
            TileSet all_tiles = crop_tiles(feat, lab, channels, tile, stride);

            int train_max_col = static_cast<int>((split_train - bb.min_x) / cell);
            int eval_min_col = static_cast<int>((split_eval - bb.min_x) / cell);
            TileSet train_tiles, eval_tiles;
            train_tiles.size = eval_tiles.size = tile;
            train_tiles.channels = eval_tiles.channels = channels;
            for (auto& t : all_tiles.tiles) {
                if (t.col0 + tile <= train_max_col)
                    train_tiles.tiles.push_back(std::move(t));
                else if (t.col0 >= eval_min_col)
                    eval_tiles.tiles.push_back(std::move(t));
            }
            if (train_tiles.tiles.empty() || eval_tiles.tiles.empty())
                throw validation_error("unet: region split produced an empty tile set");

            // Last quarter of the training tiles doubles as the early-stop
            // validation split.
            TileSet tr, va;
            tr.size = va.size = tile;
            tr.channels = va.channels = channels;
            size_t n_val = std::max<size_t>(1, train_tiles.tiles.size() / 4);
            for (size_t i = 0; i < train_tiles.tiles.size(); ++i) {
                auto& dst = i < train_tiles.tiles.size() - n_val ? tr : va;
                dst.tiles.push_back(std::move(train_tiles.tiles[i]));
            }

            UNetConfig uc;
            uc.k = static_cast<int>(cfg.get_int("unet.k", 3));
            uc.c0 = static_cast<int>(cfg.get_int("unet.c0", 16));
            uc.in_channels = static_cast<int>(channels.size());
            uc.seed = seed;
            UNetModel model(uc);
            std::cerr << "unet: " << model.parameter_count() << " parameters\n";

            UNetTrainConfig tc;
            tc.epochs = static_cast<int>(cfg.get_int("unet.epochs", 30));
            tc.patience = static_cast<int>(cfg.get_int("unet.patience", 10));
            tc.batch_size = static_cast<int>(cfg.get_int("unet.batch", 4));
            tc.lr = cfg.get_num("unet.lr", 1e-3);
            tc.gamma_f = cfg.get_num("unet.gamma_f", 2.0);
            tc.alpha_f = cfg.get_num("unet.alpha_f", 0.25);
            tc.metric_accuracy = cfg.get("unet.metric", "f1") == "accuracy";
            tc.seed = seed;
            UNetModel best = train_unet(model, tr, va, tc);
            best.save(artifact("unet.tsnn"));
            note(artifact("unet.tsnn"));

            // Stitched prediction over the evaluation region.
            int eval_w = feat.width() - eval_min_col;
            Raster eval_feat = crop_raster(feat, eval_min_col, 0, eval_w, feat.height());
            Raster eval_lab = crop_raster(lab, eval_min_col, 0, eval_w, lab.height());
            Raster prob = stitch_predictions(best, eval_feat, channels, tile,
                                             std::max(1, tile / 2));
            save_raster(artifact("unet_prob.tsrg"), prob);
            note(artifact("unet_prob.tsrg"));

            EvalReport rep;
            if (have_classes) {
                GridSpec cg{eval_lab.origin_x(), eval_lab.origin_y(), cell, eval_lab.width(),
                            eval_lab.height()};
                // Class raster shares the grid; crop to the same window.
                int ccol0 = static_cast<int>((eval_lab.origin_x() - classes.origin_x()) / cell);
                int crow0 = static_cast<int>((eval_lab.origin_y() - classes.origin_y()) / cell);
                if (ccol0 >= 0 && crow0 >= 0 &&
                    ccol0 + eval_lab.width() <= classes.width() &&
                    crow0 + eval_lab.height() <= classes.height()) {
                    Raster eval_cls = crop_raster(classes, ccol0, crow0, eval_lab.width(),
                                                  eval_lab.height());
                    rep = evaluate_rasters(prob, eval_lab, &eval_cls);
                } else {
                    rep = evaluate_rasters(prob, eval_lab, nullptr);
                }
            } else {
                rep = evaluate_rasters(prob, eval_lab, nullptr);
            }
            report["unet"] = nlohmann::json::parse(rep.to_json());
            result.unet_f1 = rep.scores.f1;
            result.ran_unet = true;
            return 0;
        });
    }

    // --- report + manifest ----------------------------------------------
    result.report_path = artifact("report.json");
    {
        std::ofstream f(result.report_path);
        f << report.dump(1) << "\n";
    }
    note(result.report_path);

    nlohmann::json manifest;
    manifest["hash_algo"] = "fnv1a64";
    nlohmann::json cfg_echo;
    for (const auto& [k, v] : cfg.entries()) cfg_echo[k] = v;
    manifest["config"] = cfg_echo;
    nlohmann::json arts = nlohmann::json::array();
    for (const auto& [path, hash] : result.artifacts) {
        std::ostringstream hex;
        hex << std::hex << hash;
        arts.push_back({{"path", fs::path(path).filename().string()}, {"fnv1a64", hex.str()}});
    }
    manifest["artifacts"] = arts;
    result.manifest_path = artifact("manifest.json");
    {
        std::ofstream f(result.manifest_path);
        f << manifest.dump(1) << "\n";
    }
    return result;
}

} // namespace terraseg
