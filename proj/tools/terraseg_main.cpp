#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "terraseg/features.hpp"
#include "terraseg/gbt.hpp"
#include "terraseg/geometry.hpp"
#include "terraseg/harmonize.hpp"
#include "terraseg/io.hpp"
#include "terraseg/metrics.hpp"
#include "terraseg/pipeline.hpp"
#include "terraseg/rasterize.hpp"
#include "terraseg/stitch.hpp"
#include "terraseg/synth.hpp"
#include "terraseg/unet.hpp"

using namespace terraseg;

namespace {

std::vector<std::string> channel_group(const std::string& name) {
    if (name == "all")
        return {"ground", "return_num", "z", "r", "g", "b", "nir", "intensity"};
    if (name == "intensity") return {"intensity"};
    if (name == "color") return {"r", "g", "b", "nir"};
    if (name == "lidar") return {"ground", "return_num", "z"};
    throw validation_error("unknown channel group: " + name);
}

int dispatch(CLI::App& app, int argc, char** argv) {
    CLI11_PARSE(app, argc, argv);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"terraseg: fortified-area segmentation pipeline"};
    app.require_subcommand(1);

    try {
        // ---- synth ----
        auto* synth = app.add_subcommand("synth", "generate a synthetic world");
        struct {
            uint64_t seed = 7;
            double extent = 400.0, density = 40.0;
            std::string out_dir = "world";
        } syn;
        synth->add_option("--seed", syn.seed);
        synth->add_option("--extent", syn.extent);
        synth->add_option("--density", syn.density);
        synth->add_option("--out-dir", syn.out_dir)->required();
        synth->callback([&] {
            WorldSpec spec;
            spec.seed = syn.seed;
            spec.extent = syn.extent;
            spec.density = syn.density;
            World w = generate_world(spec);
            std::filesystem::create_directories(syn.out_dir);
            auto p = [&](const std::string& n) { return syn.out_dir + "/" + n; };
            save_points(p("points.bin"), w.points, PointFormat::Bin);
            save_raster(p("ortho.tsrg"), w.ortho);
            save_polygons(p("labels.geojson"), w.labels);
            save_polygons(p("roads.geojson"), w.roads);
            save_polygons(p("grain.geojson"), w.grain);
            save_raster(p("classes.tsrg"), w.classes);
            std::cout << "world: " << w.points.size() << " points -> " << syn.out_dir << "\n";
        });

        // ---- colorize ----
        auto* col = app.add_subcommand("colorize", "project ortho channels onto points");
        struct {
            std::string in, ortho, out;
        } co;
        col->add_option("--in", co.in)->required();
        col->add_option("--ortho", co.ortho)->required();
        col->add_option("--out", co.out)->required();
        col->callback([&] {
            PointCloud cloud = load_points(co.in, point_format_from_path(co.in));
            Raster ortho = load_raster(co.ortho);
            size_t missing = colorize(cloud, ortho);
            if (missing > 0) std::cerr << "colorize: " << missing << " uncovered points\n";
            save_points(co.out, cloud, point_format_from_path(co.out));
        });

        // ---- train-encoder ----
        auto* tenc = app.add_subcommand("train-encoder", "learn the intensity harmonizer");
        struct {
            std::string points, grain, roads, out;
            double alpha = 1.0, beta = 0.3, gamma = 1.0, cell = 1000.0;
            int epochs = 1500, batch_n = 512, min_points = 50;
            uint64_t seed = 0;
        } te;
        tenc->add_option("--points", te.points)->required();
        tenc->add_option("--grain", te.grain)->required();
        tenc->add_option("--roads", te.roads)->required();
        tenc->add_option("--alpha", te.alpha);
        tenc->add_option("--beta", te.beta);
        tenc->add_option("--gamma", te.gamma);
        tenc->add_option("--cell-size", te.cell);
        tenc->add_option("--epochs", te.epochs);
        tenc->add_option("--batch-n", te.batch_n);
        tenc->add_option("--min-points", te.min_points);
        tenc->add_option("--seed", te.seed);
        tenc->add_option("--out", te.out)->required();
        tenc->callback([&] {
            PointCloud cloud = load_points(te.points, point_format_from_path(te.points));
            PolygonSet grain = load_polygons(te.grain);
            PolygonSet roads = load_polygons(te.roads);
            HarmonizeConfig hc;
            hc.alpha = te.alpha;
            hc.beta = te.beta;
            hc.gamma = te.gamma;
            hc.cell_size = te.cell;
            hc.max_epochs = te.epochs;
            hc.batch_n = te.batch_n;
            hc.min_points = te.min_points;
            hc.seed = te.seed;
            EmbedDataset ds = build_embed_dataset(cloud, grain, roads, hc);
            TrainTrace trace;
            EncoderModel enc = train_encoder(ds, hc, &trace);
            save_encoder(te.out, enc);
            std::cout << "encoder: " << trace.epochs << " epochs, final loss "
                      << (trace.loss.empty() ? 0.0 : trace.loss.back()) << "\n";
        });

        // ---- encode ----
        auto* enc = app.add_subcommand("encode", "apply the harmonizer to a cloud");
        struct {
            std::string model, in, out;
        } en;
        enc->add_option("--model", en.model)->required();
        enc->add_option("--in", en.in)->required();
        enc->add_option("--out", en.out)->required();
        enc->callback([&] {
            EncoderModel model = load_encoder(en.model);
            PointCloud cloud = load_points(en.in, point_format_from_path(en.in));
            encode_cloud(model, cloud);
            save_points(en.out, cloud, point_format_from_path(en.out));
        });

        // ---- featurize ----
        auto* feat = app.add_subcommand("featurize", "build the per-point feature table");
        struct {
            std::string in, labels, out, intensity = "raw";
            double radius = 1.0;
        } fe;
        feat->add_option("--in", fe.in)->required();
        feat->add_option("--labels", fe.labels);
        feat->add_option("--intensity", fe.intensity)->check(CLI::IsMember({"raw", "encoded"}));
        feat->add_option("--radius", fe.radius);
        feat->add_option("--out", fe.out)->required();
        feat->callback([&] {
            PointCloud cloud = load_points(fe.in, point_format_from_path(fe.in));
            SpatialIndex index = build_index(cloud, fe.radius);
            FeatureTable table = build_feature_table(
                cloud, index,
                fe.intensity == "encoded" ? IntensitySource::Encoded : IntensitySource::Raw,
                fe.radius);
            if (!fe.labels.empty()) attach_labels(table, cloud, load_polygons(fe.labels));
            save_feature_table(fe.out, table);
            std::cout << "features: " << table.rows.size() << " rows\n";
        });

        // ---- train-gbt ----
        auto* tg = app.add_subcommand("train-gbt", "fit the gradient boosted trees");
        struct {
            std::string features, valid, out;
            GbtConfig cfg;
        } tg_opt;
        tg->add_option("--features", tg_opt.features)->required();
        tg->add_option("--valid", tg_opt.valid)->required();
        tg->add_option("--out", tg_opt.out)->required();
        tg->add_option("--num-trees", tg_opt.cfg.num_trees);
        tg->add_option("--learning-rate", tg_opt.cfg.learning_rate);
        tg->add_option("--max-depth", tg_opt.cfg.max_depth);
        tg->add_option("--min-leaf", tg_opt.cfg.min_leaf);
        tg->add_option("--num-bins", tg_opt.cfg.num_bins);
        tg->add_option("--lambda", tg_opt.cfg.l2_lambda);
        tg->add_option("--patience", tg_opt.cfg.patience);
        tg->add_option("--seed", tg_opt.cfg.seed);
        tg->callback([&] {
            FeatureTable train = load_feature_table(tg_opt.features);
            FeatureTable valid = load_feature_table(tg_opt.valid);
            GbtFitTrace trace;
            GbtModel model = fit_gbt(train, valid, tg_opt.cfg, &trace);
            save_gbt(tg_opt.out, model, tg_opt.cfg);
            std::cout << "gbt: " << model.trees.size() << " trees kept (best round "
                      << trace.best_round << ")\n";
        });

        // ---- predict-gbt ----
        auto* pg = app.add_subcommand("predict-gbt", "score a feature table");
        struct {
            std::string model, features, out;
        } pg_opt;
        pg->add_option("--model", pg_opt.model)->required();
        pg->add_option("--features", pg_opt.features)->required();
        pg->add_option("--out", pg_opt.out)->required();
        pg->callback([&] {
            GbtModel model = load_gbt(pg_opt.model);
            FeatureTable table = load_feature_table(pg_opt.features);
            auto probs = predict_gbt(model, table);
            std::ofstream f(pg_opt.out);
            if (!f.good()) throw pipeline_error("cannot write " + pg_opt.out);
            f.precision(17);
            f << "point_id,prob\n";
            for (size_t i = 0; i < probs.size(); ++i)
                f << table.point_ids[i] << ',' << probs[i] << "\n";
        });

        // ---- rasterize ----
        auto* ras = app.add_subcommand("rasterize", "grid features, labels or predictions");
        struct {
            std::string points, labels, preds, out, mode = "features";
            double cell = 0.2;
        } ra;
        ras->add_option("--points", ra.points)->required();
        ras->add_option("--mode", ra.mode)
            ->check(CLI::IsMember({"features", "labels", "predictions"}));
        ras->add_option("--labels", ra.labels);
        ras->add_option("--preds", ra.preds);
        ras->add_option("--cell-size", ra.cell);
        ras->add_option("--out", ra.out)->required();
        ras->callback([&] {
            PointCloud cloud = load_points(ra.points, point_format_from_path(ra.points));
            GridSpec grid = GridSpec::covering(cloud.bbox(), ra.cell);
            Raster out;
            if (ra.mode == "features") {
                out = rasterize_features(cloud, grid);
            } else if (ra.mode == "labels") {
                if (ra.labels.empty()) throw validation_error("--labels required");
                auto pl = label_points(cloud, load_polygons(ra.labels));
                out = rasterize_labels(cloud, pl, grid);
            } else {
                if (ra.preds.empty()) throw validation_error("--preds required");
                std::ifstream f(ra.preds);
                if (!f.good()) throw validation_error("cannot open " + ra.preds);
                std::string line;
                std::getline(f, line);
                std::vector<uint32_t> ids;
                std::vector<double> probs;
                while (std::getline(f, line)) {
                    if (line.empty()) continue;
                    auto comma = line.find(',');
                    ids.push_back(static_cast<uint32_t>(std::stoul(line.substr(0, comma))));
                    probs.push_back(std::stod(line.substr(comma + 1)));
                }
                out = rasterize_point_predictions(cloud, ids, probs, grid);
            }
            save_raster(ra.out, out);
        });

        // ---- train-unet ----
        auto* tu = app.add_subcommand("train-unet", "train the segmentation network");
        struct {
            std::string features, labels, out, channels = "all", metric = "f1";
            int k = 3, c0 = 16, tile = 96, stride = 48, epochs = 50, patience = 10, batch = 4;
            double lr = 1e-3, gamma_f = 2.0, alpha_f = 0.25, valid_frac = 0.25;
            uint64_t seed = 0;
        } tu_opt;
        tu->add_option("--features", tu_opt.features)->required();
        tu->add_option("--labels", tu_opt.labels)->required();
        tu->add_option("--out", tu_opt.out)->required();
        tu->add_option("--k", tu_opt.k);
        tu->add_option("--c0", tu_opt.c0);
        tu->add_option("--tile", tu_opt.tile);
        tu->add_option("--stride", tu_opt.stride);
        tu->add_option("--epochs", tu_opt.epochs);
        tu->add_option("--patience", tu_opt.patience);
        tu->add_option("--batch", tu_opt.batch);
        tu->add_option("--lr", tu_opt.lr);
        tu->add_option("--gamma-f", tu_opt.gamma_f);
        tu->add_option("--alpha-f", tu_opt.alpha_f);
        tu->add_option("--channels", tu_opt.channels);
        tu->add_option("--metric", tu_opt.metric)->check(CLI::IsMember({"f1", "accuracy"}));
        tu->add_option("--valid-frac", tu_opt.valid_frac);
        tu->add_option("--seed", tu_opt.seed);
        tu->callback([&] {
            Raster feat = load_raster(tu_opt.features);
            Raster lab = load_raster(tu_opt.labels);
            auto channels = channel_group(tu_opt.channels);
            TileSet tiles = crop_tiles(feat, lab, channels, tu_opt.tile, tu_opt.stride);
            if (tiles.tiles.size() < 2)
                throw validation_error("train-unet: need at least 2 tiles");
            size_t n_val = std::max<size_t>(
                1, static_cast<size_t>(tu_opt.valid_frac * tiles.tiles.size()));
            TileSet tr, va;
            tr.size = va.size = tu_opt.tile;
            tr.channels = va.channels = channels;
            for (size_t i = 0; i < tiles.tiles.size(); ++i)
                (i < tiles.tiles.size() - n_val ? tr : va)
                    .tiles.push_back(std::move(tiles.tiles[i]));
            UNetConfig uc{tu_opt.k, tu_opt.c0, static_cast<int>(channels.size()), tu_opt.seed};
            UNetModel model(uc);
            std::cout << "unet: " << model.parameter_count() << " parameters\n";
            UNetTrainConfig tc;
            tc.epochs = tu_opt.epochs;
            tc.patience = tu_opt.patience;
            tc.batch_size = tu_opt.batch;
            tc.lr = tu_opt.lr;
            tc.gamma_f = tu_opt.gamma_f;
            tc.alpha_f = tu_opt.alpha_f;
            tc.metric_accuracy = tu_opt.metric == "accuracy";
            tc.seed = tu_opt.seed;
            UNetTrainTrace trace;
            UNetModel best = train_unet(model, tr, va, tc, &trace);
            best.save(tu_opt.out);
            std::cout << "unet: best " << (tc.metric_accuracy ? "accuracy" : "F1") << " "
                      << trace.best_metric << " at epoch " << trace.best_epoch << "\n";
        });

        // ---- predict (stitch) ----
        auto* pr = app.add_subcommand("predict", "stitched U-Net prediction over a region");
        struct {
            std::string model, features, out, channels = "all";
            int size = 96, stride = 48;
        } pr_opt;
        pr->add_option("--model", pr_opt.model)->required();
        pr->add_option("--features", pr_opt.features)->required();
        pr->add_option("--out", pr_opt.out)->required();
        pr->add_option("--size", pr_opt.size);
        pr->add_option("--stride", pr_opt.stride);
        pr->add_option("--channels", pr_opt.channels);
        pr->callback([&] {
            UNetModel model = UNetModel::load(pr_opt.model);
            Raster feat = load_raster(pr_opt.features);
            auto channels = channel_group(pr_opt.channels);
            Raster prob =
                stitch_predictions(model, feat, channels, pr_opt.size, pr_opt.stride);
            save_raster(pr_opt.out, prob);
        });

        // ---- evaluate ----
        auto* ev = app.add_subcommand("evaluate", "confusion metrics and per-class report");
        struct {
            std::string pred, labels, classes, out;
            double threshold = 0.5;
        } ev_opt;
        ev->add_option("--pred", ev_opt.pred)->required();
        ev->add_option("--labels", ev_opt.labels)->required();
        ev->add_option("--classes", ev_opt.classes);
        ev->add_option("--threshold", ev_opt.threshold);
        ev->add_option("--out", ev_opt.out)->required();
        ev->callback([&] {
            Raster pred = load_raster(ev_opt.pred);
            Raster lab = load_raster(ev_opt.labels);
            EvalReport rep;
            if (!ev_opt.classes.empty()) {
                Raster cls = load_raster(ev_opt.classes);
                rep = evaluate_rasters(pred, lab, &cls, ev_opt.threshold);
            } else {
                rep = evaluate_rasters(pred, lab, nullptr, ev_opt.threshold);
            }
            std::ofstream f(ev_opt.out);
            if (!f.good()) throw pipeline_error("cannot write " + ev_opt.out);
            f << rep.to_json() << "\n";
            std::cout << "f1 " << rep.scores.f1 << " auc " << (rep.has_auc ? rep.auc : 0.0)
                      << " mcc " << rep.scores.mcc << "\n";
        });

        // ---- run ----
        auto* run = app.add_subcommand("run", "one-shot pipeline from a config file");
        struct {
            std::string config, out_dir = "run_out";
            std::vector<std::string> overrides;
            int64_t seed = -1;
        } ru;
        run->add_option("--config", ru.config)->required();
        run->add_option("--out-dir", ru.out_dir);
        run->add_option("--set", ru.overrides, "key=value overrides");
        run->add_option("--seed", ru.seed);
        run->callback([&] {
            RunConfig cfg = RunConfig::from_file(ru.config);
            for (const auto& kv : ru.overrides) {
                auto eq = kv.find('=');
                if (eq == std::string::npos)
                    throw validation_error("--set expects key=value: " + kv);
                cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
            }
            if (ru.seed >= 0) cfg.set("seed", std::to_string(ru.seed));
            PipelineResult res = run_pipeline(cfg, ru.out_dir);
            std::cout << "report: " << res.report_path << "\n";
            std::cout << "manifest: " << res.manifest_path << "\n";
            if (res.ran_gbt) std::cout << "gbt auc " << res.gbt_auc << "\n";
            if (res.ran_unet) std::cout << "unet f1 " << res.unet_f1 << "\n";
        });

        return dispatch(app, argc, argv);
    } catch (const validation_error& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
