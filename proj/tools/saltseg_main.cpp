#include <CLI11.hpp>

#include <atomic>
#include <cstdio>
#include <iostream>
#include <optional>

#include "saltseg/config.hpp"
#include "saltseg/data.hpp"
#include "saltseg/losses.hpp"
#include "saltseg/metrics.hpp"
#include "saltseg/model.hpp"
#include "saltseg/postprocess.hpp"
#include "saltseg/svg.hpp"
#include "saltseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace saltseg;

namespace {

RunConfig load_run_config(const std::string& config_path) {
    if (config_path.empty()) {
        RunConfig cfg;
        cfg.model.validate();
        cfg.train.validate();
        cfg.predict.validate();
        return cfg;
    }
    return parse_config_file(config_path);
}

int cmd_generate(int n, int size, std::uint64_t seed, const std::string& out_dir) {
    RunManifest man;
    man.command = "generate";
    man.seed = seed;
    man.inputs = {out_dir};
    man.resolved_config = "n = " + std::to_string(n) + "\nsize = " + std::to_string(size) + "\n";

    auto samples = generate_synthetic(n, size, seed);
    write_dataset(out_dir, samples);
    write_manifest(fs::path(out_dir) / "manifest.json", man);
    std::cout << "wrote " << samples.size() << " synthetic samples to " << out_dir << " (manifest "
              << man.hash() << ")\n";
    return 0;
}

std::vector<ImageSample> load_training_set(const fs::path& data_dir, int input_size) {
    const fs::path images = data_dir / "images";
    const fs::path masks = data_dir / "masks";
    const fs::path depths = data_dir / "depths.csv";
    if (!fs::is_directory(images)) throw DataError("no images directory under " + data_dir.string());
    if (!fs::is_directory(masks)) throw DataError("no masks directory under " + data_dir.string());
    if (!fs::is_regular_file(depths)) throw DataError("no depths.csv under " + data_dir.string());
    auto samples = load_dataset(images, masks, depths);
    if (samples.empty()) throw DataError("no samples found under " + data_dir.string());
    for (const auto& s : samples) {
        if (!s.mask) throw DataError("sample '" + s.id + "' has no mask; training needs full labels");
        if (s.image.rows() > input_size || s.image.cols() > input_size) {
            throw ConfigError("sample '" + s.id + "' is " + std::to_string(s.image.rows()) + "x" +
                              std::to_string(s.image.cols()) + " but model.input_size is " +
                              std::to_string(input_size));
        }
    }
    return samples;
}

int cmd_train(const std::string& config_path, const std::string& data_dir, const std::string& out_dir,
              std::optional<std::uint64_t> seed) {
    RunConfig cfg = load_run_config(config_path);
    if (seed) cfg.train.seed = *seed;

    auto samples = load_training_set(data_dir, cfg.model.input_size);

    RunManifest man;
    man.command = "train";
    man.seed = cfg.train.seed;
    man.inputs = {data_dir};
    if (!config_path.empty()) man.inputs.push_back(config_path);
    man.resolved_config = render_config(cfg);

    KfoldResult result =
        train_kfold(samples, cfg.train.folds, cfg.model, cfg.train, out_dir, man.hash());
    for (std::size_t f = 0; f < result.folds.size(); ++f) {
        const auto& fr = result.folds[f];
        write_curves_svg(fs::path(out_dir) / ("curves_fold" + std::to_string(f) + ".svg"), fr.history,
                         "fold " + std::to_string(f) + " training curves");
        std::cout << "fold " << f << ": best val IoU " << fr.best_iou << " at epoch " << fr.best_epoch
                  << " (" << fr.history.size() << " epochs)\n";
    }
    write_manifest(fs::path(out_dir) / "manifest.json", man);
    std::cout << "wrote " << result.checkpoints.size() << "+" << result.ensembled.size()
              << " checkpoints to " << out_dir << " (manifest " << man.hash() << ")\n";
    return 0;
}

int cmd_predict(const std::string& checkpoint, const std::string& data_dir, const std::string& out_csv,
                const std::string& config_path, const std::string& dump_dir) {
    RunConfig cfg = load_run_config(config_path);
    const PredictionConfig& pc = cfg.predict;

    Checkpoint ckpt = load_checkpoint(checkpoint);
    SegModel model = model_from_checkpoint(ckpt);

    const fs::path images = fs::path(data_dir) / "images";
    const fs::path depths = fs::path(data_dir) / "depths.csv";
    if (!fs::is_directory(images)) throw DataError("no images directory under " + data_dir);
    std::optional<fs::path> masks;
    if (fs::is_directory(fs::path(data_dir) / "masks")) masks = fs::path(data_dir) / "masks";
    auto samples = load_dataset(images, masks, depths);
    if (samples.empty()) throw DataError("no samples found under " + data_dir);
    for (const auto& s : samples) {
        if (s.image.rows() > model.config.input_size || s.image.cols() > model.config.input_size) {
            throw ConfigError("sample '" + s.id + "' is larger than the checkpoint's input_size " +
                              std::to_string(model.config.input_size));
        }
    }

    RunManifest man;
    man.command = "predict";
    man.seed = ckpt.seed;
    man.inputs = {checkpoint, data_dir};
    man.resolved_config = render_config(cfg);

    std::vector<std::pair<std::string, RleMask>> rows(samples.size());
    std::vector<ImageGrid> probs(samples.size());
    std::atomic<bool> nan_seen{false};
    parallel_for_index(static_cast<std::int64_t>(samples.size()), [&](std::int64_t i) {
        const auto& s = samples[static_cast<std::size_t>(i)];
        ImageGrid prob = tta_predict(model, s, ckpt.d_min, ckpt.d_max, pc);
        if (!prob.isFinite().all()) nan_seen = true;
        MaskGrid mask = postprocess_probability(prob, pc);
        rows[static_cast<std::size_t>(i)] = {s.id, rle_encode(mask)};
        probs[static_cast<std::size_t>(i)] = std::move(prob);
    });
    if (nan_seen) throw NumericError("non-finite probabilities; the checkpoint weights are corrupt");
    write_submission(out_csv, rows);
    write_manifest(out_csv + ".manifest.json", man);

    if (!dump_dir.empty()) {
        fs::create_directories(dump_dir);
        for (std::size_t i = 0; i < samples.size(); ++i) {
            pgm_write_16(fs::path(dump_dir) / (samples[i].id + ".pgm"), probs[i]);
        }
    }
    std::cout << "wrote " << rows.size() << " predictions to " << out_csv << " (manifest " << man.hash()
              << ")\n";
    return 0;
}

std::map<std::string, MaskGrid> load_mask_dir(const fs::path& dir) {
    std::map<std::string, MaskGrid> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".png") continue;
        const ImageGrid g = png_read_gray(entry.path());
        MaskGrid m(g.rows(), g.cols());
        for (Index r = 0; r < g.rows(); ++r)
            for (Index c = 0; c < g.cols(); ++c) m(r, c) = g(r, c) > 0.5 ? 1 : 0;
        out.emplace(entry.path().stem().string(), std::move(m));
    }
    return out;
}

int cmd_evaluate(const std::string& pred_path, const std::string& gt_dir, const std::string& out_dir) {
    fs::path gt_masks = fs::path(gt_dir) / "masks";
    if (!fs::is_directory(gt_masks)) gt_masks = gt_dir;
    if (!fs::is_directory(gt_masks)) throw DataError("no ground-truth masks under " + gt_dir);
    auto gt = load_mask_dir(gt_masks);
    if (gt.empty()) throw DataError("no ground-truth masks under " + gt_masks.string());

    std::map<std::string, MaskGrid> pred;
    if (fs::is_directory(pred_path)) {
        pred = load_mask_dir(pred_path);
    } else {
        const auto rows = read_submission(pred_path);
        for (const auto& [id, rle_text] : rows) {
            const auto it = gt.find(id);
            if (it == gt.end()) throw DataError("prediction id '" + id + "' has no ground truth mask");
            pred.emplace(id, rle_decode(rle_from_string(rle_text, it->second.rows(), it->second.cols())));
        }
    }

    std::string missing;
    for (const auto& [id, mask] : gt) {
        if (!pred.count(id)) missing += missing.empty() ? id : (", " + id);
    }
    if (!missing.empty()) throw DataError("no prediction for ids: " + missing);
    std::string extra;
    for (const auto& [id, mask] : pred) {
        if (!gt.count(id)) extra += extra.empty() ? id : (", " + id);
    }
    if (!extra.empty()) throw DataError("no ground truth for predicted ids: " + extra);

    std::vector<std::string> ids;
    std::vector<MaskGrid> preds, gts;
    for (const auto& [id, mask] : gt) {
        ids.push_back(id);
        gts.push_back(mask);
        preds.push_back(pred.at(id));
    }

    RunManifest man;
    man.command = "evaluate";
    man.inputs = {pred_path, gt_dir};
    man.resolved_config = "";

    MetricReport report = competition_metric(preds, gts, &ids);
    fs::create_directories(out_dir);
    write_metric_report(fs::path(out_dir) / "metrics.csv", report, "manifest " + man.hash());
    write_manifest(fs::path(out_dir) / "manifest.json", man);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", report.m);
    std::cout << "M = " << buf << " over " << ids.size() << " images\n";
    return 0;
}

int cmd_ensemble(const std::string& snap_dir, double alpha, const std::string& out_path) {
    struct SnapFile {
        int epoch;
        double val_iou;
        fs::path path;
    };
    std::vector<SnapFile> files;
    for (const auto& entry : fs::directory_iterator(snap_dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string name = entry.path().filename().string();
        int epoch = 0;
        double iou_val = 0.0;
        if (std::sscanf(name.c_str(), "snap_%d_%lf.w", &epoch, &iou_val) == 2 && name.size() > 2 &&
            name.compare(name.size() - 2, 2, ".w") == 0) {
            files.push_back({epoch, iou_val, entry.path()});
        }
    }
    if (files.empty()) {
        throw DataError("no snap_<epoch>_<iou>.w files under " + snap_dir);
    }
    std::sort(files.begin(), files.end(), [](const SnapFile& a, const SnapFile& b) {
        if (a.val_iou != b.val_iou) return a.val_iou < b.val_iou;
        return a.epoch < b.epoch;
    });

    std::vector<Snapshot> pool;
    for (const auto& f : files) {
        Snapshot s;
        s.weights = to_map(load_weights(f.path));
        s.val_iou = f.val_iou;
        s.epoch = f.epoch;
        pool.push_back(std::move(s));
    }
    auto merged = ensemble_weights(pool, alpha);

    std::vector<NamedTensor> entries(merged.begin(), merged.end());
    save_weights(out_path, entries);

    // carry the best snapshot's sidecar so the result stays predict-ready
    const fs::path best_sidecar = files.back().path.string() + ".json";
    if (fs::is_regular_file(best_sidecar)) {
        fs::copy_file(best_sidecar, out_path + ".json", fs::copy_options::overwrite_existing);
    }
    std::cout << "ensembled " << pool.size() << " snapshots (alpha " << alpha << ") into " << out_path
              << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"salt deposit segmentation pipeline"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("generate", "write a synthetic competition-layout dataset");
    int gen_n = 16, gen_size = 64;
    std::uint64_t gen_seed = 0;
    std::string gen_out;
    gen->add_option("--n", gen_n, "number of samples")->check(CLI::PositiveNumber);
    gen->add_option("--size", gen_size, "image side length")->check(CLI::Range(16, 512));
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--out", gen_out, "output directory")->required();

    auto* train = app.add_subcommand("train", "k-fold training with snapshot ensembling");
    std::string train_config, train_data, train_out;
    std::optional<std::uint64_t> train_seed;
    train->add_option("--config", train_config, "key=value config file");
    train->add_option("--data", train_data, "dataset root (images/, masks/, depths.csv)")->required();
    train->add_option("--out", train_out, "output directory")->required();
    train->add_option("--seed", train_seed, "override [train] seed");

    auto* predict = app.add_subcommand("predict", "write a submission CSV from a checkpoint");
    std::string pred_ckpt, pred_data, pred_out, pred_config, pred_dump;
    predict->add_option("--checkpoint", pred_ckpt, "weight container (.w)")->required();
    predict->add_option("--data", pred_data, "dataset root")->required();
    predict->add_option("--out", pred_out, "submission CSV path")->required();
    predict->add_option("--config", pred_config, "config file for the [predict] section");
    predict->add_option("--dump-probs", pred_dump, "directory for 16-bit PGM probability dumps");

    auto* evaluate = app.add_subcommand("evaluate", "score predictions against ground truth");
    std::string eval_pred, eval_gt, eval_out;
    evaluate->add_option("--pred", eval_pred, "submission CSV or directory of mask PNGs")->required();
    evaluate->add_option("--data", eval_gt, "dataset root or masks directory")->required();
    evaluate->add_option("--out", eval_out, "report output directory")->required();

    auto* ensemble = app.add_subcommand("ensemble", "exponentially weighted snapshot average");
    std::string ens_dir, ens_out;
    double ens_alpha = 0.5;
    ensemble->add_option("--dir", ens_dir, "directory of snap_<epoch>_<iou>.w files")->required();
    ensemble->add_option("--alpha", ens_alpha, "ensemble alpha in (0,1)")->check(CLI::Range(1e-9, 1.0));
    ensemble->add_option("--out", ens_out, "output checkpoint path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_generate(gen_n, gen_size, gen_seed, gen_out);
        if (train->parsed()) return cmd_train(train_config, train_data, train_out, train_seed);
        if (predict->parsed()) return cmd_predict(pred_ckpt, pred_data, pred_out, pred_config, pred_dump);
        if (evaluate->parsed()) return cmd_evaluate(eval_pred, eval_gt, eval_out);
        if (ensemble->parsed()) return cmd_ensemble(ens_dir, ens_alpha, ens_out);
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 4;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return 3;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
