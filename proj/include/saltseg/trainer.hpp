#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "saltseg/data.hpp"
#include "saltseg/model.hpp"

namespace saltseg {

struct TrainConfig {
    int batch_size = 20;
    int phase1_epochs = 80;  // plain BCE, then the 0.1/0.9 blend
    int early_stop_patience = 50;
    double w_bce_phase2 = 0.1;
    double w_lovasz_phase2 = 0.9;
    double base_lr = 1e-4;
    double max_lr = 1e-2;
    int cycle_epochs = 8;  // one triangular cycle = cycle_epochs epochs
    int folds = 5;
    int snapshots_kept = 10;
    double ensemble_alpha = 0.5;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    int max_epochs = 200;
    bool save_snapshots = false;
    AugmentPolicy augment;

    void validate() const;
};

// triangular2: wave between base_lr and max_lr with period 2*step_size,
// amplitude halving every full cycle.
double cyclic_lr(std::int64_t iteration, double base_lr, double max_lr, std::int64_t step_size_iters);

struct AdamState {
    std::vector<Array> m;
    std::vector<Array> v;
    std::int64_t t = 0;
};
AdamState adam_init(const std::vector<NamedTensor>& params);

// Bias-corrected update from each parameter's accumulated grad; parameters
// without an allocated grad are treated as zero-grad.
void adam_step(const std::vector<NamedTensor>& params, AdamState& state, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

struct Snapshot {
    std::map<std::string, Tensor> weights;  // full state, deep-copied
    double val_iou = 0.0;
    int epoch = 0;
};

// Keeps the best `keep` snapshots sorted ascending by (val_iou, epoch);
// val_iou ties prefer the later epoch.
std::vector<Snapshot> update_snapshots(std::vector<Snapshot> pool, Snapshot candidate, int keep);

// Coefficients in pool order (ascending val_iou, worst first); they sum to 1.
std::vector<double> ensemble_coefficients(int m, double alpha);
std::map<std::string, Tensor> ensemble_weights(const std::vector<Snapshot>& pool, double alpha);

struct EpochRecord {
    int epoch = 0;
    int phase = 1;
    double lr = 0.0;
    double train_loss = 0.0;
    double val_iou = 0.0;
    bool snapshotted = false;
};

struct FoldResult {
    std::map<std::string, Tensor> best_state;
    double best_iou = 0.0;
    int best_epoch = -1;
    std::vector<Snapshot> pool;
    std::vector<EpochRecord> history;
    double d_min = 0.0;
    double d_max = 1.0;
};

// Depth range over a training split, widened when degenerate so
// relative_depth's precondition holds.
std::pair<double, double> depth_range(const std::vector<ImageSample>& samples);

// Mean IoU at sigmoid > 0.5 on the native (cropped) region.
double mean_val_iou(const SegModel& model, const std::vector<ImageSample>& samples, double d_min,
                    double d_max);

// Refreshes batchnorm running stats with one pass over the samples
// (cumulative batch average); used after weight-space ensembling.
void recompute_bn_stats(SegModel& model, const std::vector<ImageSample>& samples, double d_min,
                        double d_max, int batch_size);

FoldResult train_fold(SegModel& model, const std::vector<ImageSample>& train_samples,
                      const std::vector<ImageSample>& val_samples, const TrainConfig& config);

struct KfoldResult {
    DatasetSplit split;
    std::vector<FoldResult> folds;
    std::vector<std::filesystem::path> checkpoints;
    std::vector<std::filesystem::path> ensembled;
};

// Runs train_fold per fold; writes fold<k>.w, fold<k>.w.ens, per-fold and
// merged history CSVs under out_dir.
KfoldResult train_kfold(const std::vector<ImageSample>& samples, int k, const ModelConfig& model_config,
                        const TrainConfig& config, const std::filesystem::path& out_dir,
                        const std::string& manifest_hash);

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history,
                       const std::string& manifest_comment = "");

}  // namespace saltseg
