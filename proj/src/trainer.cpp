#include "saltseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "saltseg/losses.hpp"
#include "saltseg/metrics.hpp"

namespace saltseg {

void TrainConfig::validate() const {
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (phase1_epochs < 0) throw ConfigError("train.phase1_epochs must be >= 0");
    if (early_stop_patience < 1) throw ConfigError("train.early_stop_patience must be >= 1");
    if (!(base_lr > 0.0) || !(base_lr <= max_lr)) {
        throw ConfigError("train: 0 < base_lr <= max_lr required, got base_lr=" +
                          std::to_string(base_lr) + ", max_lr=" + std::to_string(max_lr));
    }
    if (cycle_epochs < 1) throw ConfigError("train.cycle_epochs must be >= 1");
    if (folds < 2) throw ConfigError("train.folds must be >= 2");
    if (snapshots_kept < 1) throw ConfigError("train.snapshots_kept must be >= 1");
    if (!(ensemble_alpha > 0.0 && ensemble_alpha < 1.0)) {
        throw ConfigError("train.ensemble_alpha must lie in (0,1), got " + std::to_string(ensemble_alpha));
    }
    if (w_bce_phase2 < 0.0 || w_lovasz_phase2 < 0.0) {
        throw ConfigError("train: phase-2 loss weights must be non-negative");
    }
    if (max_epochs < 1) throw ConfigError("train.max_epochs must be >= 1");
    augment.validate();
}

double cyclic_lr(std::int64_t iteration, double base_lr, double max_lr, std::int64_t step_size_iters) {
    if (step_size_iters < 1) throw ArgumentError("cyclic_lr: step_size_iters must be >= 1");
    if (iteration < 0) throw ArgumentError("cyclic_lr: iteration must be >= 0");
    const double it = static_cast<double>(iteration);
    const double step = static_cast<double>(step_size_iters);
    const auto cycle = static_cast<std::int64_t>(std::floor(1.0 + it / (2.0 * step)));
    const double x = std::fabs(it / step - 2.0 * static_cast<double>(cycle) + 1.0);
    const double amplitude = std::max(0.0, 1.0 - x) / std::pow(2.0, static_cast<double>(cycle - 1));
    return base_lr + (max_lr - base_lr) * amplitude;
}

AdamState adam_init(const std::vector<NamedTensor>& params) {
    AdamState s;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const auto& [name, t] : params) {
        s.m.push_back(Array::Zero(t.numel()));
        s.v.push_back(Array::Zero(t.numel()));
    }
    return s;
}

void adam_step(const std::vector<NamedTensor>& params, AdamState& state, double lr, double beta1,
               double beta2, double eps) {
    if (state.m.size() != params.size()) {
        throw DimensionError("adam_step: state tracks " + std::to_string(state.m.size()) +
                             " parameters, got " + std::to_string(params.size()));
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Tensor& p = params[i].second;
        if (state.m[i].size() != p.numel()) {
            throw DimensionError("adam_step: moment shape mismatch for '" + params[i].first + "'");
        }
        const Array grad = p.has_grad() ? p.grad() : Array::Zero(p.numel());
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grad;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grad.square();
        const Array m_hat = state.m[i] / bc1;
        const Array v_hat = state.v[i] / bc2;
        Tensor mutable_p = p;
        mutable_p.data() -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

std::vector<Snapshot> update_snapshots(std::vector<Snapshot> pool, Snapshot candidate, int keep) {
    if (keep < 1) throw ArgumentError("update_snapshots: keep must be >= 1");
    auto less = [](const Snapshot& a, const Snapshot& b) {
        if (a.val_iou != b.val_iou) return a.val_iou < b.val_iou;
        return a.epoch < b.epoch;  // val_iou ties: later epoch ranks higher
    };
    if (static_cast<int>(pool.size()) < keep) {
        pool.push_back(std::move(candidate));
    } else if (less(pool.front(), candidate)) {
        pool.front() = std::move(candidate);
    } else {
        return pool;
    }
    std::sort(pool.begin(), pool.end(), less);
    return pool;
}

std::vector<double> ensemble_coefficients(int m, double alpha) {
    if (m < 1) throw ArgumentError("ensemble_coefficients: pool is empty");
    if (!(alpha > 0.0 && alpha < 1.0)) {
        throw ArgumentError("ensemble_coefficients: alpha must lie in (0,1)");
    }
    std::vector<double> coef(static_cast<std::size_t>(m));
    // index m-1 is the best snapshot: alpha, alpha(1-alpha), ...; the worst
    // takes the closing (1-alpha)^(m-1) so the sum telescopes to 1
    for (int i = m - 1; i >= 1; --i) {
        coef[static_cast<std::size_t>(i)] = alpha * std::pow(1.0 - alpha, static_cast<double>(m - 1 - i));
    }
    coef[0] = std::pow(1.0 - alpha, static_cast<double>(m - 1));
    return coef;
}

std::map<std::string, Tensor> ensemble_weights(const std::vector<Snapshot>& pool, double alpha) {
    if (pool.empty()) throw ArgumentError("ensemble_weights: pool is empty");
    const auto coef = ensemble_coefficients(static_cast<int>(pool.size()), alpha);
    std::map<std::string, Tensor> out;
    for (const auto& [name, first] : pool.front().weights) {
        Array acc = Array::Zero(first.numel());
        for (std::size_t i = 0; i < pool.size(); ++i) {
            const auto it = pool[i].weights.find(name);
            if (it == pool[i].weights.end()) {
                throw ArgumentError("ensemble_weights: snapshot " + std::to_string(i) +
                                    " is missing entry '" + name + "'");
            }
            if (it->second.shape() != first.shape()) {
                throw DimensionError("ensemble_weights: entry '" + name + "' has inconsistent shapes");
            }
            acc += coef[i] * it->second.data();
        }
        out.emplace(name, Tensor::from_data(std::move(acc), first.shape(), false));
    }
    for (const auto& snap : pool) {
        if (snap.weights.size() != pool.front().weights.size()) {
            throw ArgumentError("ensemble_weights: snapshots carry different entry sets");
        }
    }
    return out;
}

std::pair<double, double> depth_range(const std::vector<ImageSample>& samples) {
    if (samples.empty()) throw ArgumentError("depth_range: no samples");
    double lo = samples.front().depth, hi = samples.front().depth;
    for (const auto& s : samples) {
        lo = std::min(lo, s.depth);
        hi = std::max(hi, s.depth);
    }
    if (!(hi > lo)) {  // degenerate fold: widen so relative_depth stays defined
        lo -= 1.0;
        hi += 1.0;
    }
    return {lo, hi};
}

namespace {

std::map<std::string, Tensor> copy_state(const SegModel& model) {
    std::map<std::string, Tensor> out;
    for (const auto& [name, t] : model.state()) out.emplace(name, t.detached_copy());
    return out;
}

MaskGrid predict_mask_at_half(const SegModel& model, const ImageSample& sample, double d_min,
                              double d_max) {
    NoGradGuard guard;
    Tensor x = build_input(sample, d_min, d_max, model.config.input_spec());
    Tensor logits = forward(model, x, /*train=*/false);
    const Index s = model.config.input_size;
    const Index h = sample.image.rows(), w = sample.image.cols();
    const Index top = pad_before(h, s), left = pad_before(w, s);
    MaskGrid mask(h, w);
    for (Index r = 0; r < h; ++r)
        for (Index c = 0; c < w; ++c) {
            mask(r, c) = logits.data()[(top + r) * s + (left + c)] > 0.0 ? 1 : 0;  // sigmoid > 0.5
        }
    return mask;
}

// Batched input plus cropped targets for the loss region.
struct BatchTensors {
    Tensor input;
    Tensor targets;  // N x 1 x h x w, native region
    Index top = 0, left = 0, h = 0, w = 0;
};

BatchTensors make_batch(const std::vector<const ImageSample*>& batch, double d_min, double d_max,
                        const InputSpec& spec) {
    std::vector<Tensor> inputs;
    inputs.reserve(batch.size());
    const Index h = batch.front()->image.rows();
    const Index w = batch.front()->image.cols();
    Array targets(static_cast<Index>(batch.size()) * h * w);
    Index pos = 0;
    for (const ImageSample* s : batch) {
        if (!s->mask) throw DataError("sample '" + s->id + "' has no mask; cannot train on it");
        if (s->image.rows() != h || s->image.cols() != w) {
            throw DataError("sample '" + s->id + "' has a different size from its batch");
        }
        inputs.push_back(build_input(*s, d_min, d_max, spec));
        for (Index r = 0; r < h; ++r)
            for (Index c = 0; c < w; ++c) targets[pos++] = (*s->mask)(r, c);
    }
    BatchTensors bt;
    bt.input = inputs.size() == 1 ? inputs.front() : concat(inputs, 0);
    bt.targets = Tensor::from_data(std::move(targets), {static_cast<Index>(batch.size()), 1, h, w});
    bt.top = pad_before(h, spec.input_size);
    bt.left = pad_before(w, spec.input_size);
    bt.h = h;
    bt.w = w;
    return bt;
}

}  // namespace

double mean_val_iou(const SegModel& model, const std::vector<ImageSample>& samples, double d_min,
                    double d_max) {
    if (samples.empty()) throw ArgumentError("mean_val_iou: no samples");
    std::vector<double> scores(samples.size(), 0.0);
    parallel_for_index(static_cast<std::int64_t>(samples.size()), [&](std::int64_t i) {
        const auto& s = samples[static_cast<std::size_t>(i)];
        if (!s.mask) throw DataError("sample '" + s.id + "' has no mask; cannot score it");
        scores[static_cast<std::size_t>(i)] = iou(predict_mask_at_half(model, s, d_min, d_max), *s.mask);
    });
    double total = 0.0;
    for (double v : scores) total += v;
    return total / static_cast<double>(scores.size());
}

void recompute_bn_stats(SegModel& model, const std::vector<ImageSample>& samples, double d_min,
                        double d_max, int batch_size) {
    if (samples.empty()) return;
    for (auto& [name, t] : model.buffers()) {
        Tensor buf = t;
        const bool is_var = name.size() >= 4 && name.compare(name.size() - 4, 4, ".var") == 0;
        buf.data().setConstant(is_var ? 1.0 : 0.0);
    }
    NoGradGuard guard;
    const InputSpec spec = model.config.input_spec();
    int batch_index = 0;
    for (std::size_t pos = 0; pos < samples.size(); pos += static_cast<std::size_t>(batch_size)) {
        std::vector<const ImageSample*> batch;
        for (std::size_t i = pos; i < std::min(samples.size(), pos + static_cast<std::size_t>(batch_size));
             ++i) {
            batch.push_back(&samples[i]);
        }
        std::vector<Tensor> inputs;
        inputs.reserve(batch.size());
        for (const ImageSample* s : batch) inputs.push_back(build_input(*s, d_min, d_max, spec));
        Tensor x = inputs.size() == 1 ? inputs.front() : concat(inputs, 0);
        ++batch_index;
        // momentum 1/i turns the running update into a cumulative batch mean
        forward(model, x, /*train=*/true, nullptr, 1.0 / static_cast<double>(batch_index));
    }
}

FoldResult train_fold(SegModel& model, const std::vector<ImageSample>& train_samples,
                      const std::vector<ImageSample>& val_samples, const TrainConfig& config) {
    config.validate();
    if (train_samples.empty()) throw ArgumentError("train_fold: empty training set");
    if (val_samples.empty()) throw ArgumentError("train_fold: empty validation set");

    FoldResult result;
    std::tie(result.d_min, result.d_max) = depth_range(train_samples);

    const InputSpec spec = model.config.input_spec();
    auto params = model.parameters();
    AdamState adam = adam_init(params);
    SplitRng rng(config.seed);

    const auto n = static_cast<std::int64_t>(train_samples.size());
    const std::int64_t iters_per_epoch = (n + config.batch_size - 1) / config.batch_size;
    const std::int64_t step_size =
        std::max<std::int64_t>(1, config.cycle_epochs * iters_per_epoch / 2);

    std::int64_t iteration = 0;
    int epochs_since_best = 0;

    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        const int phase = epoch < config.phase1_epochs ? 1 : 2;

        std::vector<std::size_t> order(train_samples.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        SplitRng epoch_rng = rng.fork(0x5eed0000ULL + static_cast<std::uint64_t>(epoch));
        epoch_rng.shuffle(order);

        double epoch_loss = 0.0;
        double first_lr = 0.0;
        std::int64_t seen = 0;
        for (std::int64_t b = 0; b < iters_per_epoch; ++b) {
            std::vector<const ImageSample*> batch;
            std::vector<ImageSample> augmented;
            augmented.reserve(static_cast<std::size_t>(config.batch_size));
            for (std::int64_t i = b * config.batch_size;
                 i < std::min<std::int64_t>(n, (b + 1) * config.batch_size); ++i) {
                const std::size_t idx = order[static_cast<std::size_t>(i)];
                augmented.push_back(augment(train_samples[idx],
                                            epoch_rng.fork(0xa000000ULL + static_cast<std::uint64_t>(idx)),
                                            config.augment));
            }
            for (const auto& s : augmented) batch.push_back(&s);
            if (batch.empty()) continue;

            BatchTensors bt = make_batch(batch, result.d_min, result.d_max, spec);
            Tensor logits = forward(model, bt.input, /*train=*/true);
            Tensor cropped = slice(slice(logits, 2, bt.top, bt.h), 3, bt.left, bt.w);
            Tensor loss = phase == 1 ? combined_loss(cropped, bt.targets, 1.0, 0.0)
                                     : combined_loss(cropped, bt.targets, config.w_bce_phase2,
                                                     config.w_lovasz_phase2);
            const double loss_value = loss.item();
            if (!std::isfinite(loss_value)) {
                throw NumericError("train_fold: non-finite loss at epoch " + std::to_string(epoch));
            }
            for (auto& [name, p] : params) p.zero_grad();
            backward(loss);

            const double lr = cyclic_lr(iteration, config.base_lr, config.max_lr, step_size);
            if (b == 0) first_lr = lr;
            adam_step(params, adam, lr, config.adam_beta1, config.adam_beta2, config.adam_eps);
            ++iteration;

            epoch_loss += loss_value * static_cast<double>(batch.size());
            seen += static_cast<std::int64_t>(batch.size());
        }
        epoch_loss /= static_cast<double>(seen);

        const double val = mean_val_iou(model, val_samples, result.d_min, result.d_max);
        if (!std::isfinite(val)) throw NumericError("train_fold: non-finite validation IoU");

        Snapshot cand;
        cand.weights = copy_state(model);
        cand.val_iou = val;
        cand.epoch = epoch;
        const std::size_t before = result.pool.size();
        std::vector<Snapshot> updated = update_snapshots(std::move(result.pool), cand,
                                                         config.snapshots_kept);
        bool snapshotted = updated.size() != before;
        if (!snapshotted) {
            for (const auto& s : updated) {
                if (s.epoch == epoch) {
                    snapshotted = true;
                    break;
                }
            }
        }
        result.pool = std::move(updated);

        if (result.best_epoch < 0 || val > result.best_iou ||
            (val == result.best_iou && epoch > result.best_epoch)) {
            if (val > result.best_iou || result.best_epoch < 0) {
                epochs_since_best = 0;
            }
            result.best_iou = val;
            result.best_epoch = epoch;
            result.best_state = cand.weights;
        } else {
            ++epochs_since_best;
        }

        result.history.push_back({epoch, phase, first_lr, epoch_loss, val, snapshotted});

        if (phase == 2 && epochs_since_best >= config.early_stop_patience) break;
    }

    model.load_state(result.best_state);
    return result;
}

KfoldResult train_kfold(const std::vector<ImageSample>& samples, int k, const ModelConfig& model_config,
                        const TrainConfig& config, const std::filesystem::path& out_dir,
                        const std::string& manifest_hash) {
    if (static_cast<int>(samples.size()) < k) {
        throw ArgumentError("train_kfold: need at least k samples, got " +
                            std::to_string(samples.size()) + " for k=" + std::to_string(k));
    }
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

    std::vector<std::string> ids;
    ids.reserve(samples.size());
    std::map<std::string, const ImageSample*> by_id;
    for (const auto& s : samples) {
        ids.push_back(s.id);
        by_id[s.id] = &s;
    }

    KfoldResult result;
    result.split = kfold_split(ids, k, config.seed);

    std::vector<EpochRecord> merged;
    std::vector<int> merged_folds;
    for (int fold = 0; fold < k; ++fold) {
        std::vector<ImageSample> train_set, val_set;
        for (const auto& id : result.split.training_ids(fold)) train_set.push_back(*by_id.at(id));
        for (const auto& id : result.split.validation_ids(fold)) val_set.push_back(*by_id.at(id));

        TrainConfig fold_config = config;
        fold_config.seed = config.seed + static_cast<std::uint64_t>(fold);

        SegModel model = build_model(model_config, fold_config.seed);
        FoldResult fr;
        const std::string fold_tag = "fold " + std::to_string(fold) + ": ";
        try {
            fr = train_fold(model, train_set, val_set, fold_config);
        } catch (const NumericError& e) {
            throw NumericError(fold_tag + e.what());
        } catch (const DataError& e) {
            throw DataError(fold_tag + e.what());
        } catch (const ConfigError& e) {
            throw ConfigError(fold_tag + e.what());
        } catch (const ArgumentError& e) {
            throw ArgumentError(fold_tag + e.what());
        }

        const auto ckpt_path = out_dir / ("fold" + std::to_string(fold) + ".w");
        save_checkpoint(ckpt_path, model, fr.d_min, fr.d_max, fold_config.seed, manifest_hash);
        result.checkpoints.push_back(ckpt_path);

        // exponentially weighted snapshot ensemble, stats rebuilt on the fold
        SegModel ens = build_model(model_config, fold_config.seed);
        ens.load_state(ensemble_weights(fr.pool, config.ensemble_alpha));
        recompute_bn_stats(ens, train_set, fr.d_min, fr.d_max, config.batch_size);
        const auto ens_path = out_dir / ("fold" + std::to_string(fold) + ".w.ens");
        save_checkpoint(ens_path, ens, fr.d_min, fr.d_max, fold_config.seed, manifest_hash);
        result.ensembled.push_back(ens_path);

        if (config.save_snapshots) {
            const auto snap_dir = out_dir / ("snapshots_fold" + std::to_string(fold));
            std::filesystem::create_directories(snap_dir);
            for (const auto& snap : fr.pool) {
                char name[96];
                std::snprintf(name, sizeof(name), "snap_%d_%.6f.w", snap.epoch, snap.val_iou);
                SegModel sm = build_model(model_config, fold_config.seed);
                sm.load_state(snap.weights);
                save_checkpoint(snap_dir / name, sm, fr.d_min, fr.d_max, fold_config.seed, manifest_hash);
            }
        }

        write_history_csv(out_dir / ("history_fold" + std::to_string(fold) + ".csv"), fr.history,
                          manifest_hash.empty() ? "" : "manifest " + manifest_hash);
        for (const auto& rec : fr.history) {
            merged.push_back(rec);
            merged_folds.push_back(fold);
        }
        result.folds.push_back(std::move(fr));
    }

    // merged history with a leading fold column
    {
        std::ofstream os(out_dir / "history.csv", std::ios::binary);
        if (!os) throw IoError("cannot open " + (out_dir / "history.csv").string() + " for writing");
        if (!manifest_hash.empty()) os << "# manifest " << manifest_hash << "\n";
        os << "fold,epoch,phase,lr,train_loss,val_iou,snapshotted\n";
        char buf[64];
        for (std::size_t i = 0; i < merged.size(); ++i) {
            const auto& r = merged[i];
            os << merged_folds[i] << "," << r.epoch << "," << r.phase;
            std::snprintf(buf, sizeof(buf), ",%.17g", r.lr);
            os << buf;
            std::snprintf(buf, sizeof(buf), ",%.17g", r.train_loss);
            os << buf;
            std::snprintf(buf, sizeof(buf), ",%.17g", r.val_iou);
            os << buf << "," << (r.snapshotted ? 1 : 0) << "\n";
        }
    }
    return result;
}

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history,
                       const std::string& manifest_comment) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    if (!manifest_comment.empty()) os << "# " << manifest_comment << "\n";
    os << "epoch,phase,lr,train_loss,val_iou,snapshotted\n";
    char buf[64];
    for (const auto& r : history) {
        os << r.epoch << "," << r.phase;
        std::snprintf(buf, sizeof(buf), ",%.17g", r.lr);
        os << buf;
        std::snprintf(buf, sizeof(buf), ",%.17g", r.train_loss);
        os << buf;
        std::snprintf(buf, sizeof(buf), ",%.17g", r.val_iou);
        os << buf << "," << (r.snapshotted ? 1 : 0) << "\n";
    }
    if (!os) throw IoError("write failed for " + path.string());
}

}  // namespace saltseg
