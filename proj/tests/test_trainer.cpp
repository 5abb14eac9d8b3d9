#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>

#include "saltseg/trainer.hpp"
#include "testutil.hpp"

using namespace saltseg;

namespace {

Snapshot make_snap(double iou_val, int epoch, double w0 = 0.0) {
    Snapshot s;
    s.weights.emplace("w", Tensor::full({2}, w0));
    s.val_iou = iou_val;
    s.epoch = epoch;
    return s;
}

TrainConfig tiny_train_config() {
    TrainConfig t;
    t.batch_size = 8;
    t.phase1_epochs = 3;
    t.max_epochs = 5;
    t.early_stop_patience = 50;
    t.base_lr = 5e-4;
    t.max_lr = 5e-3;
    t.cycle_epochs = 2;
    t.snapshots_kept = 3;
    t.augment.hflip_prob = 0.0;
    return t;
}

}  // namespace

TEST_CASE("cyclic_lr: trough, peaks, halving, bounds") {
    const double base = 1e-4, top = 1e-2;
    const std::int64_t step = 100;
    CHECK(cyclic_lr(0, base, top, step) == base);
    CHECK(cyclic_lr(step, base, top, step) == doctest::Approx(top).epsilon(1e-15));
    CHECK(cyclic_lr(2 * step, base, top, step) == doctest::Approx(base).epsilon(1e-12));
    CHECK(cyclic_lr(3 * step, base, top, step) ==
          doctest::Approx(base + (top - base) / 2.0).epsilon(1e-15));
    CHECK(cyclic_lr(5 * step, base, top, step) ==
          doctest::Approx(base + (top - base) / 4.0).epsilon(1e-15));

    for (std::int64_t it = 0; it < 1200; ++it) {
        const double lr = cyclic_lr(it, base, top, step);
        CHECK(lr >= base - 1e-18);
        CHECK(lr <= top + 1e-18);
    }
    CHECK_THROWS_AS(cyclic_lr(0, base, top, 0), ArgumentError);
    CHECK_THROWS_AS(cyclic_lr(-1, base, top, 10), ArgumentError);
}

TEST_CASE("adam_step: first-step closed form, zero grad, determinism") {
    SplitRng rng(3);
    Tensor p = testutil::random_tensor({5}, rng);
    const Array before = p.data();
    Array g(5);
    for (Index i = 0; i < 5; ++i) g[i] = rng.uniform(-1.0, 1.0);
    p.zero_grad();
    p.accumulate_grad(g);

    std::vector<NamedTensor> params{{"p", p}};
    AdamState st = adam_init(params);
    const double lr = 1e-2, eps = 1e-8;
    adam_step(params, st, lr, 0.9, 0.999, eps);
    CHECK(st.t == 1);
    // bias corrections cancel at t=1: update is -lr * g / (|g| + eps)
    for (Index i = 0; i < 5; ++i) {
        const double expect = before[i] - lr * g[i] / (std::fabs(g[i]) + eps);
        CHECK(p.data()[i] == doctest::Approx(expect).epsilon(1e-12));
    }

    // zero grad leaves parameters unchanged, timestep advances
    Tensor q = Tensor::full({3}, 1.5, true);
    q.zero_grad();
    std::vector<NamedTensor> qp{{"q", q}};
    AdamState qs = adam_init(qp);
    adam_step(qp, qs, 0.1);
    CHECK(qs.t == 1);
    for (Index i = 0; i < 3; ++i) CHECK(q.data()[i] == 1.5);

    // identical sequences are bitwise identical
    auto run_sequence = [&](std::uint64_t seed) {
        SplitRng r2(seed);
        Tensor w = testutil::random_tensor({4}, r2);
        std::vector<NamedTensor> wp{{"w", w}};
        AdamState ws = adam_init(wp);
        for (int it = 0; it < 20; ++it) {
            Array grad(4);
            for (Index i = 0; i < 4; ++i) grad[i] = r2.uniform(-1.0, 1.0);
            w.zero_grad();
            w.accumulate_grad(grad);
            adam_step(wp, ws, 1e-3);
        }
        return w.data();
    };
    const Array a = run_sequence(7);
    const Array b = run_sequence(7);
    for (Index i = 0; i < 4; ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("update_snapshots: pool rules and a direct simulation oracle") {
    std::vector<Snapshot> pool;
    pool = update_snapshots(pool, make_snap(0.5, 0), 3);
    REQUIRE(pool.size() == 1);
    CHECK(pool[0].val_iou == 0.5);

    // below-minimum candidate on a full pool leaves it unchanged
    pool = update_snapshots(pool, make_snap(0.6, 1), 3);
    pool = update_snapshots(pool, make_snap(0.7, 2), 3);
    pool = update_snapshots(pool, make_snap(0.4, 3), 3);
    REQUIRE(pool.size() == 3);
    CHECK(pool[0].val_iou == 0.5);

    // eviction keeps ascending order
    pool = update_snapshots(pool, make_snap(0.95, 4), 3);
    CHECK(pool[0].val_iou == 0.6);
    CHECK(pool[2].val_iou == 0.95);

    // tie on val_iou prefers the later epoch
    std::vector<Snapshot> tied;
    tied = update_snapshots(tied, make_snap(0.5, 0), 1);
    tied = update_snapshots(tied, make_snap(0.5, 9), 1);
    REQUIRE(tied.size() == 1);
    CHECK(tied[0].epoch == 9);

    // simulation oracle: feed a random candidate stream, compare with a
    // brute-force top-k selection under the same (iou, epoch) order
    SplitRng rng(13);
    std::vector<Snapshot> incremental;
    std::vector<std::pair<double, int>> all;
    for (int epoch = 0; epoch < 40; ++epoch) {
        const double v = std::round(rng.uniform() * 20.0) / 20.0;  // force ties
        incremental = update_snapshots(incremental, make_snap(v, epoch), 5);
        all.emplace_back(v, epoch);
    }
    std::sort(all.begin(), all.end());  // ascending (iou, epoch)
    std::vector<std::pair<double, int>> expect(all.end() - 5, all.end());
    REQUIRE(incremental.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(incremental[i].val_iou == expect[i].first);
        CHECK(incremental[i].epoch == expect[i].second);
    }
    // pool always sorted ascending
    for (std::size_t i = 1; i < incremental.size(); ++i) {
        CHECK(incremental[i - 1].val_iou <= incremental[i].val_iou);
    }
}

TEST_CASE("ensemble coefficients: closed-form vector, telescoping sums, edge cases") {
    const auto c10 = ensemble_coefficients(10, 0.5);
    // ascending pool order: worst first
    CHECK(c10[0] == 1.0 / 512.0);
    CHECK(c10[1] == 1.0 / 512.0);
    CHECK(c10[2] == 1.0 / 256.0);
    CHECK(c10[9] == 0.5);
    double sum = 0.0;
    for (double v : c10) sum += v;
    CHECK(sum == 1.0);  // dyadic, exact

    for (int m = 1; m <= 32; ++m) {
        for (double alpha : {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}) {
            const auto c = ensemble_coefficients(m, alpha);
            double s = 0.0;
            for (double v : c) s += v;
            CHECK(std::fabs(s - 1.0) < 1e-12);
        }
    }

    CHECK(ensemble_coefficients(1, 0.5) == std::vector<double>{1.0});
    const auto c2 = ensemble_coefficients(2, 0.5);
    CHECK(c2[0] == 0.5);
    CHECK(c2[1] == 0.5);
    CHECK_THROWS_AS(ensemble_coefficients(0, 0.5), ArgumentError);
    CHECK_THROWS_AS(ensemble_coefficients(3, 1.5), ArgumentError);
}

TEST_CASE("ensemble_weights: fixed point, m=2 average, errors") {
    SplitRng rng(17);
    Tensor w = testutil::random_tensor({6}, rng, -2, 2, false);

    std::vector<Snapshot> same;
    for (int i = 0; i < 10; ++i) {
        Snapshot s;
        s.weights.emplace("w", w.detached_copy());
        s.val_iou = 0.1 * (i + 1);
        s.epoch = i;
        same.push_back(std::move(s));
    }
    auto ens = ensemble_weights(same, 0.5);
    for (Index i = 0; i < 6; ++i) CHECK(ens.at("w").data()[i] == w.data()[i]);  // bitwise

    std::vector<Snapshot> two{make_snap(0.3, 0, 1.0), make_snap(0.7, 1, 3.0)};
    auto avg = ensemble_weights(two, 0.5);
    CHECK(avg.at("w").data()[0] == 2.0);

    CHECK_THROWS_AS(ensemble_weights({}, 0.5), ArgumentError);
    std::vector<Snapshot> bad{make_snap(0.3, 0)};
    bad.push_back(make_snap(0.5, 1));
    bad[1].weights.clear();
    bad[1].weights.emplace("other", Tensor::zeros({2}));
    CHECK_THROWS_AS(ensemble_weights(bad, 0.5), ArgumentError);
}

TEST_CASE("depth_range widens degenerate folds") {
    std::vector<ImageSample> s(2);
    s[0].depth = 400.0;
    s[1].depth = 600.0;
    auto [lo, hi] = depth_range(s);
    CHECK(lo == 400.0);
    CHECK(hi == 600.0);
    s[1].depth = 400.0;
    std::tie(lo, hi) = depth_range(s);
    CHECK(lo == 399.0);
    CHECK(hi == 401.0);
}

TEST_CASE("train_fold: history contract, lr schedule cross-check, phase boundary") {
    ModelConfig mc = ModelConfig::tiny();
    mc.input_size = 32;
    auto samples = generate_synthetic(8, 32, 19);
    TrainConfig tc = tiny_train_config();
    tc.seed = 5;

    SegModel model = build_model(mc, tc.seed);
    FoldResult fr = train_fold(model, samples, samples, tc);

    CHECK(fr.history.size() == 5);  // max_epochs reached, no early stop
    const std::int64_t iters_per_epoch = 1;  // 8 samples, batch 8
    const std::int64_t step = std::max<std::int64_t>(1, tc.cycle_epochs * iters_per_epoch / 2);
    for (std::size_t e = 0; e < fr.history.size(); ++e) {
        CHECK(fr.history[e].epoch == static_cast<int>(e));
        CHECK(fr.history[e].lr ==
              cyclic_lr(static_cast<std::int64_t>(e), tc.base_lr, tc.max_lr, step));
        CHECK(fr.history[e].phase == (static_cast<int>(e) < tc.phase1_epochs ? 1 : 2));
        CHECK(std::isfinite(fr.history[e].train_loss));
        CHECK(fr.history[e].val_iou >= 0.0);
        CHECK(fr.history[e].val_iou <= 1.0);
    }
    CHECK(fr.best_epoch >= 0);
    CHECK(fr.pool.size() <= 3);
    for (std::size_t i = 1; i < fr.pool.size(); ++i) {
        CHECK(fr.pool[i - 1].val_iou <= fr.pool[i].val_iou);
    }

    CHECK_THROWS_AS(train_fold(model, {}, samples, tc), ArgumentError);
    CHECK_THROWS_AS(train_fold(model, samples, {}, tc), ArgumentError);
}

TEST_CASE("train_fold is bitwise deterministic for a fixed seed") {
    ModelConfig mc = ModelConfig::tiny();
    mc.input_size = 32;
    auto samples = generate_synthetic(6, 32, 29);
    TrainConfig tc = tiny_train_config();
    tc.max_epochs = 3;
    tc.phase1_epochs = 2;
    tc.seed = 77;
    tc.augment.hflip_prob = 0.5;  // exercise the augmentation stream too

    SegModel m1 = build_model(mc, tc.seed);
    FoldResult f1 = train_fold(m1, samples, samples, tc);
    SegModel m2 = build_model(mc, tc.seed);
    FoldResult f2 = train_fold(m2, samples, samples, tc);

    REQUIRE(f1.history.size() == f2.history.size());
    for (std::size_t i = 0; i < f1.history.size(); ++i) {
        CHECK(f1.history[i].train_loss == f2.history[i].train_loss);
        CHECK(f1.history[i].val_iou == f2.history[i].val_iou);
    }
    auto s1 = m1.state(), s2 = m2.state();
    for (std::size_t i = 0; i < s1.size(); ++i) {
        for (Index j = 0; j < s1[i].second.numel(); ++j) {
            CHECK(s1[i].second.data()[j] == s2[i].second.data()[j]);
        }
    }
}

TEST_CASE("train_kfold: artifacts, fold partition, reproducibility") {
    testutil::TempDir tmp("kfold");
    ModelConfig mc = ModelConfig::tiny();
    mc.input_size = 32;
    auto samples = generate_synthetic(8, 32, 31);
    TrainConfig tc = tiny_train_config();
    tc.max_epochs = 2;
    tc.phase1_epochs = 1;
    tc.folds = 2;
    tc.seed = 3;

    KfoldResult kr = train_kfold(samples, 2, mc, tc, tmp.path / "run", "feedbeef");
    CHECK(kr.checkpoints.size() == 2);
    CHECK(kr.ensembled.size() == 2);
    for (const auto& p : kr.checkpoints) CHECK(std::filesystem::exists(p));
    for (const auto& p : kr.ensembled) CHECK(std::filesystem::exists(p));
    CHECK(std::filesystem::exists(tmp.path / "run" / "history.csv"));
    CHECK(std::filesystem::exists(tmp.path / "run" / "history_fold0.csv"));

    // validation folds partition the ids
    std::vector<std::string> all;
    for (int f = 0; f < 2; ++f) {
        auto v = kr.split.validation_ids(f);
        all.insert(all.end(), v.begin(), v.end());
    }
    std::sort(all.begin(), all.end());
    CHECK(all.size() == samples.size());

    // rerun reproduces the checkpoint bytes
    KfoldResult kr2 = train_kfold(samples, 2, mc, tc, tmp.path / "run2", "feedbeef");
    std::ifstream a(kr.checkpoints[0], std::ios::binary);
    std::ifstream b(kr2.checkpoints[0], std::ios::binary);
    std::string ba((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string bb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(ba == bb);

    // ensembled checkpoint is loadable and eval-ready
    Checkpoint ck = load_checkpoint(kr.ensembled[0]);
    SegModel ens = model_from_checkpoint(ck);
    const double val = mean_val_iou(ens, samples, ck.d_min, ck.d_max);
    CHECK(std::isfinite(val));

    CHECK_THROWS_AS(train_kfold(samples, 9, mc, tc, tmp.path / "bad", ""), ArgumentError);
}

TEST_CASE("history csv format") {
    testutil::TempDir tmp("hist");
    std::vector<EpochRecord> hist{{0, 1, 1e-4, 0.7, 0.5, true}, {1, 2, 2e-4, 0.6, 0.55, false}};
    write_history_csv(tmp.path / "h.csv", hist, "manifest abcd");
    std::ifstream is(tmp.path / "h.csv");
    std::string line;
    std::getline(is, line);
    CHECK(line == "# manifest abcd");
    std::getline(is, line);
    CHECK(line == "epoch,phase,lr,train_loss,val_iou,snapshotted");
    std::getline(is, line);
    CHECK(line == "0,1,0.0001,0.69999999999999996,0.5,1");
    std::getline(is, line);
    CHECK(line == "1,2,0.00020000000000000001,0.59999999999999998,0.55000000000000004,0");
}
