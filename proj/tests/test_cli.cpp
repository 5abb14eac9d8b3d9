#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <limits>
#include <sys/wait.h>

#include "saltseg/config.hpp"
#include "saltseg/data.hpp"
#include "saltseg/postprocess.hpp"
#include "saltseg/serialize.hpp"
#include "saltseg/svg.hpp"
#include "testutil.hpp"

using namespace saltseg;

TEST_CASE("config file parsing applies values with validation") {
    testutil::TempDir tmp("cfg");
    {
        std::ofstream os(tmp.path / "run.cfg");
        os << "# comment line\n"
           << "[model]\n"
           << "base_filters = 8\n"
           << "encoder_blocks = 1, 1, 2, 1\n"
           << "cardinality = 4\n"
           << "se_reduction = 8\n"
           << "input_size = 64\n"
           << "use_hypercolumn = false\n"
           << "[train]\n"
           << "batch_size = 4\n"
           << "folds = 3\n"
           << "seed = 99\n"
           << "[augment]\n"
           << "hflip_prob = 0.25\n"
           << "[predict]\n"
           << "threshold = 0.6\n"
           << "connectivity = 4\n";
    }
    RunConfig cfg = parse_config_file(tmp.path / "run.cfg");
    CHECK(cfg.model.base_filters == 8);
    CHECK(cfg.model.encoder_blocks == std::array<int, 4>{1, 1, 2, 1});
    CHECK(cfg.model.use_hypercolumn == false);
    CHECK(cfg.model.use_scse == true);  // default untouched
    CHECK(cfg.train.batch_size == 4);
    CHECK(cfg.train.folds == 3);
    CHECK(cfg.train.seed == 99);
    CHECK(cfg.train.augment.hflip_prob == 0.25);
    CHECK(cfg.predict.threshold == 0.6);
    CHECK(cfg.predict.connectivity == 4);
}

TEST_CASE("config errors name the field and allowed range, fail fast") {
    RunConfig cfg;
    CHECK_THROWS_WITH_AS(apply_config_text(cfg, "[train]\nbatch_size = 0\n", "t"),
                         doctest::Contains("train.batch_size"), ConfigError);
    CHECK_THROWS_WITH_AS(apply_config_text(cfg, "[train]\nbatch_size = 0\n", "t"),
                         doctest::Contains("[1, 4096]"), ConfigError);
    CHECK_THROWS_WITH_AS(apply_config_text(cfg, "[train]\nlearning = 1\n", "t"),
                         doctest::Contains("train.learning"), ConfigError);
    CHECK_THROWS_AS(apply_config_text(cfg, "[mystery]\nx = 1\n", "t"), ConfigError);
    CHECK_THROWS_AS(apply_config_text(cfg, "stray = 1\n", "t"), ConfigError);
    CHECK_THROWS_AS(apply_config_text(cfg, "[model]\nbase_filters\n", "t"), ConfigError);
    // vertical flips rejected at validation time
    CHECK_THROWS_WITH_AS(apply_config_text(cfg, "[augment]\nvflip_prob = 0.5\n", "t"),
                         doctest::Contains("vertical flips"), ConfigError);
    // cross-field violation caught after parse
    CHECK_THROWS_AS(apply_config_text(cfg, "[model]\nbase_filters = 10\ncardinality = 4\n", "t"),
                    ConfigError);
    // value errors carry the source and line
    CHECK_THROWS_WITH_AS(apply_config_text(cfg, "[predict]\nthreshold = nope\n", "t"),
                         doctest::Contains("t:2"), ConfigError);
}

TEST_CASE("render_config round-trips through the parser") {
    RunConfig cfg;
    cfg.model = ModelConfig::desk();
    cfg.model.use_attention_gates = false;
    cfg.train.batch_size = 12;
    cfg.train.seed = 31337;
    cfg.train.augment.brightness_prob = 0.5;
    cfg.predict.threshold = 0.55;

    const std::string text = render_config(cfg);
    RunConfig back;
    apply_config_text(back, text, "rendered");
    CHECK(back.model == cfg.model);
    CHECK(back.train.batch_size == cfg.train.batch_size);
    CHECK(back.train.seed == cfg.train.seed);
    CHECK(back.train.augment.brightness_prob == cfg.train.augment.brightness_prob);
    CHECK(back.predict.threshold == cfg.predict.threshold);
    CHECK(render_config(back) == text);  // canonical form is a fixed point
}

TEST_CASE("manifest hash: deterministic, sensitive to every part") {
    RunManifest a;
    a.command = "train";
    a.seed = 7;
    a.inputs = {"data"};
    a.resolved_config = "x = 1\n";
    RunManifest b = a;
    CHECK(a.hash() == b.hash());
    CHECK(a.hash().size() == 16);

    b.seed = 8;
    CHECK(a.hash() != b.hash());
    b = a;
    b.command = "predict";
    CHECK(a.hash() != b.hash());
    b = a;
    b.inputs = {"data2"};
    CHECK(a.hash() != b.hash());
    b = a;
    b.resolved_config = "x = 2\n";
    CHECK(a.hash() != b.hash());

    // json embeds the hash
    CHECK(a.to_json().find(a.hash()) != std::string::npos);
}

TEST_CASE("svg curves emission") {
    testutil::TempDir tmp("svg");
    std::vector<EpochRecord> hist;
    for (int e = 0; e < 12; ++e) {
        hist.push_back({e, e < 4 ? 1 : 2, 1e-4 * (e + 1), 1.0 / (e + 1.0), 0.05 * e, e % 3 == 0});
    }
    write_curves_svg(tmp.path / "c.svg", hist, "fold 0");
    std::ifstream is(tmp.path / "c.svg");
    std::string content((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    CHECK(content.find("<svg") == 0);
    CHECK(content.find("polyline") != std::string::npos);
    CHECK(content.find("validation IoU") != std::string::npos);
    CHECK(content.rfind("</svg>\n") == content.size() - 7);

    // single-epoch histories still render
    write_curves_svg(tmp.path / "one.svg", {hist[0]}, "one");
    CHECK(std::filesystem::file_size(tmp.path / "one.svg") > 100);
}

// --- process-level checks against the real binary -----------------------------
// SALTSEG_BIN points at the CLI (set by ctest); these exercise the exit-code
// contract and cross-thread determinism end to end.

namespace {

std::string cli_bin() {
    const char* env = std::getenv("SALTSEG_BIN");
    return env ? env : "";
}

int run_cli(const std::filesystem::path& cwd, const std::string& args, const std::string& extra_env = "") {
    const std::string cmd = "cd " + cwd.string() + " && " + extra_env + " " + cli_bin() + " " + args +
                            " >> cli.log 2>&1";
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

const char* kTinyCfg =
    "[model]\n"
    "base_filters = 4\n"
    "encoder_blocks = 1,1,1,1\n"
    "cardinality = 4\n"
    "se_reduction = 4\n"
    "input_size = 32\n"
    "[train]\n"
    "batch_size = 8\n"
    "phase1_epochs = 2\n"
    "max_epochs = 4\n"
    "folds = 2\n"
    "base_lr = 0.0005\n"
    "max_lr = 0.005\n"
    "cycle_epochs = 2\n"
    "seed = 3\n";

std::string slurp(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("cli: exit codes and end-to-end artifacts") {
    REQUIRE_MESSAGE(!cli_bin().empty(), "SALTSEG_BIN not set; run through ctest");
    testutil::TempDir tmp("cliproc");
    const auto dir = tmp.path;
    {
        std::ofstream os(dir / "run.cfg");
        os << kTinyCfg;
    }

    CHECK(run_cli(dir, "generate --n 6 --size 32 --seed 5 --out data") == 0);
    CHECK(std::filesystem::exists(dir / "data" / "depths.csv"));

    // configuration error: unknown key, exit 2
    {
        std::ofstream os(dir / "bad.cfg");
        os << "[train]\nwarp_speed = 9\n";
    }
    CHECK(run_cli(dir, "train --config bad.cfg --data data --out m_bad") == 2);

    // data error before any training: masks missing, exit 3
    std::filesystem::create_directories(dir / "nomasks" / "images");
    std::filesystem::copy(dir / "data" / "images", dir / "nomasks" / "images",
                          std::filesystem::copy_options::overwrite_existing);
    std::filesystem::copy_file(dir / "data" / "depths.csv", dir / "nomasks" / "depths.csv");
    CHECK(run_cli(dir, "train --config run.cfg --data nomasks --out m_nomask") == 3);

    CHECK(run_cli(dir, "train --config run.cfg --data data --out model") == 0);
    CHECK(std::filesystem::exists(dir / "model" / "fold1.w.ens"));
    CHECK(std::filesystem::exists(dir / "model" / "curves_fold0.svg"));

    CHECK(run_cli(dir, "predict --checkpoint model/fold0.w --data data --out sub.csv --config run.cfg "
                       "--dump-probs probs") == 0);
    CHECK(std::filesystem::exists(dir / "probs" / "synth_00000.pgm"));
    CHECK(std::filesystem::exists(dir / "sub.csv.manifest.json"));

    // every emitted RLE decodes back to the binarized post-processed mask
    {
        Checkpoint ck = load_checkpoint(dir / "model" / "fold0.w");
        SegModel model = model_from_checkpoint(ck);
        RunConfig cfg = parse_config_file(dir / "run.cfg");
        auto samples = load_dataset(dir / "data" / "images", dir / "data" / "masks",
                                    dir / "data" / "depths.csv");
        std::map<std::string, MaskGrid> expected;
        for (const auto& s : samples) {
            expected.emplace(s.id, postprocess_probability(
                                       tta_predict(model, s, ck.d_min, ck.d_max, cfg.predict),
                                       cfg.predict));
        }
        for (const auto& [id, text] : read_submission(dir / "sub.csv")) {
            REQUIRE(expected.count(id) == 1);
            MaskGrid m = rle_decode(rle_from_string(text, 32, 32));
            CHECK((m == expected.at(id)).all());
        }
    }

    // thread cap must not change bytes
    CHECK(run_cli(dir, "predict --checkpoint model/fold0.w --data data --out sub_t1.csv --config run.cfg",
                  "SALTSEG_THREADS=1") == 0);
    CHECK(run_cli(dir, "predict --checkpoint model/fold0.w --data data --out sub_t2.csv --config run.cfg",
                  "SALTSEG_THREADS=2") == 0);
    CHECK(slurp(dir / "sub_t1.csv") == slurp(dir / "sub_t2.csv"));
    CHECK(slurp(dir / "sub_t1.csv") == slurp(dir / "sub.csv"));

    CHECK(run_cli(dir, "evaluate --pred sub.csv --data data --out eval") == 0);
    CHECK(std::filesystem::exists(dir / "eval" / "metrics.csv"));

    // ground truth scored against itself is a perfect M = 1
    CHECK(run_cli(dir, "evaluate --pred data/masks --data data --out eval_self") == 0);
    const std::string self_report = slurp(dir / "eval_self" / "metrics.csv");
    CHECK(self_report.find("\nM,1\n") != std::string::npos);

    // id mismatch: drop one mask from a copied gt set, exit 3
    std::filesystem::create_directories(dir / "gt_partial");
    bool first = true;
    for (const auto& e : std::filesystem::directory_iterator(dir / "data" / "masks")) {
        if (first) {
            first = false;
            continue;
        }
        std::filesystem::copy_file(e.path(), dir / "gt_partial" / e.path().filename());
    }
    CHECK(run_cli(dir, "evaluate --pred data/masks --data gt_partial --out eval_bad") == 3);

    // numeric error: poison a checkpoint with NaN weights, exit 4
    {
        auto entries = load_weights(dir / "model" / "fold0.w");
        entries.front().second.data()[0] = std::numeric_limits<double>::quiet_NaN();
        save_weights(dir / "poison.w", entries);
        std::filesystem::copy_file(dir / "model" / "fold0.w.json", dir / "poison.w.json");
    }
    CHECK(run_cli(dir, "predict --checkpoint poison.w --data data --out sub_bad.csv --config run.cfg") ==
          4);

    // missing required option, exit 2
    CHECK(run_cli(dir, "train --data data") == 2);
}

TEST_CASE("cli: single-snapshot ensemble equals the snapshot") {
    REQUIRE_MESSAGE(!cli_bin().empty(), "SALTSEG_BIN not set; run through ctest");
    testutil::TempDir tmp("cliens");
    const auto dir = tmp.path;
    {
        std::ofstream os(dir / "run.cfg");
        os << kTinyCfg << "save_snapshots = true\nsnapshots_kept = 2\n";
    }
    CHECK(run_cli(dir, "generate --n 4 --size 32 --seed 6 --out data") == 0);
    CHECK(run_cli(dir, "train --config run.cfg --data data --out model") == 0);

    // keep exactly one snapshot file in a fresh directory
    std::filesystem::create_directories(dir / "one");
    std::filesystem::path snap;
    for (const auto& e : std::filesystem::directory_iterator(dir / "model" / "snapshots_fold0")) {
        if (e.path().extension() == ".w") snap = e.path();
    }
    REQUIRE(!snap.empty());
    std::filesystem::copy_file(snap, dir / "one" / snap.filename());
    std::filesystem::copy_file(snap.string() + ".json", dir / "one" / (snap.filename().string() + ".json"));

    CHECK(run_cli(dir, "ensemble --dir one --alpha 0.5 --out merged.w") == 0);
    auto original = to_map(load_weights(snap));
    auto merged = to_map(load_weights(dir / "merged.w"));
    REQUIRE(original.size() == merged.size());
    for (const auto& [name, t] : original) {
        REQUIRE(merged.count(name) == 1);
        const Tensor& m = merged.at(name);
        REQUIRE(m.numel() == t.numel());
        for (Index i = 0; i < t.numel(); ++i) CHECK(m.data()[i] == t.data()[i]);
    }
    // ensembled output is predict-ready thanks to the carried sidecar
    CHECK(run_cli(dir, "predict --checkpoint merged.w --data data --out sub.csv --config run.cfg") == 0);
}
