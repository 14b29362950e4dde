#include <doctest.h>

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "baa/cli.hpp"
#include "baa/engine.hpp"
#include "baa/errors.hpp"
#include "test_support.hpp"

using namespace baa;
using baa::testing::read_file;
using baa::testing::TempDir;
using baa::testing::write_file;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

Outcome run_cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

json read_json(const fs::path& p) { return json::parse(read_file(p)); }

/// Synthetic dataset plus the common flags pointing at it.
struct Workspace {
    TempDir dir;
    fs::path data = dir / "data";
    fs::path csv = data / "manifest.csv";
    fs::path images = data / "images";

    explicit Workspace(std::size_t n = 30) { build_synthetic_dataset(data, n, 2); }

    std::vector<std::string> train_args(const std::string& out, std::vector<std::string> extra = {}) const {
        std::vector<std::string> args{"train",        "--csv",        csv.string(), "--images", images.string(),
                                      "--out",        out,            "--epochs",   "2",        "--batch-size",
                                      "8",            "--train-size", "16",         "--val-size", "8",
                                      "--test-size",  "6"};
        args.insert(args.end(), extra.begin(), extra.end());
        return args;
    }
};

} // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors exit 2 and help exits 0") {
    CHECK(run_cli({}).code == cli::kExitInput);
    CHECK(run_cli({"bogus"}).code == cli::kExitInput);
    CHECK(run_cli({"stats", "--csv", "x.csv"}).code == cli::kExitInput);
    CHECK(run_cli({"--help"}).code == cli::kExitOk);
}

TEST_CASE("stats on a synthetic dataset writes every artifact") {
    Workspace ws(40);
    const auto out = ws.dir / "stats";
    const auto r = run_cli({"stats", "--csv", ws.csv.string(), "--images", ws.images.string(), "--out", out.string()});
    REQUIRE(r.code == 0);
    for (auto name : {"stats.json", "age_distribution.png", "gender_distribution.png", "bias_report.json",
                      "bias_report.txt", "effective_config.json"})
        CHECK(fs::exists(out / name));
    const auto stats = read_json(out / "stats.json");
    CHECK(stats["total"] == 40);
    CHECK(stats["male_count"].get<int>() + stats["female_count"].get<int>() == 40);
}

TEST_CASE("stats on a header-only CSV reports zeros") {
    TempDir dir;
    write_file(dir / "m.csv", "id,boneage,male\n");
    const auto r = run_cli({"stats", "--csv", (dir / "m.csv").string(), "--images", dir.path().string(), "--out",
                            (dir / "o").string()});
    CHECK(r.code == 0);
    CHECK(read_json(dir / "o" / "stats.json")["total"] == 0);
}

TEST_CASE("missing image exits 2 and names the record") {
    TempDir dir;
    write_file(dir / "m.csv", "id,boneage,male\n4242,100,True\n");
    const auto r = run_cli({"stats", "--csv", (dir / "m.csv").string(), "--images", dir.path().string(), "--out",
                            (dir / "o").string()});
    CHECK(r.code == cli::kExitInput);
    CHECK(r.err.find("4242") != std::string::npos);
}

TEST_CASE("malformed CSV exits 2") {
    TempDir dir;
    write_file(dir / "m.csv", "id,boneage,male\n1,abc,True\n");
    CHECK(run_cli({"stats", "--csv", (dir / "m.csv").string(), "--images", dir.path().string(), "--out",
                   (dir / "o").string(), "--no-strict"})
              .code == cli::kExitInput);
}

TEST_CASE("synth is deterministic and stays in the age range") {
    TempDir dir;
    REQUIRE(run_cli({"synth", "--out", (dir / "a").string(), "--n", "20", "--seed", "5"}).code == 0);
    REQUIRE(run_cli({"synth", "--out", (dir / "b").string(), "--n", "20", "--seed", "5"}).code == 0);
    CHECK(read_file(dir / "a" / "manifest.csv") == read_file(dir / "b" / "manifest.csv"));
    CHECK(read_file(dir / "a" / "images" / "synth00003.png") == read_file(dir / "b" / "images" / "synth00003.png"));
    const auto m = load_manifest(dir / "a" / "manifest.csv", dir / "a" / "images");
    for (const auto& r : m.records) {
        CHECK(r.bone_age >= 1);
        CHECK(r.bone_age <= 288);
    }
}

TEST_CASE("split command writes the requested sizes") {
    Workspace ws;
    const auto out = ws.dir / "split";
    REQUIRE(run_cli({"split", "--csv", ws.csv.string(), "--images", ws.images.string(), "--out", out.string(),
                     "--train-size", "10", "--val-size", "5", "--test-size", "3", "--seed", "1"})
                .code == 0);
    const auto split = split_from_json(read_json(out / "split.json"));
    CHECK(split.train_ids.size() == 10);
    CHECK(split.val_ids.size() == 5);
    CHECK(split.test_ids.size() == 3);
    CHECK(run_cli({"split", "--csv", ws.csv.string(), "--images", ws.images.string(), "--out", out.string(),
                   "--train-size", "100"})
              .code == cli::kExitInput);
}

TEST_CASE("default config echoes the published training settings") {
    TempDir dir;
    write_file(dir / "cfg.json", "{}");
    const auto cfg = cli::load_run_config(dir / "cfg.json");
    const auto echo = cli::config_echo(cfg);
    CHECK(echo["epochs"] == 15);
    CHECK(echo["patience"] == 10);
    CHECK(echo["lr"] == 1e-3);
    CHECK(echo["head"]["dropout_rate"] == 0.5);
    CHECK(echo["split"]["train"] == 6000);
    CHECK(echo["split"]["val"] == 2000);
    CHECK(echo["split"]["test"] == 200);
    CHECK(echo["augment"]["flip_probability"] == 0.5);
}

TEST_CASE("unknown config keys are rejected at every level") {
    TempDir dir;
    write_file(dir / "a.json", R"({"epoch": 3})");
    CHECK_THROWS_AS(cli::load_run_config(dir / "a.json"), ConfigError);
    write_file(dir / "b.json", R"({"augment": {"flip": 0.5}})");
    CHECK_THROWS_AS(cli::load_run_config(dir / "b.json"), ConfigError);
    Workspace ws;
    CHECK(run_cli(ws.train_args((ws.dir / "o").string(), {"--config", (dir / "a.json").string()})).code ==
          cli::kExitInput);
}

TEST_CASE("resolved config survives a JSON round trip") {
    cli::RunConfig cfg;
    cfg.backbone = "tiny_test";
    cfg.regime = Regime::frozen;
    cfg.train.max_epochs = 7;
    cfg.augment.fill = FillConstant{0.25};
    cfg.csv = "/data/x.csv";
    cli::RunConfig back;
    cli::apply_json(back, cli::to_json(cfg));
    CHECK(cli::to_json(back) == cli::to_json(cfg));
}

TEST_CASE("train, evaluate and compare a tiny run end to end") {
    Workspace ws;
    const auto out = ws.dir / "runs";
    const auto r = run_cli(ws.train_args(out.string(), {"--regime", "frozen"}));
    REQUIRE(r.code == 0);
    const auto run_dir = out / "tiny_test_frozen";
    for (auto name : {"effective_config.json", "split.json", "history.json", "checkpoint.bin", "checkpoint.json",
                      "learning_curve.png"})
        CHECK(fs::exists(run_dir / name));
    CHECK(read_json(run_dir / "checkpoint.json")["regime"] == "FROZEN");
    const auto history = read_json(run_dir / "history.json");
    CHECK(history["records"].size() <= 2);
    CHECK(history["config"]["epochs"] == 2);

    const auto e = run_cli({"evaluate", "--checkpoint", run_dir.string()});
    REQUIRE(e.code == 0);
    const auto metrics = read_json(run_dir / "metrics.json");
    CHECK(metrics["n_test"] == 6);
    CHECK(metrics["regime"] == "FROZEN");
    const auto preds = read_predictions_csv(run_dir / "predictions.csv");
    CHECK(preds.predictions.size() == 6);
    CHECK(preds.mae == doctest::Approx(metrics["mae_months"].get<double>()).epsilon(1e-9));
    CHECK(fs::exists(run_dir / "scatter.png"));

    const auto c = run_cli({"compare", run_dir.string(), "--out", (ws.dir / "cmp").string()});
    CHECK(c.code == 0);
    CHECK(c.out.find("tiny_test") != std::string::npos);
    CHECK(fs::exists(ws.dir / "cmp" / "comparison.md"));

    const auto dup = run_cli({"compare", run_dir.string(), run_dir.string()});
    CHECK(dup.code == cli::kExitInput);
}

TEST_CASE("evaluate rejects a sidecar that disagrees with the blob") {
    Workspace ws;
    const auto out = ws.dir / "runs";
    REQUIRE(run_cli(ws.train_args(out.string())).code == 0);
    const auto run_dir = out / "tiny_test_full";
    auto side = read_json(run_dir / "checkpoint.json");
    side["backbone_id"] = "mobilenet";
    std::ofstream(run_dir / "checkpoint.json") << side.dump();
    CHECK(run_cli({"evaluate", "--checkpoint", run_dir.string()}).code == cli::kExitInput);
}

TEST_CASE("rerunning from the saved effective config reproduces the history") {
    Workspace ws;
    REQUIRE(run_cli(ws.train_args((ws.dir / "a").string(), {"--seed", "4"})).code == 0);
    const auto cfg = ws.dir / "a" / "tiny_test_full" / "effective_config.json";
    REQUIRE(run_cli({"train", "--config", cfg.string(), "--out", (ws.dir / "b").string()}).code == 0);
    CHECK(read_file(ws.dir / "a" / "tiny_test_full" / "history.json") ==
          read_file(ws.dir / "b" / "tiny_test_full" / "history.json"));
}

TEST_CASE("ImageNet backbone without weights exits 2") {
    Workspace ws;
    TempDir empty;
    const auto r = run_cli(ws.train_args((ws.dir / "o").string(),
                                         {"--backbone", "vgg16", "--weights-dir", empty.path().string()}));
    CHECK(r.code == cli::kExitInput);
    CHECK(run_cli(ws.train_args((ws.dir / "o").string(), {"--backbone", "resnet50"})).code == cli::kExitInput);
}

TEST_CASE("divergence exits 3 and keeps the partial history") {
    Workspace ws;
    const auto out = ws.dir / "runs";
    const auto r = run_cli(ws.train_args(out.string(), {"--lr", "1e300"}));
    CHECK(r.code == cli::kExitDiverged);
    CHECK(fs::exists(out / "tiny_test_full" / "history.json"));
}

TEST_CASE("compare over the eight published cells") {
    TempDir dir;
    const std::vector<std::tuple<std::string, std::string, double>> cells{
        {"vgg16", "FULL", 14.00},     {"vgg16", "FROZEN", 29.51},        {"inception_v3", "FULL", 10.23},
        {"inception_v3", "FROZEN", 29.13}, {"mobilenet", "FULL", 9.55},  {"mobilenet", "FROZEN", 29.56},
        {"xception", "FULL", 9.98},   {"xception", "FROZEN", 26.65}};
    std::vector<std::string> args{"compare"};
    for (const auto& [id, regime, mae] : cells) {
        const auto d = dir / (id + "_" + regime);
        fs::create_directories(d);
        std::ofstream(d / "metrics.json") << json{{"backbone_id", id}, {"regime", regime}, {"mae_months", mae}}.dump();
        args.push_back(d.string());
    }
    args.insert(args.end(), {"--out", (dir / "cmp").string()});
    const auto r = run_cli(args);
    REQUIRE(r.code == 0);
    CHECK(r.out.find("**9.55**") != std::string::npos);
    const auto table = read_json(dir / "cmp" / "comparison.json");
    CHECK(table["rows"].size() == 4);
    CHECK(table["best_cell"]["backbone_id"] == "mobilenet");
    CHECK(table["best_cell"]["regime"] == "FULL");
}

} // TEST_SUITE
