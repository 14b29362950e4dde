#include "baa/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "baa/errors.hpp"
#include "baa/reporting.hpp"

namespace baa::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object())
        throw ConfigError(where + " must be a JSON object");
    for (const auto& [key, value] : j.items())
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* k) { return key == k; }))
            throw ConfigError("unknown config key: " + where + key);
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out)
        throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out)
        throw IoError("write failed for " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out)
        throw IoError("cannot write " + path.string());
    out << text;
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

template <typename T>
const T& require(const std::optional<T>& v, const char* flag) {
    if (!v)
        throw ConfigError(std::string("missing required setting ") + flag);
    return *v;
}

/// Flags shared by train/evaluate; every one has a config-file key.
struct RunFlags {
    std::optional<std::string> config, csv, images, out, backbone, regime, split_file, weights_dir;
    std::optional<std::size_t> epochs, patience, batch_size, train_size, val_size, test_size;
    std::optional<double> lr, min_delta, dropout;
    std::optional<std::uint64_t> seed;
    bool no_strict = false;

    void attach(CLI::App* app) {
        app->add_option("--config", config, "JSON run-config file; flags override its values");
        app->add_option("--csv", csv, "Manifest CSV with columns id,boneage,male");
        app->add_option("--images", images, "Directory of <id>.png radiographs");
        app->add_option("--out", out, "Output directory");
        app->add_option("--backbone", backbone, "vgg16 | inception_v3 | mobilenet | xception | tiny_test");
        app->add_option("--regime", regime, "full | frozen");
        app->add_option("--epochs", epochs, "Maximum epochs");
        app->add_option("--patience", patience, "Epochs without validation-MAE improvement before stopping");
        app->add_option("--batch-size", batch_size, "Mini-batch size");
        app->add_option("--lr", lr, "Adam learning rate");
        app->add_option("--min-delta", min_delta, "Minimum validation-MAE improvement in months");
        app->add_option("--dropout", dropout, "Head dropout rate");
        app->add_option("--seed", seed, "Seed for splits, initialisation, shuffling, augmentation and dropout");
        app->add_option("--split", split_file, "Split JSON produced by the split command");
        app->add_option("--train-size", train_size, "Training split size");
        app->add_option("--val-size", val_size, "Validation split size");
        app->add_option("--test-size", test_size, "Test split size");
        app->add_option("--weights-dir", weights_dir, "Pretrained weights directory (default $BAA_WEIGHTS_DIR)");
        app->add_flag("--no-strict", no_strict, "Do not verify that every image exists when loading the manifest");
    }

    RunConfig resolve(const std::optional<fs::path>& fallback_config = std::nullopt) const {
        RunConfig cfg;
        if (config)
            cfg = load_run_config(*config);
        else if (fallback_config && fs::exists(*fallback_config))
            cfg = load_run_config(*fallback_config);
        if (csv) cfg.csv = *csv;
        if (images) cfg.images = *images;
        if (out) cfg.out = *out;
        if (split_file) cfg.split_file = *split_file;
        if (weights_dir) cfg.weights_dir = *weights_dir;
        if (backbone) cfg.backbone = *backbone;
        if (regime) cfg.regime = regime_from_string(*regime);
        if (epochs) cfg.train.max_epochs = *epochs;
        if (patience) cfg.train.patience = *patience;
        if (batch_size) cfg.train.batch_size = *batch_size;
        if (lr) cfg.train.learning_rate = *lr;
        if (min_delta) cfg.train.min_delta = *min_delta;
        if (dropout) cfg.head.dropout_rate = *dropout;
        if (seed) cfg.train.seed = *seed;
        if (train_size) cfg.split.train = *train_size;
        if (val_size) cfg.split.val = *val_size;
        if (test_size) cfg.split.test = *test_size;
        if (no_strict) cfg.strict = false;
        find_backbone(cfg.backbone);
        cfg.train.validate();
        cfg.head.validate();
        cfg.augment.validate();
        return cfg;
    }
};

DatasetManifest load_inputs(const RunConfig& cfg) {
    return load_manifest(require(cfg.csv, "--csv"), require(cfg.images, "--images"), cfg.strict);
}

SplitAssignment resolve_split(const RunConfig& cfg, const DatasetManifest& manifest) {
    if (cfg.split_file)
        return split_from_json(read_json(*cfg.split_file));
    return make_splits(manifest, cfg.split, cfg.train.seed);
}

BuildOptions build_options(const RunConfig& cfg) {
    BuildOptions options;
    options.seed = cfg.train.seed;
    options.weights_dir = cfg.weights_dir;
    options.input_override = cfg.resolved_preprocess();
    return options;
}

int cmd_stats(const std::string& csv, const std::string& images, const std::string& out_dir, int bin_width,
              int band_width, bool strict, std::ostream& out) {
    const auto manifest = load_manifest(csv, images, strict);
    const auto stats = compute_stats(manifest, bin_width);
    const fs::path dir = out_dir;
    ensure_dir(dir);
    write_json(dir / "stats.json", to_json(stats));
    emit_plot(PlotKind::age_distribution, stats, dir / "age_distribution.png");
    emit_plot(PlotKind::gender_distribution, stats, dir / "gender_distribution.png");
    if (stats.total > 0) {
        const auto report = write_bias_report(stats, {}, band_width);
        write_json(dir / "bias_report.json", to_json(report));
        write_text(dir / "bias_report.txt", to_text(report));
    }
    write_json(dir / "effective_config.json", {{"command", "stats"},
                                               {"csv", csv},
                                               {"images", images},
                                               {"out", out_dir},
                                               {"bin_width", bin_width},
                                               {"band_width", band_width},
                                               {"strict", strict}});
    out << fmt::format("{} records: {} male, {} female; modal bin {} months\n", stats.total, stats.male_count,
                       stats.female_count, stats.modal_bin);
    out << "wrote " << (dir / "stats.json").string() << '\n';
    return kExitOk;
}

int cmd_synth(const std::string& out_dir, std::size_t n, std::uint64_t seed, std::ostream& out) {
    const fs::path dir = out_dir;
    build_synthetic_dataset(dir, n, seed);
    write_json(dir / "effective_config.json", {{"command", "synth"}, {"out", out_dir}, {"n", n}, {"seed", seed}});
    out << (dir / "manifest.csv").string() << '\n';
    return kExitOk;
}

int cmd_split(const RunConfig& cfg, std::ostream& out) {
    const auto manifest = load_inputs(cfg);
    const auto split = make_splits(manifest, cfg.split, cfg.train.seed);
    const fs::path dir = require(cfg.out, "--out");
    ensure_dir(dir);
    write_json(dir / "split.json", to_json(split));
    write_json(dir / "effective_config.json", to_json(cfg));
    out << fmt::format("split {}/{}/{} written to {}\n", split.train_ids.size(), split.val_ids.size(),
                       split.test_ids.size(), (dir / "split.json").string());
    return kExitOk;
}

int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    const auto manifest = load_inputs(cfg);
    const auto split = resolve_split(cfg, manifest);
    const auto train_set = select_records(manifest, split.train_ids);
    const auto val_set = select_records(manifest, split.val_ids);

    const fs::path dir = require(cfg.out, "--out") / run_dir_name(cfg);
    ensure_dir(dir);
    write_json(dir / "effective_config.json", to_json(cfg));
    write_json(dir / "split.json", to_json(split));

    auto model = build_model(cfg.backbone, cfg.regime, cfg.head, build_options(cfg));
    const TransformsConfig transforms{model.input_spec(), cfg.augment};
    out << fmt::format("training {} ({}) on {} images, validating on {}; {} trainable parameters\n",
                       cfg.backbone, to_string(cfg.regime), train_set.size(), val_set.size(),
                       model.trainable_parameter_count());

    auto history_json = [&](const TrainHistory& h) {
        json j = to_json(h);
        j["config"] = config_echo(cfg);
        return j;
    };

    TrainHistory history;
    try {
        history = train(model, train_set, val_set, transforms, cfg.train, [&](const EpochRecord& r) {
            out << fmt::format("epoch {:>3}: loss {:.3f}  train_mae {:.3f}  val_mae {:.3f}\n", r.epoch + 1,
                               r.train_loss, r.train_mae, r.val_mae);
        });
    } catch (const NonFiniteLoss& e) {
        write_json(dir / "history.json", history_json(e.history()));
        err << "error: " << e.what() << '\n';
        return kExitDiverged;
    }

    write_json(dir / "history.json", history_json(history));
    const auto& best = history.records.at(history.best_epoch);
    save_checkpoint(model, {history.best_epoch, best.val_mae, cfg.train.seed}, dir / "checkpoint.bin",
                    dir / "checkpoint.json");
    emit_plot(PlotKind::history_curve, history, dir / "learning_curve.png");
    out << fmt::format("best epoch {} (val_mae {:.3f}); artifacts in {}\n", history.best_epoch + 1, best.val_mae,
                       dir.string());
    return kExitOk;
}

int cmd_evaluate(const std::string& checkpoint, const RunFlags& flags, std::ostream& out) {
    fs::path blob = checkpoint;
    fs::path run_dir = blob;
    if (fs::is_directory(blob))
        blob /= "checkpoint.bin";
    else
        run_dir = blob.parent_path();
    fs::path sidecar = blob;
    sidecar.replace_extension(".json");

    const RunConfig cfg = flags.resolve(run_dir / "effective_config.json");
    CheckpointInfo info;
    auto model = load_checkpoint(blob, sidecar, &info);

    const auto manifest = load_inputs(cfg);
    SplitAssignment split;
    if (cfg.split_file)
        split = split_from_json(read_json(*cfg.split_file));
    else if (fs::exists(run_dir / "split.json"))
        split = split_from_json(read_json(run_dir / "split.json"));
    else
        split = make_splits(manifest, cfg.split, cfg.train.seed);
    const auto test_set = select_records(manifest, split.test_ids);

    const TransformsConfig transforms{model.input_spec(), cfg.augment};
    const auto result = evaluate(model, test_set, transforms, cfg.train.batch_size);

    const fs::path dir = flags.out ? fs::path(*flags.out) : run_dir;
    ensure_dir(dir);
    write_predictions_csv(result, dir / "predictions.csv");
    emit_plot(PlotKind::scatter, result, dir / "scatter.png");
    write_json(dir / "metrics.json", {{"backbone_id", model.spec().id},
                                      {"regime", to_string(model.regime())},
                                      {"mae_months", result.mae},
                                      {"n_test", result.predictions.size()},
                                      {"checkpoint_epoch", info.epoch},
                                      {"config", config_echo(cfg)}});
    if (dir != run_dir)
        write_json(dir / "effective_config.json", to_json(cfg));
    out << fmt::format("{} / {}: test MAE {:.2f} months over {} images\n", model.spec().id,
                       to_string(model.regime()), result.mae, result.predictions.size());
    return kExitOk;
}

int cmd_compare(const std::vector<std::string>& run_dirs, const std::optional<std::string>& out_dir,
                std::ostream& out) {
    std::vector<RunResult> results;
    for (const auto& d : run_dirs) {
        const fs::path dir = d;
        const json metrics = read_json(dir / "metrics.json");
        RunResult run;
        try {
            run.backbone_id = metrics.at("backbone_id").get<std::string>();
            run.regime = regime_from_string(metrics.at("regime").get<std::string>());
            run.eval.mae = metrics.at("mae_months").get<double>();
            run.config = metrics.value("config", json::object());
            if (fs::exists(dir / "history.json"))
                run.history = history_from_json(read_json(dir / "history.json"));
        } catch (const json::exception& e) {
            throw ConfigError(dir.string() + ": " + e.what());
        }
        results.push_back(std::move(run));
    }
    const auto table = render_comparison_table(results);
    const auto markdown = to_markdown(table);
    out << markdown;
    if (out_dir) {
        const fs::path dir = *out_dir;
        ensure_dir(dir);
        write_text(dir / "comparison.md", markdown);
        write_json(dir / "comparison.json", to_json(table));
        write_json(dir / "effective_config.json", {{"command", "compare"}, {"runs", run_dirs}});
    }
    return kExitOk;
}

} // namespace

PreprocessSpec RunConfig::resolved_preprocess() const {
    return preprocess ? *preprocess : find_backbone(backbone).input_spec;
}

void apply_json(RunConfig& cfg, const json& j) {
    reject_unknown(j,
                   {"command", "csv", "images", "out", "split_file", "weights_dir", "backbone", "regime", "epochs",
                    "patience", "batch_size", "lr", "seed", "min_delta", "adam", "head", "preprocess", "augment",
                    "split", "strict"},
                   "");
    try {
        auto path = [&](const char* key, std::optional<fs::path>& dst) {
            if (j.contains(key))
                dst = j[key].is_null() ? std::optional<fs::path>{} : fs::path(j[key].get<std::string>());
        };
        path("csv", cfg.csv);
        path("images", cfg.images);
        path("out", cfg.out);
        path("split_file", cfg.split_file);
        path("weights_dir", cfg.weights_dir);
        if (j.contains("backbone")) cfg.backbone = j["backbone"].get<std::string>();
        if (j.contains("regime")) cfg.regime = regime_from_string(j["regime"].get<std::string>());
        if (j.contains("epochs")) cfg.train.max_epochs = j["epochs"].get<std::size_t>();
        if (j.contains("patience")) cfg.train.patience = j["patience"].get<std::size_t>();
        if (j.contains("batch_size")) cfg.train.batch_size = j["batch_size"].get<std::size_t>();
        if (j.contains("lr")) cfg.train.learning_rate = j["lr"].get<double>();
        if (j.contains("seed")) cfg.train.seed = j["seed"].get<std::uint64_t>();
        if (j.contains("min_delta")) cfg.train.min_delta = j["min_delta"].get<double>();
        if (j.contains("strict")) cfg.strict = j["strict"].get<bool>();
        if (j.contains("adam")) {
            const auto& a = j["adam"];
            reject_unknown(a, {"beta1", "beta2", "epsilon"}, "adam.");
            cfg.train.adam.beta1 = a.value("beta1", cfg.train.adam.beta1);
            cfg.train.adam.beta2 = a.value("beta2", cfg.train.adam.beta2);
            cfg.train.adam.epsilon = a.value("epsilon", cfg.train.adam.epsilon);
        }
        if (j.contains("head"))
            cfg.head = head_config_from_json(j["head"]);
        if (j.contains("preprocess") && !j["preprocess"].is_null()) {
            const auto& p = j["preprocess"];
            reject_unknown(p, {"height", "width", "scaling", "channel_means"}, "preprocess.");
            PreprocessSpec spec = cfg.resolved_preprocess();
            spec.target_height = p.value("height", spec.target_height);
            spec.target_width = p.value("width", spec.target_width);
            if (p.contains("scaling"))
                spec.scaling = scaling_from_string(p["scaling"].get<std::string>());
            if (p.contains("channel_means"))
                spec.channel_means = p["channel_means"].get<std::array<double, 3>>();
            if (spec.target_height <= 0 || spec.target_width <= 0)
                throw ConfigError("preprocess sizes must be positive");
            cfg.preprocess = spec;
        }
        if (j.contains("augment")) {
            const auto& a = j["augment"];
            reject_unknown(a, {"flip_probability", "shear_max", "zoom_range", "rotation_max", "fill"}, "augment.");
            cfg.augment.flip_probability = a.value("flip_probability", cfg.augment.flip_probability);
            cfg.augment.shear_max = a.value("shear_max", cfg.augment.shear_max);
            cfg.augment.rotation_max = a.value("rotation_max", cfg.augment.rotation_max);
            if (a.contains("zoom_range"))
                cfg.augment.zoom_range = a["zoom_range"].get<std::array<double, 2>>();
            if (a.contains("fill")) {
                if (a["fill"].is_string()) {
                    if (a["fill"].get<std::string>() != "nearest")
                        throw ConfigError("augment.fill must be \"nearest\" or a number");
                    cfg.augment.fill = FillNearest{};
                } else {
                    cfg.augment.fill = FillConstant{a["fill"].get<double>()};
                }
            }
        }
        if (j.contains("split")) {
            const auto& s = j["split"];
            reject_unknown(s, {"train", "val", "test"}, "split.");
            cfg.split.train = s.value("train", cfg.split.train);
            cfg.split.val = s.value("val", cfg.split.val);
            cfg.split.test = s.value("test", cfg.split.test);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("invalid config value: ") + e.what());
    }
}

RunConfig load_run_config(const fs::path& path) {
    RunConfig cfg;
    apply_json(cfg, read_json(path));
    return cfg;
}

json config_echo(const RunConfig& cfg) {
    json j = {
        {"backbone", cfg.backbone},
        {"regime", to_string(cfg.regime)},
        {"epochs", cfg.train.max_epochs},
        {"patience", cfg.train.patience},
        {"batch_size", cfg.train.batch_size},
        {"lr", cfg.train.learning_rate},
        {"seed", cfg.train.seed},
        {"min_delta", cfg.train.min_delta},
        {"adam", {{"beta1", cfg.train.adam.beta1}, {"beta2", cfg.train.adam.beta2}, {"epsilon", cfg.train.adam.epsilon}}},
        {"head", baa::to_json(cfg.head)},
        {"preprocess", baa::to_json(cfg.resolved_preprocess())},
        {"augment", baa::to_json(cfg.augment)},
        {"split", {{"train", cfg.split.train}, {"val", cfg.split.val}, {"test", cfg.split.test}}},
        {"strict", cfg.strict},
    };
    return j;
}

json to_json(const RunConfig& cfg) {
    json j = config_echo(cfg);
    auto path = [](const std::optional<fs::path>& p) { return p ? json(p->string()) : json(nullptr); };
    j["csv"] = path(cfg.csv);
    j["images"] = path(cfg.images);
    j["out"] = path(cfg.out);
    j["split_file"] = path(cfg.split_file);
    j["weights_dir"] = path(cfg.weights_dir);
    return j;
}

std::string run_dir_name(const RunConfig& cfg) {
    return cfg.backbone + (cfg.regime == Regime::full ? "_full" : "_frozen");
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Bone age assessment experiment toolkit", "baa"};
    app.require_subcommand(1);

    std::string stats_csv, stats_images, stats_out;
    int bin_width = 12, band_width = 24;
    bool stats_no_strict = false;
    auto* stats = app.add_subcommand("stats", "Dataset statistics, distribution plots and bias report");
    stats->add_option("--csv", stats_csv, "Manifest CSV")->required();
    stats->add_option("--images", stats_images, "Image directory")->required();
    stats->add_option("--out", stats_out, "Output directory")->required();
    stats->add_option("--bin-width", bin_width, "Histogram bin width in months")->capture_default_str();
    stats->add_option("--band-width", band_width, "Bias-report band width in months")->capture_default_str();
    stats->add_flag("--no-strict", stats_no_strict, "Do not verify image files");

    std::string synth_out;
    std::size_t synth_n = 64;
    std::uint64_t synth_seed = 0;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic brightness-coded dataset");
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--n", synth_n, "Number of images")->capture_default_str();
    synth->add_option("--seed", synth_seed, "Generator seed")->capture_default_str();

    RunFlags split_flags, train_flags, eval_flags;
    auto* split = app.add_subcommand("split", "Draw a seeded train/val/test split");
    split_flags.attach(split);
    auto* train_cmd = app.add_subcommand("train", "Train a backbone + regression head");
    train_flags.attach(train_cmd);
    std::string checkpoint;
    auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint on the test split");
    eval_cmd->add_option("--checkpoint", checkpoint, "Run directory or checkpoint.bin")->required();
    eval_flags.attach(eval_cmd);

    std::vector<std::string> run_dirs;
    std::optional<std::string> compare_out;
    auto* compare = app.add_subcommand("compare", "Build the MAE comparison table across runs");
    compare->add_option("run_dirs", run_dirs, "Run directories containing metrics.json")->required();
    compare->add_option("--out", compare_out, "Directory for comparison.md / comparison.json");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(std::move(reversed));
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << app.help();
            return kExitOk;
        }
        err << "error: " << e.what() << '\n';
        return kExitInput;
    }

    try {
        if (*stats)
            return cmd_stats(stats_csv, stats_images, stats_out, bin_width, band_width, !stats_no_strict, out);
        if (*synth)
            return cmd_synth(synth_out, synth_n, synth_seed, out);
        if (*split)
            return cmd_split(split_flags.resolve(), out);
        if (*train_cmd)
            return cmd_train(train_flags.resolve(), out, err);
        if (*eval_cmd)
            return cmd_evaluate(checkpoint, eval_flags, out);
        if (*compare)
            return cmd_compare(run_dirs, compare_out, out);
    } catch (const NonFiniteLoss& e) {
        err << "error: " << e.what() << '\n';
        return kExitDiverged;
    } catch (const InputError& e) {
        err << "error: " << e.what() << '\n';
        return kExitInput;
    }
    return kExitInput;
}

} // namespace baa::cli
