#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "baa/data.hpp"
#include "baa/engine.hpp"
#include "baa/models.hpp"
#include "baa/transforms.hpp"

namespace baa::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitDiverged = 3;

/// Everything a training or evaluation run depends on.
struct RunConfig {
    std::optional<std::filesystem::path> csv;
    std::optional<std::filesystem::path> images;
    std::optional<std::filesystem::path> out;
    std::optional<std::filesystem::path> split_file;
    std::optional<std::filesystem::path> weights_dir;
    std::string backbone = "tiny_test";
    Regime regime = Regime::full;
    TrainConfig train;
    HeadConfig head;
    std::optional<PreprocessSpec> preprocess; // backbone default when unset
    AugmentParams augment;
    SplitSizes split;
    bool strict = true;

    /// Preprocess spec with the backbone default filled in.
    PreprocessSpec resolved_preprocess() const;
};

/// Overlays the keys present in `j` onto `cfg`. Unknown keys, at any
/// nesting level, raise ConfigError.
void apply_json(RunConfig& cfg, const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// Fully resolved config, including paths.
nlohmann::json to_json(const RunConfig& cfg);
/// Resolved config without filesystem paths; echoed into history files.
nlohmann::json config_echo(const RunConfig& cfg);

/// Name of the per-run artifact directory, e.g. `tiny_test_full`.
std::string run_dir_name(const RunConfig& cfg);

/// Entry point shared by the executable and the tests. `args` excludes the
/// program name. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace baa::cli
