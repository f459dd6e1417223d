#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sprobe/analysis.hpp"
#include "sprobe/attribution.hpp"
#include "sprobe/dataset.hpp"
#include "sprobe/network.hpp"
#include "sprobe/trainer.hpp"

namespace sprobe {

std::string tool_version();

struct CorpusSource {
    enum class Kind { synthetic, directory };
    Kind kind = Kind::synthetic;
    std::size_t n_per_class = 2000;  // synthetic only
    std::uint64_t seed = 7;
    SynthParams synth;
    std::filesystem::path path;                   // directory only
    std::array<std::string, 2> class_dirs{"cat", "dog"};  // label 0, label 1
};

struct AttributionConfig {
    std::size_t samples_per_class = 100;  // 0 explains every test sample
    AttributionOptions options;
    std::uint64_t seed = 11;
    std::size_t heatmaps = 4;  // samples per model exported as PGM
    bool svd = true;
};

struct AnalysisConfig {
    std::size_t permutations = 10000;
    double bin_width = 0.1;
    std::uint64_t seed = 13;
};

struct ExperimentConfig {
    Study study = Study::watermark;
    std::vector<Setting> settings{Setting::confounded, Setting::balanced, Setting::baseline};
    std::size_t height = 64;
    std::size_t width = 64;
    CorpusSource corpus;
    std::vector<std::uint64_t> split_seeds{0, 1};
    std::vector<std::uint64_t> model_seeds{0, 1};
    std::uint64_t mask_seed = 99;
    PlacementMode placement = PlacementMode::fixed;
    Encoding encoding = Encoding::standard;
    CnnArchitecture architecture;
    TrainConfig train;
    std::vector<Method> methods = all_methods();
    AttributionConfig attribution;
    AnalysisConfig analysis;
    std::filesystem::path output_dir = "runs/default";
    bool emit_images = false;

    // Unknown keys and malformed values raise ConfigError naming the key.
    static ExperimentConfig from_json(const nlohmann::json& doc);
    nlohmann::json to_json() const;
    void validate() const;
    void apply_seed_offset(std::uint64_t offset);
    NetworkSpec network() const;
};

ExperimentConfig load_config(const std::filesystem::path& path);

enum class Stage { gen, train, attribute, analyze, report };
std::string to_string(Stage stage);

// FNV-1a over the canonical JSON of the config fields a stage depends on
// (cumulative over upstream stages). Output paths are excluded.
std::string stage_hash(const ExperimentConfig& cfg, Stage stage);
std::string config_hash(const ExperimentConfig& cfg);
std::string fnv1a_hex(const std::string& text);

// One trained-model cell of the experiment grid.
struct Cell {
    Setting setting = Setting::baseline;
    std::uint64_t split_seed = 0;
    std::uint64_t model_seed = 0;
    std::string id() const;
};

struct RunOptions {
    std::size_t threads = 1;
    bool force = false;  // recompute stages even when their stamp matches
    std::function<void(const std::string&)> log;
};

struct StageTiming {
    Stage stage = Stage::gen;
    double seconds = 0.0;
    bool skipped = false;
};

struct RunRecord {
    std::string run_id;
    std::string config_hash;
    std::string tool_version;
    std::vector<std::string> artifacts;  // relative to the output directory
    std::vector<StageTiming> timings;
    nlohmann::json to_json() const;
};

void write_auroc_csv(const std::filesystem::path& path, const std::vector<AurocRecord>& records);
std::vector<AurocRecord> read_auroc_csv(const std::filesystem::path& path);

class Pipeline {
public:
    Pipeline(ExperimentConfig cfg, RunOptions options = {});

    // Each stage checks its upstream stamp (MissingArtifactError naming the
    // producing command otherwise) and returns false when it was already up
    // to date and skipped.
    bool gen();
    bool train();
    bool attribute();
    bool analyze();
    bool report();
    RunRecord run_all();

    const ExperimentConfig& config() const noexcept { return cfg_; }
    const std::filesystem::path& out() const noexcept { return out_; }
    std::vector<Cell> cells() const;

    std::filesystem::path checkpoint_path(const Cell& cell) const;
    std::filesystem::path metrics_path() const { return out_ / "metrics.csv"; }
    std::filesystem::path auroc_path() const { return out_ / "auroc.csv"; }
    std::filesystem::path r2_path() const { return out_ / "r2.csv"; }
    std::filesystem::path summary_path() const { return out_ / "summary.csv"; }
    std::filesystem::path histograms_path() const { return out_ / "histograms.csv"; }
    std::filesystem::path report_path() const { return out_ / "report.md"; }
    std::filesystem::path run_record_path() const { return out_ / "run_record.json"; }

    // Deterministic reconstruction of the data the stages operate on.
    const std::vector<ImageSample>& base_corpus();
    const StudyDesign& design();
    DatasetSplit split(Setting setting, std::uint64_t split_seed);

private:
    void log(const std::string& msg) const;
    bool up_to_date(Stage stage) const;
    void require(Stage upstream, Stage consumer) const;
    void stamp(Stage stage) const;
    std::filesystem::path stamp_path(Stage stage) const;

    ExperimentConfig cfg_;
    RunOptions options_;
    std::filesystem::path out_;
    NetworkSpec spec_;
    std::vector<ImageSample> base_;
    bool base_ready_ = false;
    StudyDesign design_;
    bool design_ready_ = false;
};

}  // namespace sprobe
