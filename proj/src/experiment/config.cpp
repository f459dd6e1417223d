#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <set>
#include <type_traits>

#include "sprobe/errors.hpp"
#include "sprobe/experiment.hpp"

#ifndef SPROBE_VERSION
#define SPROBE_VERSION "0.0.0"
#endif

namespace sprobe {

using nlohmann::json;

std::string tool_version() { return SPROBE_VERSION; }

namespace {

// Reads the keys of one JSON object, rejecting anything it was not asked for.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + " must be a JSON object");
    }

    static bool nonneg_int(const json& v) {
        return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
    }

    const json* find(const std::string& key) {
        auto it = j_.find(key);
        if (it == j_.end()) return nullptr;
        used_.insert(key);
        return &*it;
    }

    std::string path(const std::string& key) const { return where_ + "." + key; }

    template <class U>
        requires(std::is_unsigned_v<U> && !std::is_same_v<U, bool>)
    void get(const std::string& key, U& out) {
        if (const json* v = find(key)) {
            if (!nonneg_int(*v)) throw ConfigError(path(key) + " must be a nonnegative integer");
            out = v->get<U>();
        }
    }
    void get(const std::string& key, double& out) {
        if (const json* v = find(key)) {
            if (!v->is_number()) throw ConfigError(path(key) + " must be a number");
            out = v->get<double>();
        }
    }
    void get(const std::string& key, bool& out) {
        if (const json* v = find(key)) {
            if (!v->is_boolean()) throw ConfigError(path(key) + " must be true or false");
            out = v->get<bool>();
        }
    }
    void get(const std::string& key, std::string& out) {
        if (const json* v = find(key)) {
            if (!v->is_string()) throw ConfigError(path(key) + " must be a string");
            out = v->get<std::string>();
        }
    }
    template <class T>
    void get_list(const std::string& key, std::vector<T>& out) {
        const json* v = find(key);
        if (!v) return;
        if (!v->is_array()) throw ConfigError(path(key) + " must be an array");
        out.clear();
        for (const auto& e : *v) {
            if constexpr (std::is_same_v<T, std::string>) {
                if (!e.is_string()) throw ConfigError(path(key) + " entries must be strings");
            } else {
                if (!nonneg_int(e)) throw ConfigError(path(key) + " entries must be nonnegative integers");
            }
            out.push_back(e.get<T>());
        }
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            if (!used_.count(it.key())) throw ConfigError("unknown config key " + path(it.key()));
        }
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> used_;
};

template <class Parse>
auto parse_named(const std::string& where, const std::string& value, Parse parse) {
    try {
        return parse(value);
    } catch (const ConfigError& e) {
        throw ConfigError(where + ": " + e.what());
    }
}

json synth_json(const SynthParams& p) {
    return {{"round_min", p.round_min},     {"round_max", p.round_max},     {"square_min", p.square_min},
            {"square_max", p.square_max},   {"period0_min", p.period0_min}, {"period0_max", p.period0_max},
            {"period1_min", p.period1_min}, {"period1_max", p.period1_max}, {"noise_std", p.noise_std},
            {"clutter", p.clutter}};
}

std::vector<std::string> names_of(const std::vector<Setting>& v) {
    std::vector<std::string> out;
    for (auto s : v) out.push_back(to_string(s));
    return out;
}

std::vector<std::string> names_of(const std::vector<Method>& v) {
    std::vector<std::string> out;
    for (auto m : v) out.push_back(to_string(m));
    return out;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& doc) {
    ExperimentConfig cfg;
    ObjectReader root(doc, "config");

    std::string study = to_string(cfg.study);
    root.get("study", study);
    cfg.study = parse_named("config.study", study, parse_study);
    cfg.train = TrainConfig::for_study(cfg.study);

    std::vector<std::string> settings;
    root.get_list("settings", settings);
    if (root.find("settings")) {
        cfg.settings.clear();
        for (const auto& s : settings) cfg.settings.push_back(parse_named("config.settings", s, parse_setting));
    }

    if (const json* image = root.find("image")) {
        ObjectReader r(*image, "config.image");
        r.get("height", cfg.height);
        r.get("width", cfg.width);
        r.finish();
    }

    if (const json* corpus = root.find("corpus")) {
        ObjectReader r(*corpus, "config.corpus");
        std::string source = "synthetic";
        r.get("source", source);
        if (source == "synthetic") {
            cfg.corpus.kind = CorpusSource::Kind::synthetic;
        } else if (source == "directory") {
            cfg.corpus.kind = CorpusSource::Kind::directory;
        } else {
            throw ConfigError("config.corpus.source must be 'synthetic' or 'directory', got '" + source + "'");
        }
        r.get("n_per_class", cfg.corpus.n_per_class);
        r.get("seed", cfg.corpus.seed);
        std::string path;
        r.get("path", path);
        cfg.corpus.path = path;
        std::vector<std::string> dirs;
        r.get_list("class_dirs", dirs);
        if (r.find("class_dirs")) {
            if (dirs.size() != 2) throw ConfigError("config.corpus.class_dirs must list exactly two directories");
            cfg.corpus.class_dirs = {dirs[0], dirs[1]};
        }
        if (const json* synth = r.find("synthetic")) {
            ObjectReader s(*synth, "config.corpus.synthetic");
            SynthParams& p = cfg.corpus.synth;
            s.get("round_min", p.round_min);
            s.get("round_max", p.round_max);
            s.get("square_min", p.square_min);
            s.get("square_max", p.square_max);
            s.get("period0_min", p.period0_min);
            s.get("period0_max", p.period0_max);
            s.get("period1_min", p.period1_min);
            s.get("period1_max", p.period1_max);
            s.get("noise_std", p.noise_std);
            s.get("clutter", p.clutter);
            s.finish();
        }
        r.finish();
    }

    root.get_list("split_seeds", cfg.split_seeds);
    root.get_list("model_seeds", cfg.model_seeds);
    root.get("mask_seed", cfg.mask_seed);

    std::string placement = to_string(cfg.placement), encoding = to_string(cfg.encoding);
    root.get("placement", placement);
    root.get("encoding", encoding);
    cfg.placement = parse_named("config.placement", placement, parse_placement);
    cfg.encoding = parse_named("config.encoding", encoding, parse_encoding);

    if (const json* arch = root.find("architecture")) {
        ObjectReader r(*arch, "config.architecture");
        CnnArchitecture& a = cfg.architecture;
        r.get_list("conv_channels", a.conv_channels);
        r.get_list("kernel_sizes", a.kernel_sizes);
        r.get_list("pool_sizes", a.pool_sizes);
        r.get("batchnorm", a.batchnorm);
        r.get_list("dense_widths", a.dense_widths);
        r.get("dropout_layers", a.dropout_layers);
        r.get("dropout_rate", a.dropout_rate);
        r.finish();
    }

    if (const json* train = root.find("train")) {
        ObjectReader r(*train, "config.train");
        r.get("learning_rate", cfg.train.learning_rate);
        r.get("momentum", cfg.train.momentum);
        r.get("batch_size", cfg.train.batch_size);
        r.get("weight_decay", cfg.train.weight_decay);
        r.get("epochs", cfg.train.epochs);
        r.finish();
    }

    std::vector<std::string> methods;
    root.get_list("methods", methods);
    if (root.find("methods")) {
        cfg.methods.clear();
        for (const auto& m : methods) cfg.methods.push_back(parse_named("config.methods", m, parse_method));
    }

    if (const json* attr = root.find("attribution")) {
        ObjectReader r(*attr, "config.attribution");
        AttributionConfig& a = cfg.attribution;
        r.get("samples_per_class", a.samples_per_class);
        r.get("ig_steps", a.options.ig_steps);
        r.get("shap_samples", a.options.shap_samples);
        r.get("shap_noise", a.options.shap_noise);
        r.get("lrp_epsilon", a.options.lrp_epsilon);
        r.get("lrp_alpha", a.options.lrp_alpha);
        r.get("lrp_beta", a.options.lrp_beta);
        std::string target = "predicted";
        r.get("target", target);
        if (target != "predicted" && target != "label") {
            throw ConfigError("config.attribution.target must be 'predicted' or 'label'");
        }
        a.options.target_label = target == "label";
        r.get("seed", a.seed);
        r.get("heatmaps", a.heatmaps);
        r.get("svd", a.svd);
        r.finish();
    }

    if (const json* an = root.find("analysis")) {
        ObjectReader r(*an, "config.analysis");
        r.get("permutations", cfg.analysis.permutations);
        r.get("bin_width", cfg.analysis.bin_width);
        r.get("seed", cfg.analysis.seed);
        r.finish();
    }

    std::string out = cfg.output_dir.string();
    root.get("output_dir", out);
    cfg.output_dir = out;
    root.get("emit_images", cfg.emit_images);
    std::string schema;
    root.get("$schema", schema);  // tolerated for editor support
    root.finish();

    cfg.validate();
    return cfg;
}

json ExperimentConfig::to_json() const {
    json corpus_j = {{"source", corpus.kind == CorpusSource::Kind::synthetic ? "synthetic" : "directory"},
                     {"seed", corpus.seed}};
    if (corpus.kind == CorpusSource::Kind::synthetic) {
        corpus_j["n_per_class"] = corpus.n_per_class;
        corpus_j["synthetic"] = synth_json(corpus.synth);
    } else {
        corpus_j["path"] = corpus.path.string();
        corpus_j["class_dirs"] = {corpus.class_dirs[0], corpus.class_dirs[1]};
    }
    const auto& a = architecture;
    return {
        {"study", to_string(study)},
        {"settings", names_of(settings)},
        {"image", {{"height", height}, {"width", width}}},
        {"corpus", corpus_j},
        {"split_seeds", split_seeds},
        {"model_seeds", model_seeds},
        {"mask_seed", mask_seed},
        {"placement", to_string(placement)},
        {"encoding", to_string(encoding)},
        {"architecture",
         {{"conv_channels", a.conv_channels},
          {"kernel_sizes", a.kernel_sizes},
          {"pool_sizes", a.pool_sizes},
          {"batchnorm", a.batchnorm},
          {"dense_widths", a.dense_widths},
          {"dropout_layers", a.dropout_layers},
          {"dropout_rate", a.dropout_rate}}},
        {"train",
         {{"learning_rate", train.learning_rate},
          {"momentum", train.momentum},
          {"batch_size", train.batch_size},
          {"weight_decay", train.weight_decay},
          {"epochs", train.epochs}}},
        {"methods", names_of(methods)},
        {"attribution",
         {{"samples_per_class", attribution.samples_per_class},
          {"ig_steps", attribution.options.ig_steps},
          {"shap_samples", attribution.options.shap_samples},
          {"shap_noise", attribution.options.shap_noise},
          {"lrp_epsilon", attribution.options.lrp_epsilon},
          {"lrp_alpha", attribution.options.lrp_alpha},
          {"lrp_beta", attribution.options.lrp_beta},
          {"target", attribution.options.target_label ? "label" : "predicted"},
          {"seed", attribution.seed},
          {"heatmaps", attribution.heatmaps},
          {"svd", attribution.svd}}},
        {"analysis",
         {{"permutations", analysis.permutations}, {"bin_width", analysis.bin_width}, {"seed", analysis.seed}}},
        {"output_dir", output_dir.string()},
        {"emit_images", emit_images},
    };
}

namespace {

template <class T>
void require_unique(const std::vector<T>& v, const std::string& what) {
    if (v.empty()) throw ConfigError(what + " must not be empty");
    std::set<T> seen(v.begin(), v.end());
    if (seen.size() != v.size()) throw ConfigError(what + " contains duplicates");
}

}  // namespace

void ExperimentConfig::validate() const {
    require_unique(settings, "settings");
    require_unique(split_seeds, "split_seeds");
    require_unique(model_seeds, "model_seeds");
    require_unique(methods, "methods");
    if (height < 8 || width < 8) throw ConfigError("image must be at least 8x8");
    if (corpus.kind == CorpusSource::Kind::synthetic && corpus.n_per_class < 10) {
        throw ConfigError("corpus.n_per_class must be at least 10");
    }
    if (corpus.kind == CorpusSource::Kind::directory && corpus.path.empty()) {
        throw ConfigError("corpus.path is required for a directory corpus");
    }
    if (study == Study::lightness && encoding != Encoding::standard) {
        throw ConfigError("encoding inversion applies to the watermark study only");
    }
    train.validate();
    attribution.options.validate();
    if (!(analysis.bin_width > 0.0)) throw ConfigError("analysis.bin_width must be positive");
    network().validate();
}

void ExperimentConfig::apply_seed_offset(std::uint64_t offset) {
    for (auto& s : split_seeds) s += offset;
    for (auto& s : model_seeds) s += offset;
}

NetworkSpec ExperimentConfig::network() const {
    CnnArchitecture a = architecture;
    a.input_shape = {3, height, width};
    a.class_count = 2;
    return make_cnn(a);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read config " + path.string());
    json doc;
    try {
        doc = json::parse(f);
    } catch (const json::parse_error& e) {
        throw ConfigError("invalid JSON in " + path.string() + ": " + e.what());
    }
    return ExperimentConfig::from_json(doc);
}

std::string to_string(Stage stage) {
    switch (stage) {
        case Stage::gen: return "gen";
        case Stage::train: return "train";
        case Stage::attribute: return "attribute";
        case Stage::analyze: return "analyze";
        case Stage::report: return "report";
    }
    return "unknown";
}

std::string fnv1a_hex(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string stage_hash(const ExperimentConfig& cfg, Stage stage) {
    const json full = cfg.to_json();
    json subset;
    for (const char* key : {"study", "settings", "image", "corpus", "split_seeds", "mask_seed", "placement",
                            "encoding", "emit_images"}) {
        subset[key] = full.at(key);
    }
    if (stage != Stage::gen) {
        for (const char* key : {"architecture", "train", "model_seeds"}) subset[key] = full.at(key);
    }
    if (stage == Stage::attribute || stage == Stage::analyze || stage == Stage::report) {
        for (const char* key : {"methods", "attribution"}) subset[key] = full.at(key);
    }
    if (stage == Stage::analyze || stage == Stage::report) subset["analysis"] = full.at("analysis");
    subset["tool_version"] = tool_version();
    return fnv1a_hex(subset.dump());
}

std::string config_hash(const ExperimentConfig& cfg) { return stage_hash(cfg, Stage::report); }

}  // namespace sprobe
