#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "sprobe/checkpoint.hpp"
#include "sprobe/errors.hpp"
#include "sprobe/experiment.hpp"
#include "sprobe/image_io.hpp"

namespace sprobe {

namespace fs = std::filesystem;
using nlohmann::json;

std::string Cell::id() const {
    return to_string(setting) + "_s" + std::to_string(split_seed) + "_m" + std::to_string(model_seed);
}

namespace {

// Runs fn(0..n-1) on up to `threads` workers; the first exception wins.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> workers;
    for (std::size_t t = 0; t < std::min(threads, n); ++t) {
        workers.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                    next = n;
                }
            }
        });
    }
    for (auto& w : workers) w.join();
    if (error) std::rethrow_exception(error);
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    f << text;
    if (!f) throw IoError("write failed for " + path.string());
}

json read_json(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw MissingArtifactError(path.string() + " not found");
    try {
        return json::parse(f);
    } catch (const json::parse_error& e) {
        throw MissingArtifactError(path.string() + " is corrupt: " + e.what());
    }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fixed(double v, int digits) {
    std::ostringstream ss;
    ss.setf(std::ios::fixed);
    ss.precision(digits);
    ss << v;
    return ss.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// AUROC records

void write_auroc_csv(const fs::path& path, const std::vector<AurocRecord>& records) {
    std::ostringstream ss;
    ss << "train_setting,test_setting,split_seed,model_seed,auroc\n";
    for (const auto& r : records) {
        ss << to_string(r.train_setting) << ',' << to_string(r.test_setting) << ',' << r.split_seed << ','
           << r.model_seed << ',' << format_double(r.auroc) << '\n';
    }
    write_text(path, ss.str());
}

std::vector<AurocRecord> read_auroc_csv(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw MissingArtifactError(path.string() + " not found; run the analyze command first");
    std::string line;
    std::getline(f, line);
    if (line != "train_setting,test_setting,split_seed,model_seed,auroc") {
        throw MissingArtifactError(path.string() + " has an unexpected header");
    }
    std::vector<AurocRecord> out;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ls(line);
        std::string field;
        while (std::getline(ls, field, ',')) fields.push_back(field);
        if (fields.size() != 5) throw MissingArtifactError(path.string() + ": malformed row '" + line + "'");
        try {
            out.push_back({parse_setting(fields[0]), parse_setting(fields[1]), std::stoull(fields[2]),
                           std::stoull(fields[3]), std::stod(fields[4])});
        } catch (const std::logic_error&) {
            throw MissingArtifactError(path.string() + ": malformed row '" + line + "'");
        }
    }
    return out;
}

json RunRecord::to_json() const {
    json t = json::array();
    for (const auto& s : timings) {
        t.push_back({{"stage", to_string(s.stage)}, {"seconds", s.seconds}, {"skipped", s.skipped}});
    }
    return {{"run_id", run_id},     {"config_hash", config_hash}, {"tool_version", tool_version},
            {"artifacts", artifacts}, {"timings", t}};
}

// ---------------------------------------------------------------------------
// Pipeline plumbing

Pipeline::Pipeline(ExperimentConfig cfg, RunOptions options)
    : cfg_(std::move(cfg)), options_(std::move(options)), out_(cfg_.output_dir), spec_(cfg_.network()) {
    cfg_.validate();
    if (options_.threads == 0) options_.threads = 1;
}

void Pipeline::log(const std::string& msg) const {
    if (options_.log) options_.log(msg);
}

std::vector<Cell> Pipeline::cells() const {
    std::vector<Cell> out;
    for (Setting s : cfg_.settings) {
        for (auto split : cfg_.split_seeds) {
            for (auto model : cfg_.model_seeds) out.push_back({s, split, model});
        }
    }
    return out;
}

fs::path Pipeline::checkpoint_path(const Cell& cell) const { return out_ / "models" / (cell.id() + ".ckpt"); }

fs::path Pipeline::stamp_path(Stage stage) const { return out_ / "stamps" / (to_string(stage) + ".json"); }

bool Pipeline::up_to_date(Stage stage) const {
    const fs::path p = stamp_path(stage);
    if (!fs::exists(p)) return false;
    try {
        return read_json(p).value("hash", "") == stage_hash(cfg_, stage);
    } catch (const MissingArtifactError&) {
        return false;
    }
}

void Pipeline::require(Stage upstream, Stage consumer) const {
    const fs::path p = stamp_path(upstream);
    const std::string hint = "; run `salience-probe " + to_string(upstream) + " --config <config>` first";
    if (!fs::exists(p)) {
        throw MissingArtifactError(to_string(consumer) + " needs the output of the " + to_string(upstream) +
                                   " stage in " + out_.string() + " (" + p.string() + " missing)" + hint);
    }
    const std::string found = read_json(p).value("hash", "");
    const std::string expected = stage_hash(cfg_, upstream);
    if (found != expected) {
        throw MissingArtifactError("artifacts of the " + to_string(upstream) + " stage in " + out_.string() +
                                   " were produced by a different configuration (hash " + found + ", expected " +
                                   expected + ")" + hint);
    }
}

void Pipeline::stamp(Stage stage) const {
    const json j = {{"stage", to_string(stage)},
                    {"hash", stage_hash(cfg_, stage)},
                    {"config_hash", config_hash(cfg_)},
                    {"tool_version", tool_version()}};
    write_text(stamp_path(stage), j.dump(2) + "\n");
}

const std::vector<ImageSample>& Pipeline::base_corpus() {
    if (!base_ready_) {
        if (cfg_.corpus.kind == CorpusSource::Kind::synthetic) {
            base_ = synth_corpus(cfg_.corpus.n_per_class, cfg_.height, cfg_.width, cfg_.corpus.synth,
                                 cfg_.corpus.seed);
        } else {
            base_ = load_directory(cfg_.corpus.path, cfg_.corpus.class_dirs, cfg_.height, cfg_.width);
        }
        base_ready_ = true;
    }
    return base_;
}

const StudyDesign& Pipeline::design() {
    if (!design_ready_) {
        design_.study = cfg_.study;
        design_.placement = cfg_.placement;
        design_.encoding = cfg_.encoding;
        if (cfg_.study == Study::watermark) {
            const MaskGeometry g = scaled_mask_geometry(cfg_.height, cfg_.width);
            Rng rng = make_rng({cfg_.mask_seed});
            design_.mask = make_mask(g.height, g.width, g.foreground_fraction, rng);
        }
        design_ready_ = true;
    }
    return design_;
}

DatasetSplit Pipeline::split(Setting setting, std::uint64_t split_seed) {
    return make_splits(base_corpus(), split_seed, SettingSpec::make(cfg_.study, setting), design());
}

// ---------------------------------------------------------------------------
// gen

bool Pipeline::gen() {
    if (!options_.force && up_to_date(Stage::gen)) {
        log("gen: up to date");
        return false;
    }
    fs::create_directories(out_);
    write_text(out_ / "config.json", cfg_.to_json().dump(2) + "\n");
    log("gen: building base corpus");
    base_corpus();
    if (cfg_.study == Study::watermark) {
        const WatermarkMask& m = design().mask;
        Tensor vis({m.height, m.width});
        for (std::size_t i = 0; i < vis.size(); ++i) vis[i] = 1.0 - m.values[i];
        write_pgm(out_ / "mask.pgm", vis);
    }

    std::ostringstream prevalence;
    prevalence << "setting,split_seed,part,class,n,watermarked,dark,base,bright\n";
    auto tally = [&](const std::string& setting, std::uint64_t seed, const std::string& part,
                     const std::vector<ImageSample>& samples) {
        for (int cls = 0; cls < 2; ++cls) {
            std::size_t n = 0, wm = 0, regime[3] = {0, 0, 0};
            for (const auto& s : samples) {
                if (s.label != cls) continue;
                ++n;
                if (s.manipulation.watermark_applied) ++wm;
                if (s.manipulation.lightness_regime) ++regime[static_cast<int>(*s.manipulation.lightness_regime)];
            }
            prevalence << setting << ',' << seed << ',' << part << ',' << cls << ',' << n << ',' << wm << ','
                       << regime[0] << ',' << regime[1] << ',' << regime[2] << '\n';
        }
    };

    for (Setting s : cfg_.settings) {
        for (auto seed : cfg_.split_seeds) {
            const DatasetSplit sp = split(s, seed);
            const fs::path dir = out_ / "corpus" / to_string(s) / ("split" + std::to_string(seed));
            log("gen: writing " + dir.string());
            write_corpus(dir / "train", sp.train, cfg_.emit_images);
            write_corpus(dir / "val", sp.val, cfg_.emit_images);
            write_corpus(dir / "test", sp.test, cfg_.emit_images);
            tally(to_string(s), seed, "train", sp.train);
            tally(to_string(s), seed, "val", sp.val);
            tally(to_string(s), seed, "test", sp.test);
            for (const auto& [variant, samples] : sp.test_variants) {
                write_corpus(dir / ("test-" + variant), samples, cfg_.emit_images);
                tally(to_string(s), seed, "test-" + variant, samples);
            }
        }
    }
    write_text(out_ / "corpus" / "prevalence.csv", prevalence.str());
    stamp(Stage::gen);
    return true;
}

// ---------------------------------------------------------------------------
// train

bool Pipeline::train() {
    require(Stage::gen, Stage::train);
    if (!options_.force && up_to_date(Stage::train)) {
        log("train: up to date");
        return false;
    }
    const std::string hash = stage_hash(cfg_, Stage::train);
    fs::create_directories(out_ / "models");
    std::mutex log_mutex;

    for (Setting s : cfg_.settings) {
        for (auto split_seed : cfg_.split_seeds) {
            std::vector<Cell> group;
            for (auto m : cfg_.model_seeds) group.push_back({s, split_seed, m});
            std::vector<Cell> todo;
            for (const auto& cell : group) {
                const fs::path side = fs::path(checkpoint_path(cell)).replace_extension(".json");
                if (!options_.force && fs::exists(checkpoint_path(cell)) && fs::exists(side) &&
                    read_json(side).value("train_hash", "") == hash) {
                    log("train: " + cell.id() + " reused");
                    continue;
                }
                todo.push_back(cell);
            }
            if (todo.empty()) continue;
            const DatasetSplit data = split(s, split_seed);
            parallel_for(todo.size(), options_.threads, [&](std::size_t i) {
                const Cell& cell = todo[i];
                TrainConfig tc = cfg_.train;
                tc.model_seed = cell.model_seed;
                const auto t0 = std::chrono::steady_clock::now();
                ModelCheckpoint ck = sprobe::train(spec_, data, tc, [&](const EpochLog& e) {
                    std::lock_guard lock(log_mutex);
                    log("train: " + cell.id() + " epoch " + std::to_string(e.epoch) + "/" +
                        std::to_string(tc.epochs) + " loss " + fixed(e.train_loss, 4) + " val_auroc " +
                        fixed(e.val_auroc, 4));
                });
                save_params(checkpoint_path(cell), ck.params);
                json history = json::array();
                for (const auto& e : ck.history) {
                    history.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_auroc", e.val_auroc}});
                }
                const json side = {{"cell", cell.id()},
                                   {"setting", to_string(cell.setting)},
                                   {"split_seed", cell.split_seed},
                                   {"model_seed", cell.model_seed},
                                   {"best_epoch", ck.epoch},
                                   {"val_auroc", ck.val_auroc},
                                   {"history", history},
                                   {"train_hash", hash}};
                write_text(fs::path(checkpoint_path(cell)).replace_extension(".json"), side.dump(2) + "\n");
                std::lock_guard lock(log_mutex);
                log("train: " + cell.id() + " done in " + fixed(seconds_since(t0), 1) + " s, best epoch " +
                    std::to_string(ck.epoch) + " val_auroc " + fixed(ck.val_auroc, 4));
            });
        }
    }
    stamp(Stage::train);
    return true;
}

// ---------------------------------------------------------------------------
// attribute

namespace {

struct ComponentRow {
    std::string cell;
    Method method = Method::raw;
    double eigenvalue = 0.0;
    std::size_t iterations = 0;
    std::optional<double> riw;
};

struct CellAttribution {
    std::vector<RiwRecord> records;
    std::map<Method, std::size_t> excluded;
    std::vector<ComponentRow> components;
};

std::vector<std::size_t> select_samples(const std::vector<ImageSample>& test, std::size_t per_class) {
    std::vector<std::size_t> out;
    std::size_t taken[2] = {0, 0};
    for (std::size_t i = 0; i < test.size(); ++i) {
        const int c = test[i].label;
        if (per_class != 0 && taken[c] >= per_class) continue;
        ++taken[c];
        out.push_back(i);
    }
    return out;
}

}  // namespace

bool Pipeline::attribute() {
    require(Stage::train, Stage::attribute);
    if (!options_.force && up_to_date(Stage::attribute)) {
        log("attribute: up to date");
        return false;
    }
    for (const auto& cell : cells()) {
        if (!fs::exists(checkpoint_path(cell))) {
            throw MissingArtifactError("checkpoint " + checkpoint_path(cell).string() +
                                       " missing; run `salience-probe train --config <config>` first");
        }
    }
    const auto variants = test_variant_names(cfg_.study);
    const bool do_svd = cfg_.attribution.svd && cfg_.study == Study::watermark;
    const std::string svd_variant = "wm";
    std::mutex log_mutex;
    std::vector<CellAttribution> results;
    std::vector<Cell> order;

    for (Setting s : cfg_.settings) {
        for (auto split_seed : cfg_.split_seeds) {
            const DatasetSplit data = split(s, split_seed);
            const auto chosen = select_samples(data.test, cfg_.attribution.samples_per_class);
            std::vector<Cell> group;
            for (auto m : cfg_.model_seeds) group.push_back({s, split_seed, m});
            std::vector<CellAttribution> group_results(group.size());

            parallel_for(group.size(), options_.threads, [&](std::size_t gi) {
                const Cell& cell = group[gi];
                const auto t0 = std::chrono::steady_clock::now();
                const ParamSet params = load_params(checkpoint_path(cell), spec_);
                const Explainer explainer(spec_, params, cell.id());
                CellAttribution& res = group_results[gi];
                std::map<Method, std::vector<Tensor>> svd_maps;
                if (cfg_.attribution.heatmaps > 0) fs::create_directories(out_ / "heatmaps" / cell.id());
                if (do_svd) fs::create_directories(out_ / "components" / cell.id());

                for (std::size_t k = 0; k < chosen.size(); ++k) {
                    for (std::size_t vi = 0; vi < variants.size(); ++vi) {
                        const ImageSample& smp = data.test_variants.at(variants[vi])[chosen[k]];
                        std::vector<std::size_t> mask_idx;
                        if (cfg_.study == Study::watermark) {
                            mask_idx = watermark_pixel_indices(design_.mask, smp.manipulation.mask_origin.value(),
                                                               cfg_.height, cfg_.width);
                        }
                        const std::string name = sample_name(smp) + "-" + variants[vi];
                        for (std::size_t mi = 0; mi < cfg_.methods.size(); ++mi) {
                            const Method method = cfg_.methods[mi];
                            Rng rng = make_rng({cfg_.attribution.seed, cell.split_seed, cell.model_seed, smp.base_id,
                                                vi, static_cast<std::uint64_t>(method)});
                            AttributionMap am =
                                explainer.explain(method, smp.pixels, name, smp.label, cfg_.attribution.options, rng);
                            const Tensor mean_map = channel_mean_abs(am.values);
                            if (k < cfg_.attribution.heatmaps) {
                                write_pgm(out_ / "heatmaps" / cell.id() / (to_string(method) + "_" + name + ".pgm"),
                                          mean_map);
                            }
                            RiwRecord rec;
                            rec.study = cfg_.study;
                            rec.setting = cell.setting;
                            rec.split_seed = cell.split_seed;
                            rec.model_seed = cell.model_seed;
                            rec.method = method;
                            rec.sample_id = smp.base_id;
                            rec.cls = smp.label;
                            rec.variant = variants[vi];
                            try {
                                rec.value = cfg_.study == Study::watermark ? riw(mean_map, mask_idx) : ril(am.values);
                            } catch (const UndefinedMetricError&) {
                                ++res.excluded[method];
                                continue;
                            }
                            res.records.push_back(std::move(rec));
                            if (do_svd && variants[vi] == svd_variant) svd_maps[method].push_back(std::move(am.values));
                        }
                    }
                }

                for (Method method : cfg_.methods) {
                    auto it = svd_maps.find(method);
                    if (it == svd_maps.end() || it->second.size() < 2) continue;
                    const ComponentImage comp = svd_first_component(it->second);
                    write_pgm(out_ / "components" / cell.id() / (to_string(method) + ".pgm"), comp.image);
                    ComponentRow row{cell.id(), method, comp.eigenvalue, comp.iterations, std::nullopt};
                    if (cfg_.placement == PlacementMode::fixed) {
                        Rng unused = make_rng({0});
                        const PixelPos origin = place_mask(PlacementMode::fixed, cfg_.height, cfg_.width,
                                                           design_.mask.height, design_.mask.width, unused);
                        row.riw = riw(comp.image,
                                      watermark_pixel_indices(design_.mask, origin, cfg_.height, cfg_.width));
                    }
                    res.components.push_back(row);
                }
                std::lock_guard lock(log_mutex);
                log("attribute: " + cell.id() + " " + std::to_string(chosen.size()) + " samples in " +
                    fixed(seconds_since(t0), 1) + " s");
            });
            for (std::size_t gi = 0; gi < group.size(); ++gi) {
                order.push_back(group[gi]);
                results.push_back(std::move(group_results[gi]));
            }
        }
    }

    std::vector<RiwRecord> all;
    json excluded = json::object();
    std::ostringstream comps;
    comps << "cell,method,eigenvalue,iterations,riw\n";
    for (std::size_t i = 0; i < results.size(); ++i) {
        all.insert(all.end(), results[i].records.begin(), results[i].records.end());
        for (const auto& [m, n] : results[i].excluded) excluded[order[i].id()][to_string(m)] = n;
        for (const auto& c : results[i].components) {
            comps << c.cell << ',' << to_string(c.method) << ',' << format_double(c.eigenvalue) << ','
                  << c.iterations << ',' << (c.riw ? format_double(*c.riw) : std::string()) << '\n';
        }
    }
    write_metrics_csv(metrics_path(), all);
    if (do_svd) write_text(out_ / "components.csv", comps.str());
    const json summary = {{"records", all.size()},
                          {"excluded", excluded},
                          {"metric", cfg_.study == Study::watermark ? "riw" : "ril"}};
    write_text(out_ / "attribution.json", summary.dump(2) + "\n");
    stamp(Stage::attribute);
    return true;
}

// ---------------------------------------------------------------------------
// analyze

bool Pipeline::analyze() {
    require(Stage::attribute, Stage::analyze);
    if (!fs::exists(metrics_path())) {
        throw MissingArtifactError(metrics_path().string() +
                                   " missing; run `salience-probe attribute --config <config>` first");
    }
    if (!options_.force && up_to_date(Stage::analyze)) {
        log("analyze: up to date");
        return false;
    }
    const auto records = read_metrics_csv(metrics_path());
    const auto units = average_over_models(records);
    const auto summary = summary_table(units);
    write_summary_csv(summary_path(), summary);
    write_histogram_csv(histograms_path(), histogram(units, cfg_.analysis.bin_width));
    log("analyze: R^2 with " + std::to_string(cfg_.analysis.permutations) + " permutations");
    write_r2_csv(r2_path(), r2_table(units, cfg_.analysis.permutations, cfg_.analysis.seed));

    std::map<std::string, ParamSet> params;
    for (const auto& cell : cells()) {
        if (!fs::exists(checkpoint_path(cell))) {
            throw MissingArtifactError("checkpoint " + checkpoint_path(cell).string() +
                                       " missing; run `salience-probe train --config <config>` first");
        }
        params[cell.id()] = load_params(checkpoint_path(cell), spec_);
    }
    // (train setting, test setting, split, model) order.
    std::map<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t>, AurocRecord> ordered;
    for (std::size_t si = 0; si < cfg_.split_seeds.size(); ++si) {
        for (std::size_t ti = 0; ti < cfg_.settings.size(); ++ti) {
            const DatasetSplit data = split(cfg_.settings[ti], cfg_.split_seeds[si]);
            std::vector<std::tuple<std::size_t, std::size_t>> jobs;
            for (std::size_t ri = 0; ri < cfg_.settings.size(); ++ri) {
                for (std::size_t mi = 0; mi < cfg_.model_seeds.size(); ++mi) jobs.emplace_back(ri, mi);
            }
            std::vector<double> scores(jobs.size());
            parallel_for(jobs.size(), options_.threads, [&](std::size_t j) {
                const auto [ri, mi] = jobs[j];
                const Cell cell{cfg_.settings[ri], cfg_.split_seeds[si], cfg_.model_seeds[mi]};
                scores[j] = evaluate_auroc(spec_, params.at(cell.id()), data.test);
            });
            for (std::size_t j = 0; j < jobs.size(); ++j) {
                const auto [ri, mi] = jobs[j];
                ordered[{ri, ti, si, mi}] = {cfg_.settings[ri], cfg_.settings[ti], cfg_.split_seeds[si],
                                             cfg_.model_seeds[mi], scores[j]};
            }
            log("analyze: AUROC on " + to_string(cfg_.settings[ti]) + " test, split " +
                std::to_string(cfg_.split_seeds[si]));
        }
    }
    std::vector<AurocRecord> aurocs;
    for (const auto& [key, rec] : ordered) aurocs.push_back(rec);
    write_auroc_csv(auroc_path(), aurocs);
    stamp(Stage::analyze);
    return true;
}

// ---------------------------------------------------------------------------
// report

namespace {

std::string pm(double mean, double spread, int digits = 3) { return fixed(mean, digits) + " ± " + fixed(spread, digits); }

struct R2Entry {
    std::string method, subset, factor;
    double r2 = 0.0, p = 1.0;
    int direction = 0;
};

std::vector<R2Entry> read_r2(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw MissingArtifactError(path.string() + " not found; run the analyze command first");
    std::string line;
    std::getline(f, line);
    std::vector<R2Entry> out;
    while (std::getline(f, line)) {
        std::vector<std::string> v;
        std::stringstream ls(line);
        std::string field;
        while (std::getline(ls, field, ',')) v.push_back(field);
        if (v.size() != 8) continue;
        out.push_back({v[1], v[2], v[3], std::stod(v[4]), std::stod(v[6]), std::stoi(v[5])});
    }
    return out;
}

}  // namespace

bool Pipeline::report() {
    require(Stage::analyze, Stage::report);
    const auto aurocs = read_auroc_csv(auroc_path());
    const TransferMatrix tm = aggregate_transfer(aurocs);
    const auto units = average_over_models(read_metrics_csv(metrics_path()));
    const auto summary = summary_table(units);
    const auto r2 = read_r2(r2_path());
    const json attr = read_json(out_ / "attribution.json");
    const bool wm = cfg_.study == Study::watermark;
    const std::string metric = wm ? "RIW" : "RIL";

    std::ostringstream md;
    md << "# salience-probe report\n\n";
    md << "- config hash: `" << config_hash(cfg_) << "`\n";
    md << "- tool version: " << tool_version() << "\n";
    md << "- study: " << to_string(cfg_.study) << ", image " << cfg_.height << "x" << cfg_.width << ", "
       << cfg_.split_seeds.size() << " split(s) x " << cfg_.model_seeds.size() << " model seed(s), "
       << cfg_.train.epochs << " epochs\n";
    md << "- attributed test samples per class: "
       << (cfg_.attribution.samples_per_class == 0 ? std::string("all")
                                                    : std::to_string(cfg_.attribution.samples_per_class))
       << "\n\n";

    md << "## Test AUROC (mean ± std over splits and models)\n\n";
    md << "| trained on \\ tested on |";
    for (Setting t : cfg_.settings) md << ' ' << to_string(t) << " |";
    md << "\n|---|";
    for (std::size_t i = 0; i < cfg_.settings.size(); ++i) md << "---|";
    md << '\n';
    for (Setting r : cfg_.settings) {
        md << "| " << to_string(r) << " |";
        for (Setting t : cfg_.settings) {
            const auto c = tm.cell(r, t);
            md << ' ' << (c ? pm(c->mean, c->std) : std::string("n/a")) << " |";
        }
        md << '\n';
    }

    const auto variants = test_variant_names(cfg_.study);
    std::vector<std::string> columns;
    if (wm) {
        columns = {"wm", "no-wm", "wm-no-wm"};
    } else {
        columns = {"dark", "base", "bright", "dark-base", "bright-base"};
    }
    md << "\n## " << metric << " by method (mean ± SE, both classes)\n\n| method | training setting |";
    for (const auto& c : columns) md << ' ' << c << " |";
    md << "\n|---|---|";
    for (std::size_t i = 0; i < columns.size(); ++i) md << "---|";
    md << '\n';
    for (Method m : cfg_.methods) {
        for (Setting s : cfg_.settings) {
            md << "| " << to_string(m) << " | " << to_string(s) << " |";
            for (const auto& c : columns) {
                auto it = std::find_if(summary.begin(), summary.end(), [&](const SummaryRow& r) {
                    return r.method == m && r.setting == s && r.cls == -1 && r.variant == c;
                });
                md << ' ' << (it == summary.end() ? std::string("n/a") : pm(it->mean, it->se)) << " |";
            }
            md << '\n';
        }
    }

    md << "\n## Variance of " << metric << " explained (R², permutation p-value)\n\n";
    md << "| method | subset | factor | R² | direction | p |\n|---|---|---|---|---|---|\n";
    for (const auto& e : r2) {
        char p[32];
        std::snprintf(p, sizeof p, "%.2g", e.p);
        md << "| " << e.method << " | " << e.subset << " | " << e.factor << " | " << fixed(e.r2, 3) << " | "
           << (e.direction > 0 ? "+" : (e.direction < 0 ? "-" : "")) << " | " << p << " |\n";
    }

    md << "\n## Excluded samples (undefined metric)\n\n";
    const json& ex = attr.at("excluded");
    if (ex.empty()) {
        md << "None.\n";
    } else {
        md << "| model | method | count |\n|---|---|---|\n";
        for (auto it = ex.begin(); it != ex.end(); ++it) {
            for (auto jt = it.value().begin(); jt != it.value().end(); ++jt) {
                md << "| " << it.key() << " | " << jt.key() << " | " << jt.value().get<std::size_t>() << " |\n";
            }
        }
    }
    write_text(report_path(), md.str());
    log("report: wrote " + report_path().string());
    return true;
}

// ---------------------------------------------------------------------------
// run-all

RunRecord Pipeline::run_all() {
    RunRecord rec;
    rec.config_hash = config_hash(cfg_);
    rec.run_id = to_string(cfg_.study) + "-" + rec.config_hash.substr(0, 12);
    rec.tool_version = tool_version();
    const std::pair<Stage, bool (Pipeline::*)()> stages[] = {{Stage::gen, &Pipeline::gen},
                                                             {Stage::train, &Pipeline::train},
                                                             {Stage::attribute, &Pipeline::attribute},
                                                             {Stage::analyze, &Pipeline::analyze},
                                                             {Stage::report, &Pipeline::report}};
    for (const auto& [stage, fn] : stages) {
        const auto t0 = std::chrono::steady_clock::now();
        const bool ran = (this->*fn)();
        rec.timings.push_back({stage, seconds_since(t0), !ran});
    }
    std::set<std::string> artifacts;
    for (const char* name : {"config.json", "metrics.csv", "auroc.csv", "r2.csv", "summary.csv", "histograms.csv",
                             "report.md", "attribution.json", "components.csv", "mask.pgm", "corpus/prevalence.csv"}) {
        if (fs::exists(out_ / name)) artifacts.insert(name);
    }
    for (const auto& cell : cells()) {
        artifacts.insert(fs::relative(checkpoint_path(cell), out_).generic_string());
    }
    rec.artifacts.assign(artifacts.begin(), artifacts.end());
    write_text(run_record_path(), rec.to_json().dump(2) + "\n");
    return rec;
}

}  // namespace sprobe
