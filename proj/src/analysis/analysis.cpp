#include "sprobe/analysis.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <tuple>

#include "sprobe/errors.hpp"
#include "sprobe/rng.hpp"

namespace sprobe {

std::vector<std::size_t> watermark_pixel_indices(const WatermarkMask& mask, PixelPos origin, std::size_t image_h,
                                                 std::size_t image_w) {
    if (origin.row + mask.height > image_h || origin.col + mask.width > image_w) {
        throw ConfigError("mask at (" + std::to_string(origin.row) + "," + std::to_string(origin.col) +
                          ") exceeds the image");
    }
    std::vector<std::size_t> out;
    out.reserve(mask.foreground.size());
    for (auto f : mask.foreground) {
        const std::size_t r = f / mask.width, c = f % mask.width;
        out.push_back((origin.row + r) * image_w + origin.col + c);
    }
    return out;
}

double riw(const Tensor& channel_mean, std::span<const std::size_t> mask_indices) {
    if (channel_mean.rank() != 2) throw ConfigError("riw expects an (H,W) channel-mean map");
    if (mask_indices.empty()) throw ConfigError("riw needs a nonempty mask");
    const std::size_t D = channel_mean.size();
    for (auto i : mask_indices) {
        if (i >= D) throw ConfigError("mask index " + std::to_string(i) + " outside the map");
    }
    // Means are taken about a reference value so a flat map gives exactly 1.
    const double ref = channel_mean[0];
    double inside = 0.0, total = 0.0;
    for (auto i : mask_indices) inside += channel_mean[i] - ref;
    for (double v : channel_mean.values()) total += v - ref;
    const double mean_in = ref + inside / static_cast<double>(mask_indices.size());
    const double mean_all = ref + total / static_cast<double>(D);
    if (!(mean_all > 0.0)) throw UndefinedMetricError("riw undefined for an all-zero map");
    return mean_in / mean_all;
}

double ril(const Tensor& hls_map) {
    if (hls_map.rank() != 3 || hls_map.dim(0) != 3) throw ConfigError("ril expects a (3,H,W) HLS map");
    const std::size_t hw = hls_map.dim(1) * hls_map.dim(2);
    double mass[3] = {0.0, 0.0, 0.0};
    for (std::size_t c = 0; c < 3; ++c) {
        const double* src = hls_map.data() + c * hw;
        for (std::size_t i = 0; i < hw; ++i) mass[c] += std::abs(src[i]);
    }
    const double total = mass[0] + mass[1] + mass[2];
    if (!(total > 0.0)) throw UndefinedMetricError("ril undefined for an all-zero map");
    return 3.0 * mass[1] / total;
}

ComponentImage svd_first_component(std::span<const Tensor> maps, const PowerIterationOptions& options) {
    if (maps.size() < 2) throw ConfigError("svd needs at least two maps");
    const Shape& shape = maps.front().shape();
    if (shape.size() != 3) throw ConfigError("svd expects (C,H,W) maps");
    for (const auto& m : maps) {
        if (m.shape() != shape) throw ConfigError("svd maps differ in shape");
    }
    const auto N = static_cast<Eigen::Index>(maps.size());
    const auto D = static_cast<Eigen::Index>(maps.front().size());

    // Rows are samples, i.e. the transpose of the feature-by-sample matrix.
    Eigen::MatrixXd at(N, D);
    for (Eigen::Index n = 0; n < N; ++n) {
        at.row(n) = Eigen::Map<const Eigen::RowVectorXd>(maps[static_cast<std::size_t>(n)].data(), D);
    }
    const Eigen::RowVectorXd mu = at.colwise().mean();
    at.rowwise() -= mu;

    Rng rng = make_rng({options.seed});
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd v(D);
    for (Eigen::Index i = 0; i < D; ++i) v[i] = normal(rng);
    v.normalize();

    double lambda = 0.0;
    std::size_t it = 0;
    bool converged = false;
    while (it < options.max_iterations) {
        ++it;
        const Eigen::VectorXd w = at.transpose() * (at * v);
        const double next = v.dot(w);
        const double norm = w.norm();
        if (!(norm > 0.0)) throw NumericError("svd: centered attribution matrix is zero");
        v = w / norm;
        if (it > 1 && std::abs(next - lambda) <= options.tolerance * std::abs(next)) {
            lambda = next;
            converged = true;
            break;
        }
        lambda = next;
    }
    if (!converged) {
        throw NumericError("svd power iteration did not converge after " + std::to_string(it) + " iterations");
    }

    // Fix the sign so the largest-magnitude entry is positive.
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0.0) v = -v;

    ComponentImage out;
    out.direction = Tensor(shape, std::vector<double>(v.data(), v.data() + D));
    out.image = channel_mean_abs(out.direction);
    out.eigenvalue = lambda;
    out.iterations = it;
    return out;
}

namespace {

double between_ss(std::span<const double> values, std::span<const int> levels, std::size_t k, double grand) {
    std::vector<double> sums(k, 0.0);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < values.size(); ++i) {
        sums[static_cast<std::size_t>(levels[i])] += values[i];
        ++counts[static_cast<std::size_t>(levels[i])];
    }
    double ss = 0.0;
    for (std::size_t g = 0; g < k; ++g) {
        const double d = sums[g] / static_cast<double>(counts[g]) - grand;
        ss += static_cast<double>(counts[g]) * d * d;
    }
    return ss;
}

}  // namespace

FactorResult factor_r2(std::span<const double> values, std::span<const int> levels, std::size_t permutations,
                       std::uint64_t seed, std::string factor) {
    if (values.size() != levels.size()) throw ConfigError("factor_r2: values and levels differ in length");
    int max_level = -1;
    for (int l : levels) {
        if (l < 0) throw ConfigError("factor_r2: negative level code");
        max_level = std::max(max_level, l);
    }
    const auto k = static_cast<std::size_t>(max_level + 1);
    std::vector<std::size_t> counts(k, 0);
    for (int l : levels) ++counts[static_cast<std::size_t>(l)];
    if (k < 2 || std::any_of(counts.begin(), counts.end(), [](std::size_t c) { return c == 0; })) {
        throw ConfigError("factor_r2: degenerate design, need >= 2 nonempty levels for '" + factor + "'");
    }

    FactorResult out;
    out.factor = std::move(factor);
    out.n = values.size();
    const double grand = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    std::vector<double> centered(values.begin(), values.end());
    for (double& v : centered) v -= grand;
    double total = 0.0;
    for (double v : centered) total += v * v;

    if (k == 2) {
        double m[2] = {0.0, 0.0};
        for (std::size_t i = 0; i < values.size(); ++i) m[levels[i]] += values[i];
        const double diff = m[0] / static_cast<double>(counts[0]) - m[1] / static_cast<double>(counts[1]);
        out.direction = diff > 0.0 ? 1 : (diff < 0.0 ? -1 : 0);
    }
    if (!(total > 0.0)) {
        out.r2 = 0.0;
        out.p_value = 1.0;
        return out;
    }
    out.r2 = std::clamp(between_ss(centered, levels, k, 0.0) / total, 0.0, 1.0);

    Rng rng = make_rng({seed, 0x9e3});
    std::vector<int> perm(levels.begin(), levels.end());
    std::size_t reached = 0;
    const double threshold = out.r2 * (1.0 - 1e-12);
    for (std::size_t p = 0; p < permutations; ++p) {
        std::shuffle(perm.begin(), perm.end(), rng);
        if (between_ss(centered, perm, k, 0.0) / total >= threshold) ++reached;
    }
    out.p_value = static_cast<double>(reached + 1) / static_cast<double>(permutations + 1);
    return out;
}

std::vector<SampleUnit> average_over_models(std::span<const RiwRecord> records) {
    using Key = std::tuple<int, int, std::uint64_t, int, std::uint64_t, std::string>;
    std::map<Key, SampleUnit> acc;
    for (const auto& r : records) {
        const Key key{static_cast<int>(r.study), static_cast<int>(r.setting), r.split_seed, static_cast<int>(r.method),
                      r.sample_id, r.variant};
        auto [it, fresh] = acc.try_emplace(key);
        SampleUnit& u = it->second;
        if (fresh) {
            u.study = r.study;
            u.setting = r.setting;
            u.split_seed = r.split_seed;
            u.method = r.method;
            u.sample_id = r.sample_id;
            u.cls = r.cls;
            u.variant = r.variant;
        }
        u.value += r.value;
        ++u.models;
    }
    std::vector<SampleUnit> out;
    out.reserve(acc.size());
    for (auto& [key, u] : acc) {
        u.value /= static_cast<double>(u.models);
        out.push_back(std::move(u));
    }
    return out;
}

namespace {

struct Moments {
    std::size_t n = 0;
    double sum = 0.0;
    std::vector<double> values;
    void add(double v) {
        ++n;
        sum += v;
        values.push_back(v);
    }
    double mean() const { return sum / static_cast<double>(n); }
    double se() const {
        if (n < 2) return 0.0;
        const double m = mean();
        double ss = 0.0;
        for (double v : values) ss += (v - m) * (v - m);
        return std::sqrt(ss / static_cast<double>(n - 1)) / std::sqrt(static_cast<double>(n));
    }
};

std::vector<std::pair<std::string, std::string>> difference_pairs(Study study) {
    if (study == Study::watermark) return {{"wm", "no-wm"}};
    return {{"dark", "base"}, {"bright", "base"}};
}

}  // namespace

std::vector<SummaryRow> summary_table(std::span<const SampleUnit> units) {
    using Key = std::tuple<int, int, std::string, int, int>;  // study, setting, variant, class, method
    std::map<Key, Moments> groups;
    auto add = [&](const SampleUnit& u, const std::string& variant, double v) {
        groups[{static_cast<int>(u.study), static_cast<int>(u.setting), variant, u.cls, static_cast<int>(u.method)}]
            .add(v);
        groups[{static_cast<int>(u.study), static_cast<int>(u.setting), variant, -1, static_cast<int>(u.method)}].add(
            v);
    };
    for (const auto& u : units) add(u, u.variant, u.value);

    // Paired differences over the same (setting, split, method, sample).
    using PairKey = std::tuple<int, int, std::uint64_t, int, std::uint64_t>;
    std::map<PairKey, std::map<std::string, const SampleUnit*>> paired;
    for (const auto& u : units) {
        paired[{static_cast<int>(u.study), static_cast<int>(u.setting), u.split_seed, static_cast<int>(u.method),
                u.sample_id}][u.variant] = &u;
    }
    for (const auto& [key, by_variant] : paired) {
        const SampleUnit& any = *by_variant.begin()->second;
        for (const auto& [a, b] : difference_pairs(any.study)) {
            auto ia = by_variant.find(a), ib = by_variant.find(b);
            if (ia == by_variant.end() || ib == by_variant.end()) continue;
            add(any, a + "-" + b, ia->second->value - ib->second->value);
        }
    }

    std::vector<SummaryRow> out;
    out.reserve(groups.size());
    for (const auto& [key, m] : groups) {
        SummaryRow row;
        row.study = static_cast<Study>(std::get<0>(key));
        row.setting = static_cast<Setting>(std::get<1>(key));
        row.variant = std::get<2>(key);
        row.cls = std::get<3>(key);
        row.method = static_cast<Method>(std::get<4>(key));
        row.n = m.n;
        row.mean = m.mean();
        row.se = m.se();
        out.push_back(std::move(row));
    }
    return out;
}

std::vector<HistogramRow> histogram(std::span<const SampleUnit> units, double bin_width) {
    if (!(bin_width > 0.0) || !std::isfinite(bin_width)) throw ConfigError("histogram bin width must be positive");
    using Key = std::tuple<int, int, int, std::string>;  // study, setting, method, variant
    std::map<Key, std::map<long long, std::size_t>> groups;
    for (const auto& u : units) {
        const auto bin = static_cast<long long>(std::floor(u.value / bin_width));
        ++groups[{static_cast<int>(u.study), static_cast<int>(u.setting), static_cast<int>(u.method), u.variant}][bin];
    }
    std::vector<HistogramRow> out;
    for (const auto& [key, bins] : groups) {
        const long long lo = bins.begin()->first, hi = bins.rbegin()->first;
        for (long long b = lo; b <= hi; ++b) {
            HistogramRow row;
            row.study = static_cast<Study>(std::get<0>(key));
            row.setting = static_cast<Setting>(std::get<1>(key));
            row.method = static_cast<Method>(std::get<2>(key));
            row.variant = std::get<3>(key);
            row.bin_lo = static_cast<double>(b) * bin_width;
            row.bin_hi = static_cast<double>(b + 1) * bin_width;
            auto it = bins.find(b);
            row.count = it == bins.end() ? 0 : it->second;
            out.push_back(std::move(row));
        }
    }
    return out;
}

namespace {

std::vector<std::string> variant_levels(Study study) {
    if (study == Study::watermark) return {"wm", "no-wm"};
    return {"dark", "base", "bright"};
}

std::uint64_t text_key(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

std::vector<R2Row> r2_table(std::span<const SampleUnit> units, std::size_t permutations, std::uint64_t seed) {
    using GroupKey = std::pair<int, int>;  // study, method
    std::map<GroupKey, std::vector<const SampleUnit*>> by_method;
    for (const auto& u : units) by_method[{static_cast<int>(u.study), static_cast<int>(u.method)}].push_back(&u);

    std::vector<R2Row> out;
    for (const auto& [key, members] : by_method) {
        const auto study = static_cast<Study>(key.first);
        const auto method = static_cast<Method>(key.second);
        const auto levels = variant_levels(study);
        const std::string manip = study == Study::watermark ? "wm" : "lightness";

        auto run = [&](const std::string& subset, const std::string& factor, auto in_subset, auto level_of) {
            std::vector<double> v;
            std::vector<int> l;
            for (const auto* u : members) {
                if (!in_subset(*u)) continue;
                const int code = level_of(*u);
                if (code < 0) continue;
                v.push_back(u->value);
                l.push_back(code);
            }
            if (v.empty()) return;
            std::vector<int> seen;
            for (int c : l) {
                if (std::find(seen.begin(), seen.end(), c) == seen.end()) seen.push_back(c);
            }
            if (seen.size() < 2) return;
            const std::uint64_t s = derive_seed({seed, static_cast<std::uint64_t>(key.first),
                                                 static_cast<std::uint64_t>(key.second), text_key(subset),
                                                 text_key(factor)});
            out.push_back({study, method, subset, factor_r2(v, l, permutations, s, factor)});
        };
        auto variant_code = [&](const SampleUnit& u) {
            auto it = std::find(levels.begin(), levels.end(), u.variant);
            return it == levels.end() ? -1 : static_cast<int>(it - levels.begin());
        };
        auto in_cb = [](const SampleUnit& u) {
            return u.setting == Setting::confounded || u.setting == Setting::balanced;
        };

        for (Setting s : {Setting::confounded, Setting::balanced, Setting::baseline}) {
            run(to_string(s), manip, [s](const SampleUnit& u) { return u.setting == s; }, variant_code);
        }
        run("confounded+balanced", manip, in_cb, variant_code);
        run("confounded+balanced", "setting", in_cb,
            [](const SampleUnit& u) { return u.setting == Setting::confounded ? 0 : 1; });
    }
    return out;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path.string());
    return f;
}

void close_csv(std::ofstream& f, const std::filesystem::path& path) {
    f.flush();
    if (!f) throw IoError("write failed for " + path.string());
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

constexpr const char* kMetricsHeader = "study,setting,split_seed,model_seed,method,sample_id,class,variant,value";

}  // namespace

void write_metrics_csv(const std::filesystem::path& path, std::span<const RiwRecord> records) {
    auto f = open_csv(path);
    f << kMetricsHeader << '\n';
    for (const auto& r : records) {
        f << to_string(r.study) << ',' << to_string(r.setting) << ',' << r.split_seed << ',' << r.model_seed << ','
          << to_string(r.method) << ',' << r.sample_id << ',' << r.cls << ',' << r.variant << ','
          << format_double(r.value) << '\n';
    }
    close_csv(f, path);
}

std::vector<RiwRecord> read_metrics_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw MissingArtifactError(path.string() + " not found; run the attribute command first");
    std::string line;
    if (!std::getline(f, line) || line != kMetricsHeader) {
        throw MissingArtifactError(path.string() + " has an unexpected header");
    }
    std::vector<RiwRecord> out;
    std::size_t line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto fields = split_fields(line);
        if (fields.size() != 9) {
            throw MissingArtifactError(path.string() + ":" + std::to_string(line_no) + ": expected 9 fields");
        }
        try {
            RiwRecord r;
            r.study = parse_study(fields[0]);
            r.setting = parse_setting(fields[1]);
            r.split_seed = std::stoull(fields[2]);
            r.model_seed = std::stoull(fields[3]);
            r.method = parse_method(fields[4]);
            r.sample_id = std::stoull(fields[5]);
            r.cls = std::stoi(fields[6]);
            r.variant = fields[7];
            r.value = std::stod(fields[8]);
            out.push_back(std::move(r));
        } catch (const std::logic_error&) {
            throw MissingArtifactError(path.string() + ":" + std::to_string(line_no) + ": malformed record");
        } catch (const ConfigError& e) {
            throw MissingArtifactError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

void write_summary_csv(const std::filesystem::path& path, std::span<const SummaryRow> rows) {
    auto f = open_csv(path);
    f << "study,setting,variant,class,method,n,mean,se\n";
    for (const auto& r : rows) {
        f << to_string(r.study) << ',' << to_string(r.setting) << ',' << r.variant << ','
          << (r.cls < 0 ? std::string("all") : std::to_string(r.cls)) << ',' << to_string(r.method) << ',' << r.n
          << ',' << format_double(r.mean) << ',' << format_double(r.se) << '\n';
    }
    close_csv(f, path);
}

void write_histogram_csv(const std::filesystem::path& path, std::span<const HistogramRow> rows) {
    auto f = open_csv(path);
    f << "study,setting,method,variant,bin_lo,bin_hi,count\n";
    for (const auto& r : rows) {
        f << to_string(r.study) << ',' << to_string(r.setting) << ',' << to_string(r.method) << ',' << r.variant
          << ',' << format_double(r.bin_lo) << ',' << format_double(r.bin_hi) << ',' << r.count << '\n';
    }
    close_csv(f, path);
}

void write_r2_csv(const std::filesystem::path& path, std::span<const R2Row> rows) {
    auto f = open_csv(path);
    f << "study,method,setting_subset,factor,r2,direction,p_value,n\n";
    for (const auto& r : rows) {
        f << to_string(r.study) << ',' << to_string(r.method) << ',' << r.setting_subset << ',' << r.result.factor
          << ',' << format_double(r.result.r2) << ',' << r.result.direction << ',' << format_double(r.result.p_value)
          << ',' << r.result.n << '\n';
    }
    close_csv(f, path);
}

}  // namespace sprobe
