#include "sprobe/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "sprobe/errors.hpp"

namespace sprobe {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u32(std::string& out, std::uint32_t v) {
    char buf[4];
    std::memcpy(buf, &v, 4);
    out.append(buf, 4);
}

void put_tensor(std::string& out, std::uint32_t layer, const Tensor& t) {
    if (t.empty()) return;
    put_u32(out, layer);
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(double));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v;
        std::memcpy(&v, bytes_.data() + pos_, 4);
        pos_ += 4;
        return v;
    }

    void doubles(double* dst, std::size_t n) {
        need(n * sizeof(double));
        std::memcpy(dst, bytes_.data() + pos_, n * sizeof(double));
        pos_ += n * sizeof(double);
    }

    void skip(std::size_t n) {
        need(n);
        pos_ += n;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) throw IoError("checkpoint truncated at byte " + std::to_string(pos_));
    }

    const std::string& bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::string encode_params(const ParamSet& params) {
    std::string out(kCheckpointMagic, 8);
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        const auto& lp = params.layers[i];
        const auto idx = static_cast<std::uint32_t>(i);
        put_tensor(out, idx, lp.weight);
        put_tensor(out, idx, lp.bias);
        put_tensor(out, idx, lp.running_mean);
        put_tensor(out, idx, lp.running_var);
    }
    return out;
}

ParamSet decode_params(const std::string& bytes, const NetworkSpec& spec) {
    if (bytes.size() < 8 || bytes.compare(0, 8, kCheckpointMagic, 8) != 0) {
        throw IoError("not a parameter checkpoint (bad magic)");
    }
    ParamSet params = ParamSet::zeros_like(spec);
    Reader in(bytes);
    in.skip(8);
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        auto& lp = params.layers[i];
        for (Tensor* t : {&lp.weight, &lp.bias, &lp.running_mean, &lp.running_var}) {
            if (t->empty()) continue;
            const std::uint32_t layer = in.u32();
            const std::uint32_t rank = in.u32();
            if (layer != i || rank != t->rank()) {
                throw IoError("checkpoint record for layer " + std::to_string(layer) + " does not match network layer " +
                              std::to_string(i));
            }
            Shape shape(rank);
            for (auto& d : shape) d = in.u32();
            if (shape != t->shape()) {
                throw IoError("checkpoint tensor " + shape_string(shape) + " does not match expected " +
                              shape_string(t->shape()) + " at layer " + std::to_string(i));
            }
            in.doubles(t->data(), t->size());
        }
    }
    if (!in.done()) throw IoError("trailing bytes after last checkpoint record");
    return params;
}

void save_params(const std::filesystem::path& path, const ParamSet& params) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    const std::string bytes = encode_params(params);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint " + path.string());
}

ParamSet load_params(const std::filesystem::path& path, const NetworkSpec& spec) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingArtifactError("checkpoint not found: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return decode_params(buf.str(), spec);
}

}  // namespace sprobe
