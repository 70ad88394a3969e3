#include "dyncap/serialize.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <variant>

namespace dyncap::ser {
namespace {

// File layout (little-endian throughout):
//   magic "DCM1", u32 version = 1, u32 layer count, then per layer:
//     u8 kind (0 fixed, 1 dynamic, 2 adaptive)
//     u8 activation (0 identity, 1 tanh, 2 sigmoid)
//     u8 has_bias, u8 noise_enabled (dynamic only, else 0)
//     u32 in, u32 out, u32 link (adaptive only, else 0)
//     f64 scalar: output_scale (fixed) or lambda_min (dynamic), else 0
//     f64[in*out] weight, f64[out] bias when has_bias,
//     dynamic only: f64[out] lambdas, f64[out] sigma_ema
// No trailing bytes are allowed.

constexpr char kMagic[4] = {'D', 'C', 'M', '1'};
constexpr std::uint32_t kVersion = 1;

class Writer {
  public:
    explicit Writer(const std::string& path) : path_(path), out_(path, std::ios::binary) {
        if (!out_) {
            throw std::runtime_error("cannot open '" + path + "' for writing");
        }
    }
    void bytes(const void* p, std::size_t n) {
        out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
        if (!out_) {
            throw std::runtime_error("write to '" + path_ + "' failed");
        }
    }
    void u8(std::uint8_t v) { bytes(&v, 1); }
    void u32(std::uint32_t v) { bytes(&v, 4); }
    void f64(double v) { bytes(&v, 8); }
    void tensor(const Tensor& t) { bytes(t.data().data(), t.numel() * sizeof(double)); }

  private:
    std::string path_;
    std::ofstream out_;
};

class Reader {
  public:
    explicit Reader(const std::string& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) {
            throw std::runtime_error("cannot open '" + path + "' for reading");
        }
    }
    void bytes(void* p, std::size_t n) {
        in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
        if (in_.gcount() != static_cast<std::streamsize>(n)) {
            throw std::runtime_error("'" + path_ + "' is truncated");
        }
    }
    std::uint8_t u8() {
        std::uint8_t v;
        bytes(&v, 1);
        return v;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        bytes(&v, 4);
        return v;
    }
    double f64() {
        double v;
        bytes(&v, 8);
        return v;
    }
    void fill(Tensor& t) { bytes(t.data().data(), t.numel() * sizeof(double)); }
    bool at_end() {
        in_.peek();
        return in_.eof();
    }
    const std::string& path() const { return path_; }

  private:
    std::string path_;
    std::ifstream in_;
};

}  // namespace

void save_model(const nn::ModelGraph& model, const std::string& path) {
    Writer w(path);
    w.bytes(kMagic, 4);
    w.u32(kVersion);
    w.u32(static_cast<std::uint32_t>(model.layer_count()));
    for (std::size_t i = 0; i < model.layer_count(); ++i) {
        const nn::Layer& layer = model.layer(i);
        if (const auto* f = std::get_if<nn::FixedLinear>(&layer.impl)) {
            w.u8(0);
            w.u8(static_cast<std::uint8_t>(layer.act));
            w.u8(f->has_bias ? 1 : 0);
            w.u8(0);
            w.u32(static_cast<std::uint32_t>(f->weight.dim(0)));
            w.u32(static_cast<std::uint32_t>(f->weight.dim(1)));
            w.u32(0);
            w.f64(f->output_scale);
            w.tensor(f->weight);
            if (f->has_bias) {
                w.tensor(f->bias);
            }
        } else if (const auto* d = std::get_if<nn::DynamicLinear>(&layer.impl)) {
            w.u8(1);
            w.u8(static_cast<std::uint8_t>(layer.act));
            w.u8(d->has_bias ? 1 : 0);
            w.u8(d->gate.noise_enabled ? 1 : 0);
            w.u32(static_cast<std::uint32_t>(d->weight.dim(0)));
            w.u32(static_cast<std::uint32_t>(d->weight.dim(1)));
            w.u32(0);
            w.f64(d->gate.lambda_min);
            w.tensor(d->weight);
            if (d->has_bias) {
                w.tensor(d->bias);
            }
            w.tensor(d->gate.lambdas);
            w.tensor(d->gate.sigma_ema);
        } else {
            const auto& a = std::get<nn::AdaptiveLinear>(layer.impl);
            w.u8(2);
            w.u8(static_cast<std::uint8_t>(layer.act));
            w.u8(a.has_bias ? 1 : 0);
            w.u8(0);
            w.u32(static_cast<std::uint32_t>(a.weight.dim(0)));
            w.u32(static_cast<std::uint32_t>(a.weight.dim(1)));
            w.u32(static_cast<std::uint32_t>(a.link));
            w.f64(0.0);
            w.tensor(a.weight);
            if (a.has_bias) {
                w.tensor(a.bias);
            }
        }
    }
}

nn::ModelGraph load_model(const std::string& path) {
    Reader r(path);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw std::runtime_error("'" + path + "' is not a model file (bad magic)");
    }
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw std::runtime_error("'" + path + "' has unsupported model version " +
                                 std::to_string(version));
    }
    const std::uint32_t n_layers = r.u32();

    nn::ModelGraph model;
    for (std::uint32_t i = 0; i < n_layers; ++i) {
        const std::uint8_t kind = r.u8();
        const std::uint8_t act_raw = r.u8();
        const bool has_bias = r.u8() != 0;
        const std::uint8_t extra = r.u8();
        const std::uint32_t in = r.u32();
        const std::uint32_t out = r.u32();
        const std::uint32_t link = r.u32();
        const double scalar = r.f64();
        if (kind > 2 || act_raw > 2) {
            throw std::runtime_error("'" + path + "' has a corrupt layer record");
        }
        const auto act = static_cast<nn::Activation>(act_raw);

        if (kind == 0) {
            model.add_fixed(in, out, has_bias, act, scalar);
            auto& f = std::get<nn::FixedLinear>(model.layer(i).impl);
            r.fill(f.weight);
            if (has_bias) {
                r.fill(f.bias);
            }
        } else if (kind == 1) {
            model.add_dynamic(in, out, has_bias, act, scalar);
            auto& d = std::get<nn::DynamicLinear>(model.layer(i).impl);
            d.gate.noise_enabled = extra != 0;
            r.fill(d.weight);
            if (has_bias) {
                r.fill(d.bias);
            }
            r.fill(d.gate.lambdas);
            r.fill(d.gate.sigma_ema);
        } else {
            model.add_adaptive(out, has_bias, act);
            auto& a = std::get<nn::AdaptiveLinear>(model.layer(i).impl);
            if (a.link != link || a.weight.dim(0) != in) {
                throw std::runtime_error("'" + path + "' has an adaptive layer whose link " +
                                         "does not match the preceding layers");
            }
            r.fill(a.weight);
            if (has_bias) {
                r.fill(a.bias);
            }
        }
    }
    if (!r.at_end()) {
        throw std::runtime_error("'" + path + "' has trailing bytes");
    }
    return model;
}

}  // namespace dyncap::ser
