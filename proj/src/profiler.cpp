#include "dyncap/profiler.hpp"

#include <cstdio>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <variant>

namespace dyncap::profiler {
namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

struct Dims {
    const char* kind;
    std::size_t in, out;
    bool bias;
};

Dims layer_dims(const nn::Layer& layer) {
    if (const auto* f = std::get_if<nn::FixedLinear>(&layer.impl)) {
        return {"fixed", f->weight.dim(0), f->weight.dim(1), f->has_bias};
    }
    if (const auto* d = std::get_if<nn::DynamicLinear>(&layer.impl)) {
        return {"dynamic", d->weight.dim(0), d->weight.dim(1), d->has_bias};
    }
    const auto& a = std::get<nn::AdaptiveLinear>(layer.impl);
    return {"adaptive", a.weight.dim(0), a.weight.dim(1), a.has_bias};
}

double lambda_sum(const nn::DynamicLinear& d) {
    const auto vals = d.gate.lambdas.data();
    return std::accumulate(vals.begin(), vals.end(), 0.0);
}

}  // namespace

ProfileReport profile(const nn::ModelGraph& model, double frame_rate) {
    ProfileReport report;
    report.frame_rate = frame_rate;
    for (std::size_t i = 0; i < model.layer_count(); ++i) {
        const Dims d = layer_dims(model.layer(i));
        LayerProfile entry;
        entry.name = "layer" + std::to_string(i) + ":" + d.kind;
        entry.in_dim = d.in;
        entry.out_dim = d.out;
        entry.params = d.in * d.out + (d.bias ? d.out : 0);
        entry.flops_per_frame = 2 * d.in * d.out + (d.bias ? d.out : 0);
        report.total_params += entry.params;
        report.total_flops_per_frame += entry.flops_per_frame;
        report.layers.push_back(std::move(entry));
    }
    report.flops_per_second = static_cast<double>(report.total_flops_per_frame) * frame_rate;
    return report;
}

double effective_flops(const nn::ModelGraph& model) {
    double total = 0.0;
    for (std::size_t i = 0; i < model.layer_count(); ++i) {
        const nn::Layer& layer = model.layer(i);
        if (const auto* f = std::get_if<nn::FixedLinear>(&layer.impl)) {
            const double in = static_cast<double>(f->weight.dim(0));
            const double out = static_cast<double>(f->weight.dim(1));
            total += 2.0 * in * out + (f->has_bias ? out : 0.0);
        } else if (const auto* d = std::get_if<nn::DynamicLinear>(&layer.impl)) {
            const double in = static_cast<double>(d->weight.dim(0));
            const double out = lambda_sum(*d);
            total += 2.0 * in * out + (d->has_bias ? out : 0.0);
        } else {
            const auto& a = std::get<nn::AdaptiveLinear>(layer.impl);
            const auto& link = std::get<nn::DynamicLinear>(model.layer(a.link).impl);
            const double in = lambda_sum(link);
            const double out = static_cast<double>(a.weight.dim(1));
            total += 2.0 * in * out + (a.has_bias ? out : 0.0);
        }
    }
    return total;
}

std::string ProfileReport::table() const {
    std::ostringstream os;
    os << "complexity profile (1 MAC = 2 FLOPs)\n";
    os << std::left << std::setw(20) << "layer" << std::right << std::setw(8) << "in"
       << std::setw(8) << "out" << std::setw(12) << "params" << std::setw(14) << "flops/frame"
       << "\n";
    for (const LayerProfile& e : layers) {
        os << std::left << std::setw(20) << e.name << std::right << std::setw(8) << e.in_dim
           << std::setw(8) << e.out_dim << std::setw(12) << e.params << std::setw(14)
           << e.flops_per_frame << "\n";
    }
    os << std::left << std::setw(20) << "total" << std::right << std::setw(8) << ""
       << std::setw(8) << "" << std::setw(12) << total_params << std::setw(14)
       << total_flops_per_frame << "\n";
    os << "flops/s at " << fmt_double(frame_rate)
       << " frames/s: " << fmt_double(flops_per_second) << "\n";
    return os.str();
}

std::string ProfileReport::csv() const {
    std::ostringstream os;
    os << "# complexity profile (1 MAC = 2 FLOPs)\n";
    os << "# flops/s at " << fmt_double(frame_rate)
       << " frames/s: " << fmt_double(flops_per_second) << "\n";
    os << "layer,in_dim,out_dim,params,flops_per_frame\n";
    for (const LayerProfile& e : layers) {
        os << e.name << "," << e.in_dim << "," << e.out_dim << "," << e.params << ","
           << e.flops_per_frame << "\n";
    }
    os << "total,,," << total_params << "," << total_flops_per_frame << "\n";
    return os.str();
}

}  // namespace dyncap::profiler
