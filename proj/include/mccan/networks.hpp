#pragma once

// Generator / discriminator construction and resource accounting.
//
// The generator is the standard unpaired-translation skeleton: 7x7 ingress
// over reflection padding, two stride-2 downsamplings to a 4x-width
// bottleneck, a run of residual blocks, mirrored upsampling and a 7x7
// egress with tanh. The two architecture families differ only in the
// residual block count (9 for the single-generator baseline, 4 for the
// chained generators), which pins the published 11.4M / 11.0M inference
// parameter budgets.

#include <cstdint>
#include <memory>
#include <random>
#include <stdexcept>

#include "mccan/layers.hpp"

namespace mccan {

struct GeneratorSpec {
    int in_channels = 1;
    int base_width = 64;
    int n_resblocks = 9;
    int n_down = 2;
    int crop_size = 256;

    bool operator==(const GeneratorSpec&) const = default;
};

struct DiscriminatorSpec {
    int in_channels = 1;
    int base_width = 64;
    int n_layers = 4; // stride-2 stages; patch map side = input / 2^n_layers

    bool operator==(const DiscriminatorSpec&) const = default;
};

inline GeneratorSpec ccadn_generator_spec() { return {1, 64, 9, 2, 256}; }
inline GeneratorSpec mccan_generator_spec() { return {1, 64, 4, 2, 256}; }

inline Sequential make_generator(const GeneratorSpec& spec, std::mt19937_64& rng) {
    if (spec.in_channels < 1 || spec.base_width < 1 || spec.n_resblocks < 1 || spec.n_down < 0)
        throw std::invalid_argument("make_generator: invalid spec");
    Sequential net;
    net.add(std::make_unique<ReflectionPad>(3));
    net.add(std::make_unique<Conv2d>(spec.in_channels, spec.base_width, 7, 1, 0, rng));
    net.add(std::make_unique<InstanceNorm>(spec.base_width));
    net.add(std::make_unique<ReLU>());
    int width = spec.base_width;
    for (int d = 0; d < spec.n_down; ++d) {
        net.add(std::make_unique<Conv2d>(width, width * 2, 3, 2, 1, rng));
        net.add(std::make_unique<InstanceNorm>(width * 2));
        net.add(std::make_unique<ReLU>());
        width *= 2;
    }
    for (int b = 0; b < spec.n_resblocks; ++b)
        net.add(std::make_unique<ResBlock>(width, rng));
    for (int d = 0; d < spec.n_down; ++d) {
        net.add(std::make_unique<ConvTranspose2d>(width, width / 2, 3, 2, 1, 1, rng));
        net.add(std::make_unique<InstanceNorm>(width / 2));
        net.add(std::make_unique<ReLU>());
        width /= 2;
    }
    net.add(std::make_unique<ReflectionPad>(3));
    net.add(std::make_unique<Conv2d>(width, spec.in_channels, 7, 1, 0, rng));
    net.add(std::make_unique<Tanh>());
    return net;
}

inline Sequential make_discriminator(const DiscriminatorSpec& spec, std::mt19937_64& rng) {
    if (spec.in_channels < 1 || spec.base_width < 1 || spec.n_layers < 1)
        throw std::invalid_argument("make_discriminator: invalid spec");
    Sequential net;
    int width = spec.base_width;
    net.add(std::make_unique<Conv2d>(spec.in_channels, width, 4, 2, 1, rng));
    net.add(std::make_unique<LeakyReLU>(0.2));
    for (int i = 1; i < spec.n_layers; ++i) {
        const int next = std::min(width * 2, spec.base_width * 8);
        net.add(std::make_unique<Conv2d>(width, next, 4, 2, 1, rng));
        net.add(std::make_unique<InstanceNorm>(next));
        net.add(std::make_unique<LeakyReLU>(0.2));
        width = next;
    }
    // raw patch scores; the adversarial loss decides the output mapping
    net.add(std::make_unique<Conv2d>(width, 1, 3, 1, 1, rng));
    return net;
}

inline std::size_t count_params(Sequential& net) { return net.param_count(); }

inline std::uint64_t estimate_flops(const Sequential& net, int input_side) {
    return net.estimate_flops(input_side);
}

struct BudgetReport {
    std::size_t params_per_generator = 0;
    std::size_t total_inference_params = 0;
    std::uint64_t total_inference_flops = 0;
    int flops_input_side = 0;
    int inference_generators = 0;
};

// Inference-path budget for a mode: one large generator for the 2-domain
// baseline, (N-1) small chained generators otherwise.
inline BudgetReport inference_budget(const GeneratorSpec& spec, int n_inference_generators,
                                     int input_side = 512) {
    if (n_inference_generators < 1)
        throw std::invalid_argument("inference_budget: need at least one generator");
    std::mt19937_64 rng(0);
    Sequential g = make_generator(spec, rng);
    BudgetReport r;
    r.params_per_generator = g.param_count();
    r.inference_generators = n_inference_generators;
    r.total_inference_params = r.params_per_generator * n_inference_generators;
    r.flops_input_side = input_side;
    r.total_inference_flops = estimate_flops(g, input_side) * n_inference_generators;
    return r;
}

} // namespace mccan
