#include <catch2/catch_amalgamated.hpp>

#include "mccan/networks.hpp"

using namespace mccan;

namespace {

// Independent closed-form parameter count for the generator skeleton:
// sum of k*k*cin*cout + cout per convolution plus 2*C per instance norm.
std::size_t conv_params(int k, int cin, int cout) {
    return static_cast<std::size_t>(k) * k * cin * cout + cout;
}
std::size_t inorm_params(int c) { return 2 * static_cast<std::size_t>(c); }

std::size_t analytic_generator_params(const GeneratorSpec& s) {
    std::size_t total = conv_params(7, s.in_channels, s.base_width) + inorm_params(s.base_width);
    int w = s.base_width;
    for (int d = 0; d < s.n_down; ++d) {
        total += conv_params(3, w, 2 * w) + inorm_params(2 * w);
        w *= 2;
    }
    total += static_cast<std::size_t>(s.n_resblocks) *
             (2 * conv_params(3, w, w) + 2 * inorm_params(w));
    for (int d = 0; d < s.n_down; ++d) {
        total += conv_params(3, w, w / 2) + inorm_params(w / 2);
        w /= 2;
    }
    total += conv_params(7, w, s.in_channels);
    return total;
}

std::size_t analytic_discriminator_params(const DiscriminatorSpec& s) {
    std::size_t total = conv_params(4, s.in_channels, s.base_width);
    int w = s.base_width;
    for (int i = 1; i < s.n_layers; ++i) {
        const int next = std::min(w * 2, s.base_width * 8);
        total += conv_params(4, w, next) + inorm_params(next);
        w = next;
    }
    total += conv_params(3, w, 1);
    return total;
}

} // namespace

TEST_CASE("generator parameter counts reproduce the published budgets") {
    std::mt19937_64 rng(1);

    auto ccadn = make_generator(ccadn_generator_spec(), rng);
    const std::size_t ccadn_params = count_params(ccadn);
    REQUIRE(ccadn_params == analytic_generator_params(ccadn_generator_spec()));
    // one generator at inference: 11.4M within 1%
    REQUIRE(std::abs(static_cast<double>(ccadn_params) - 11.4e6) < 0.01 * 11.4e6);

    auto mccan = make_generator(mccan_generator_spec(), rng);
    const std::size_t mccan_params = count_params(mccan);
    REQUIRE(mccan_params == analytic_generator_params(mccan_generator_spec()));
    // two chained generators at inference: 11.0M within 1%
    REQUIRE(std::abs(2.0 * static_cast<double>(mccan_params) - 11.0e6) < 0.01 * 11.0e6);

    REQUIRE(mccan_params < ccadn_params);
    REQUIRE(2 * mccan_params < ccadn_params); // inference totals keep the published order
}

TEST_CASE("invalid generator specs are rejected") {
    std::mt19937_64 rng(1);
    GeneratorSpec bad = mccan_generator_spec();
    bad.n_resblocks = 0;
    REQUIRE_THROWS_AS(make_generator(bad, rng), std::invalid_argument);
    bad = mccan_generator_spec();
    bad.base_width = 0;
    REQUIRE_THROWS_AS(make_generator(bad, rng), std::invalid_argument);
}

TEST_CASE("generator forward preserves spatial shape") {
    std::mt19937_64 rng(7);
    GeneratorSpec spec{1, 8, 2, 2, 16};
    auto g = make_generator(spec, rng);
    std::mt19937_64 drng(3);
    std::normal_distribution<double> N(0, 1);
    for (int side : {8, 16, 32}) {
        Tensor x(2, 1, side, side);
        for (auto& v : x.v) v = N(drng);
        Tensor y = g.forward(x);
        REQUIRE(y.n == 2);
        REQUIRE(y.c == 1);
        REQUIRE(y.h == side);
        REQUIRE(y.w == side);
        for (double v : y.v) REQUIRE(std::abs(v) <= 1.0); // tanh range
    }
}

TEST_CASE("equal specs and seeds give identical networks") {
    GeneratorSpec spec{1, 8, 2, 2, 16};
    std::mt19937_64 r1(42), r2(42);
    auto g1 = make_generator(spec, r1);
    auto g2 = make_generator(spec, r2);
    REQUIRE(count_params(g1) == count_params(g2));
    Tensor x(1, 1, 8, 8);
    std::mt19937_64 drng(5);
    std::normal_distribution<double> N(0, 1);
    for (auto& v : x.v) v = N(drng);
    Tensor y1 = g1.forward(x);
    Tensor y2 = g2.forward(x);
    REQUIRE(y1.v == y2.v);
}

TEST_CASE("discriminator patch map geometry and params") {
    std::mt19937_64 rng(1);
    DiscriminatorSpec spec; // 4 strided layers, width 64
    auto d = make_discriminator(spec, rng);
    REQUIRE(count_params(d) == analytic_discriminator_params(spec));

    Tensor x(1, 1, 256, 256);
    Tensor score = d.forward(x);
    REQUIRE(score.c == 1);
    REQUIRE(score.h == 256 / (1 << spec.n_layers));
    REQUIRE(score.w == 256 / (1 << spec.n_layers));

    std::mt19937_64 r2(1);
    auto d2 = make_discriminator(spec, r2);
    REQUIRE(count_params(d2) == count_params(d));

    DiscriminatorSpec bad;
    bad.n_layers = 0;
    REQUIRE_THROWS_AS(make_discriminator(bad, rng), std::invalid_argument);
}

TEST_CASE("flop estimate scales quadratically with input side") {
    std::mt19937_64 rng(1);
    auto g = make_generator(GeneratorSpec{1, 8, 2, 2, 16}, rng);
    const auto f1 = estimate_flops(g, 32);
    const auto f2 = estimate_flops(g, 64);
    REQUIRE(f2 == 4 * f1);
    REQUIRE_THROWS_AS(estimate_flops(g, 0), std::invalid_argument);
}

TEST_CASE("per-generator budget ordering") {
    auto ccadn = inference_budget(ccadn_generator_spec(), 1, 512);
    auto mccan = inference_budget(mccan_generator_spec(), 2, 512);
    REQUIRE(mccan.params_per_generator < ccadn.params_per_generator);
    REQUIRE(mccan.total_inference_params < ccadn.total_inference_params);
}
