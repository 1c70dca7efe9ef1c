#pragma once

// Training objective: per-path adversarial terms summed over all half-path
// terminal domains, L1 cycle-consistency per cycle, identity terms over the
// existing generators, and the weighted composite.
//
// Discriminators emit raw patch scores. The log form maps them through a
// logistic before the Eq.-style log terms; the least-squares form works on
// raw scores with targets 1 (real) and 0 (fake) and is reported negated so
// that a perfect discriminator scores 0 and discriminators maximize in both
// forms. Patch and batch reduction is the mean.

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mccan/domain_chain.hpp"
#include "mccan/networks.hpp"

namespace mccan {

enum class AdvForm { log_form, least_squares };

inline std::string to_string(AdvForm f) {
    return f == AdvForm::log_form ? "log" : "lsq";
}
inline AdvForm parse_adv_form(const std::string& s) {
    if (s == "log") return AdvForm::log_form;
    if (s == "lsq" || s == "least-squares") return AdvForm::least_squares;
    throw std::invalid_argument("unknown adversarial form: " + s);
}

struct LossWeights {
    double lambda_cyc = 10.0;
    double lambda_idt = 0.5;
};

// All generators and discriminators of one experiment.
struct ModelSet {
    DomainChain chain;
    ExperimentMode mode = ExperimentMode::mccan;
    AdvForm form = AdvForm::least_squares;
    GeneratorSpec gspec;
    DiscriminatorSpec dspec;
    std::vector<Sequential> generators;        // indexed by chain.edge_index
    std::vector<DiscriminatorSlot> disc_slots; // deterministic order
    std::vector<Sequential> discriminators;    // aligned with disc_slots

    Sequential& generator(DomainId from, DomainId to) {
        return generators[chain.edge_index(from, to)];
    }
    int disc_index(const DiscriminatorSlot& slot) const {
        for (std::size_t i = 0; i < disc_slots.size(); ++i)
            if (disc_slots[i] == slot) return static_cast<int>(i);
        throw std::invalid_argument("unknown discriminator slot");
    }
    Sequential& discriminator(const DiscriminatorSlot& slot) {
        return discriminators[disc_index(slot)];
    }
};

inline std::vector<DiscriminatorSlot> discriminator_slots(const DomainChain& chain,
                                                          ExperimentMode mode) {
    std::vector<DiscriminatorSlot> slots;
    for (int d = 0; d < chain.size(); ++d) {
        if (mode == ExperimentMode::mccan_no_global && domain_is_interior(chain, d)) {
            slots.push_back({d, d - 1});
            slots.push_back({d, d});
        } else {
            slots.push_back({d, -1});
        }
    }
    return slots;
}

inline ModelSet build_models(const DomainChain& chain, ExperimentMode mode,
                             const GeneratorSpec& gspec, const DiscriminatorSpec& dspec,
                             AdvForm form, std::uint64_t seed) {
    if (mode == ExperimentMode::ccadn && chain.size() != 2)
        throw std::invalid_argument("ccadn mode requires a 2-domain chain");
    ModelSet ms;
    ms.chain = chain;
    ms.mode = mode;
    ms.form = form;
    ms.gspec = gspec;
    ms.dspec = dspec;
    for (int e = 0; e < chain.n_generators(); ++e) {
        std::mt19937_64 rng(seed * 1000003ULL + static_cast<std::uint64_t>(e));
        ms.generators.push_back(make_generator(gspec, rng));
    }
    ms.disc_slots = discriminator_slots(chain, mode);
    for (std::size_t i = 0; i < ms.disc_slots.size(); ++i) {
        std::mt19937_64 rng(seed * 2000003ULL + 7919ULL * (i + 1));
        ms.discriminators.push_back(make_discriminator(dspec, rng));
    }
    return ms;
}

// All distinct half-paths of the active cycle set, in deterministic order.
inline std::vector<Path> active_paths(const DomainChain& chain, ExperimentMode mode) {
    std::vector<Path> out;
    for (const auto& cyc : enumerate_cycles(chain, mode)) {
        auto [a, b] = half_paths(cyc);
        for (const auto& p : {a, b})
            if (std::find(out.begin(), out.end(), p) == out.end()) out.push_back(p);
    }
    return out;
}

// Forward composition along a path. When `tapes` is given, one tape per
// generator application is recorded so gradients can flow back later.
inline Tensor compose_path(ModelSet& ms, const Path& path, const Tensor& src,
                           std::vector<Tape>* tapes = nullptr,
                           std::vector<Tensor>* intermediates = nullptr) {
    validate_path_steps(ms.chain, path.steps);
    Tensor cur = src;
    if (tapes) tapes->assign(path.steps.size() - 1, Tape{});
    for (std::size_t i = 0; i + 1 < path.steps.size(); ++i) {
        Sequential& g = ms.generator(path.steps[i], path.steps[i + 1]);
        cur = g.forward(cur, tapes ? &(*tapes)[i] : nullptr);
        if (intermediates) intermediates->push_back(cur);
    }
    return cur;
}

// Backward through a composed path, accumulating into the generators' grads.
inline void compose_path_backward(ModelSet& ms, const Path& path, const Tensor& gout,
                                  const std::vector<Tape>& tapes) {
    Tensor cur = gout;
    for (std::size_t i = path.steps.size() - 1; i-- > 0;) {
        Sequential& g = ms.generator(path.steps[i], path.steps[i + 1]);
        cur = g.backward(cur, tapes[i], true);
    }
}

inline double sigmoid(double s) { return 1.0 / (1.0 + std::exp(-s)); }

// Log-form Eq-style value on probability maps, usable directly as an oracle:
// mean log p_real + mean log (1 - p_fake).
inline double adversarial_from_probs(const Tensor& real_p, const Tensor& fake_p) {
    if (real_p.empty() || fake_p.empty())
        throw std::invalid_argument("adversarial: empty batch");
    double a = 0.0, b = 0.0;
    for (double p : real_p.v) a += std::log(p);
    for (double p : fake_p.v) b += std::log(1.0 - p);
    return a / static_cast<double>(real_p.size()) + b / static_cast<double>(fake_p.size());
}

// Least-squares value on raw score maps, negated so the optimum is 0 and the
// discriminator maximizes: -(mean (s_real - 1)^2 + mean s_fake^2).
inline double adversarial_from_scores_lsq(const Tensor& real_s, const Tensor& fake_s) {
    if (real_s.empty() || fake_s.empty())
        throw std::invalid_argument("adversarial: empty batch");
    double a = 0.0, b = 0.0;
    for (double s : real_s.v) a += (s - 1.0) * (s - 1.0);
    for (double s : fake_s.v) b += s * s;
    return -(a / static_cast<double>(real_s.size()) + b / static_cast<double>(fake_s.size()));
}

// Adversarial term for one (domain, path) pair given an already-produced
// fake batch. When fake_tape/grad_scale are set, d(term)/d(fake) is pushed
// back through the discriminator (its own parameters stay frozen) and
// returned via *gfake for the caller to route through the producing path.
inline double adversarial_term(Sequential& disc, const Tensor& real, const Tensor& fake,
                               AdvForm form, double grad_scale = 0.0, Tensor* gfake = nullptr) {
    if (real.empty() || fake.empty())
        throw std::invalid_argument("adversarial_term: empty batch");
    if (real.c != fake.c) throw std::invalid_argument("adversarial_term: shape mismatch");
    Tape rt, ft;
    Tensor rs = disc.forward(real, nullptr);
    Tensor fs = disc.forward(fake, grad_scale != 0.0 ? &ft : nullptr);
    double value;
    Tensor dfs(fs.n, fs.c, fs.h, fs.w);
    if (form == AdvForm::log_form) {
        Tensor rp = rs, fp = fs;
        for (auto& v : rp.v) v = sigmoid(v);
        for (auto& v : fp.v) v = sigmoid(v);
        value = adversarial_from_probs(rp, fp);
        if (grad_scale != 0.0) {
            // d/ds [log(1 - sigmoid(s))] = -sigmoid(s)
            const double inv = grad_scale / static_cast<double>(fs.size());
            for (std::size_t i = 0; i < fs.size(); ++i) dfs.v[i] = -inv * fp.v[i];
        }
    } else {
        value = adversarial_from_scores_lsq(rs, fs);
        if (grad_scale != 0.0) {
            const double inv = grad_scale / static_cast<double>(fs.size());
            for (std::size_t i = 0; i < fs.size(); ++i) dfs.v[i] = -inv * 2.0 * fs.v[i];
        }
    }
    if (grad_scale != 0.0 && gfake)
        *gfake = disc.backward(dfs, ft, /*accum_param_grads=*/false);
    return value;
}

// Eq-1 style sum over every active (terminal domain, half-path) pair.
// `batches` holds one real batch per domain. grad_scale routes gradients
// into the generators (discriminators frozen).
inline double total_adversarial(ModelSet& ms, const std::vector<Tensor>& batches,
                                double grad_scale = 0.0) {
    if (static_cast<int>(batches.size()) != ms.chain.size())
        throw std::invalid_argument("total_adversarial: one batch per domain required");
    double total = 0.0;
    for (const auto& path : active_paths(ms.chain, ms.mode)) {
        const DiscriminatorSlot slot = discriminator_for_path(ms.chain, ms.mode, path);
        Sequential& disc = ms.discriminator(slot);
        std::vector<Tape> tapes;
        Tensor fake = compose_path(ms, path, batches[path.source()],
                                   grad_scale != 0.0 ? &tapes : nullptr);
        Tensor gfake;
        total += adversarial_term(disc, batches[path.terminal()], fake, ms.form, grad_scale,
                                  grad_scale != 0.0 ? &gfake : nullptr);
        if (grad_scale != 0.0) compose_path_backward(ms, path, gfake, tapes);
    }
    return total;
}

// L1 round-trip loss for one cycle.
inline double cycle_consistency(ModelSet& ms, const Cycle& cycle, const Tensor& src,
                                double grad_scale = 0.0) {
    std::vector<Tape> tapes;
    Path full{cycle.steps};
    Tensor out = compose_path(ms, full, src, grad_scale != 0.0 ? &tapes : nullptr);
    if (!out.same_shape(src))
        throw std::runtime_error("cycle_consistency: round trip changed shape");
    const double value = mean_abs_diff(out, src);
    if (grad_scale != 0.0) {
        Tensor gout(out.n, out.c, out.h, out.w);
        mean_abs_diff_backward(out, src, grad_scale, gout);
        compose_path_backward(ms, full, gout, tapes);
    }
    return value;
}

// Sum over existing generators G_{J->I} of mean L1 between G applied to
// domain-I images and those images.
inline double identity_term(ModelSet& ms, const std::vector<Tensor>& batches,
                            double grad_scale = 0.0) {
    if (static_cast<int>(batches.size()) != ms.chain.size())
        throw std::invalid_argument("identity_term: one batch per domain required");
    double total = 0.0;
    for (int from = 0; from < ms.chain.size(); ++from)
        for (int to : {from - 1, from + 1}) {
            if (to < 0 || to >= ms.chain.size()) continue;
            Sequential& g = ms.generator(from, to);
            Tape tape;
            const Tensor& target = batches[to];
            Tensor out = g.forward(target, grad_scale != 0.0 ? &tape : nullptr);
            total += mean_abs_diff(out, target);
            if (grad_scale != 0.0) {
                Tensor gout(out.n, out.c, out.h, out.w);
                mean_abs_diff_backward(out, target, grad_scale, gout);
                g.backward(gout, tape, true);
            }
        }
    return total;
}

struct LossBreakdown {
    double adversarial_total = 0.0;
    std::vector<std::pair<Cycle, double>> per_cycle_consistency;
    double identity_total = 0.0;
    double composite = 0.0;

    double cycle_sum() const {
        double s = 0.0;
        for (const auto& [c, v] : per_cycle_consistency) s += v;
        return s;
    }
};

// Full Eq-5 style breakdown. With grad_scale != 0 the literal gradient of
// the composite w.r.t. the generators is accumulated (weights applied).
inline LossBreakdown composite_objective(ModelSet& ms, const std::vector<Tensor>& batches,
                                         const LossWeights& weights, double grad_scale = 0.0) {
    if (weights.lambda_cyc < 0 || weights.lambda_idt < 0)
        throw std::invalid_argument("composite_objective: negative loss weight");
    LossBreakdown b;
    b.adversarial_total = total_adversarial(ms, batches, grad_scale);
    for (const auto& cyc : enumerate_cycles(ms.chain, ms.mode)) {
        const double v = cycle_consistency(ms, cyc, batches[cyc.source()],
                                           grad_scale * weights.lambda_cyc);
        b.per_cycle_consistency.emplace_back(cyc, v);
    }
    b.identity_total = identity_term(ms, batches, grad_scale * weights.lambda_idt);
    b.composite = b.adversarial_total + weights.lambda_cyc * b.cycle_sum() +
                  weights.lambda_idt * b.identity_total;
    return b;
}

} // namespace mccan
