#pragma once

// Linear domain chains and their cycle structure. Domain 0 is the noisiest,
// the last domain the cleanest. Everything here is a pure function of its
// inputs and deterministic: cycle order is local cycles (by adjacent pair,
// left source first) followed by global cycles (left origin first).

#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mccan {

using DomainId = int;

enum class ExperimentMode { ccadn, mccan, mccan_no_local, mccan_no_global };

inline std::string to_string(ExperimentMode m) {
    switch (m) {
        case ExperimentMode::ccadn: return "ccadn";
        case ExperimentMode::mccan: return "mccan";
        case ExperimentMode::mccan_no_local: return "mccan-no-local";
        case ExperimentMode::mccan_no_global: return "mccan-no-global";
    }
    return "?";
}

inline ExperimentMode parse_mode(const std::string& s) {
    if (s == "ccadn") return ExperimentMode::ccadn;
    if (s == "mccan") return ExperimentMode::mccan;
    if (s == "mccan-no-local" || s == "mccan_no_local") return ExperimentMode::mccan_no_local;
    if (s == "mccan-no-global" || s == "mccan_no_global") return ExperimentMode::mccan_no_global;
    throw std::invalid_argument("unknown mode: " + s);
}

struct DomainChain {
    std::vector<std::string> names;

    int size() const { return static_cast<int>(names.size()); }
    int n_generators() const { return 2 * (size() - 1); }

    const std::string& name(DomainId d) const { return names.at(d); }

    // Generators are stored per directed adjacent edge: edge 2i runs
    // i -> i+1 (towards clean), edge 2i+1 runs i+1 -> i.
    int edge_index(DomainId from, DomainId to) const {
        if (from < 0 || from >= size() || to < 0 || to >= size())
            throw std::invalid_argument("edge_index: domain out of range");
        if (to == from + 1) return 2 * from;
        if (to == from - 1) return 2 * to + 1;
        throw std::invalid_argument("edge_index: domains not adjacent");
    }
};

inline DomainChain build_chain(int n_domains, std::vector<std::string> names = {}) {
    if (n_domains < 2)
        throw std::invalid_argument("build_chain: need at least 2 domains");
    if (names.empty()) {
        if (n_domains == 2) names = {"X", "Y"};
        else if (n_domains == 3) names = {"X", "Z", "Y"};
        else {
            names.emplace_back("X");
            for (int i = 1; i + 1 < n_domains; ++i)
                names.push_back("Z" + std::to_string(i));
            names.emplace_back("Y");
        }
    }
    if (static_cast<int>(names.size()) != n_domains)
        throw std::invalid_argument("build_chain: name count mismatch");
    std::set<std::string> uniq(names.begin(), names.end());
    if (static_cast<int>(uniq.size()) != n_domains)
        throw std::invalid_argument("build_chain: duplicate domain names");
    return DomainChain{std::move(names)};
}

struct Path {
    std::vector<DomainId> steps; // length >= 2, consecutive entries adjacent

    DomainId source() const { return steps.front(); }
    DomainId terminal() const { return steps.back(); }
    bool operator==(const Path& o) const { return steps == o.steps; }
    bool operator<(const Path& o) const { return steps < o.steps; }
};

enum class CycleKind { local, global };

struct Cycle {
    std::vector<DomainId> steps; // closed: first == last
    CycleKind kind = CycleKind::local;

    DomainId source() const { return steps.front(); }
    bool operator==(const Cycle& o) const { return steps == o.steps; }
};

inline void validate_path_steps(const DomainChain& chain, const std::vector<DomainId>& steps) {
    if (steps.size() < 2) throw std::invalid_argument("path: needs at least 2 steps");
    for (std::size_t i = 0; i + 1 < steps.size(); ++i)
        chain.edge_index(steps[i], steps[i + 1]); // throws if not adjacent
}

inline std::string format_steps(const DomainChain& chain, const std::vector<DomainId>& steps) {
    std::ostringstream os;
    for (std::size_t i = 0; i < steps.size(); ++i) {
        if (i) os << "->";
        os << chain.name(steps[i]);
    }
    return os.str();
}

inline std::vector<Cycle> enumerate_cycles(const DomainChain& chain, ExperimentMode mode) {
    const int n = chain.size();
    if (mode == ExperimentMode::ccadn && n != 2)
        throw std::invalid_argument("ccadn mode requires a 2-domain chain");

    const bool want_local = mode != ExperimentMode::mccan_no_local;
    const bool want_global = mode == ExperimentMode::mccan ||
                             mode == ExperimentMode::mccan_no_local ||
                             mode == ExperimentMode::ccadn;

    std::vector<Cycle> out;
    auto push_unique = [&out](Cycle c) {
        for (const auto& e : out)
            if (e.steps == c.steps) return;
        out.push_back(std::move(c));
    };

    if (want_local) {
        for (int i = 0; i + 1 < n; ++i) {
            push_unique({{i, i + 1, i}, CycleKind::local});
            push_unique({{i + 1, i, i + 1}, CycleKind::local});
        }
    }
    if (want_global) {
        std::vector<DomainId> fwd; // 0 .. n-1 .. 0
        for (int i = 0; i < n; ++i) fwd.push_back(i);
        for (int i = n - 2; i >= 0; --i) fwd.push_back(i);
        std::vector<DomainId> bwd; // n-1 .. 0 .. n-1
        for (int i = n - 1; i >= 0; --i) bwd.push_back(i);
        for (int i = 1; i < n; ++i) bwd.push_back(i);
        // At n == 2 the global cycle coincides with a local one and is
        // dropped by push_unique so the pair is not double-weighted.
        push_unique({fwd, n == 2 ? CycleKind::local : CycleKind::global});
        push_unique({bwd, n == 2 ? CycleKind::local : CycleKind::global});
    }
    return out;
}

inline std::pair<Path, Path> half_paths(const Cycle& cycle) {
    if (cycle.steps.size() < 3 || cycle.steps.front() != cycle.steps.back())
        throw std::invalid_argument("half_paths: not a closed cycle");
    const std::size_t mid = (cycle.steps.size() - 1) / 2; // turning point
    Path out, back;
    out.steps.assign(cycle.steps.begin(), cycle.steps.begin() + mid + 1);
    back.steps.assign(cycle.steps.begin() + mid, cycle.steps.end());
    return {out, back};
}

// All distinct half-paths of the mode's cycles that terminate at `domain`.
inline std::vector<Path> paths_ending_at(const DomainChain& chain, ExperimentMode mode,
                                         DomainId domain) {
    if (domain < 0 || domain >= chain.size())
        throw std::invalid_argument("paths_ending_at: domain out of range");
    std::vector<Path> out;
    for (const auto& cyc : enumerate_cycles(chain, mode)) {
        auto [a, b] = half_paths(cyc);
        for (const auto& p : {a, b}) {
            if (p.terminal() != domain) continue;
            if (std::find(out.begin(), out.end(), p) == out.end()) out.push_back(p);
        }
    }
    return out;
}

// Identifies one discriminator instance. `pair_index` is meaningful only
// when a domain carries one discriminator per adjacent pair (the no-global
// ablation); it names the adjacent pair (i, i+1) the instance judges.
struct DiscriminatorSlot {
    DomainId domain = 0;
    int pair_index = -1; // -1: the domain's single discriminator

    bool operator==(const DiscriminatorSlot& o) const {
        return domain == o.domain && pair_index == o.pair_index;
    }
};

inline bool domain_is_interior(const DomainChain& chain, DomainId d) {
    return d > 0 && d + 1 < chain.size();
}

inline std::map<DomainId, int> discriminator_assignment(const DomainChain& chain,
                                                        ExperimentMode mode) {
    if (mode == ExperimentMode::ccadn && chain.size() != 2)
        throw std::invalid_argument("ccadn mode requires a 2-domain chain");
    std::map<DomainId, int> counts;
    for (int d = 0; d < chain.size(); ++d) {
        const bool dup = mode == ExperimentMode::mccan_no_global && domain_is_interior(chain, d);
        counts[d] = dup ? 2 : 1;
    }
    return counts;
}

// The discriminator instance that judges fakes produced by `path`.
inline DiscriminatorSlot discriminator_for_path(const DomainChain& chain, ExperimentMode mode,
                                                const Path& path) {
    const DomainId term = path.terminal();
    if (mode == ExperimentMode::mccan_no_global && domain_is_interior(chain, term)) {
        // Local half-paths span exactly one adjacent pair; bind by that pair.
        const int lo = std::min(path.steps[path.steps.size() - 2], term);
        return {term, lo};
    }
    return {term, -1};
}

} // namespace mccan
