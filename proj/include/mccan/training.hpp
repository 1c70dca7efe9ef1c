#pragma once

// Adversarial training loop: per step all discriminators are updated to
// maximize their adversarial terms on (real batch, replay-buffered fakes),
// then all generators are updated jointly on the composite objective with
// the discriminators frozen. Deterministic and bit-reproducible for a fixed
// seed in single-threaded execution.
//
// The generator-side adversarial term uses the non-saturating targets
// (least-squares: mean (D(fake)-1)^2; log: mean log(1-sigmoid(D(fake)))),
// the usual stabilization of the min-max objective; the logged composite is
// built from these generator-side values so the breakdown identity holds.
//
// Checkpoint archive ("MCCKPT01"): resolved config, step counter, every
// parameter tensor, optimizer moments, replay buffers, batch-stream states
// and RNG states, so a resumed run continues the loss trajectory exactly.

#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "mccan/data.hpp"
#include "mccan/losses.hpp"

namespace mccan {

struct TrainConfig {
    ExperimentMode mode = ExperimentMode::mccan;
    int n_domains = 3;
    GeneratorSpec gspec = mccan_generator_spec();
    DiscriminatorSpec dspec;
    LossWeights weights;
    AdvForm form = AdvForm::least_squares;
    double lr = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    int epochs = 50;
    int batch = 1;
    int crop = 256;
    int buffer_capacity = 50;
    std::uint64_t seed = 1;
    long checkpoint_interval = 0; // steps; 0 = final checkpoint only
    int nonfinite_guard = 10;

    void validate() const {
        if (epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
        if (batch < 1) throw std::invalid_argument("config: batch must be >= 1");
        if (buffer_capacity < 0) throw std::invalid_argument("config: negative buffer capacity");
        if (crop < 1) throw std::invalid_argument("config: crop must be >= 1");
        if (lr <= 0) throw std::invalid_argument("config: step size must be positive");
        if (mode == ExperimentMode::ccadn && n_domains != 2)
            throw std::invalid_argument("config: ccadn requires 2 domains");
        if (n_domains < 2) throw std::invalid_argument("config: need at least 2 domains");
    }
};

// Resolved key=value form, embedded in checkpoints and echoed by the CLI.
inline std::string config_to_kv(const TrainConfig& c) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "mode=" << to_string(c.mode) << "\n"
       << "domains=" << c.n_domains << "\n"
       << "lambda_cyc=" << c.weights.lambda_cyc << "\n"
       << "lambda_idt=" << c.weights.lambda_idt << "\n"
       << "adv_form=" << to_string(c.form) << "\n"
       << "lr=" << c.lr << "\n"
       << "beta1=" << c.beta1 << "\n"
       << "beta2=" << c.beta2 << "\n"
       << "epochs=" << c.epochs << "\n"
       << "batch=" << c.batch << "\n"
       << "crop=" << c.crop << "\n"
       << "buffer_capacity=" << c.buffer_capacity << "\n"
       << "seed=" << c.seed << "\n"
       << "checkpoint_interval=" << c.checkpoint_interval << "\n"
       << "nonfinite_guard=" << c.nonfinite_guard << "\n"
       << "gen_base_width=" << c.gspec.base_width << "\n"
       << "gen_resblocks=" << c.gspec.n_resblocks << "\n"
       << "gen_down=" << c.gspec.n_down << "\n"
       << "disc_base_width=" << c.dspec.base_width << "\n"
       << "disc_layers=" << c.dspec.n_layers << "\n";
    return os.str();
}

inline std::map<std::string, std::string> parse_kv(std::istream& is) {
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(is, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        while (!line.empty() && (line.back() == ' ' || line.back() == '\r')) line.pop_back();
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config: expected key=value, got '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return kv;
}

inline TrainConfig config_from_kv(const std::map<std::string, std::string>& kv) {
    TrainConfig c;
    auto get = [&kv](const std::string& k) -> const std::string* {
        auto it = kv.find(k);
        return it == kv.end() ? nullptr : &it->second;
    };
    static const std::set<std::string> known = {
        "mode", "domains", "lambda_cyc", "lambda_idt", "adv_form", "lr", "beta1", "beta2",
        "epochs", "batch", "crop", "buffer_capacity", "seed", "checkpoint_interval",
        "nonfinite_guard", "gen_base_width", "gen_resblocks", "gen_down", "disc_base_width",
        "disc_layers"};
    for (const auto& [k, v] : kv)
        if (!known.count(k)) throw std::invalid_argument("config: unknown key '" + k + "'");
    if (auto* v = get("mode")) c.mode = parse_mode(*v);
    if (auto* v = get("domains")) c.n_domains = std::stoi(*v);
    if (auto* v = get("lambda_cyc")) c.weights.lambda_cyc = std::stod(*v);
    if (auto* v = get("lambda_idt")) c.weights.lambda_idt = std::stod(*v);
    if (auto* v = get("adv_form")) c.form = parse_adv_form(*v);
    if (auto* v = get("lr")) c.lr = std::stod(*v);
    if (auto* v = get("beta1")) c.beta1 = std::stod(*v);
    if (auto* v = get("beta2")) c.beta2 = std::stod(*v);
    if (auto* v = get("epochs")) c.epochs = std::stoi(*v);
    if (auto* v = get("batch")) c.batch = std::stoi(*v);
    if (auto* v = get("crop")) c.crop = std::stoi(*v);
    if (auto* v = get("buffer_capacity")) c.buffer_capacity = std::stoi(*v);
    if (auto* v = get("seed")) c.seed = std::stoull(*v);
    if (auto* v = get("checkpoint_interval")) c.checkpoint_interval = std::stol(*v);
    if (auto* v = get("nonfinite_guard")) c.nonfinite_guard = std::stoi(*v);
    if (auto* v = get("gen_base_width")) c.gspec.base_width = std::stoi(*v);
    if (auto* v = get("gen_resblocks")) c.gspec.n_resblocks = std::stoi(*v);
    if (auto* v = get("gen_down")) c.gspec.n_down = std::stoi(*v);
    if (auto* v = get("disc_base_width")) c.dspec.base_width = std::stoi(*v);
    if (auto* v = get("disc_layers")) c.dspec.n_layers = std::stoi(*v);
    c.gspec.crop_size = c.crop;
    return c;
}

// ---------------------------------------------------------------------------
// Optimizer: adaptive moment estimation with bias correction.

class Adam {
public:
    Adam() = default;
    Adam(const std::vector<Tensor*>& params, double beta1, double beta2)
        : beta1_(beta1), beta2_(beta2) {
        for (auto* p : params) {
            m_.emplace_back(p->size(), 0.0);
            v_.emplace_back(p->size(), 0.0);
        }
    }

    void step(const std::vector<Tensor*>& params, const std::vector<Tensor*>& grads, double lr) {
        if (params.size() != m_.size()) throw std::invalid_argument("adam: parameter mismatch");
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t pi = 0; pi < params.size(); ++pi) {
            auto& p = params[pi]->v;
            const auto& g = grads[pi]->v;
            for (std::size_t i = 0; i < p.size(); ++i) {
                m_[pi][i] = beta1_ * m_[pi][i] + (1.0 - beta1_) * g[i];
                v_[pi][i] = beta2_ * v_[pi][i] + (1.0 - beta2_) * g[i] * g[i];
                p[i] -= lr * (m_[pi][i] / bc1) / (std::sqrt(v_[pi][i] / bc2) + 1e-8);
            }
        }
    }

    void save(std::ostream& os) const;
    void load(std::istream& is);

private:
    double beta1_ = 0.5, beta2_ = 0.999;
    long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------------------
// Replay buffer of previously generated fakes, one per discriminator.

class ReplayBuffer {
public:
    ReplayBuffer() = default;
    ReplayBuffer(int capacity, std::uint64_t seed) : capacity_(capacity), rng_(seed) {
        if (capacity < 0) throw std::invalid_argument("replay buffer: negative capacity");
    }

    // While filling, the incoming fake is stored and returned. Once full it
    // is returned as-is with probability 1/2, otherwise swapped with a
    // uniformly chosen stored fake. Capacity 0 always returns fresh fakes.
    Tensor query(const Tensor& fake) {
        if (capacity_ == 0) return fake;
        if (static_cast<int>(store_.size()) < capacity_) {
            store_.push_back(fake);
            return fake;
        }
        std::uniform_real_distribution<double> coin(0.0, 1.0);
        if (coin(rng_) < 0.5) return fake;
        std::uniform_int_distribution<std::size_t> pick(0, store_.size() - 1);
        const std::size_t i = pick(rng_);
        Tensor out = std::move(store_[i]);
        store_[i] = fake;
        return out;
    }

    std::size_t size() const { return store_.size(); }
    int capacity() const { return capacity_; }

    void save(std::ostream& os) const;
    void load(std::istream& is);

private:
    int capacity_ = 50;
    std::vector<Tensor> store_;
    std::mt19937_64 rng_;
};

// ---------------------------------------------------------------------------
// Binary serialization helpers.

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t x) {
    os.write(reinterpret_cast<const char*>(&x), 8);
}
inline std::uint64_t get_u64(std::istream& is) {
    std::uint64_t x = 0;
    is.read(reinterpret_cast<char*>(&x), 8);
    if (!is) throw std::runtime_error("checkpoint: truncated archive");
    if (x > (1ULL << 40)) throw std::runtime_error("checkpoint: corrupt size field");
    return x;
}
inline void put_f64v(std::ostream& os, const std::vector<double>& v) {
    put_u64(os, v.size());
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(double)));
}
inline void get_f64v(std::istream& is, std::vector<double>& v) {
    v.resize(get_u64(is));
    is.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated archive");
}
inline void put_str(std::ostream& os, const std::string& s) {
    put_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline std::string get_str(std::istream& is) {
    std::string s(get_u64(is), '\0');
    is.read(s.data(), static_cast<std::streamsize>(s.size()));
    if (!is) throw std::runtime_error("checkpoint: truncated archive");
    return s;
}
inline void put_tensor(std::ostream& os, const Tensor& t) {
    put_u64(os, t.n);
    put_u64(os, t.c);
    put_u64(os, t.h);
    put_u64(os, t.w);
    put_f64v(os, t.v);
}
inline Tensor get_tensor(std::istream& is) {
    const int n = static_cast<int>(get_u64(is)), c = static_cast<int>(get_u64(is));
    const int h = static_cast<int>(get_u64(is)), w = static_cast<int>(get_u64(is));
    Tensor t(n, c, h, w);
    get_f64v(is, t.v);
    return t;
}

} // namespace detail

inline void Adam::save(std::ostream& os) const {
    detail::put_u64(os, static_cast<std::uint64_t>(t_));
    detail::put_u64(os, m_.size());
    for (std::size_t i = 0; i < m_.size(); ++i) {
        detail::put_f64v(os, m_[i]);
        detail::put_f64v(os, v_[i]);
    }
}

inline void Adam::load(std::istream& is) {
    t_ = static_cast<long>(detail::get_u64(is));
    const std::size_t n = detail::get_u64(is);
    if (n != m_.size()) throw std::runtime_error("checkpoint: optimizer shape mismatch");
    for (std::size_t i = 0; i < n; ++i) {
        detail::get_f64v(is, m_[i]);
        detail::get_f64v(is, v_[i]);
    }
}

inline void ReplayBuffer::save(std::ostream& os) const {
    detail::put_u64(os, static_cast<std::uint64_t>(capacity_));
    detail::put_u64(os, store_.size());
    for (const auto& t : store_) detail::put_tensor(os, t);
    std::ostringstream rs;
    rs << rng_;
    detail::put_str(os, rs.str());
}

inline void ReplayBuffer::load(std::istream& is) {
    capacity_ = static_cast<int>(detail::get_u64(is));
    store_.resize(detail::get_u64(is));
    for (auto& t : store_) t = detail::get_tensor(is);
    std::istringstream rs(detail::get_str(is));
    rs >> rng_;
    if (!rs) throw std::runtime_error("checkpoint: corrupt buffer rng state");
}

// ---------------------------------------------------------------------------
// Trainer

constexpr char kCheckpointMagic[8] = {'M', 'C', 'C', 'K', 'P', 'T', '0', '1'};

class Trainer {
public:
    Trainer(TrainConfig cfg, const Dataset& dataset) : cfg_(std::move(cfg)) {
        cfg_.validate();
        cfg_.gspec.crop_size = cfg_.crop;
        models_ = build_models(build_chain(cfg_.n_domains), cfg_.mode, cfg_.gspec, cfg_.dspec,
                               cfg_.form, cfg_.seed);
        init_optimizers();
        for (std::size_t i = 0; i < models_.discriminators.size(); ++i)
            buffers_.emplace_back(cfg_.buffer_capacity,
                                  detail::mix_seed(cfg_.seed, 0xb0fULL, i));
        std::size_t min_domain = 0;
        for (int d = 0; d < cfg_.n_domains; ++d) {
            streams_.push_back(batch_stream(dataset, d, cfg_.batch, cfg_.crop, cfg_.seed));
            const std::size_t n = streams_.back().epoch_size();
            min_domain = d == 0 ? n : std::min(min_domain, n);
        }
        steps_per_epoch_ = static_cast<long>(min_domain) / cfg_.batch;
        if (steps_per_epoch_ < 1)
            throw std::invalid_argument("train: batch size exceeds the smallest domain");
    }

    const TrainConfig& config() const { return cfg_; }
    ModelSet& models() { return models_; }
    long step_count() const { return step_; }
    long steps_per_epoch() const { return steps_per_epoch_; }
    long total_steps() const { return steps_per_epoch_ * cfg_.epochs; }

    // Step size schedule: constant for the first half of the epochs, then
    // linear decay reaching zero after the final epoch.
    double current_lr() const {
        const long epoch = step_ / steps_per_epoch_;
        const long half = cfg_.epochs / 2;
        if (epoch < half || cfg_.epochs == 1) return cfg_.lr;
        return cfg_.lr * static_cast<double>(cfg_.epochs - epoch) /
               static_cast<double>(cfg_.epochs - half);
    }

    struct StepRecord {
        long step = 0;
        double disc_total = 0.0;
        LossBreakdown gen;
    };

    StepRecord train_step() {
        std::vector<Tensor> batches;
        for (auto& s : streams_) batches.push_back(s.next());
        const double lr = current_lr();

        StepRecord rec;
        rec.step = step_;
        rec.disc_total = update_discriminators(batches, lr);
        rec.gen = update_generators(batches, lr);

        if (!std::isfinite(rec.gen.composite) || !std::isfinite(rec.disc_total)) {
            if (++nonfinite_run_ >= cfg_.nonfinite_guard) {
                std::ostringstream os;
                os << "training diverged: composite non-finite for " << nonfinite_run_
                   << " consecutive steps (last step " << step_ << ", composite "
                   << rec.gen.composite << ", discriminator " << rec.disc_total << ")";
                throw std::runtime_error(os.str());
            }
        } else {
            nonfinite_run_ = 0;
        }
        ++step_;
        return rec;
    }

    static std::string format_record(const StepRecord& r) {
        std::ostringstream os;
        os << std::setprecision(17);
        os << "step=" << r.step << " disc=" << r.disc_total
           << " adv=" << r.gen.adversarial_total << " cyc=" << r.gen.cycle_sum()
           << " idt=" << r.gen.identity_total << " composite=" << r.gen.composite;
        return os.str();
    }

    // Full run. The loss log is deterministic; wall-clock timing goes to the
    // separate `timing` stream so the log stays bit-reproducible.
    void run(std::ostream& log, const std::filesystem::path& checkpoint_path,
             std::ostream* timing = nullptr) {
        const auto t0 = std::chrono::steady_clock::now();
        const long total = total_steps();
        while (step_ < total) {
            const StepRecord rec = train_step();
            log << format_record(rec) << "\n";
            if (cfg_.checkpoint_interval > 0 && step_ % cfg_.checkpoint_interval == 0 &&
                !checkpoint_path.empty())
                save_checkpoint(checkpoint_path);
        }
        if (!checkpoint_path.empty()) save_checkpoint(checkpoint_path);
        if (timing) {
            const double secs =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            *timing << "steps=" << total << " wall_seconds=" << secs << "\n";
        }
    }

    void save_checkpoint(const std::filesystem::path& path) {
        std::ofstream os(path, std::ios::binary);
        if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
        os.write(kCheckpointMagic, 8);
        detail::put_str(os, config_to_kv(cfg_));
        detail::put_u64(os, static_cast<std::uint64_t>(step_));
        detail::put_u64(os, static_cast<std::uint64_t>(nonfinite_run_));
        auto put_nets = [&os](std::vector<Sequential>& nets) {
            detail::put_u64(os, nets.size());
            for (auto& net : nets) {
                auto ps = net.params();
                detail::put_u64(os, ps.size());
                for (auto* p : ps) detail::put_f64v(os, p->v);
            }
        };
        put_nets(models_.generators);
        put_nets(models_.discriminators);
        detail::put_u64(os, gen_opt_.size());
        for (const auto& o : gen_opt_) o.save(os);
        detail::put_u64(os, disc_opt_.size());
        for (const auto& o : disc_opt_) o.save(os);
        detail::put_u64(os, buffers_.size());
        for (const auto& b : buffers_) b.save(os);
        detail::put_u64(os, streams_.size());
        for (const auto& s : streams_) {
            std::ostringstream ss;
            s.save(ss);
            detail::put_str(os, ss.str());
        }
        detail::put_str(os, "END");
        if (!os) throw std::runtime_error("checkpoint write failed: " + path.string());
    }

    // Resume training from an archive. `expected_mode`, when given, must
    // match the checkpoint's mode.
    static Trainer resume(const std::filesystem::path& path, const Dataset& dataset,
                          const ExperimentMode* expected_mode = nullptr) {
        std::ifstream is(path, std::ios::binary);
        if (!is) throw std::runtime_error("cannot read checkpoint " + path.string());
        char magic[8];
        is.read(magic, 8);
        if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
            throw std::runtime_error("checkpoint format tag mismatch in " + path.string() +
                                     " (expected MCCKPT01)");
        std::istringstream cfg_text(detail::get_str(is));
        TrainConfig cfg = config_from_kv(parse_kv(cfg_text));
        if (expected_mode && *expected_mode != cfg.mode)
            throw std::runtime_error("checkpoint mode is " + to_string(cfg.mode) +
                                     ", refusing to resume as " + to_string(*expected_mode));
        Trainer t(cfg, dataset);
        t.step_ = static_cast<long>(detail::get_u64(is));
        t.nonfinite_run_ = static_cast<int>(detail::get_u64(is));
        auto get_nets = [&is](std::vector<Sequential>& nets) {
            if (detail::get_u64(is) != nets.size())
                throw std::runtime_error("checkpoint: network count mismatch");
            for (auto& net : nets) {
                auto ps = net.params();
                if (detail::get_u64(is) != ps.size())
                    throw std::runtime_error("checkpoint: parameter tensor count mismatch");
                for (auto* p : ps) {
                    std::vector<double> v;
                    detail::get_f64v(is, v);
                    if (v.size() != p->size())
                        throw std::runtime_error("checkpoint: parameter shape mismatch");
                    p->v = std::move(v);
                }
            }
        };
        get_nets(t.models_.generators);
        get_nets(t.models_.discriminators);
        if (detail::get_u64(is) != t.gen_opt_.size())
            throw std::runtime_error("checkpoint: optimizer count mismatch");
        for (auto& o : t.gen_opt_) o.load(is);
        if (detail::get_u64(is) != t.disc_opt_.size())
            throw std::runtime_error("checkpoint: optimizer count mismatch");
        for (auto& o : t.disc_opt_) o.load(is);
        if (detail::get_u64(is) != t.buffers_.size())
            throw std::runtime_error("checkpoint: buffer count mismatch");
        for (auto& b : t.buffers_) b.load(is);
        if (detail::get_u64(is) != t.streams_.size())
            throw std::runtime_error("checkpoint: stream count mismatch");
        for (auto& s : t.streams_) {
            std::istringstream ss(detail::get_str(is));
            s.load(ss);
        }
        if (detail::get_str(is) != "END")
            throw std::runtime_error("checkpoint: missing end marker");
        return t;
    }

private:
    void init_optimizers() {
        for (auto& g : models_.generators)
            gen_opt_.emplace_back(g.params(), cfg_.beta1, cfg_.beta2);
        for (auto& d : models_.discriminators)
            disc_opt_.emplace_back(d.params(), cfg_.beta1, cfg_.beta2);
    }

    // Discriminator loss (minimized): least-squares mean(s_real-1)^2 +
    // mean(s_fake)^2, or the negated log-form value. Fakes come through the
    // replay buffer, detached from the generators.
    double update_discriminators(const std::vector<Tensor>& batches, double lr) {
        for (auto& d : models_.discriminators) d.zero_grads();
        double total = 0.0;
        for (const auto& path : active_paths(models_.chain, models_.mode)) {
            const DiscriminatorSlot slot =
                discriminator_for_path(models_.chain, models_.mode, path);
            const int di = models_.disc_index(slot);
            Sequential& disc = models_.discriminators[di];
            Tensor fake = compose_path(models_, path, batches[path.source()]);
            Tensor judged = buffers_[di].query(fake);
            total += disc_term(disc, batches[path.terminal()], judged);
        }
        for (std::size_t i = 0; i < models_.discriminators.size(); ++i)
            disc_opt_[i].step(models_.discriminators[i].params(),
                              models_.discriminators[i].grads(), lr);
        return total;
    }

    double disc_term(Sequential& disc, const Tensor& real, const Tensor& fake) {
        Tape rt, ft;
        Tensor rs = disc.forward(real, &rt);
        Tensor fs = disc.forward(fake, &ft);
        double value = 0.0;
        Tensor drs(rs.n, rs.c, rs.h, rs.w), dfs(fs.n, fs.c, fs.h, fs.w);
        const double ir = 1.0 / static_cast<double>(rs.size());
        const double iff = 1.0 / static_cast<double>(fs.size());
        if (cfg_.form == AdvForm::least_squares) {
            for (std::size_t i = 0; i < rs.size(); ++i) {
                value += (rs.v[i] - 1.0) * (rs.v[i] - 1.0) * ir;
                drs.v[i] = 2.0 * (rs.v[i] - 1.0) * ir;
            }
            for (std::size_t i = 0; i < fs.size(); ++i) {
                value += fs.v[i] * fs.v[i] * iff;
                dfs.v[i] = 2.0 * fs.v[i] * iff;
            }
        } else {
            for (std::size_t i = 0; i < rs.size(); ++i) {
                const double p = sigmoid(rs.v[i]);
                value += -std::log(p) * ir;
                drs.v[i] = -(1.0 - p) * ir;
            }
            for (std::size_t i = 0; i < fs.size(); ++i) {
                const double p = sigmoid(fs.v[i]);
                value += -std::log(1.0 - p) * iff;
                dfs.v[i] = p * iff;
            }
        }
        disc.backward(drs, rt, true);
        disc.backward(dfs, ft, true);
        return value;
    }

    // Joint generator update on the composite objective (discriminators
    // frozen). Returns the logged breakdown.
    LossBreakdown update_generators(const std::vector<Tensor>& batches, double lr) {
        for (auto& g : models_.generators) g.zero_grads();
        LossBreakdown b;
        for (const auto& path : active_paths(models_.chain, models_.mode)) {
            const DiscriminatorSlot slot =
                discriminator_for_path(models_.chain, models_.mode, path);
            Sequential& disc = models_.discriminator(slot);
            std::vector<Tape> tapes;
            Tensor fake = compose_path(models_, path, batches[path.source()], &tapes);
            Tape ft;
            Tensor fs = disc.forward(fake, &ft);
            Tensor dfs(fs.n, fs.c, fs.h, fs.w);
            const double inv = 1.0 / static_cast<double>(fs.size());
            if (cfg_.form == AdvForm::least_squares) {
                for (std::size_t i = 0; i < fs.size(); ++i) {
                    b.adversarial_total += (fs.v[i] - 1.0) * (fs.v[i] - 1.0) * inv;
                    dfs.v[i] = 2.0 * (fs.v[i] - 1.0) * inv;
                }
            } else {
                for (std::size_t i = 0; i < fs.size(); ++i) {
                    const double p = sigmoid(fs.v[i]);
                    b.adversarial_total += std::log(1.0 - p) * inv;
                    dfs.v[i] = -p * inv;
                }
            }
            Tensor gfake = disc.backward(dfs, ft, /*accum_param_grads=*/false);
            compose_path_backward(models_, path, gfake, tapes);
        }
        for (const auto& cyc : enumerate_cycles(models_.chain, models_.mode)) {
            const double v = cycle_consistency(models_, cyc, batches[cyc.source()],
                                               cfg_.weights.lambda_cyc);
            b.per_cycle_consistency.emplace_back(cyc, v);
        }
        b.identity_total = identity_term(models_, batches, cfg_.weights.lambda_idt);
        b.composite = b.adversarial_total + cfg_.weights.lambda_cyc * b.cycle_sum() +
                      cfg_.weights.lambda_idt * b.identity_total;
        for (std::size_t i = 0; i < models_.generators.size(); ++i)
            gen_opt_[i].step(models_.generators[i].params(), models_.generators[i].grads(), lr);
        return b;
    }

    TrainConfig cfg_;
    ModelSet models_;
    std::vector<Adam> gen_opt_, disc_opt_;
    std::vector<ReplayBuffer> buffers_;
    std::vector<BatchStream> streams_;
    long step_ = 0;
    long steps_per_epoch_ = 1;
    int nonfinite_run_ = 0;
};

// Models-only view of an archive, enough for inference and evaluation; the
// optimizer/buffer/stream tail is ignored.
struct LoadedCheckpoint {
    TrainConfig cfg;
    ModelSet models;
    long step = 0;
};

inline LoadedCheckpoint load_checkpoint_models(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read checkpoint " + path.string());
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw std::runtime_error("checkpoint format tag mismatch in " + path.string() +
                                 " (expected MCCKPT01)");
    LoadedCheckpoint out;
    std::istringstream cfg_text(detail::get_str(is));
    out.cfg = config_from_kv(parse_kv(cfg_text));
    out.step = static_cast<long>(detail::get_u64(is));
    detail::get_u64(is); // non-finite run counter
    out.models = build_models(build_chain(out.cfg.n_domains), out.cfg.mode, out.cfg.gspec,
                              out.cfg.dspec, out.cfg.form, out.cfg.seed);
    auto get_nets = [&is](std::vector<Sequential>& nets) {
        if (detail::get_u64(is) != nets.size())
            throw std::runtime_error("checkpoint: network count mismatch");
        for (auto& net : nets) {
            auto ps = net.params();
            if (detail::get_u64(is) != ps.size())
                throw std::runtime_error("checkpoint: parameter tensor count mismatch");
            for (auto* p : ps) {
                std::vector<double> v;
                detail::get_f64v(is, v);
                if (v.size() != p->size())
                    throw std::runtime_error("checkpoint: parameter shape mismatch");
                p->v = std::move(v);
            }
        }
    };
    get_nets(out.models.generators);
    get_nets(out.models.discriminators);
    return out;
}

} // namespace mccan
