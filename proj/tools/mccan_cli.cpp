// Command-line entry point: dataset synthesis, training, inference,
// evaluation, parameter accounting and cycle tracing. Exit codes: 0 success,
// 1 runtime failure (one-line error), 2 usage error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "mccan/evaluate.hpp"
#include "mccan/training.hpp"

namespace fs = std::filesystem;
using namespace mccan;

namespace {

std::vector<double> parse_sigmas(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
    return out;
}

void echo_config(const std::string& what, const std::string& kv) {
    std::string one = kv;
    for (auto& c : one)
        if (c == '\n') c = ' ';
    while (!one.empty() && one.back() == ' ') one.pop_back();
    std::cout << "config: cmd=" << what << " " << one << "\n";
}

int cmd_synth(int domains, const std::string& sigmas_csv, int n, int side, std::uint64_t seed,
              const std::string& out) {
    PhantomConfig cfg;
    cfg.n_images = n;
    cfg.side = side;
    cfg.noise_sigmas = parse_sigmas(sigmas_csv);
    cfg.seed = seed;
    if (static_cast<int>(cfg.noise_sigmas.size()) != domains)
        throw std::invalid_argument("--sigmas must list one value per domain");
    std::ostringstream kv;
    kv << "domains=" << domains << " sigmas=" << sigmas_csv << " n=" << n << " side=" << side
       << " seed=" << seed << " out=" << out;
    echo_config("synth-data", kv.str());
    auto ds = make_phantom_dataset(cfg);
    write_dataset(out, ds, build_chain(domains));
    std::cout << "wrote " << ds.images.size() << " images, " << ds.rois.size() << " rois to "
              << out << "\n";
    return 0;
}

TrainConfig load_train_config(const std::string& config_path) {
    if (config_path.empty()) return TrainConfig{};
    std::ifstream is(config_path);
    if (!is) throw std::runtime_error("cannot read config " + config_path);
    return config_from_kv(parse_kv(is));
}

int cmd_train(const std::string& config_path, const std::string& mode, const std::string& data,
              const std::string& out, const std::string& log_path,
              const std::string& resume_path, long seed, const std::string& adv_form,
              const std::string& timing_path) {
    TrainConfig cfg = load_train_config(config_path);
    if (!mode.empty()) cfg.mode = parse_mode(mode);
    if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
    if (!adv_form.empty()) cfg.form = parse_adv_form(adv_form);
    echo_config("train", config_to_kv(cfg));

    auto ds = read_dataset(data, build_chain(cfg.n_domains));
    std::optional<Trainer> trainer;
    if (!resume_path.empty()) {
        const ExperimentMode want = cfg.mode;
        trainer.emplace(Trainer::resume(resume_path, ds, mode.empty() ? nullptr : &want));
    } else {
        trainer.emplace(cfg, ds);
    }

    std::ofstream log(log_path.empty() ? (out + ".log") : log_path);
    if (!log) throw std::runtime_error("cannot write training log");
    std::ofstream timing;
    std::ostream* timing_os = nullptr;
    if (!timing_path.empty()) {
        timing.open(timing_path);
        timing_os = &timing;
    }
    trainer->run(log, out, timing_os);
    std::cout << "trained " << trainer->step_count() << " steps; checkpoint " << out << "\n";
    return 0;
}

int cmd_denoise(const std::string& ckpt, const std::string& in, const std::string& out) {
    auto loaded = load_checkpoint_models(ckpt);
    echo_config("denoise", config_to_kv(loaded.cfg));
    ImageRecord img = read_image(in);
    img.domain = 0; // inference starts at the chain head
    write_image(out, denoise(loaded.models, img));
    std::cout << "wrote " << out << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data, const std::string& rois_path,
             const std::string& out) {
    auto loaded = load_checkpoint_models(ckpt);
    echo_config("eval", config_to_kv(loaded.cfg));
    auto chain = build_chain(loaded.cfg.n_domains);
    auto ds = read_dataset(data, chain);
    std::vector<Roi> rois = ds.rois;
    if (!rois_path.empty()) {
        std::ifstream is(rois_path);
        if (!is) throw std::runtime_error("cannot read rois " + rois_path);
        rois.clear();
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            std::istringstream ls(line);
            Roi r;
            ls >> r.image_id >> r.roi_id >> r.x >> r.y >> r.width >> r.height;
            if (ls) rois.push_back(r);
        }
    }
    std::ostringstream text, tsv;
    int n_images = 0;
    for (const auto& img : ds.images) {
        if (img.domain != 0) continue;
        std::vector<Roi> mine;
        for (const auto& r : rois)
            if (r.image_id == img.source_id) mine.push_back(r);
        if (mine.empty()) continue;
        auto rep = compare_report(img, {{"MCCAN", denoise(loaded.models, img)}}, mine);
        text << "image " << img.source_id << "\n" << rep.to_text() << "\n";
        tsv << rep.to_tsv();
        ++n_images;
    }
    std::ofstream(out + ".txt") << text.str();
    std::ofstream(out + ".tsv") << tsv.str();
    std::cout << "evaluated " << n_images << " images; wrote " << out << ".txt and " << out
              << ".tsv\n";
    return 0;
}

int cmd_count_params(const std::string& mode_str) {
    const ExperimentMode mode = parse_mode(mode_str);
    std::ostringstream kv;
    kv << "mode=" << mode_str;
    echo_config("count-params", kv.str());
    const GeneratorSpec spec =
        mode == ExperimentMode::ccadn ? ccadn_generator_spec() : mccan_generator_spec();
    const int n_inference = mode == ExperimentMode::ccadn ? 1 : 2;
    const auto budget = inference_budget(spec, n_inference);
    std::cout << "generator_params=" << budget.params_per_generator << "\n"
              << "inference_generators=" << n_inference << "\n"
              << "inference_params_total=" << budget.total_inference_params << "\n"
              << "inference_flops_512=" << budget.total_inference_flops << "\n";
    return 0;
}

int cmd_cycle_trace(const std::string& ckpt, const std::string& in, const std::string& out,
                    bool plan_only, const std::string& mode_str, int domains,
                    const std::string& bg_csv) {
    if (plan_only) {
        const ExperimentMode mode = parse_mode(mode_str.empty() ? "mccan" : mode_str);
        auto chain = build_chain(domains);
        std::ostringstream kv;
        kv << "mode=" << to_string(mode) << " domains=" << domains << " plan-only=1";
        echo_config("cycle-trace", kv.str());
        for (const auto& cyc : enumerate_cycles(chain, mode))
            std::cout << (cyc.kind == CycleKind::local ? "local  " : "global ")
                      << format_steps(chain, cyc.steps) << "\n";
        return 0;
    }
    auto loaded = load_checkpoint_models(ckpt);
    echo_config("cycle-trace", config_to_kv(loaded.cfg));
    auto chain = loaded.models.chain;
    ImageRecord img = read_image(in);
    img.domain = 0;
    auto bg_vals = parse_sigmas(bg_csv);
    if (bg_vals.size() != 4) throw std::invalid_argument("--bg must be x,y,w,h");
    Roi bg{img.source_id, 0, static_cast<int>(bg_vals[0]), static_cast<int>(bg_vals[1]),
           static_cast<int>(bg_vals[2]), static_cast<int>(bg_vals[3])};
    // the forward global cycle from the chain head
    Cycle cyc = enumerate_cycles(chain, loaded.cfg.mode).back();
    for (const auto& c : enumerate_cycles(chain, loaded.cfg.mode))
        if (c.steps.front() == 0 && c.steps.size() == 2 * chain.size() - 1u) cyc = c;
    auto trace = cycle_trace(loaded.models, img, cyc, bg);
    fs::create_directories(out);
    std::ofstream index(fs::path(out) / "index.tsv");
    index << "position\tdomain\tfile\tbackground_sd\n" << std::setprecision(17);
    for (std::size_t i = 0; i < trace.size(); ++i) {
        const std::string fname = "step_" + std::to_string(i) + ".mcraw";
        write_image(fs::path(out) / fname, trace[i].image);
        index << i << "\t" << chain.name(trace[i].domain) << "\t" << fname << "\t"
              << trace[i].background_sd << "\n";
        std::cout << "step " << i << " domain=" << chain.name(trace[i].domain)
                  << " background_sd=" << trace[i].background_sd << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-cycle-consistent adversarial denoising toolkit"};
    app.require_subcommand(1);

    // synth-data
    auto* synth = app.add_subcommand("synth-data", "generate a phantom dataset");
    int domains = 3, n = 200, side = 64;
    std::string sigmas = "50,25,0", out, config_path, mode, data, log_path, resume_path;
    std::string adv_form, in, rois_path, timing_path, bg = "1,1,8,8";
    long synth_seed = 1, seed = -1;
    bool plan_only = false;
    synth->add_option("--domains", domains, "chain length (default 3)");
    synth->add_option("--sigmas", sigmas, "per-domain noise SDs, comma separated (default 50,25,0)");
    synth->add_option("--n", n, "images per domain (default 200)");
    synth->add_option("--side", side, "image side in pixels (default 64)");
    synth->add_option("--seed", synth_seed, "rng seed (default 1)");
    synth->add_option("--out", out, "output directory")->required();

    // train
    auto* train = app.add_subcommand("train", "train a model on a dataset");
    train->add_option("--config", config_path, "key=value training config file");
    train->add_option("--mode", mode, "ccadn|mccan|mccan-no-local|mccan-no-global");
    train->add_option("--data", data, "dataset directory")->required();
    train->add_option("--out", out, "checkpoint output path")->required();
    train->add_option("--log", log_path, "loss log path (default <out>.log)");
    train->add_option("--resume", resume_path, "checkpoint to resume from");
    train->add_option("--seed", seed, "rng seed override");
    train->add_option("--adv-form", adv_form, "log|lsq adversarial form");
    train->add_option("--timing", timing_path, "wall-clock timing output path");

    // denoise
    auto* den = app.add_subcommand("denoise", "run the full denoising chain on one image");
    den->add_option("--checkpoint", config_path, "trained checkpoint")->required();
    den->add_option("--in", in, "input image (.mcraw)")->required();
    den->add_option("--out", out, "output image path")->required();

    // eval
    auto* ev = app.add_subcommand("eval", "ROI comparison report over a dataset");
    ev->add_option("--checkpoint", config_path, "trained checkpoint")->required();
    ev->add_option("--data", data, "dataset directory")->required();
    ev->add_option("--rois", rois_path, "ROI sidecar override");
    ev->add_option("--out", out, "report path prefix")->required();

    // count-params
    auto* cp = app.add_subcommand("count-params", "parameter/FLOP accounting");
    cp->add_option("--mode", mode, "ccadn|mccan")->required();

    // cycle-trace
    auto* ct = app.add_subcommand("cycle-trace", "trace an image through a global cycle");
    ct->add_option("--checkpoint", config_path, "trained checkpoint");
    ct->add_option("--in", in, "input image (.mcraw)");
    ct->add_option("--out", out, "output directory for the image strip");
    ct->add_flag("--plan-only", plan_only, "print the planned cycles and exit");
    ct->add_option("--mode", mode, "mode for --plan-only");
    ct->add_option("--domains", domains, "chain length for --plan-only");
    ct->add_option("--bg", bg, "background ROI as x,y,w,h");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*synth)
            return cmd_synth(domains, sigmas, n, side,
                             static_cast<std::uint64_t>(synth_seed), out);
        if (*train)
            return cmd_train(config_path, mode, data, out, log_path, resume_path, seed,
                             adv_form, timing_path);
        if (*den) return cmd_denoise(config_path, in, out);
        if (*ev) return cmd_eval(config_path, data, rois_path, out);
        if (*cp) return cmd_count_params(mode);
        if (*ct) {
            if (!plan_only && (config_path.empty() || in.empty() || out.empty()))
                throw std::invalid_argument(
                    "cycle-trace needs --checkpoint, --in and --out (or --plan-only)");
            return cmd_cycle_trace(config_path, in, out, plan_only, mode, domains, bg);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
