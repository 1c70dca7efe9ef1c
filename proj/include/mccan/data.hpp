#pragma once

// Dataset handling: calibrated-unit 2-D images, synthetic ellipse phantoms
// with per-domain additive Gaussian noise, the half-weighted intermediate
// domain construction, noise extraction, random crops and unpaired batch
// streams.
//
// On-disk formats (all little-endian, documented in the README):
//   image:    "MCRAW01\0" magic, u32 height, u32 width, f64 row-major pixels
//   manifest: one record per line, tab-separated: path, domain name,
//             source_id, extractor tag
//   ROI sidecar: one rectangle per line: image_id roi_id x y width height
//             (pixel coordinates, origin top-left, half-open)

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mccan/domain_chain.hpp"
#include "mccan/tensor.hpp"

namespace mccan {

// Calibrated intensities are mapped onto roughly [-1, 1] for network I/O by
// a fixed affine map and back for evaluation.
constexpr double kIntensityCenter = 1000.0;
constexpr double kIntensityHalfRange = 500.0;

inline double to_unit(double calibrated) {
    return (calibrated - kIntensityCenter) / kIntensityHalfRange;
}
inline double from_unit(double unit) { return unit * kIntensityHalfRange + kIntensityCenter; }

struct ImageRecord {
    int side = 0;
    std::vector<double> pixels; // row-major, calibrated units
    DomainId domain = 0;
    std::string source_id;

    double& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * side + x]; }
    double at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * side + x]; }

    void validate() const {
        if (side < 1 || pixels.size() != static_cast<std::size_t>(side) * side)
            throw std::invalid_argument("image: not square");
        for (double p : pixels)
            if (!std::isfinite(p)) throw std::invalid_argument("image: non-finite pixel");
    }
};

struct Roi {
    std::string image_id;
    int roi_id = 0;
    int x = 0, y = 0, width = 0, height = 0;
};

struct PhantomConfig {
    int n_images = 0;
    int side = 64;
    std::vector<double> noise_sigmas; // strictly decreasing along the chain
    std::uint64_t seed = 1;
};

// ---------------------------------------------------------------------------
// Intermediate-domain construction: clean + w * noise_field.

inline ImageRecord synthesize_intermediate(const ImageRecord& clean,
                                           const std::vector<double>& noise_field, double w,
                                           DomainId intermediate_domain) {
    if (noise_field.size() != clean.pixels.size())
        throw std::invalid_argument("synthesize_intermediate: shape mismatch");
    ImageRecord out = clean;
    out.domain = intermediate_domain;
    for (std::size_t i = 0; i < out.pixels.size(); ++i) out.pixels[i] += w * noise_field[i];
    return out;
}

enum class NoiseExtractor { residual, highpass };

inline std::string to_string(NoiseExtractor e) {
    return e == NoiseExtractor::residual ? "residual" : "highpass";
}

// Zero-mean noise field from a noisy image. residual: noisy - reference.
// highpass: noisy - boxblur5(noisy) (reflected borders), then mean-centered.
inline std::vector<double> extract_noise(const ImageRecord& noisy, NoiseExtractor method,
                                         const ImageRecord* reference = nullptr) {
    std::vector<double> field(noisy.pixels.size());
    if (method == NoiseExtractor::residual) {
        if (!reference) throw std::invalid_argument("extract_noise: residual needs a reference");
        if (reference->pixels.size() != noisy.pixels.size() || reference->side != noisy.side)
            throw std::invalid_argument("extract_noise: reference shape mismatch");
        for (std::size_t i = 0; i < field.size(); ++i)
            field[i] = noisy.pixels[i] - reference->pixels[i];
    } else {
        const int n = noisy.side, r = 2; // 5x5 box
        auto refl = [n](int i) {
            if (i < 0) i = -i - 1;
            if (i >= n) i = 2 * n - 1 - i;
            return i;
        };
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                double s = 0.0;
                for (int dy = -r; dy <= r; ++dy)
                    for (int dx = -r; dx <= r; ++dx) s += noisy.at(refl(y + dy), refl(x + dx));
                field[static_cast<std::size_t>(y) * n + x] =
                    noisy.at(y, x) - s / ((2 * r + 1) * (2 * r + 1));
            }
    }
    const double mu = std::accumulate(field.begin(), field.end(), 0.0) /
                      static_cast<double>(field.size());
    for (double& v : field) v -= mu;
    return field;
}

inline ImageRecord random_crop(const ImageRecord& img, int crop, std::mt19937_64& rng) {
    if (crop < 1 || crop > img.side) throw std::invalid_argument("random_crop: crop > side");
    std::uniform_int_distribution<int> off(0, img.side - crop);
    const int oy = off(rng), ox = off(rng);
    ImageRecord out;
    out.side = crop;
    out.domain = img.domain;
    out.source_id = img.source_id;
    out.pixels.resize(static_cast<std::size_t>(crop) * crop);
    for (int y = 0; y < crop; ++y)
        for (int x = 0; x < crop; ++x)
            out.pixels[static_cast<std::size_t>(y) * crop + x] = img.at(oy + y, ox + x);
    return out;
}

// ---------------------------------------------------------------------------
// Phantom dataset

struct Dataset {
    std::vector<ImageRecord> images;
    std::vector<Roi> rois;
    std::string extractor_tag = "synthetic";

    std::vector<const ImageRecord*> domain_images(DomainId d) const {
        std::vector<const ImageRecord*> out;
        for (const auto& im : images)
            if (im.domain == d) out.push_back(&im);
        return out;
    }
};

namespace detail {

struct Ellipse {
    double cx, cy, a, b, angle, intensity;

    bool contains(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double c = std::cos(angle), s = std::sin(angle);
        const double u = (dx * c + dy * s) / a;
        const double v = (-dx * s + dy * c) / b;
        return u * u + v * v <= 1.0;
    }
};

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1) + 0xbf58476d1ce4e5b9ULL * (c + 1);
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return z;
}

} // namespace detail

constexpr double kPhantomBackground = 1000.0;

// Ellipse phantoms on a constant background with additive zero-mean Gaussian
// noise at the domain sigma. The top-left quarter is kept free of ellipses
// and carries a background ROI (roi_id 0); each ellipse contributes one
// interior ROI. The same seed always produces bit-identical output.
inline Dataset make_phantom_dataset(const PhantomConfig& cfg) {
    if (cfg.side < 8) throw std::invalid_argument("phantom: side too small");
    if (cfg.n_images < 0) throw std::invalid_argument("phantom: negative image count");
    if (cfg.noise_sigmas.empty()) throw std::invalid_argument("phantom: no noise sigmas");
    for (std::size_t i = 0; i + 1 < cfg.noise_sigmas.size(); ++i)
        if (cfg.noise_sigmas[i] <= cfg.noise_sigmas[i + 1])
            throw std::invalid_argument("phantom: noise sigmas must be strictly decreasing");
    for (double s : cfg.noise_sigmas)
        if (s < 0) throw std::invalid_argument("phantom: negative sigma");

    Dataset ds;
    const int n_domains = static_cast<int>(cfg.noise_sigmas.size());
    const int reserved = cfg.side / 4; // ellipse-free corner
    for (int d = 0; d < n_domains; ++d) {
        for (int i = 0; i < cfg.n_images; ++i) {
            std::mt19937_64 rng(detail::mix_seed(cfg.seed, d, i));
            ImageRecord img;
            img.side = cfg.side;
            img.domain = d;
            img.source_id = "d" + std::to_string(d) + "_" + std::to_string(i);
            img.pixels.assign(static_cast<std::size_t>(cfg.side) * cfg.side, kPhantomBackground);

            std::uniform_int_distribution<int> count_dist(3, 8);
            std::uniform_real_distribution<double> pos(0.0, cfg.side);
            std::uniform_real_distribution<double> axis(cfg.side / 10.0, cfg.side / 4.0);
            std::uniform_real_distribution<double> ang(0.0, 3.14159265358979323846);
            std::uniform_real_distribution<double> uni(0.0, 1.0);

            const int want = count_dist(rng);
            std::vector<detail::Ellipse> placed;
            for (int e = 0; e < want; ++e) {
                for (int attempt = 0; attempt < 40; ++attempt) {
                    detail::Ellipse el{pos(rng), pos(rng), axis(rng), axis(rng), ang(rng), 0.0};
                    const double rmax = std::max(el.a, el.b);
                    if (el.cx - rmax < 1 || el.cy - rmax < 1 || el.cx + rmax > cfg.side - 1 ||
                        el.cy + rmax > cfg.side - 1)
                        continue;
                    if (el.cx - rmax < reserved && el.cy - rmax < reserved)
                        continue; // keep the background corner clean
                    bool overlap = false;
                    for (const auto& other : placed) {
                        const double dx = el.cx - other.cx, dy = el.cy - other.cy;
                        const double lim = rmax + std::max(other.a, other.b) + 1.0;
                        if (dx * dx + dy * dy < lim * lim) overlap = true;
                    }
                    if (overlap) continue;
                    // Distinct constant intensities, all on one side of the
                    // background: a symmetric intensity distribution would
                    // make contrast inversion around the background value
                    // distribution-preserving, an unlearnable ambiguity for
                    // purely adversarial supervision.
                    double inten;
                    do {
                        inten = 600.0 + 300.0 * uni(rng);
                    } while (std::any_of(placed.begin(), placed.end(), [&](const auto& o) {
                        return std::abs(o.intensity - inten) < 20.0;
                    }));
                    el.intensity = inten;
                    placed.push_back(el);
                    break;
                }
            }

            for (const auto& el : placed)
                for (int y = 0; y < cfg.side; ++y)
                    for (int x = 0; x < cfg.side; ++x)
                        if (el.contains(x + 0.5, y + 0.5)) img.at(y, x) = el.intensity;

            // ROI ground truth before noise: background corner, then one
            // inscribed square per ellipse.
            if (reserved >= 6) {
                Roi bg{img.source_id, 0, 1, 1, reserved - 2, reserved - 2};
                ds.rois.push_back(bg);
            }
            int rid = 1;
            for (const auto& el : placed) {
                // conservative inscribed square, well clear of the boundary
                const int h = static_cast<int>(std::min(el.a, el.b) / 2.0) - 1;
                if (h < 1) continue;
                Roi roi{img.source_id, rid++, static_cast<int>(el.cx) - h,
                        static_cast<int>(el.cy) - h, 2 * h, 2 * h};
                if (roi.x < 0 || roi.y < 0 || roi.x + roi.width > cfg.side ||
                    roi.y + roi.height > cfg.side || roi.width * roi.height < 4)
                    continue;
                ds.rois.push_back(roi);
            }

            const double sigma = cfg.noise_sigmas[d];
            if (sigma > 0) {
                std::normal_distribution<double> noise(0.0, sigma);
                for (auto& p : img.pixels) p += noise(rng);
            }
            ds.images.push_back(std::move(img));
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Unpaired batch stream: per-domain shuffling, per-draw random crops,
// epoch-exact permutations. Serializable so training can resume mid-epoch.

class BatchStream {
public:
    BatchStream() = default;

    BatchStream(std::vector<ImageRecord> images, int batch, int crop, std::uint64_t seed,
                DomainId domain)
        : images_(std::move(images)), batch_(batch), crop_(crop) {
        if (images_.empty()) throw std::invalid_argument("batch_stream: unknown or empty domain");
        if (batch_ < 1 || batch_ > static_cast<int>(images_.size()))
            throw std::invalid_argument("batch_stream: batch size exceeds dataset");
        for (const auto& im : images_)
            if (im.side < crop_) throw std::invalid_argument("batch_stream: crop > image side");
        rng_.seed(detail::mix_seed(seed, 0x5eedULL, static_cast<std::uint64_t>(domain)));
        reshuffle();
    }

    // Next batch in unit intensity space, shape (batch, 1, crop, crop).
    Tensor next() {
        Tensor out(batch_, 1, crop_, crop_);
        for (int b = 0; b < batch_; ++b) {
            if (pos_ >= perm_.size()) reshuffle();
            const ImageRecord& img = images_[perm_[pos_++]];
            ImageRecord c = crop_ < img.side ? random_crop(img, crop_, rng_) : img;
            for (int y = 0; y < crop_; ++y)
                for (int x = 0; x < crop_; ++x)
                    out.at(b, 0, y, x) = to_unit(c.at(y, x));
        }
        return out;
    }

    std::size_t epoch_size() const { return images_.size(); }

    void save(std::ostream& os) const {
        os << pos_ << " " << perm_.size() << "\n";
        for (auto i : perm_) os << i << " ";
        os << "\n" << rng_ << "\n";
    }
    void load(std::istream& is) {
        std::size_t n;
        is >> pos_ >> n;
        perm_.resize(n);
        for (auto& i : perm_) is >> i;
        is >> rng_;
        if (!is) throw std::runtime_error("batch_stream: corrupt stream state");
    }

private:
    void reshuffle() {
        perm_.resize(images_.size());
        std::iota(perm_.begin(), perm_.end(), 0);
        std::shuffle(perm_.begin(), perm_.end(), rng_);
        pos_ = 0;
    }

    std::vector<ImageRecord> images_;
    int batch_ = 1, crop_ = 1;
    std::vector<std::size_t> perm_;
    std::size_t pos_ = 0;
    std::mt19937_64 rng_;
};

inline BatchStream batch_stream(const Dataset& ds, DomainId domain, int batch, int crop,
                                std::uint64_t seed) {
    std::vector<ImageRecord> imgs;
    for (const auto& im : ds.images)
        if (im.domain == domain) imgs.push_back(im);
    return BatchStream(std::move(imgs), batch, crop, seed, domain);
}

// ---------------------------------------------------------------------------
// File I/O

inline void write_image(const std::filesystem::path& path, const ImageRecord& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    const char magic[8] = {'M', 'C', 'R', 'A', 'W', '0', '1', '\0'};
    os.write(magic, 8);
    const std::uint32_t h = img.side, w = img.side;
    os.write(reinterpret_cast<const char*>(&h), 4);
    os.write(reinterpret_cast<const char*>(&w), 4);
    os.write(reinterpret_cast<const char*>(img.pixels.data()),
             static_cast<std::streamsize>(img.pixels.size() * sizeof(double)));
}

inline ImageRecord read_image(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + path.string());
    char magic[8];
    is.read(magic, 8);
    if (std::memcmp(magic, "MCRAW01\0", 8) != 0)
        throw std::runtime_error("bad image magic in " + path.string());
    std::uint32_t h = 0, w = 0;
    is.read(reinterpret_cast<char*>(&h), 4);
    is.read(reinterpret_cast<char*>(&w), 4);
    if (h != w || h == 0 || h > 1u << 16)
        throw std::runtime_error("unsupported image dims in " + path.string());
    ImageRecord img;
    img.side = static_cast<int>(h);
    img.pixels.resize(static_cast<std::size_t>(h) * w);
    is.read(reinterpret_cast<char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size() * sizeof(double)));
    if (!is) throw std::runtime_error("truncated image " + path.string());
    img.source_id = path.stem().string();
    return img;
}

inline void write_dataset(const std::filesystem::path& dir, const Dataset& ds,
                          const DomainChain& chain) {
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir / "manifest.tsv");
    for (const auto& img : ds.images) {
        const std::string fname = img.source_id + ".mcraw";
        write_image(dir / fname, img);
        manifest << fname << "\t" << chain.name(img.domain) << "\t" << img.source_id << "\t"
                 << ds.extractor_tag << "\n";
    }
    std::ofstream rois(dir / "rois.tsv");
    for (const auto& r : ds.rois)
        rois << r.image_id << " " << r.roi_id << " " << r.x << " " << r.y << " " << r.width
             << " " << r.height << "\n";
}

inline Dataset read_dataset(const std::filesystem::path& dir, const DomainChain& chain) {
    std::ifstream manifest(dir / "manifest.tsv");
    if (!manifest) throw std::runtime_error("no manifest in " + dir.string());
    Dataset ds;
    std::string line;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string fname, domain_name, source_id, tag;
        std::getline(ls, fname, '\t');
        std::getline(ls, domain_name, '\t');
        std::getline(ls, source_id, '\t');
        std::getline(ls, tag, '\t');
        ImageRecord img = read_image(dir / fname);
        img.source_id = source_id;
        img.domain = -1;
        for (int d = 0; d < chain.size(); ++d)
            if (chain.name(d) == domain_name) img.domain = d;
        if (img.domain < 0)
            throw std::runtime_error("manifest domain '" + domain_name + "' not in chain");
        ds.extractor_tag = tag;
        ds.images.push_back(std::move(img));
    }
    std::ifstream rois(dir / "rois.tsv");
    while (std::getline(rois, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        Roi r;
        ls >> r.image_id >> r.roi_id >> r.x >> r.y >> r.width >> r.height;
        if (ls) ds.rois.push_back(r);
    }
    return ds;
}

} // namespace mccan
