#pragma once

// Evaluation: chained inference, ROI statistics (population SD over
// half-open rectangles, declared in every report header), comparison tables
// with SD-reduction percentages, and cycle image traces.

#include <iomanip>
#include <map>
#include <sstream>

#include "mccan/data.hpp"
#include "mccan/losses.hpp"

namespace mccan {

struct RoiStat {
    double mean = 0.0;
    double sd = 0.0; // population convention (divide by n)
};

inline RoiStat roi_stat(const ImageRecord& img, const Roi& roi) {
    if (roi.width * roi.height < 4)
        throw std::invalid_argument("roi_stats: area below 4 pixels");
    if (roi.x < 0 || roi.y < 0 || roi.x + roi.width > img.side || roi.y + roi.height > img.side)
        throw std::invalid_argument("roi_stats: rectangle outside the image");
    const double n = static_cast<double>(roi.width) * roi.height;
    double mu = 0.0;
    for (int y = roi.y; y < roi.y + roi.height; ++y)
        for (int x = roi.x; x < roi.x + roi.width; ++x) mu += img.at(y, x);
    mu /= n;
    double s2 = 0.0;
    for (int y = roi.y; y < roi.y + roi.height; ++y)
        for (int x = roi.x; x < roi.x + roi.width; ++x) {
            const double d = img.at(y, x) - mu;
            s2 += d * d;
        }
    return {mu, std::sqrt(s2 / n)};
}

inline std::vector<RoiStat> roi_stats(const ImageRecord& img, const std::vector<Roi>& rois) {
    std::vector<RoiStat> out;
    for (const auto& r : rois) out.push_back(roi_stat(img, r));
    return out;
}

// ---------------------------------------------------------------------------
// Inference

inline Tensor image_to_tensor(const ImageRecord& img) {
    Tensor t(1, 1, img.side, img.side);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) t.v[i] = to_unit(img.pixels[i]);
    return t;
}

inline ImageRecord tensor_to_image(const Tensor& t, DomainId domain,
                                   const std::string& source_id) {
    if (t.n != 1 || t.c != 1 || t.h != t.w)
        throw std::invalid_argument("tensor_to_image: expected a single square image");
    ImageRecord img;
    img.side = t.h;
    img.domain = domain;
    img.source_id = source_id;
    img.pixels.resize(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) img.pixels[i] = from_unit(t.v[i]);
    return img;
}

// One generator application per path step, in calibrated units.
inline ImageRecord apply_path(ModelSet& ms, const Path& path, const ImageRecord& input) {
    Tensor out = compose_path(ms, path, image_to_tensor(input));
    return tensor_to_image(out, path.terminal(), input.source_id);
}

// Noisy-to-clean composition along the whole chain (domain 0 to the end).
inline ImageRecord denoise(ModelSet& ms, const ImageRecord& image) {
    if (image.domain != 0)
        throw std::invalid_argument("denoise: image domain '" +
                                    ms.chain.name(image.domain) +
                                    "' is not the chain head");
    Path forward;
    for (int d = 0; d < ms.chain.size(); ++d) forward.steps.push_back(d);
    return apply_path(ms, forward, image);
}

// ---------------------------------------------------------------------------
// Comparison report

struct RoiReportRow {
    int roi_id = 0;
    std::string method;
    double mean = 0.0;
    double sd = 0.0;
    double reduction_pct = 0.0; // 100 * (1 - sd / sd_original)
};

struct RoiReport {
    std::vector<RoiReportRow> rows;

    std::string to_text() const {
        std::ostringstream os;
        os << "# ROI statistics: mean / population SD, half-open rectangles\n";
        os << std::left << std::setw(8) << "roi" << std::setw(16) << "method" << std::right
           << std::setw(12) << "mean" << std::setw(12) << "sd" << std::setw(14)
           << "reduction_%" << "\n";
        os << std::fixed << std::setprecision(1);
        for (const auto& r : rows)
            os << std::left << std::setw(8) << r.roi_id << std::setw(16) << r.method
               << std::right << std::setw(12) << r.mean << std::setw(12) << r.sd
               << std::setw(14) << r.reduction_pct << "\n";
        return os.str();
    }

    std::string to_tsv() const {
        std::ostringstream os;
        os << std::setprecision(17);
        os << "roi_id\tmethod\tmean\tsd\treduction_pct\n";
        for (const auto& r : rows)
            os << r.roi_id << "\t" << r.method << "\t" << r.mean << "\t" << r.sd << "\t"
               << r.reduction_pct << "\n";
        return os.str();
    }
};

// Cross table of (roi, method) statistics. The original image supplies the
// baseline SD for the reduction percentages.
inline RoiReport compare_report(const ImageRecord& original,
                                const std::map<std::string, ImageRecord>& variants,
                                const std::vector<Roi>& rois) {
    for (const auto& [name, img] : variants)
        if (img.side != original.side)
            throw std::invalid_argument("compare_report: variant '" + name +
                                        "' shape differs from the original");
    RoiReport rep;
    for (const auto& roi : rois) {
        const RoiStat base = roi_stat(original, roi);
        rep.rows.push_back({roi.roi_id, "Original", base.mean, base.sd, 0.0});
        for (const auto& [name, img] : variants) {
            const RoiStat s = roi_stat(img, roi);
            const double red = base.sd > 0 ? 100.0 * (1.0 - s.sd / base.sd) : 0.0;
            rep.rows.push_back({roi.roi_id, name, s.mean, s.sd, red});
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Cycle trace

struct TraceStep {
    DomainId domain = 0;
    ImageRecord image;
    double background_sd = 0.0;
};

// The input plus one image per generator application of the cycle, each with
// the background-ROI SD attached.
inline std::vector<TraceStep> cycle_trace(ModelSet& ms, const ImageRecord& input,
                                          const Cycle& cycle, const Roi& background) {
    validate_path_steps(ms.chain, cycle.steps);
    if (cycle.steps.front() != input.domain)
        throw std::invalid_argument("cycle_trace: cycle does not start at the image's domain");
    std::vector<TraceStep> out;
    out.push_back({input.domain, input, roi_stat(input, background).sd});
    Tensor cur = image_to_tensor(input);
    for (std::size_t i = 0; i + 1 < cycle.steps.size(); ++i) {
        cur = ms.generator(cycle.steps[i], cycle.steps[i + 1]).forward(cur, nullptr);
        ImageRecord img = tensor_to_image(cur, cycle.steps[i + 1], input.source_id);
        out.push_back({cycle.steps[i + 1], img, roi_stat(img, background).sd});
    }
    return out;
}

} // namespace mccan
