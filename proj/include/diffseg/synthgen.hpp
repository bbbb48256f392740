#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffseg/data.hpp"
#include "diffseg/image_io.hpp"
#include "diffseg/metrics.hpp"
#include "diffseg/rng.hpp"
#include "diffseg/tensor.hpp"

namespace diffseg {

// A simulated annotator. cup_scale stretches the cup about its centroid;
// a diagnosis_informed rater additionally multiplies by positive_boost on
// positive cases (the "sees disease, draws a bigger cup" bias).
struct rater_profile {
    std::string name = "rater";
    double cup_scale = 1.0;
    double boundary_jitter_px = 0.0;
    double smoothing_radius_px = 0.0;
    bool diagnosis_informed = false;
    double positive_boost = 1.2;
};

inline std::vector<rater_profile> default_rater_profiles() {
    return {
        {"identity", 1.0, 3.0, 0.5, false, 1.2},
        {"over", 1.15, 3.0, 0.5, false, 1.2},
        {"under", 0.85, 3.0, 0.5, false, 1.2},
        {"informed", 1.0, 1.0, 0.5, true, 1.2},
    };
}

// Two nested soft ellipses (disc = structure 0, cup = structure 1) on a
// noisy background; the label is decided by the latent vertical
// cup-to-disc ratio against vcdr_threshold.
struct synth_spec {
    int train_count = 200;
    int val_count = 50;
    int test_count = 100;
    int h = 64, w = 64, c = 1;
    std::vector<rater_profile> raters = default_rater_profiles();
    double vcdr_threshold = 0.6;
    double disc_radius_min = 12.0;
    double disc_radius_max = 19.0;
    double vcdr_min = 0.35;
    double vcdr_max = 0.85;
    double center_jitter_px = 5.0;
    double noise_amplitude = 0.06;
    int streak_count = 3;
    double positive_fraction = 0.35;
    double positive_margin = 0.01;  // latent vcdr kept this far from the threshold
    std::uint64_t seed = 0;

    static constexpr int structures = 2;

    void validate() const {
        auto fail = [](const std::string& m) { throw validation_error("synth_spec: " + m); };
        if (train_count < 1 || val_count < 1 || test_count < 1) fail("split counts must be >= 1");
        if (h < 16 || w < 16) fail("grid must be at least 16x16");
        if (c != 1) fail("only single-channel images are generated");
        if (raters.size() < 2) fail("need at least 2 raters");
        for (const auto& r : raters) {
            if (!(r.cup_scale > 0.0)) fail("rater '" + r.name + "': cup_scale must be > 0");
            if (r.boundary_jitter_px < 0.0) fail("rater '" + r.name + "': negative jitter");
            if (r.smoothing_radius_px < 0.0) fail("rater '" + r.name + "': negative smoothing");
            if (!(r.positive_boost > 0.0)) fail("rater '" + r.name + "': positive_boost must be > 0");
        }
        if (!(vcdr_threshold > 0.0 && vcdr_threshold < 1.0)) fail("vcdr_threshold outside (0,1)");
        if (!(vcdr_min > 0.0 && vcdr_max <= 1.0 && vcdr_min < vcdr_max)) fail("bad vcdr range");
        if (positive_margin < 0.0) fail("negative positive_margin");
        if (!(vcdr_min < vcdr_threshold - positive_margin &&
              vcdr_max > vcdr_threshold + positive_margin))
            fail("vcdr range must straddle the threshold by at least the margin");
        if (!(disc_radius_min > 2.0 && disc_radius_min <= disc_radius_max)) fail("bad radius range");
        if (disc_radius_max + center_jitter_px + 2.0 > std::min(h, w) / 2.0)
            fail("disc cannot fit inside the grid with this center jitter");
        if (center_jitter_px < 0.0) fail("negative center_jitter_px");
        if (noise_amplitude < 0.0) fail("negative noise_amplitude");
        if (streak_count < 0) fail("negative streak_count");
        if (!(positive_fraction > 0.0 && positive_fraction < 1.0))
            fail("positive_fraction outside (0,1)");
    }

    json to_json() const {
        json jr = json::array();
        for (const auto& r : raters)
            jr.push_back({{"name", r.name},
                          {"cup_scale", r.cup_scale},
                          {"boundary_jitter_px", r.boundary_jitter_px},
                          {"smoothing_radius_px", r.smoothing_radius_px},
                          {"diagnosis_informed", r.diagnosis_informed},
                          {"positive_boost", r.positive_boost}});
        return json{{"train_count", train_count},
                    {"val_count", val_count},
                    {"test_count", test_count},
                    {"h", h},
                    {"w", w},
                    {"c", c},
                    {"raters", jr},
                    {"vcdr_threshold", vcdr_threshold},
                    {"disc_radius_min", disc_radius_min},
                    {"disc_radius_max", disc_radius_max},
                    {"vcdr_min", vcdr_min},
                    {"vcdr_max", vcdr_max},
                    {"center_jitter_px", center_jitter_px},
                    {"noise_amplitude", noise_amplitude},
                    {"streak_count", streak_count},
                    {"positive_fraction", positive_fraction},
                    {"positive_margin", positive_margin},
                    {"seed", seed}};
    }

    static synth_spec from_json(const json& j) {
        synth_spec s;
        s.train_count = j.value("train_count", s.train_count);
        s.val_count = j.value("val_count", s.val_count);
        s.test_count = j.value("test_count", s.test_count);
        s.h = j.value("h", s.h);
        s.w = j.value("w", s.w);
        s.c = j.value("c", s.c);
        if (j.contains("raters")) {
            s.raters.clear();
            for (const auto& jr : j["raters"]) {
                rater_profile r;
                r.name = jr.value("name", r.name);
                r.cup_scale = jr.value("cup_scale", r.cup_scale);
                r.boundary_jitter_px = jr.value("boundary_jitter_px", r.boundary_jitter_px);
                r.smoothing_radius_px = jr.value("smoothing_radius_px", r.smoothing_radius_px);
                r.diagnosis_informed = jr.value("diagnosis_informed", r.diagnosis_informed);
                r.positive_boost = jr.value("positive_boost", r.positive_boost);
                s.raters.push_back(r);
            }
        }
        s.vcdr_threshold = j.value("vcdr_threshold", s.vcdr_threshold);
        s.disc_radius_min = j.value("disc_radius_min", s.disc_radius_min);
        s.disc_radius_max = j.value("disc_radius_max", s.disc_radius_max);
        s.vcdr_min = j.value("vcdr_min", s.vcdr_min);
        s.vcdr_max = j.value("vcdr_max", s.vcdr_max);
        s.center_jitter_px = j.value("center_jitter_px", s.center_jitter_px);
        s.noise_amplitude = j.value("noise_amplitude", s.noise_amplitude);
        s.streak_count = j.value("streak_count", s.streak_count);
        s.positive_fraction = j.value("positive_fraction", s.positive_fraction);
        s.positive_margin = j.value("positive_margin", s.positive_margin);
        s.seed = j.value("seed", s.seed);
        return s;
    }
};

// ---------------------------------------------------------------------------
// Raster helpers

// Filled ellipse with a linear edge ramp ~1.5 px wide.
inline tensor soft_ellipse(int h, int w, double cy, double cx, double ry, double rx,
                           double ramp = 1.5) {
    tensor m({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double e = std::hypot((y - cy) / ry, (x - cx) / rx);
            double d = (1.0 - e) * std::min(ry, rx);  // approx signed pixel distance
            m(y, x) = std::clamp(0.5 + d / ramp, 0.0, 1.0);
        }
    return m;
}

inline tensor box_blur(const tensor& in, int radius) {
    const int h = in.dim(0), w = in.dim(1);
    tensor tmp({h, w}), out({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            int cnt = 0;
            for (int dx = -radius; dx <= radius; ++dx) {
                int xx = x + dx;
                if (xx < 0 || xx >= w) continue;
                acc += in(y, xx);
                ++cnt;
            }
            tmp(y, x) = acc / cnt;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            int cnt = 0;
            for (int dy = -radius; dy <= radius; ++dy) {
                int yy = y + dy;
                if (yy < 0 || yy >= h) continue;
                acc += tmp(yy, x);
                ++cnt;
            }
            out(y, x) = acc / cnt;
        }
    return out;
}

// Bilinear sample with zero padding outside the grid.
inline double bilinear(const tensor& m, double fy, double fx) {
    const int h = m.dim(0), w = m.dim(1);
    int y0 = static_cast<int>(std::floor(fy));
    int x0 = static_cast<int>(std::floor(fx));
    double ay = fy - y0, ax = fx - x0;
    auto at = [&](int y, int x) -> double {
        if (y < 0 || y >= h || x < 0 || x >= w) return 0.0;
        return m(y, x);
    };
    return (1 - ay) * ((1 - ax) * at(y0, x0) + ax * at(y0, x0 + 1)) +
           ay * ((1 - ax) * at(y0 + 1, x0) + ax * at(y0 + 1, x0 + 1));
}

inline void centroid(const tensor& m, double& cy, double& cx) {
    double total = 0.0, sy = 0.0, sx = 0.0;
    for (int y = 0; y < m.dim(0); ++y)
        for (int x = 0; x < m.dim(1); ++x) {
            total += m(y, x);
            sy += m(y, x) * y;
            sx += m(y, x) * x;
        }
    if (total <= 0.0) {
        cy = (m.dim(0) - 1) / 2.0;
        cx = (m.dim(1) - 1) / 2.0;
    } else {
        cy = sy / total;
        cx = sx / total;
    }
}

inline tensor scale_about(const tensor& m, double cy, double cx, double s) {
    tensor out({m.dim(0), m.dim(1)});
    for (int y = 0; y < m.dim(0); ++y)
        for (int x = 0; x < m.dim(1); ++x)
            out(y, x) = bilinear(m, cy + (y - cy) / s, cx + (x - cx) / s);
    return out;
}

// Radial boundary jitter: the rater misplaces the boundary by up to
// amplitude_px — a random uniform dilation/erosion plus a smooth angular
// wobble around the shape's centroid.
inline tensor radial_jitter(const tensor& m, double amplitude_px, std::mt19937_64& rng) {
    const double two_pi = 2.0 * std::acos(-1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> kdist(2, 4);
    double offset = 0.7 * amplitude_px * (2.0 * unit(rng) - 1.0);
    int k = kdist(rng);
    double phase = two_pi * unit(rng);
    double wobble = 0.3 * amplitude_px;

    double cy, cx;
    centroid(m, cy, cx);
    const int h = m.dim(0), w = m.dim(1);
    tensor out({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double vy = y - cy, vx = x - cx;
            double rho = std::hypot(vy, vx);
            if (rho < 1e-9) {
                out(y, x) = m(y, x);
                continue;
            }
            double theta = std::atan2(vy, vx);
            double delta = offset + wobble * std::sin(k * theta + phase);
            out(y, x) = bilinear(m, y - delta * vy / rho, x - delta * vx / rho);
        }
    return out;
}

// ---------------------------------------------------------------------------
// Annotation and sample generation

// Applies one rater's biases to the latent (h,w,2) geometry. Identity
// parameters leave the grid bit-exact. The cup is clipped to the disc;
// *clipped reports whether that changed anything.
inline tensor rater_annotate(const tensor& latent, const rater_profile& profile, int label,
                             std::mt19937_64& rng, bool* clipped = nullptr) {
    if (latent.rank() != 3 || latent.dim(2) != 2)
        throw shape_error("rater_annotate: expected (h,w,2) latent grid");
    const int h = latent.dim(0), w = latent.dim(1);
    tensor disc = fused_plane(latent, 0);
    tensor cup = fused_plane(latent, 1);

    double scale = profile.cup_scale;
    if (profile.diagnosis_informed && label == 1) scale *= profile.positive_boost;
    if (scale != 1.0) {
        double cy, cx;
        centroid(cup, cy, cx);
        cup = scale_about(cup, cy, cx, scale);
    }
    if (profile.boundary_jitter_px > 0.0) {
        disc = radial_jitter(disc, profile.boundary_jitter_px, rng);
        cup = radial_jitter(cup, profile.boundary_jitter_px, rng);
    }
    if (profile.smoothing_radius_px > 0.0) {
        int radius = std::max(1, static_cast<int>(std::lround(profile.smoothing_radius_px)));
        disc = box_blur(disc, radius);
        cup = box_blur(cup, radius);
    }

    bool any_clip = false;
    tensor out({h, w, 2});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double d = std::clamp(disc(y, x), 0.0, 1.0);
            double u = std::clamp(cup(y, x), 0.0, 1.0);
            if (u > d + 1e-12) any_clip = true;
            out(y, x, 0) = d;
            out(y, x, 1) = std::min(u, d);
        }
    if (clipped) *clipped = any_clip;
    return out;
}

struct synth_sample_result {
    multi_rater_sample sample;
    tensor latent;  // (h, w, 2): pre-rater geometry
    int clip_events = 0;
};

namespace detail {

inline double snap16(double v) { return quantize16(v) / 65535.0; }

// Deterministic stratification: positive iff the rounded running count of
// positives increases at this index. Keeps every prefix near the target
// fraction without consuming randomness.
inline bool stratified_positive(int index, double fraction) {
    auto upto = [&](int m) { return static_cast<long>(std::floor(m * fraction + 0.5)); };
    return upto(index + 1) > upto(index);
}

}  // namespace detail

inline synth_sample_result generate_sample(const synth_spec& spec, const std::string& sample_id,
                                           bool want_positive) {
    const int h = spec.h, w = spec.w;
    auto rng = sample_rng(spec.seed, sample_id, "synth");
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    // latent geometry; redraw until the rendered vcdr lands on the wanted
    // side of the threshold (pixel quantization can move it slightly)
    tensor disc, cup;
    int label = -1;
    for (int attempt = 0; attempt < 64; ++attempt) {
        double ry = spec.disc_radius_min + (spec.disc_radius_max - spec.disc_radius_min) * unit(rng);
        double rx = ry * (0.9 + 0.2 * unit(rng));
        double cy = (h - 1) / 2.0 + spec.center_jitter_px * (2.0 * unit(rng) - 1.0);
        double cx = (w - 1) / 2.0 + spec.center_jitter_px * (2.0 * unit(rng) - 1.0);
        double v = want_positive
                       ? spec.vcdr_threshold + spec.positive_margin +
                             (spec.vcdr_max - spec.vcdr_threshold - spec.positive_margin) * unit(rng)
                       : spec.vcdr_min +
                             (spec.vcdr_threshold - spec.positive_margin - spec.vcdr_min) * unit(rng);
        double cup_ry = v * ry;
        double cup_rx = std::min(cup_ry * (0.9 + 0.2 * unit(rng)), 0.92 * rx);
        disc = soft_ellipse(h, w, cy, cx, ry, rx);
        cup = soft_ellipse(h, w, cy, cx, cup_ry, cup_rx);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) cup(y, x) = std::min(cup(y, x), disc(y, x));
        double measured = vcdr(cup, disc, 0.5);
        label = measured > spec.vcdr_threshold ? 1 : 0;
        if ((label == 1) == want_positive) break;
        label = -1;
    }
    if (label < 0)
        throw numeric_error("generate_sample: could not realize wanted class for '" + sample_id +
                            "'");

    synth_sample_result res;
    res.latent = tensor({h, w, 2});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            res.latent(y, x, 0) = disc(y, x);
            res.latent(y, x, 1) = cup(y, x);
        }

    // image: dark ground, smoothed noise, bright disc, faint cup, dark streaks
    tensor noise({h, w});
    for (long i = 0; i < noise.size(); ++i) noise[i] = 2.0 * unit(rng) - 1.0;
    noise = box_blur(noise, 2);
    tensor img({h, w, 1});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            img(y, x, 0) =
                0.15 + spec.noise_amplitude * noise(y, x) + 0.30 * disc(y, x) + 0.10 * cup(y, x);
    const double two_pi = 2.0 * std::acos(-1.0);
    for (int s = 0; s < spec.streak_count; ++s) {
        double x0 = w * (0.15 + 0.7 * unit(rng));
        double amp = 2.0 + 4.0 * unit(rng);
        double wavelen = h * (0.5 + 1.5 * unit(rng));
        double phase = two_pi * unit(rng);
        double sigma = 1.2;
        for (int y = 0; y < h; ++y) {
            double xc = x0 + amp * std::sin(two_pi * y / wavelen + phase);
            for (int x = 0; x < w; ++x) {
                double d = x - xc;
                img(y, x, 0) -= 0.18 * std::exp(-d * d / (2.0 * sigma * sigma));
            }
        }
    }
    for (long i = 0; i < img.size(); ++i)
        img[i] = detail::snap16(std::clamp(img[i], 0.0, 1.0));

    const int n = static_cast<int>(spec.raters.size());
    multi_rater_sample& s = res.sample;
    s.sample_id = sample_id;
    s.label = label;
    s.image = std::move(img);
    s.masks = tensor({h, w, 2, n});
    for (int r = 0; r < n; ++r) {
        auto rrng = sample_rng(spec.seed, sample_id, "rater" + std::to_string(r));
        bool clipped = false;
        tensor annotated = rater_annotate(res.latent, spec.raters[r], label, rrng, &clipped);
        if (clipped) ++res.clip_events;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int k = 0; k < 2; ++k)
                    s.masks(y, x, k, r) = detail::snap16(annotated(y, x, k));
    }
    return res;
}

inline dataset generate_split(const synth_spec& spec, dataset_split split, int count) {
    spec.validate();
    dataset d;
    d.split = split;
    int clip_events = 0;
    std::string prefix = to_string(split);
    for (int i = 0; i < count; ++i) {
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "%s_%04d", prefix.c_str(), i);
        auto res = generate_sample(spec, idbuf, detail::stratified_positive(i, spec.positive_fraction));
        clip_events += res.clip_events;
        d.samples.push_back(std::move(res.sample));
    }
    d.metadata["generator"] = "synthgen";
    d.metadata["n"] = std::to_string(spec.raters.size());
    d.metadata["K"] = std::to_string(synth_spec::structures);
    d.metadata["cup_clip_events"] = std::to_string(clip_events);
    d.metadata["synth_spec"] = spec.to_json().dump();
    validate_dataset(d);
    return d;
}

struct synth_datasets {
    dataset train, val, test;
};

inline synth_datasets generate_dataset(const synth_spec& spec) {
    synth_datasets out;
    out.train = generate_split(spec, dataset_split::train, spec.train_count);
    out.val = generate_split(spec, dataset_split::val, spec.val_count);
    out.test = generate_split(spec, dataset_split::test, spec.test_count);
    return out;
}

}  // namespace diffseg
