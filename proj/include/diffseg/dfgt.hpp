#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffseg/data.hpp"
#include "diffseg/diagnet.hpp"
#include "diffseg/errors.hpp"
#include "diffseg/fusion.hpp"
#include "diffseg/image_io.hpp"
#include "diffseg/nn/adam.hpp"
#include "diffseg/rng.hpp"
#include "diffseg/spectral.hpp"
#include "diffseg/tensor.hpp"

namespace diffseg {

// ---------------------------------------------------------------------------
// The DF-GT optimizer: per training sample, finds expertness logits that
// minimize the frozen diagnosis loss of the fused label. Four interchangeable
// parameterizations of the logits: the raw grid, a transformation-robust
// variant (random small warps during optimization), a spectral grid, and a
// coordinate-network generator.

enum class dfgt_method { raw, transrob, fourier, expg };

inline std::string to_string(dfgt_method m) {
    switch (m) {
        case dfgt_method::raw: return "raw";
        case dfgt_method::transrob: return "transrob";
        case dfgt_method::fourier: return "fourier";
        case dfgt_method::expg: return "expg";
    }
    throw validation_error("unknown dfgt method");
}

inline dfgt_method dfgt_method_from_string(const std::string& s) {
    if (s == "raw") return dfgt_method::raw;
    if (s == "transrob") return dfgt_method::transrob;
    if (s == "fourier") return dfgt_method::fourier;
    if (s == "expg") return dfgt_method::expg;
    throw validation_error("unknown dfgt method '" + s + "'");
}

inline fusion_provenance provenance_of(dfgt_method m) {
    switch (m) {
        case dfgt_method::raw: return fusion_provenance::dfgt_raw;
        case dfgt_method::transrob: return fusion_provenance::dfgt_transrob;
        case dfgt_method::fourier: return fusion_provenance::dfgt_fourier;
        case dfgt_method::expg: return fusion_provenance::dfgt_expg;
    }
    throw validation_error("unknown dfgt method");
}

struct transform_spec {
    double rot_deg = 5.0;      // rotation drawn from [-rot_deg, +rot_deg]
    double scale_lo = 0.95;    // isotropic scale drawn from [scale_lo, scale_hi]
    double scale_hi = 1.05;
    double jitter_px = 2.0;    // translation drawn from [-jitter_px, +jitter_px] per axis

    bool degenerate() const {
        return rot_deg == 0.0 && scale_lo == 1.0 && scale_hi == 1.0 && jitter_px == 0.0;
    }

    nlohmann::json to_json() const {
        return {{"rot_deg", rot_deg},
                {"scale_lo", scale_lo},
                {"scale_hi", scale_hi},
                {"jitter_px", jitter_px}};
    }

    static transform_spec from_json(const nlohmann::json& j) {
        transform_spec t;
        t.rot_deg = j.at("rot_deg").get<double>();
        t.scale_lo = j.at("scale_lo").get<double>();
        t.scale_hi = j.at("scale_hi").get<double>();
        t.jitter_px = j.at("jitter_px").get<double>();
        return t;
    }
};

struct dfgt_hyper {
    int steps = 125;
    double alpha = 1e-2;
    dfgt_method method = dfgt_method::expg;
    transform_spec transform;
    bool fourier_freq_scaling = false;  // damp high spectral bins by 1/(1+freq)
    bool expg_shared = false;           // one generator refined across all samples
    std::uint64_t seed = 0;

    void validate() const {
        if (steps < 1) throw validation_error("dfgt_hyper: steps must be >= 1");
        if (alpha <= 0.0) throw validation_error("dfgt_hyper: alpha must be positive");
        if (transform.scale_lo > transform.scale_hi || transform.scale_lo <= 0.0)
            throw validation_error("dfgt_hyper: bad scale range");
        if (transform.rot_deg < 0.0 || transform.jitter_px < 0.0)
            throw validation_error("dfgt_hyper: negative transform range");
    }

    nlohmann::json to_json() const {
        return {{"steps", steps},
                {"alpha", alpha},
                {"method", to_string(method)},
                {"transform", transform.to_json()},
                {"fourier_freq_scaling", fourier_freq_scaling},
                {"expg_shared", expg_shared},
                {"seed", seed}};
    }

    static dfgt_hyper from_json(const nlohmann::json& j) {
        dfgt_hyper h;
        h.steps = j.at("steps").get<int>();
        h.alpha = j.at("alpha").get<double>();
        h.method = dfgt_method_from_string(j.at("method").get<std::string>());
        h.transform = transform_spec::from_json(j.at("transform"));
        h.fourier_freq_scaling = j.at("fourier_freq_scaling").get<bool>();
        h.expg_shared = j.at("expg_shared").get<bool>();
        h.seed = j.at("seed").get<std::uint64_t>();
        return h;
    }
};

// ---------------------------------------------------------------------------
// Small warps on logit grids (rotation + isotropic scale + translation about
// the grid center, bilinear resampling, zero padding). warp_adjoint is the
// exact transpose of warp as a linear map, which is what routes the loss
// gradient from transformed logits back onto the untransformed grid.

struct warp_params {
    double rot_rad = 0.0, scale = 1.0, tx = 0.0, ty = 0.0;
    bool identity() const { return rot_rad == 0.0 && scale == 1.0 && tx == 0.0 && ty == 0.0; }
};

inline warp_params draw_transform(const transform_spec& spec, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> rot(-spec.rot_deg, spec.rot_deg);
    std::uniform_real_distribution<double> scl(spec.scale_lo, spec.scale_hi);
    std::uniform_real_distribution<double> jit(-spec.jitter_px, spec.jitter_px);
    warp_params t;
    t.rot_rad = (spec.rot_deg == 0.0 ? 0.0 : rot(rng)) * std::acos(-1.0) / 180.0;
    t.scale = (spec.scale_lo == spec.scale_hi) ? spec.scale_lo : scl(rng);
    t.tx = spec.jitter_px == 0.0 ? 0.0 : jit(rng);
    t.ty = spec.jitter_px == 0.0 ? 0.0 : jit(rng);
    return t;
}

namespace detail {

// Source coordinates of destination pixel (x, y) under the inverse transform.
inline void warp_source(const warp_params& t, int h, int w, double x, double y, double& sx,
                        double& sy) {
    double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
    double dx = (x - cx - t.tx) / t.scale, dy = (y - cy - t.ty) / t.scale;
    double c = std::cos(-t.rot_rad), s = std::sin(-t.rot_rad);
    sx = cx + c * dx - s * dy;
    sy = cy + s * dx + c * dy;
}

template <typename Visit>
inline void bilinear_taps(double sx, double sy, int h, int w, Visit&& visit) {
    int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
    double fx = sx - x0, fy = sy - y0;
    const double wts[4] = {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
    const int off[4][2] = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
    for (int i = 0; i < 4; ++i) {
        int yy = y0 + off[i][0], xx = x0 + off[i][1];
        if (yy < 0 || yy >= h || xx < 0 || xx >= w || wts[i] == 0.0) continue;
        visit(yy, xx, wts[i]);
    }
}

}  // namespace detail

inline tensor warp_logits(const tensor& z, const warp_params& t) {
    if (t.identity()) return z;
    int h = z.dim(0), w = z.dim(1), ks = z.dim(2), n = z.dim(3);
    tensor out({h, w, ks, n});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double sx, sy;
            detail::warp_source(t, h, w, x, y, sx, sy);
            detail::bilinear_taps(sx, sy, h, w, [&](int yy, int xx, double wt) {
                for (int k = 0; k < ks; ++k)
                    for (int r = 0; r < n; ++r) out(y, x, k, r) += wt * z(yy, xx, k, r);
            });
        }
    return out;
}

inline tensor warp_logits_adjoint(const tensor& g, const warp_params& t) {
    if (t.identity()) return g;
    int h = g.dim(0), w = g.dim(1), ks = g.dim(2), n = g.dim(3);
    tensor out({h, w, ks, n});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double sx, sy;
            detail::warp_source(t, h, w, x, y, sx, sy);
            detail::bilinear_taps(sx, sy, h, w, [&](int yy, int xx, double wt) {
                for (int k = 0; k < ks; ++k)
                    for (int r = 0; r < n; ++r) out(yy, xx, k, r) += wt * g(y, x, k, r);
            });
        }
    return out;
}

// ---------------------------------------------------------------------------
// The ExpG coordinate generator: a per-pixel 4-layer perceptron mapping the
// normalized pixel coordinate to one logit per (structure, rater). The last
// layer starts at zero, so the initial map is exactly uniform (majority vote).

struct expg_generator {
    int structures = 0, raters = 0;
    nn::linear l1, l2, l3, l4;
    nn::tanh_t a1, a2, a3;

    void init(int ks, int n, std::mt19937_64& rng, int hidden = 64) {
        structures = ks;
        raters = n;
        l1.init(2, hidden, rng);
        l2.init(hidden, hidden, rng);
        l3.init(hidden, hidden, rng);
        l4.init(hidden, ks * n, rng);
        l4.w.w.setZero();  // start at zero logits -> uniform expertness
    }

    std::vector<nn::param*> params() {
        std::vector<nn::param*> ps;
        for (nn::linear* l : {&l1, &l2, &l3, &l4})
            for (nn::param* p : l->params()) ps.push_back(p);
        return ps;
    }

    nn::mat forward(const nn::mat& coords) {
        return l4.forward(a3.forward(l3.forward(a2.forward(l2.forward(a1.forward(l1.forward(coords)))))));
    }

    void backward(const nn::mat& dout) {
        l1.backward(a1.backward(l2.backward(a2.backward(l3.backward(a3.backward(l4.backward(dout)))))));
    }
};

// (h*w, 2) grid of pixel coordinates normalized to [-1, 1], row p = y*w + x,
// column 0 = x, column 1 = y.
inline nn::mat coordinate_grid(int h, int w) {
    nn::mat g(static_cast<long>(h) * w, 2);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            long p = static_cast<long>(y) * w + x;
            g(p, 0) = w > 1 ? 2.0 * x / (w - 1) - 1.0 : 0.0;
            g(p, 1) = h > 1 ? 2.0 * y / (h - 1) - 1.0 : 0.0;
        }
    return g;
}

namespace detail {

// (h*w, K*n) generator output <-> (h, w, K, n) logit grid, column = k*n + r.
inline tensor logits_from_rows(const nn::mat& rows, int h, int w, int ks, int n) {
    tensor z({h, w, ks, n});
    std::copy(rows.data(), rows.data() + rows.size(), z.data());
    return z;
}

inline nn::mat rows_from_logits(const tensor& z) {
    nn::mat rows(static_cast<long>(z.dim(0)) * z.dim(1), z.dim(2) * z.dim(3));
    std::copy(z.data(), z.data() + z.size(), rows.data());
    return rows;
}

// Flat Adam variable wrapping a logit or spectrum grid.
struct flat_var {
    nn::param p;
    std::vector<int> shape;

    explicit flat_var(std::vector<int> s) : shape(std::move(s)) {
        p.init(tensor::count(shape), 1);
    }
    tensor value() const {
        tensor t(shape);
        std::copy(p.w.data(), p.w.data() + p.w.size(), t.data());
        return t;
    }
    void set_grad(const tensor& g) { std::copy(g.data(), g.data() + g.size(), p.g.data()); }
};

inline mat plane_of(const tensor& t4, int k, int r) {
    mat m(t4.dim(0), t4.dim(1));
    for (int y = 0; y < t4.dim(0); ++y)
        for (int x = 0; x < t4.dim(1); ++x) m(y, x) = t4(y, x, k, r);
    return m;
}

inline void set_plane(tensor& t4, int k, int r, const mat& m) {
    for (int y = 0; y < t4.dim(0); ++y)
        for (int x = 0; x < t4.dim(1); ++x) t4(y, x, k, r) = m(y, x);
}

// Amplitude damping for spectral bin (u, v), used when fourier_freq_scaling
// is enabled: higher-frequency coefficients get proportionally smaller spatial
// influence, biasing optimization toward smooth maps.
inline double dct_bin_amplitude(int u, int v, int h, int w) {
    double fu = static_cast<double>(u) / h, fv = static_cast<double>(v) / w;
    return 1.0 / (1.0 + std::sqrt(fu * fu + fv * fv) * 8.0);
}

inline void guard_sample_geometry(const multi_rater_sample& s, const diagnosis_net& net) {
    if (s.h() != net.config.h || s.w() != net.config.w || s.c() != net.config.image_channels ||
        s.structures() != net.config.structures)
        throw shape_error("dfgt: sample geometry does not match the frozen net");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Optimizer results: the normalized map actually returned corresponds to the
// best (lowest-loss) iterate seen, so the descent guarantee — final loss no
// worse than the uniform start — holds by construction.

struct optimize_result {
    expertness_map map;
    tensor logits;              // best spatial logits
    std::vector<double> trace;  // loss per evaluation, trace[0] = uniform start
};

struct expg_result {
    expertness_map map;
    expg_generator generator;  // best weights
    std::vector<double> trace;
};

namespace detail {

[[noreturn]] inline void rethrow_abort(const char* who, const std::string& id, int step,
                                       const numeric_error& e) {
    throw numeric_error(std::string(who) + ": sample '" + id + "' aborted at step " +
                        std::to_string(step) + ": " + e.what());
}

}  // namespace detail

inline optimize_result optimize_raw(diagnosis_net& net, const multi_rater_sample& s,
                                    const dfgt_hyper& hyper) {
    hyper.validate();
    if (hyper.method != dfgt_method::raw)
        throw validation_error("optimize_raw: hyper.method is not raw");
    if (!net.frozen) throw validation_error("optimize_raw: net must be frozen");
    detail::guard_sample_geometry(s, net);

    detail::flat_var z({s.h(), s.w(), s.structures(), s.raters()});
    nn::adam opt(hyper.alpha);

    auto eval = [&](int step) {
        try {
            return loss_and_grad(net, s.image, s.masks, z.value(), s.label);
        } catch (const numeric_error& e) {
            detail::rethrow_abort("optimize_raw", s.sample_id, step, e);
        }
    };

    optimize_result out;
    auto [loss, grad] = eval(0);
    out.trace.push_back(loss);
    tensor best = z.value();
    double best_loss = loss;
    for (int t = 1; t <= hyper.steps; ++t) {
        z.p.zero_grad();
        z.set_grad(grad);
        opt.step({&z.p});
        std::tie(loss, grad) = eval(t);
        out.trace.push_back(loss);
        if (loss < best_loss) {
            best_loss = loss;
            best = z.value();
        }
    }
    out.logits = best;
    out.map = normalize_expertness(best);
    return out;
}

inline optimize_result optimize_transrob(diagnosis_net& net, const multi_rater_sample& s,
                                         const dfgt_hyper& hyper) {
    hyper.validate();
    if (hyper.method != dfgt_method::transrob)
        throw validation_error("optimize_transrob: hyper.method is not transrob");
    if (!net.frozen) throw validation_error("optimize_transrob: net must be frozen");
    detail::guard_sample_geometry(s, net);

    std::mt19937_64 rng = sample_rng(hyper.seed, s.sample_id, "dfgt");
    detail::flat_var z({s.h(), s.w(), s.structures(), s.raters()});
    nn::adam opt(hyper.alpha);

    auto eval_at = [&](const tensor& logits, int step) {
        try {
            return loss_and_grad(net, s.image, s.masks, logits, s.label);
        } catch (const numeric_error& e) {
            detail::rethrow_abort("optimize_transrob", s.sample_id, step, e);
        }
    };

    optimize_result out;
    auto [loss, grad] = eval_at(z.value(), 0);
    out.trace.push_back(loss);
    tensor best = z.value();
    double best_loss = loss;
    for (int t = 1; t <= hyper.steps; ++t) {
        // gradient through a randomly warped copy of the logits
        warp_params w = draw_transform(hyper.transform, rng);
        auto [wloss, wgrad] = eval_at(warp_logits(z.value(), w), t);
        (void)wloss;
        z.p.zero_grad();
        z.set_grad(warp_logits_adjoint(wgrad, w));
        opt.step({&z.p});
        // trace and best-iterate tracking use the untransformed logits
        std::tie(loss, grad) = eval_at(z.value(), t);
        out.trace.push_back(loss);
        if (loss < best_loss) {
            best_loss = loss;
            best = z.value();
        }
    }
    out.logits = best;
    out.map = normalize_expertness(best);
    return out;
}

inline optimize_result optimize_fourier(diagnosis_net& net, const multi_rater_sample& s,
                                        const dfgt_hyper& hyper) {
    hyper.validate();
    if (hyper.method != dfgt_method::fourier)
        throw validation_error("optimize_fourier: hyper.method is not fourier");
    if (!net.frozen) throw validation_error("optimize_fourier: net must be frozen");
    detail::guard_sample_geometry(s, net);

    int h = s.h(), w = s.w(), ks = s.structures(), n = s.raters();
    detail::flat_var spec({h, w, ks, n});
    nn::adam opt(hyper.alpha);

    auto amplitude = [&](int u, int v) {
        return hyper.fourier_freq_scaling ? detail::dct_bin_amplitude(u, v, h, w) : 1.0;
    };
    auto to_spatial = [&](const tensor& sp) {
        tensor z({h, w, ks, n});
        for (int k = 0; k < ks; ++k)
            for (int r = 0; r < n; ++r) {
                mat plane = detail::plane_of(sp, k, r);
                for (int u = 0; u < h; ++u)
                    for (int v = 0; v < w; ++v) plane(u, v) *= amplitude(u, v);
                detail::set_plane(z, k, r, idct2(plane));
            }
        return z;
    };
    // adjoint of (scale then idct2) is (dct2 then scale)
    auto to_spectrum_grad = [&](const tensor& g) {
        tensor gs({h, w, ks, n});
        for (int k = 0; k < ks; ++k)
            for (int r = 0; r < n; ++r) {
                mat plane = dct2(detail::plane_of(g, k, r));
                for (int u = 0; u < h; ++u)
                    for (int v = 0; v < w; ++v) plane(u, v) *= amplitude(u, v);
                detail::set_plane(gs, k, r, plane);
            }
        return gs;
    };

    auto eval = [&](int step) {
        try {
            return loss_and_grad(net, s.image, s.masks, to_spatial(spec.value()), s.label);
        } catch (const numeric_error& e) {
            detail::rethrow_abort("optimize_fourier", s.sample_id, step, e);
        }
    };

    optimize_result out;
    auto [loss, grad] = eval(0);
    out.trace.push_back(loss);
    tensor best = spec.value();
    double best_loss = loss;
    for (int t = 1; t <= hyper.steps; ++t) {
        spec.p.zero_grad();
        spec.set_grad(to_spectrum_grad(grad));
        opt.step({&spec.p});
        std::tie(loss, grad) = eval(t);
        out.trace.push_back(loss);
        if (loss < best_loss) {
            best_loss = loss;
            best = spec.value();
        }
    }
    out.logits = to_spatial(best);
    out.map = normalize_expertness(out.logits);
    return out;
}

// Core ExpG loop over an externally owned generator and optimizer state, so a
// shared-generator run can thread one (generator, Adam) pair through many
// samples. Fresh-generator callers use the wrapper below.
inline expg_result optimize_expg_with(diagnosis_net& net, const multi_rater_sample& s,
                                      const dfgt_hyper& hyper, expg_generator& gen,
                                      nn::adam& opt) {
    hyper.validate();
    if (hyper.method != dfgt_method::expg)
        throw validation_error("optimize_expg: hyper.method is not expg");
    if (!net.frozen) throw validation_error("optimize_expg: net must be frozen");
    detail::guard_sample_geometry(s, net);

    int h = s.h(), w = s.w(), ks = s.structures(), n = s.raters();
    nn::mat grid = coordinate_grid(h, w);
    std::vector<nn::param*> ps = gen.params();

    auto eval = [&](int step) {
        try {
            tensor z = detail::logits_from_rows(gen.forward(grid), h, w, ks, n);
            return loss_and_grad(net, s.image, s.masks, z, s.label);
        } catch (const numeric_error& e) {
            detail::rethrow_abort("optimize_expg", s.sample_id, step, e);
        }
    };

    expg_result out;
    auto [loss, grad] = eval(0);
    out.trace.push_back(loss);
    expg_generator best = gen;
    double best_loss = loss;
    for (int t = 1; t <= hyper.steps; ++t) {
        nn::adam::zero_grad(ps);
        gen.backward(detail::rows_from_logits(grad));  // caches are from eval's forward
        opt.step(ps);
        std::tie(loss, grad) = eval(t);
        out.trace.push_back(loss);
        if (loss < best_loss) {
            best_loss = loss;
            best = gen;
        }
    }
    out.map = normalize_expertness(detail::logits_from_rows(best.forward(grid), h, w, ks, n));
    out.generator = std::move(best);
    return out;
}

inline expg_result optimize_expg(diagnosis_net& net, const multi_rater_sample& s,
                                 const dfgt_hyper& hyper) {
    std::mt19937_64 rng = sample_rng(hyper.seed, s.sample_id, "dfgt");
    expg_generator gen;
    gen.init(s.structures(), s.raters(), rng);
    nn::adam opt(hyper.alpha);
    return optimize_expg_with(net, s, hyper, gen, opt);
}

// ---------------------------------------------------------------------------
// Whole-split optimization

struct dfgt_record {
    std::string sample_id;
    fused_label fused;
    double initial_loss = 0.0;  // loss at uniform expertness == majority vote
    double final_loss = 0.0;    // loss of the returned (best) map
    std::vector<double> mean_expertness;
};

struct dfgt_dataset {
    dfgt_hyper hyper;
    int structures = 0;
    std::vector<dfgt_record> records;
    std::vector<std::string> failed;  // sample ids whose optimization aborted

    const dfgt_record* find(const std::string& id) const {
        for (const auto& r : records)
            if (r.sample_id == id) return &r;
        return nullptr;
    }
};

inline dfgt_dataset build_dfgt(diagnosis_net& net, const dataset& data, const dfgt_hyper& hyper) {
    hyper.validate();
    if (!net.frozen) throw validation_error("build_dfgt: net must be frozen");

    dfgt_dataset out;
    out.hyper = hyper;
    out.structures = data.structures();
    fusion_provenance prov = provenance_of(hyper.method);

    // shared-generator ablation: one (generator, optimizer) pair spans samples
    expg_generator shared_gen;
    nn::adam shared_opt(hyper.alpha);
    if (hyper.method == dfgt_method::expg && hyper.expg_shared && !data.samples.empty()) {
        std::mt19937_64 rng = stage_rng(hyper.seed, "dfgt-shared");
        shared_gen.init(data.structures(), data.n(), rng);
    }

    for (const auto& s : data.samples) {
        try {
            expertness_map map;
            std::vector<double> trace;
            switch (hyper.method) {
                case dfgt_method::raw: {
                    auto r = optimize_raw(net, s, hyper);
                    map = std::move(r.map);
                    trace = std::move(r.trace);
                    break;
                }
                case dfgt_method::transrob: {
                    auto r = optimize_transrob(net, s, hyper);
                    map = std::move(r.map);
                    trace = std::move(r.trace);
                    break;
                }
                case dfgt_method::fourier: {
                    auto r = optimize_fourier(net, s, hyper);
                    map = std::move(r.map);
                    trace = std::move(r.trace);
                    break;
                }
                case dfgt_method::expg: {
                    expg_result r = hyper.expg_shared
                                        ? optimize_expg_with(net, s, hyper, shared_gen, shared_opt)
                                        : optimize_expg(net, s, hyper);
                    map = std::move(r.map);
                    trace = std::move(r.trace);
                    break;
                }
            }
            dfgt_record rec;
            rec.sample_id = s.sample_id;
            rec.fused = fuse(s.masks, map, prov);
            rec.initial_loss = trace.front();
            rec.final_loss = *std::min_element(trace.begin(), trace.end());
            rec.mean_expertness = mean_expertness_per_rater(map);
            out.records.push_back(std::move(rec));
        } catch (const numeric_error&) {
            out.failed.push_back(s.sample_id);
        }
    }
    return out;
}

// Fraction of optimized samples whose final loss did not exceed the
// majority-vote (uniform) loss. Best-iterate selection makes this 1.0 up to
// the evaluation itself being deterministic.
inline double descent_fraction(const dfgt_dataset& dd) {
    if (dd.records.empty()) return 1.0;
    int ok = 0;
    for (const auto& r : dd.records)
        if (r.final_loss <= r.initial_loss) ++ok;
    return static_cast<double>(ok) / dd.records.size();
}

// ---------------------------------------------------------------------------
// Persistence: fused labels as 16-bit PNGs plus a line-oriented text manifest
// carrying the hyperparameters and per-sample losses. Writing is deterministic
// byte-for-byte for identical inputs.

namespace detail {

inline std::string fmt17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

inline void save_dfgt(const std::filesystem::path& dir, const dfgt_dataset& dd) {
    std::error_code ec;
    std::filesystem::create_directories(dir / "fused", ec);
    if (ec) throw io_error("save_dfgt: cannot create " + (dir / "fused").string());

    for (const auto& r : dd.records)
        for (int k = 0; k < dd.structures; ++k) {
            tensor plane({r.fused.values.dim(0), r.fused.values.dim(1), 1});
            for (int y = 0; y < plane.dim(0); ++y)
                for (int x = 0; x < plane.dim(1); ++x) plane(y, x, 0) = r.fused.values(y, x, k);
            write_png16((dir / "fused" / (r.sample_id + "_s" + std::to_string(k) + ".png")).string(),
                        plane);
        }

    std::ostringstream os;
    os << "diffseg-dfgt v1\n";
    os << "method = " << to_string(dd.hyper.method) << "\n";
    os << "steps = " << dd.hyper.steps << "\n";
    os << "alpha = " << detail::fmt17(dd.hyper.alpha) << "\n";
    os << "rot_deg = " << detail::fmt17(dd.hyper.transform.rot_deg) << "\n";
    os << "scale_lo = " << detail::fmt17(dd.hyper.transform.scale_lo) << "\n";
    os << "scale_hi = " << detail::fmt17(dd.hyper.transform.scale_hi) << "\n";
    os << "jitter_px = " << detail::fmt17(dd.hyper.transform.jitter_px) << "\n";
    os << "fourier_freq_scaling = " << (dd.hyper.fourier_freq_scaling ? 1 : 0) << "\n";
    os << "expg_shared = " << (dd.hyper.expg_shared ? 1 : 0) << "\n";
    os << "seed = " << dd.hyper.seed << "\n";
    os << "structures = " << dd.structures << "\n";
    os << "samples = " << dd.records.size() << "\n";
    os << "failed =";
    for (const auto& id : dd.failed) os << " " << id;
    os << "\n";
    for (const auto& r : dd.records) {
        os << "sample " << r.sample_id << " initial " << detail::fmt17(r.initial_loss)
           << " final " << detail::fmt17(r.final_loss) << " expertness";
        for (double e : r.mean_expertness) os << " " << detail::fmt17(e);
        os << "\n";
    }
    std::ofstream f(dir / "dfgt_manifest.txt", std::ios::binary);
    if (!f) throw io_error("save_dfgt: cannot write " + (dir / "dfgt_manifest.txt").string());
    f << os.str();
}

inline dfgt_dataset load_dfgt(const std::filesystem::path& dir) {
    std::ifstream f(dir / "dfgt_manifest.txt");
    if (!f) throw io_error("load_dfgt: missing manifest " + (dir / "dfgt_manifest.txt").string());
    std::string line;
    if (!std::getline(f, line) || line != "diffseg-dfgt v1")
        throw format_error("load_dfgt: unrecognized manifest header");

    dfgt_dataset dd;
    long declared_samples = -1;
    auto bad = [&](const std::string& why) -> format_error {
        return format_error("load_dfgt: " + why);
    };
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream is(line);
        std::string key;
        is >> key;
        if (key == "sample") {
            dfgt_record rec;
            std::string word;
            if (!(is >> rec.sample_id >> word) || word != "initial" || !(is >> rec.initial_loss))
                throw bad("malformed sample line: " + line);
            if (!(is >> word) || word != "final" || !(is >> rec.final_loss))
                throw bad("malformed sample line: " + line);
            if (!(is >> word) || word != "expertness") throw bad("malformed sample line: " + line);
            double e;
            while (is >> e) rec.mean_expertness.push_back(e);
            dd.records.push_back(std::move(rec));
            continue;
        }
        std::string eq;
        is >> eq;
        if (eq != "=") throw bad("malformed line: " + line);
        if (key == "method") {
            std::string v;
            is >> v;
            dd.hyper.method = dfgt_method_from_string(v);
        } else if (key == "steps")
            is >> dd.hyper.steps;
        else if (key == "alpha")
            is >> dd.hyper.alpha;
        else if (key == "rot_deg")
            is >> dd.hyper.transform.rot_deg;
        else if (key == "scale_lo")
            is >> dd.hyper.transform.scale_lo;
        else if (key == "scale_hi")
            is >> dd.hyper.transform.scale_hi;
        else if (key == "jitter_px")
            is >> dd.hyper.transform.jitter_px;
        else if (key == "fourier_freq_scaling") {
            int v;
            is >> v;
            dd.hyper.fourier_freq_scaling = v != 0;
        } else if (key == "expg_shared") {
            int v;
            is >> v;
            dd.hyper.expg_shared = v != 0;
        } else if (key == "seed")
            is >> dd.hyper.seed;
        else if (key == "structures")
            is >> dd.structures;
        else if (key == "samples")
            is >> declared_samples;
        else if (key == "failed") {
            std::string id;
            while (is >> id) dd.failed.push_back(id);
        } else
            throw bad("unknown key '" + key + "'");
    }
    if (declared_samples >= 0 && declared_samples != static_cast<long>(dd.records.size()))
        throw bad("sample count mismatch: declared " + std::to_string(declared_samples) +
                  ", found " + std::to_string(dd.records.size()));

    fusion_provenance prov = provenance_of(dd.hyper.method);
    for (auto& rec : dd.records) {
        std::vector<tensor> planes;
        for (int k = 0; k < dd.structures; ++k) {
            auto path = dir / "fused" / (rec.sample_id + "_s" + std::to_string(k) + ".png");
            planes.push_back(read_png(path.string()));
        }
        int h = planes[0].dim(0), w = planes[0].dim(1);
        rec.fused.values = tensor({h, w, dd.structures});
        rec.fused.provenance = prov;
        for (int k = 0; k < dd.structures; ++k)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) rec.fused.values(y, x, k) = planes[static_cast<size_t>(k)](y, x, 0);
    }
    return dd;
}

}  // namespace diffseg
