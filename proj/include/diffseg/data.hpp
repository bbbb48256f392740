#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffseg/errors.hpp"
#include "diffseg/image_io.hpp"
#include "diffseg/tensor.hpp"

namespace diffseg {

using json = nlohmann::json;

// One raw image with n rater masks per structure channel and a binary
// diagnosis label.
struct multi_rater_sample {
    tensor image;  // (h, w, c), values in [0,1]
    tensor masks;  // (h, w, K, n), values in [0,1]
    int label = 0;
    std::string sample_id;

    int h() const { return image.dim(0); }
    int w() const { return image.dim(1); }
    int c() const { return image.dim(2); }
    int structures() const { return masks.dim(2); }
    int raters() const { return masks.dim(3); }
};

// Per-pixel, per-rater convex weights; for every (pixel, structure) the n
// rater entries sum to 1.
struct expertness_map {
    tensor weights;  // (h, w, K, n)
};

enum class fusion_provenance { majority_vote, dfgt_raw, dfgt_transrob, dfgt_fourier, dfgt_expg };

inline std::string to_string(fusion_provenance p) {
    switch (p) {
        case fusion_provenance::majority_vote: return "majority_vote";
        case fusion_provenance::dfgt_raw: return "dfgt_raw";
        case fusion_provenance::dfgt_transrob: return "dfgt_transrob";
        case fusion_provenance::dfgt_fourier: return "dfgt_fourier";
        case fusion_provenance::dfgt_expg: return "dfgt_expg";
    }
    return "unknown";
}

inline fusion_provenance provenance_from_string(const std::string& s) {
    if (s == "majority_vote") return fusion_provenance::majority_vote;
    if (s == "dfgt_raw") return fusion_provenance::dfgt_raw;
    if (s == "dfgt_transrob") return fusion_provenance::dfgt_transrob;
    if (s == "dfgt_fourier") return fusion_provenance::dfgt_fourier;
    if (s == "dfgt_expg") return fusion_provenance::dfgt_expg;
    throw format_error("unknown fusion provenance: " + s);
}

struct fused_label {
    tensor values;  // (h, w, K), values in [0,1]
    fusion_provenance provenance = fusion_provenance::majority_vote;
};

enum class dataset_split { train, val, test };

inline std::string to_string(dataset_split s) {
    switch (s) {
        case dataset_split::train: return "train";
        case dataset_split::val: return "val";
        case dataset_split::test: return "test";
    }
    return "train";
}

inline dataset_split split_from_string(const std::string& s) {
    if (s == "train") return dataset_split::train;
    if (s == "val") return dataset_split::val;
    if (s == "test") return dataset_split::test;
    throw format_error("unknown split: " + s);
}

struct dataset {
    std::vector<multi_rater_sample> samples;
    dataset_split split = dataset_split::train;
    std::map<std::string, std::string> metadata;

    bool empty() const { return samples.empty(); }
    int n() const { return samples.front().raters(); }
    int structures() const { return samples.front().structures(); }
    int h() const { return samples.front().h(); }
    int w() const { return samples.front().w(); }
    int c() const { return samples.front().c(); }
};

struct train_history {
    struct record {
        int epoch = 0;
        double mean_loss = 0.0;
        std::map<std::string, double> metrics;
    };
    std::vector<record> records;
};

// ---------------------------------------------------------------------------
// Plane helpers

inline tensor mask_plane(const tensor& masks, int structure, int rater) {
    tensor out({masks.dim(0), masks.dim(1)});
    for (int y = 0; y < masks.dim(0); ++y)
        for (int x = 0; x < masks.dim(1); ++x) out(y, x) = masks(y, x, structure, rater);
    return out;
}

// All structures of one rater as an (h, w, K) label grid (a one-hot fusion).
inline tensor rater_label(const tensor& masks, int rater) {
    tensor out({masks.dim(0), masks.dim(1), masks.dim(2)});
    for (int y = 0; y < masks.dim(0); ++y)
        for (int x = 0; x < masks.dim(1); ++x)
            for (int k = 0; k < masks.dim(2); ++k) out(y, x, k) = masks(y, x, k, rater);
    return out;
}

inline tensor fused_plane(const tensor& values, int structure) {
    tensor out({values.dim(0), values.dim(1)});
    for (int y = 0; y < values.dim(0); ++y)
        for (int x = 0; x < values.dim(1); ++x) out(y, x) = values(y, x, structure);
    return out;
}

// ---------------------------------------------------------------------------
// Validation. Violations are data, not errors: each entry names the field
// and the broken condition.

inline std::vector<std::string> validate_sample(const multi_rater_sample& s) {
    std::vector<std::string> v;
    if (s.sample_id.empty()) v.push_back("sample_id: empty");
    if (s.image.rank() != 3) {
        v.push_back("image: expected rank 3 (h,w,c)");
        return v;
    }
    if (s.masks.rank() != 4) {
        v.push_back("masks: expected rank 4 (h,w,K,n)");
        return v;
    }
    if (s.masks.dim(3) < 2) v.push_back("masks: rater count n must be >= 2");
    if (s.masks.dim(2) < 1) v.push_back("masks: structure count K must be >= 1");
    if (s.image.dim(0) != s.masks.dim(0) || s.image.dim(1) != s.masks.dim(1))
        v.push_back("masks: spatial dims " + s.masks.shape_str() + " do not match image " +
                    s.image.shape_str());
    if (s.label != 0 && s.label != 1) v.push_back("label: must be 0 or 1");
    for (long i = 0; i < s.masks.size(); ++i)
        if (!(s.masks[i] >= 0.0 && s.masks[i] <= 1.0)) {
            v.push_back("masks: value outside [0,1]");
            break;
        }
    for (long i = 0; i < s.image.size(); ++i)
        if (!(s.image[i] >= 0.0 && s.image[i] <= 1.0)) {
            v.push_back("image: value outside [0,1]");
            break;
        }
    return v;
}

inline std::vector<std::string> validate_expertness(const expertness_map& m,
                                                    double tol = 1e-5) {
    std::vector<std::string> v;
    if (m.weights.rank() != 4) {
        v.push_back("weights: expected rank 4 (h,w,K,n)");
        return v;
    }
    const int h = m.weights.dim(0), w = m.weights.dim(1);
    const int ks = m.weights.dim(2), n = m.weights.dim(3);
    bool range_ok = true, sum_ok = true;
    for (int y = 0; y < h && (range_ok || sum_ok); ++y)
        for (int x = 0; x < w; ++x)
            for (int k = 0; k < ks; ++k) {
                double sum = 0.0;
                for (int r = 0; r < n; ++r) {
                    double val = m.weights(y, x, k, r);
                    if (!(val >= 0.0 && val <= 1.0)) range_ok = false;
                    sum += val;
                }
                if (std::abs(sum - 1.0) > tol) sum_ok = false;
            }
    if (!range_ok) v.push_back("weights: value outside [0,1]");
    if (!sum_ok) v.push_back("weights: rater sum differs from 1 beyond " + std::to_string(tol));
    return v;
}

// Pixelwise convex-hull bound of a fused label against its source masks.
inline bool fused_within_hull(const tensor& fused, const tensor& masks, double tol = 1e-6) {
    const int h = masks.dim(0), w = masks.dim(1), ks = masks.dim(2), n = masks.dim(3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int k = 0; k < ks; ++k) {
                double lo = 1.0, hi = 0.0;
                for (int r = 0; r < n; ++r) {
                    lo = std::min(lo, masks(y, x, k, r));
                    hi = std::max(hi, masks(y, x, k, r));
                }
                double f = fused(y, x, k);
                if (f < lo - tol || f > hi + tol) return false;
            }
    return true;
}

inline void validate_dataset(const dataset& d) {
    std::map<std::string, int> seen;
    for (const auto& s : d.samples) {
        auto v = validate_sample(s);
        if (!v.empty())
            throw validation_error("sample '" + s.sample_id + "': " + v.front());
        if (++seen[s.sample_id] > 1)
            throw validation_error("duplicate sample_id '" + s.sample_id + "'");
    }
    if (d.samples.empty()) return;
    const auto& f = d.samples.front();
    for (const auto& s : d.samples)
        if (s.h() != f.h() || s.w() != f.w() || s.c() != f.c() ||
            s.structures() != f.structures() || s.raters() != f.raters())
            throw validation_error("sample '" + s.sample_id +
                                   "': dimensions differ from the rest of the dataset");
}

// ---------------------------------------------------------------------------
// On-disk dataset format: one directory per split holding manifest.json, one
// PNG per image and one 16-bit grayscale PNG per (structure, rater) mask
// named <sample_id>_s<structure>_r<rater>.png.

inline std::string mask_file_name(const std::string& id, int structure, int rater) {
    return id + "_s" + std::to_string(structure) + "_r" + std::to_string(rater) + ".png";
}

inline void save_dataset(const dataset& d, const std::string& path) {
    validate_dataset(d);
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    if (ec) throw io_error("save_dataset: cannot create " + path + ": " + ec.message());

    json samples = json::array();
    for (const auto& s : d.samples) {
        write_png16(path + "/" + s.sample_id + ".png", s.image);
        json mask_names = json::array();
        for (int k = 0; k < s.structures(); ++k) {
            json per_structure = json::array();
            for (int r = 0; r < s.raters(); ++r) {
                std::string name = mask_file_name(s.sample_id, k, r);
                tensor plane = mask_plane(s.masks, k, r);
                tensor img({plane.dim(0), plane.dim(1), 1});
                for (long i = 0; i < plane.size(); ++i) img[i] = plane[i];
                write_png16(path + "/" + name, img);
                per_structure.push_back(name);
            }
            mask_names.push_back(per_structure);
        }
        samples.push_back({{"id", s.sample_id},
                           {"label", s.label},
                           {"image", s.sample_id + ".png"},
                           {"masks", mask_names}});
    }

    json manifest = {
        {"version", 1},
        {"format", "diffseg-dataset"},
        {"split", to_string(d.split)},
        {"n", d.empty() ? 0 : d.n()},
        {"K", d.empty() ? 0 : d.structures()},
        {"h", d.empty() ? 0 : d.h()},
        {"w", d.empty() ? 0 : d.w()},
        {"c", d.empty() ? 0 : d.c()},
        {"metadata", d.metadata},
        {"samples", samples},
    };
    std::ofstream out(path + "/manifest.json", std::ios::binary);
    if (!out) throw io_error("save_dataset: cannot write manifest in " + path);
    out << manifest.dump(2) << "\n";
    if (!out) throw io_error("save_dataset: short write on manifest in " + path);
}

inline dataset load_dataset(const std::string& path) {
    std::string manifest_path = path + "/manifest.json";
    std::ifstream in(manifest_path, std::ios::binary);
    if (!in) throw format_error("load_dataset: missing manifest " + manifest_path);
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw format_error("load_dataset: malformed manifest: " + std::string(e.what()));
    }
    if (!manifest.contains("format") || manifest["format"] != "diffseg-dataset")
        throw format_error("load_dataset: not a dataset manifest: " + manifest_path);
    if (manifest.value("version", 0) != 1)
        throw format_error("load_dataset: unsupported manifest version");

    dataset d;
    d.split = split_from_string(manifest.value("split", "train"));
    if (manifest.contains("metadata"))
        d.metadata = manifest["metadata"].get<std::map<std::string, std::string>>();

    const int n = manifest.value("n", 0);
    const int ks = manifest.value("K", 0);
    for (const auto& js : manifest["samples"]) {
        multi_rater_sample s;
        s.sample_id = js.at("id").get<std::string>();
        s.label = js.at("label").get<int>();
        s.image = read_png(path + "/" + js.at("image").get<std::string>());
        const int h = s.image.dim(0), w = s.image.dim(1);
        s.masks = tensor({h, w, ks, n});
        const auto& mask_names = js.at("masks");
        if (static_cast<int>(mask_names.size()) != ks)
            throw format_error("load_dataset: sample '" + s.sample_id +
                               "' lists wrong structure count");
        for (int k = 0; k < ks; ++k) {
            if (static_cast<int>(mask_names[k].size()) != n)
                throw format_error("load_dataset: sample '" + s.sample_id +
                                   "' lists wrong rater count");
            for (int r = 0; r < n; ++r) {
                tensor plane = read_png(path + "/" + mask_names[k][r].get<std::string>());
                if (plane.dim(2) != 1)
                    throw validation_error("sample '" + s.sample_id + "': mask " +
                                           mask_file_name(s.sample_id, k, r) + " is not grayscale");
                if (plane.dim(0) != h || plane.dim(1) != w)
                    throw validation_error("sample '" + s.sample_id + "': mask dims " +
                                           plane.shape_str() + " do not match image " +
                                           s.image.shape_str());
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x) s.masks(y, x, k, r) = plane(y, x, 0);
            }
        }
        auto violations = validate_sample(s);
        if (!violations.empty())
            throw validation_error("sample '" + s.sample_id + "': " + violations.front());
        d.samples.push_back(std::move(s));
    }
    validate_dataset(d);
    return d;
}

}  // namespace diffseg
