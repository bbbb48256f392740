#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffseg/errors.hpp"
#include "diffseg/nn/ops.hpp"
#include "diffseg/rng.hpp"

namespace diffseg {

// Checkpoint container: a JSON header describing the architecture followed by
// the raw little-endian doubles of every registered parameter matrix in
// traversal order. The header always carries the shape list, so a mismatched
// architecture is rejected before any weight is read. Loading the same file
// twice yields bit-identical weights.
//
// Layout: "DSCK" magic | u32 version | u64 header length | header bytes |
//         concatenated row-major doubles.

inline constexpr char checkpoint_magic[4] = {'D', 'S', 'C', 'K'};
inline constexpr std::uint32_t checkpoint_version = 1;

// FNV-1a over the raw bytes of every parameter matrix, in traversal order.
// Used to assert that a frozen network did not change during an optimization.
inline std::uint64_t param_hash(const std::vector<nn::param*>& params) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const nn::param* p : params) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(p->w.data());
        size_t n = static_cast<size_t>(p->w.size()) * sizeof(double);
        for (size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ull;
        }
    }
    return h;
}

inline void save_checkpoint(const std::filesystem::path& path, nlohmann::json header,
                            const std::vector<nn::param*>& params) {
    nlohmann::json shapes = nlohmann::json::array();
    for (const nn::param* p : params)
        shapes.push_back({static_cast<long>(p->w.rows()), static_cast<long>(p->w.cols())});
    header["format"] = "diffseg-checkpoint";
    header["tensors"] = shapes;

    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("save_checkpoint: cannot open " + path.string());
    std::string hs = header.dump();
    os.write(checkpoint_magic, 4);
    std::uint32_t ver = checkpoint_version;
    std::uint64_t hl = hs.size();
    os.write(reinterpret_cast<const char*>(&ver), sizeof(ver));
    os.write(reinterpret_cast<const char*>(&hl), sizeof(hl));
    os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const nn::param* p : params)
        os.write(reinterpret_cast<const char*>(p->w.data()),
                 static_cast<std::streamsize>(p->w.size() * sizeof(double)));
    if (!os) throw io_error("save_checkpoint: write failed for " + path.string());
}

// Fills the registered parameters from the file and returns the header. The
// shape list in the header must match the registered parameters exactly.
inline nlohmann::json load_checkpoint(const std::filesystem::path& path,
                                      const std::vector<nn::param*>& params) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("load_checkpoint: cannot open " + path.string());
    char magic[4];
    std::uint32_t ver = 0;
    std::uint64_t hl = 0;
    is.read(magic, 4);
    is.read(reinterpret_cast<char*>(&ver), sizeof(ver));
    is.read(reinterpret_cast<char*>(&hl), sizeof(hl));
    if (!is || std::memcmp(magic, checkpoint_magic, 4) != 0)
        throw format_error("load_checkpoint: " + path.string() + " is not a checkpoint file");
    if (ver != checkpoint_version)
        throw format_error("load_checkpoint: unsupported version " + std::to_string(ver));
    std::string hs(hl, '\0');
    is.read(hs.data(), static_cast<std::streamsize>(hl));
    if (!is) throw format_error("load_checkpoint: truncated header in " + path.string());
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw format_error("load_checkpoint: bad header in " + path.string() + ": " + e.what());
    }
    if (!header.contains("tensors") || !header["tensors"].is_array() ||
        header["tensors"].size() != params.size())
        throw format_error("load_checkpoint: tensor list does not match network");
    for (size_t i = 0; i < params.size(); ++i) {
        auto& sh = header["tensors"][i];
        long rows = sh.at(0).get<long>(), cols = sh.at(1).get<long>();
        if (rows != params[i]->w.rows() || cols != params[i]->w.cols())
            throw format_error("load_checkpoint: tensor " + std::to_string(i) +
                               " has shape (" + std::to_string(rows) + "," +
                               std::to_string(cols) + "), expected (" +
                               std::to_string(params[i]->w.rows()) + "," +
                               std::to_string(params[i]->w.cols()) + ")");
    }
    for (nn::param* p : params) {
        is.read(reinterpret_cast<char*>(p->w.data()),
                static_cast<std::streamsize>(p->w.size() * sizeof(double)));
        p->g.setZero();
        p->m.setZero();
        p->v.setZero();
    }
    if (!is) throw format_error("load_checkpoint: truncated weights in " + path.string());
    return header;
}

}  // namespace diffseg
