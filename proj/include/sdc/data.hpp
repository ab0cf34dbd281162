#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sdc/errors.hpp"
#include "sdc/masks.hpp"
#include "sdc/nn.hpp"
#include "sdc/tensor.hpp"

namespace sdc {

struct idx_bad_magic final : data_error {
    using data_error::data_error;
};
struct idx_unsupported_type final : data_error {
    using data_error::data_error;
};
struct idx_truncated final : data_error {
    using data_error::data_error;
};
struct checkpoint_format_error final : data_error {
    using data_error::data_error;
};

/// Raw contents of an IDX file (unsigned-byte payload).
struct IdxArray {
    std::vector<int> dims;
    std::vector<std::uint8_t> data;
};

namespace detail {

inline std::vector<char> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open file: " + path);
    in.seekg(0, std::ios::end);
    const auto size = in.tellg();
    in.seekg(0, std::ios::beg);
    std::vector<char> bytes(static_cast<std::size_t>(size));
    if (size > 0) in.read(bytes.data(), size);
    if (!in) throw data_error("cannot read file: " + path);
    return bytes;
}

inline std::uint32_t read_be32(const unsigned char* p) {
    return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) | (std::uint32_t(p[2]) << 8) |
           std::uint32_t(p[3]);
}

}  // namespace detail

/// Parse an IDX file: two zero bytes, type code (only 0x08 unsigned byte is
/// supported), rank byte, rank big-endian 32-bit extents, then the row-major
/// payload, whose length must match exactly.
inline IdxArray read_idx(const std::string& path) {
    const auto bytes = detail::read_file_bytes(path);
    if (bytes.size() < 4) throw idx_truncated("IDX file shorter than its magic: " + path);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
    if (p[0] != 0 || p[1] != 0)
        throw idx_bad_magic("bad IDX magic (first two bytes non-zero) in " + path);
    if (p[2] != 0x08)
        throw idx_unsupported_type("unsupported IDX type code " + std::to_string(int(p[2])) +
                                   " in " + path + " (only 0x08 unsigned byte is supported)");
    const int rank = p[3];
    const std::size_t header = 4 + 4 * static_cast<std::size_t>(rank);
    if (bytes.size() < header)
        throw idx_truncated("IDX header truncated (rank " + std::to_string(rank) + ") in " + path);
    IdxArray out;
    std::size_t expected = 1;
    for (int d = 0; d < rank; ++d) {
        const std::uint32_t extent = detail::read_be32(p + 4 + 4 * d);
        out.dims.push_back(static_cast<int>(extent));
        expected *= extent;
    }
    const std::size_t actual = bytes.size() - header;
    if (actual != expected)
        throw idx_truncated("IDX payload of " + path + " has " + std::to_string(actual) +
                            " bytes, expected " + std::to_string(expected));
    out.data.assign(p + header, p + bytes.size());
    return out;
}

inline void write_idx(const std::string& path, const IdxArray& array) {
    std::size_t expected = 1;
    for (int d : array.dims) {
        if (d <= 0) throw std::invalid_argument("write_idx: dims must be positive");
        expected *= static_cast<std::size_t>(d);
    }
    if (expected != array.data.size())
        throw std::invalid_argument("write_idx: payload does not match dims");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw data_error("cannot open file for writing: " + path);
    const unsigned char head[4] = {0, 0, 0x08, static_cast<unsigned char>(array.dims.size())};
    out.write(reinterpret_cast<const char*>(head), 4);
    for (int d : array.dims) {
        const auto u = static_cast<std::uint32_t>(d);
        const unsigned char be[4] = {static_cast<unsigned char>(u >> 24),
                                     static_cast<unsigned char>(u >> 16),
                                     static_cast<unsigned char>(u >> 8),
                                     static_cast<unsigned char>(u)};
        out.write(reinterpret_cast<const char*>(be), 4);
    }
    out.write(reinterpret_cast<const char*>(array.data.data()),
              static_cast<std::streamsize>(array.data.size()));
    if (!out) throw data_error("write failed: " + path);
}

enum class SplitTag { Train, Test, Ood };

/// Images as an [N x 1 x H x W] tensor scaled to [0,1]; labels are empty for
/// unlabeled (OOD) sets.
struct ImageDataset {
    Tensor images;
    std::vector<int> labels;
    std::string source;
    SplitTag split = SplitTag::Train;

    int size() const { return images.dim(0); }
    bool labeled() const { return !labels.empty(); }
};

inline ImageDataset load_dataset(const std::string& images_path,
                                 const std::optional<std::string>& labels_path,
                                 SplitTag split = SplitTag::Train, int num_classes = 10) {
    IdxArray images = read_idx(images_path);
    if (images.dims.size() != 3)
        throw data_error("image IDX file must be rank 3 (N x H x W): " + images_path);
    const int n = images.dims[0], h = images.dims[1], w = images.dims[2];
    std::vector<double> pixels(images.data.size());
    for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = images.data[i] / 255.0;
    ImageDataset ds;
    ds.images = Tensor({n, 1, h, w}, std::move(pixels));
    ds.source = images_path;
    ds.split = split;
    if (labels_path) {
        IdxArray labels = read_idx(*labels_path);
        if (labels.dims.size() != 1)
            throw data_error("label IDX file must be rank 1: " + *labels_path);
        if (labels.dims[0] != n)
            throw data_error("image/label count mismatch: " + std::to_string(n) + " images vs " +
                             std::to_string(labels.dims[0]) + " labels");
        ds.labels.reserve(static_cast<std::size_t>(n));
        for (std::uint8_t b : labels.data) {
            if (b >= num_classes)
                throw data_error("label " + std::to_string(int(b)) + " outside [0, " +
                                 std::to_string(num_classes) + ") in " + *labels_path);
            ds.labels.push_back(static_cast<int>(b));
        }
    }
    return ds;
}

/// First `limit` samples (0 = everything).
inline ImageDataset dataset_head(const ImageDataset& ds, int limit) {
    if (limit <= 0 || limit >= ds.size()) return ds;
    const int h = ds.images.dim(2), w = ds.images.dim(3);
    const std::size_t per = static_cast<std::size_t>(h) * w;
    std::vector<double> pixels(ds.images.values().begin(),
                               ds.images.values().begin() + static_cast<std::size_t>(limit) * per);
    ImageDataset out;
    out.images = Tensor({limit, 1, h, w}, std::move(pixels));
    if (ds.labeled()) out.labels.assign(ds.labels.begin(), ds.labels.begin() + limit);
    out.source = ds.source;
    out.split = ds.split;
    return out;
}

/// Gather a batch of images (and labels) by dataset indices.
inline std::pair<Tensor, std::vector<int>> gather_batch(const ImageDataset& ds,
                                                        const std::vector<int>& indices,
                                                        std::size_t begin, std::size_t count) {
    const int h = ds.images.dim(2), w = ds.images.dim(3);
    const std::size_t per = static_cast<std::size_t>(h) * w;
    std::vector<double> pixels(count * per);
    std::vector<int> labels;
    labels.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const int src = indices[begin + i];
        std::memcpy(pixels.data() + i * per,
                    ds.images.values().data() + static_cast<std::size_t>(src) * per,
                    per * sizeof(double));
        if (ds.labeled()) labels.push_back(ds.labels[static_cast<std::size_t>(src)]);
    }
    return {Tensor({static_cast<int>(count), 1, h, w}, std::move(pixels)), std::move(labels)};
}

// --------------------------------------------------------------------------
// Checkpoints.
//
// Layout (all integers little-endian 64-bit unless noted):
//   magic "SDC1" (the trailing digit is the format version)
//   u64 layer_count                      -- number of parameterized layers
//   per parameterized layer, weight then bias:
//     u64 rank, rank x u64 extents, numel x f64 raw little-endian values
//   u8 has_masks
//   if has_masks: u64 rho, u64 seed, u64 entry_count, then per entry:
//     u64 layer_index, rho x (u64 count, count x u64 zero positions)
// --------------------------------------------------------------------------

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) {
    put_u64(out, std::bit_cast<std::uint64_t>(v));
}

struct ByteReader {
    const unsigned char* p;
    std::size_t size;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) {
        if (pos + n > size)
            throw checkpoint_format_error(std::string("checkpoint truncated while reading ") +
                                          what);
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return p[pos++];
    }
};

inline void put_tensor(std::string& out, const Tensor& t) {
    put_u64(out, static_cast<std::uint64_t>(t.rank()));
    for (int d : t.shape()) put_u64(out, static_cast<std::uint64_t>(d));
    for (double v : t.values()) put_f64(out, v);
}

inline Tensor take_tensor(ByteReader& r, const Shape& expected, const char* what) {
    const auto rank = r.u64("tensor rank");
    Shape shape;
    std::int64_t numel = 1;
    for (std::uint64_t i = 0; i < rank; ++i) {
        const auto d = r.u64("tensor extent");
        shape.push_back(static_cast<int>(d));
        numel *= static_cast<std::int64_t>(d);
    }
    if (shape != expected)
        throw checkpoint_format_error(std::string("checkpoint tensor shape mismatch for ") + what +
                                      ": stored " + detail::shape_to_string(shape) + ", expected " +
                                      detail::shape_to_string(expected));
    std::vector<double> values(static_cast<std::size_t>(numel));
    for (auto& v : values) v = r.f64("tensor values");
    return Tensor(std::move(shape), std::move(values));
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const std::vector<LayerSpec>& specs,
                            const ModelState& state, const MaskSet* masks = nullptr) {
    std::string out;
    out += "SDC1";
    std::uint64_t param_layers = 0;
    for (const auto& s : specs)
        if (s.has_params()) ++param_layers;
    detail::put_u64(out, param_layers);
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (!specs[i].has_params()) continue;
        detail::put_tensor(out, state.weights[i]);
        detail::put_tensor(out, state.biases[i]);
    }
    out.push_back(masks ? char(1) : char(0));
    if (masks) {
        detail::put_u64(out, static_cast<std::uint64_t>(masks->rho));
        detail::put_u64(out, masks->seed);
        detail::put_u64(out, static_cast<std::uint64_t>(masks->entries.size()));
        for (const auto& e : masks->entries) {
            detail::put_u64(out, static_cast<std::uint64_t>(e.layer_index));
            for (const auto& zeros : e.masks.zero_positions) {
                detail::put_u64(out, static_cast<std::uint64_t>(zeros.size()));
                for (std::uint64_t z : zeros) detail::put_u64(out, z);
            }
        }
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw data_error("cannot open checkpoint for writing: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw data_error("checkpoint write failed: " + path);
}

inline std::pair<ModelState, std::optional<MaskSet>> load_checkpoint(
    const std::string& path, const std::vector<LayerSpec>& specs) {
    const auto bytes = detail::read_file_bytes(path);
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "SDC1", 4) != 0)
        throw checkpoint_format_error("bad checkpoint magic in " + path +
                                      " (expected format SDC version 1)");
    detail::ByteReader r{reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), 4};

    std::uint64_t param_layers = 0;
    for (const auto& s : specs)
        if (s.has_params()) ++param_layers;
    const auto stored_layers = r.u64("layer count");
    if (stored_layers != param_layers)
        throw checkpoint_format_error("checkpoint has " + std::to_string(stored_layers) +
                                      " parameterized layers, model expects " +
                                      std::to_string(param_layers));

    ModelState state;
    state.weights.resize(specs.size());
    state.biases.resize(specs.size());
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const LayerSpec& s = specs[i];
        if (!s.has_params()) continue;
        Shape wshape, bshape;
        if (s.kind == LayerKind::Conv) {
            wshape = {s.out_channels, s.in_channels, s.kernel, s.kernel};
            bshape = {s.out_channels};
        } else {
            wshape = {s.fan_in, s.fan_out};
            bshape = {s.fan_out};
        }
        state.weights[i] = detail::take_tensor(r, wshape, "weight").set_requires_grad(true);
        state.biases[i] = detail::take_tensor(r, bshape, "bias").set_requires_grad(true);
    }

    std::optional<MaskSet> masks;
    if (r.u8("mask flag") != 0) {
        MaskSet set;
        set.rho = static_cast<int>(r.u64("rho"));
        if (set.rho < 2) throw checkpoint_format_error("checkpoint mask rho < 2");
        set.seed = r.u64("mask seed");
        const auto entries = r.u64("mask entry count");
        for (std::uint64_t e = 0; e < entries; ++e) {
            MaskSet::Entry entry;
            entry.layer_index = static_cast<int>(r.u64("mask layer index"));
            if (entry.layer_index < 0 || entry.layer_index >= static_cast<int>(specs.size()) ||
                !specs[static_cast<std::size_t>(entry.layer_index)].dropconnect_enabled)
                throw checkpoint_format_error("checkpoint mask entry for invalid layer " +
                                              std::to_string(entry.layer_index));
            const LayerSpec& ls = specs[static_cast<std::size_t>(entry.layer_index)];
            const std::uint64_t n = static_cast<std::uint64_t>(ls.fan_in) * ls.fan_out;
            for (int m = 0; m < set.rho; ++m) {
                const auto count = r.u64("zero position count");
                std::vector<std::uint64_t> zeros(count);
                for (auto& z : zeros) {
                    z = r.u64("zero position");
                    if (z >= n)
                        throw checkpoint_format_error("checkpoint mask position out of range");
                }
                Tensor mask = Tensor::full({ls.fan_in, ls.fan_out}, 1.0);
                for (std::uint64_t z : zeros) mask.values()[static_cast<std::size_t>(z)] = 0.0;
                entry.masks.masks.push_back(std::move(mask));
                entry.masks.zero_positions.push_back(std::move(zeros));
            }
            set.entries.push_back(std::move(entry));
        }
        masks = std::move(set);
    }
    if (r.pos != r.size)
        throw checkpoint_format_error("checkpoint has " + std::to_string(r.size - r.pos) +
                                      " trailing bytes: " + path);
    return {std::move(state), std::move(masks)};
}

}  // namespace sdc
