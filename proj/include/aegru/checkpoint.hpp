#pragma once

#include <map>
#include <string>

#include "aegru/errors.hpp"
#include "aegru/io.hpp"
#include "aegru/model.hpp"
#include "aegru/preprocess.hpp"

// AEGW checkpoint format, little-endian (version 1):
//   magic "AEGW"
//   u32 version
//   u32 c_i, c_f, c_h, c_sigma          model configuration
//   u32 ws, n                           window geometry the model was trained on
//   u32 tensor count
//   per tensor: u16 name length, name bytes, u32 rows, u32 cols,
//               rows*cols f64 values
//   u8 quantized flag; if set: u8 qf, u8 bits
//
// Tensors are written in tensor_refs order; sparsity masks follow as extra
// tensors named "<tensor>.mask" holding 0/1. Values stay full 64-bit
// doubles so a round-trip is lossless.

namespace aegru {

constexpr char kAegwMagic[4] = {'A', 'E', 'G', 'W'};
constexpr std::uint32_t kAegwVersion = 1;

struct Checkpoint {
    AegruParams params;
    std::size_t ws = 20;
    std::size_t n = 5;
};

namespace detail {

inline void write_tensor(ByteWriter& w, const std::string& name, const Matrix& m) {
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    for (std::size_t k = 0; k < m.size(); ++k) w.f64(m.at_flat(k));
}

}  // namespace detail

inline void save_checkpoint(AegruParams& params, std::size_t ws, std::size_t n,
                            const std::string& path) {
    detail::ByteWriter w;
    w.bytes(kAegwMagic, 4);
    w.u32(kAegwVersion);
    w.u32(static_cast<std::uint32_t>(params.cfg.c_i));
    w.u32(static_cast<std::uint32_t>(params.cfg.c_f));
    w.u32(static_cast<std::uint32_t>(params.cfg.c_h));
    w.u32(static_cast<std::uint32_t>(params.cfg.c_sigma));
    w.u32(static_cast<std::uint32_t>(ws));
    w.u32(static_cast<std::uint32_t>(n));

    const auto refs = tensor_refs(params);
    w.u32(static_cast<std::uint32_t>(refs.size() + params.masks.size()));
    for (const TensorRef& ref : refs) detail::write_tensor(w, ref.name, *ref.tensor);
    for (const auto& [name, mask] : params.masks)
        detail::write_tensor(w, name + ".mask", mask);

    w.u8(params.quant.quantized ? 1 : 0);
    if (params.quant.quantized) {
        w.u8(params.quant.qf);
        w.u8(params.quant.bits);
    }
    w.to_file(path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    detail::ByteReader r(path);
    if (r.str(4) != std::string(kAegwMagic, 4))
        throw FormatError("bad magic at offset 0 in " + path);
    const std::uint32_t version = r.u32();
    if (version != kAegwVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version) +
                          " at offset 4 in " + path);

    ModelConfig cfg;
    cfg.c_i = r.u32();
    cfg.c_f = r.u32();
    cfg.c_h = r.u32();
    cfg.c_sigma = r.u32();
    Checkpoint ckpt;
    ckpt.ws = r.u32();
    ckpt.n = r.u32();
    ckpt.params = init_params(cfg, 0);  // shapes; values overwritten below

    const std::uint32_t tensor_count = r.u32();
    std::map<std::string, Matrix> loaded;
    for (std::uint32_t i = 0; i < tensor_count; ++i) {
        const std::size_t name_offset = r.offset();
        const std::uint16_t name_len = r.u16();
        const std::string name = r.str(name_len);
        const std::uint32_t rows = r.u32();
        const std::uint32_t cols = r.u32();
        Matrix m(rows, cols);
        for (std::size_t k = 0; k < m.size(); ++k) m.at_flat(k) = r.f64();
        if (!loaded.emplace(name, std::move(m)).second)
            throw FormatError("duplicate tensor '" + name + "' at offset " +
                              std::to_string(name_offset) + " in " + path);
    }

    const auto refs = tensor_refs(ckpt.params);
    for (const TensorRef& ref : refs) {
        auto it = loaded.find(ref.name);
        if (it == loaded.end())
            throw FormatError("missing tensor '" + std::string(ref.name) + "' in " + path);
        if (!it->second.same_shape(*ref.tensor))
            throw FormatError("tensor '" + std::string(ref.name) + "' has shape " +
                              it->second.shape_str() + ", expected " +
                              ref.tensor->shape_str() + " in " + path);
        *ref.tensor = std::move(it->second);
        loaded.erase(it);
    }
    for (auto& [name, m] : loaded) {
        if (!name.ends_with(".mask"))
            throw FormatError("unexpected tensor '" + name + "' in " + path);
        ckpt.params.masks[name.substr(0, name.size() - 5)] = std::move(m);
    }

    const std::uint8_t quantized = r.u8();
    if (quantized != 0) {
        ckpt.params.quant.quantized = true;
        ckpt.params.quant.qf = r.u8();
        ckpt.params.quant.bits = r.u8();
    }
    if (!r.at_end()) r.fail("trailing bytes");
    return ckpt;
}

}  // namespace aegru
