#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "mlc/tensor.hpp"

// Binary formats, all little-endian:
//
//   TNSR record   "TNSR" | u8 precision (4 = float32, 8 = float64) | u32 rank |
//                 u32 dims[rank] | payload (row-major raw scalars)
//
//   FMAP file     "FMAP" | u32 batch | u32 height | u32 width | u32 depth |
//                 batch*height*width*depth float32 values
//
//   CKPT archive  "CKPT" | u32 version | u64 config_len | config bytes |
//                 u64 vocab_len | vocab bytes | u32 record_count |
//                 repeated (u32 name_len | name bytes | TNSR record)

namespace mlc {

namespace detail {

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void read_bytes(std::istream& is, void* p, std::size_t n, const char* what) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n)
        throw TruncatedFile(std::string("unexpected end of file while reading ") + what);
}

inline void write_u8(std::ostream& os, std::uint8_t v) { write_bytes(os, &v, 1); }

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    write_bytes(os, b, 4);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    write_bytes(os, b, 8);
}

inline std::uint8_t read_u8(std::istream& is, const char* what) {
    std::uint8_t v;
    read_bytes(is, &v, 1, what);
    return v;
}

inline std::uint32_t read_u32(std::istream& is, const char* what) {
    unsigned char b[4];
    read_bytes(is, b, 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t read_u64(std::istream& is, const char* what) {
    unsigned char b[8];
    read_bytes(is, b, 8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline void write_f32(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(os, bits);
}

inline void write_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_u64(os, bits);
}

inline void expect_magic(std::istream& is, const char* magic, const char* what) {
    char buf[4];
    read_bytes(is, buf, 4, what);
    if (std::memcmp(buf, magic, 4) != 0)
        throw BadMagic(std::string(what) + ": expected magic '" + magic + "'");
}

// Bulk float32/float64 payload io. Readers convert to the requested scalar.
inline void read_f32_payload(std::istream& is, std::size_t count, float* dst) {
    std::vector<unsigned char> raw(count * 4);
    read_bytes(is, raw.data(), raw.size(), "float32 payload");
    for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t bits = static_cast<std::uint32_t>(raw[4 * i]) |
                             (static_cast<std::uint32_t>(raw[4 * i + 1]) << 8) |
                             (static_cast<std::uint32_t>(raw[4 * i + 2]) << 16) |
                             (static_cast<std::uint32_t>(raw[4 * i + 3]) << 24);
        std::memcpy(&dst[i], &bits, 4);
    }
}

inline void read_f64_payload(std::istream& is, std::size_t count, double* dst) {
    std::vector<unsigned char> raw(count * 8);
    read_bytes(is, raw.data(), raw.size(), "float64 payload");
    for (std::size_t i = 0; i < count; ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b)
            bits |= static_cast<std::uint64_t>(raw[8 * i + b]) << (8 * b);
        std::memcpy(&dst[i], &bits, 8);
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// TNSR records
// ---------------------------------------------------------------------------

inline constexpr std::size_t kMaxRecordRank = 16;
inline constexpr std::size_t kMaxRecordDim = 1u << 24;

template <typename S>
void write_tensor(std::ostream& os, const Tensor<S>& t) {
    detail::write_bytes(os, "TNSR", 4);
    detail::write_u8(os, static_cast<std::uint8_t>(sizeof(S)));
    detail::write_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::write_u32(os, static_cast<std::uint32_t>(d));
    for (S v : t.data()) {
        if constexpr (sizeof(S) == 4)
            detail::write_f32(os, static_cast<float>(v));
        else
            detail::write_f64(os, static_cast<double>(v));
    }
}

/// Reads one TNSR record, converting the stored precision to S.
template <typename S>
Tensor<S> read_tensor(std::istream& is) {
    detail::expect_magic(is, "TNSR", "TNSR record");
    const std::uint8_t prec = detail::read_u8(is, "TNSR precision");
    if (prec != 4 && prec != 8)
        throw BadMagic("TNSR record: precision tag " + std::to_string(prec) +
                       " is not 4 or 8");
    const std::uint32_t rank = detail::read_u32(is, "TNSR rank");
    if (rank > kMaxRecordRank)
        throw DimOverflow("TNSR record: rank " + std::to_string(rank) + " exceeds " +
                          std::to_string(kMaxRecordRank));
    std::vector<std::size_t> shape(rank);
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
        const std::uint32_t d = detail::read_u32(is, "TNSR dim");
        if (d == 0 || d > kMaxRecordDim)
            throw DimOverflow("TNSR record: dim " + std::to_string(d) + " out of range");
        shape[i] = d;
        count *= d;
    }
    std::vector<S> data(count);
    if (prec == 4) {
        std::vector<float> tmp(count);
        detail::read_f32_payload(is, count, tmp.data());
        for (std::size_t i = 0; i < count; ++i) data[i] = static_cast<S>(tmp[i]);
    } else {
        std::vector<double> tmp(count);
        detail::read_f64_payload(is, count, tmp.data());
        for (std::size_t i = 0; i < count; ++i) data[i] = static_cast<S>(tmp[i]);
    }
    return Tensor<S>::from_data(std::move(shape), std::move(data));
}

// ---------------------------------------------------------------------------
// FMAP files (externally computed feature maps, float32)
// ---------------------------------------------------------------------------

inline constexpr std::size_t kMaxFmapDim = 65536;

inline void write_fmap(std::ostream& os, const Tensor<float>& features) {
    if (features.rank() != 4)
        throw ShapeMismatch("write_fmap: expects (batch, height, width, depth)");
    detail::write_bytes(os, "FMAP", 4);
    for (std::size_t d : features.shape()) detail::write_u32(os, static_cast<std::uint32_t>(d));
    for (float v : features.data()) detail::write_f32(os, v);
}

inline void write_fmap_file(const std::string& path, const Tensor<float>& features) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("write_fmap: cannot open " + path);
    write_fmap(os, features);
    if (!os) throw DataError("write_fmap: write failed for " + path);
}

/// Reads a feature-map file into a (batch, height, width, depth) tensor.
inline Tensor<float> read_fmap(std::istream& is) {
    detail::expect_magic(is, "FMAP", "FMAP file");
    std::size_t dims[4];
    static const char* names[4] = {"FMAP batch", "FMAP height", "FMAP width", "FMAP depth"};
    std::size_t count = 1;
    for (int i = 0; i < 4; ++i) {
        const std::uint32_t d = detail::read_u32(is, names[i]);
        if (d == 0 || d > kMaxFmapDim)
            throw DimOverflow(std::string(names[i]) + " = " + std::to_string(d) +
                              " out of range [1, " + std::to_string(kMaxFmapDim) + "]");
        dims[i] = d;
        count *= d;
    }
    std::vector<float> data(count);
    detail::read_f32_payload(is, count, data.data());
    return Tensor<float>::from_data({dims[0], dims[1], dims[2], dims[3]}, std::move(data));
}

inline Tensor<float> read_fmap_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("read_fmap: cannot open " + path);
    return read_fmap(is);
}

// ---------------------------------------------------------------------------
// CKPT archives
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename S>
struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    std::string config_text;
    std::string vocab_text;
    std::vector<std::pair<std::string, Tensor<S>>> tensors;

    const Tensor<S>& find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return t;
        throw CheckpointError("checkpoint has no tensor named '" + name + "'");
    }
};

template <typename S>
void save_checkpoint(const std::string& path, const std::string& config_text,
                     const std::string& vocab_text,
                     const std::vector<std::pair<std::string, Tensor<S>>>& tensors) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("cannot open checkpoint for writing: " + path);
    detail::write_bytes(os, "CKPT", 4);
    detail::write_u32(os, kCheckpointVersion);
    detail::write_u64(os, config_text.size());
    detail::write_bytes(os, config_text.data(), config_text.size());
    detail::write_u64(os, vocab_text.size());
    detail::write_bytes(os, vocab_text.data(), vocab_text.size());
    detail::write_u32(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        detail::write_u32(os, static_cast<std::uint32_t>(name.size()));
        detail::write_bytes(os, name.data(), name.size());
        write_tensor(os, t);
    }
    if (!os) throw CheckpointError("write failed for checkpoint: " + path);
}

template <typename S>
Checkpoint<S> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open checkpoint: " + path);
    try {
        detail::expect_magic(is, "CKPT", "CKPT archive");
        Checkpoint<S> ck;
        ck.version = detail::read_u32(is, "CKPT version");
        if (ck.version != kCheckpointVersion)
            throw CheckpointError("unsupported checkpoint version " +
                                  std::to_string(ck.version));
        const std::uint64_t clen = detail::read_u64(is, "CKPT config length");
        ck.config_text.resize(clen);
        if (clen) detail::read_bytes(is, ck.config_text.data(), clen, "CKPT config");
        const std::uint64_t vlen = detail::read_u64(is, "CKPT vocab length");
        ck.vocab_text.resize(vlen);
        if (vlen) detail::read_bytes(is, ck.vocab_text.data(), vlen, "CKPT vocab");
        const std::uint32_t nrec = detail::read_u32(is, "CKPT record count");
        ck.tensors.reserve(nrec);
        for (std::uint32_t i = 0; i < nrec; ++i) {
            const std::uint32_t nlen = detail::read_u32(is, "CKPT record name length");
            std::string name(nlen, '\0');
            if (nlen) detail::read_bytes(is, name.data(), nlen, "CKPT record name");
            ck.tensors.emplace_back(std::move(name), read_tensor<S>(is));
        }
        return ck;
    } catch (const DataError& e) {
        throw CheckpointError(std::string("corrupt checkpoint ") + path + ": " + e.what());
    }
}

}  // namespace mlc
