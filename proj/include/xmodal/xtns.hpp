// SPDX-License-Identifier: Apache-2.0
//
// XTNS named-tensor container. Layout, all little-endian:
//   magic "XTNS", u32 version=1, u32 entry count, then per entry:
//   u16 name length, name bytes, u8 dtype (0=f32, 1=i64), u8 rank,
//   u32 dims[rank], raw payload.

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "xmodal/error.hpp"

namespace xmodal {

struct XtnsEntry {
    std::string name;
    std::uint8_t dtype = 0;  // 0 = f32, 1 = i64
    std::vector<std::uint32_t> dims;
    std::vector<float> f32;
    std::vector<std::int64_t> i64;

    std::size_t numel() const {
        std::size_t n = 1;
        for (std::uint32_t d : dims) n *= d;
        return n;
    }
};

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct ByteReader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw FormatError("XTNS: truncated file");
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint8_t>(buf[pos]) |
                          (static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf[pos + 1])) << 8);
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(buf[pos++]);
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace detail

// Serializes entries in the order given; byte-stable for identical inputs.
inline std::string xtns_serialize(const std::vector<XtnsEntry>& entries) {
    std::string out = "XTNS";
    detail::put_u32(out, 1);
    detail::put_u32(out, static_cast<std::uint32_t>(entries.size()));
    for (const XtnsEntry& e : entries) {
        if (e.name.size() > 0xffff) throw FormatError("XTNS: entry name too long");
        detail::put_u16(out, static_cast<std::uint16_t>(e.name.size()));
        out += e.name;
        out.push_back(static_cast<char>(e.dtype));
        out.push_back(static_cast<char>(e.dims.size()));
        for (std::uint32_t d : e.dims) detail::put_u32(out, d);
        if (e.dtype == 0) {
            if (e.f32.size() != e.numel()) throw FormatError("XTNS: f32 payload size mismatch for " + e.name);
            for (float f : e.f32) {
                std::uint32_t bits;
                std::memcpy(&bits, &f, 4);
                detail::put_u32(out, bits);
            }
        } else if (e.dtype == 1) {
            if (e.i64.size() != e.numel()) throw FormatError("XTNS: i64 payload size mismatch for " + e.name);
            for (std::int64_t v : e.i64) detail::put_u64(out, static_cast<std::uint64_t>(v));
        } else {
            throw FormatError("XTNS: unknown dtype " + std::to_string(e.dtype));
        }
    }
    return out;
}

inline std::vector<XtnsEntry> xtns_parse(const std::string& buf) {
    detail::ByteReader r{buf};
    if (r.bytes(4) != "XTNS") throw FormatError("XTNS: bad magic");
    std::uint32_t version = r.u32();
    if (version != 1) throw FormatError("XTNS: unsupported version " + std::to_string(version));
    std::uint32_t count = r.u32();
    std::vector<XtnsEntry> entries;
    entries.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        XtnsEntry e;
        std::uint16_t nlen = r.u16();
        e.name = r.bytes(nlen);
        e.dtype = r.u8();
        std::uint8_t rank = r.u8();
        e.dims.resize(rank);
        for (std::uint8_t d = 0; d < rank; ++d) e.dims[d] = r.u32();
        std::size_t n = e.numel();
        if (e.dtype == 0) {
            e.f32.resize(n);
            for (std::size_t j = 0; j < n; ++j) {
                std::uint32_t bits = r.u32();
                std::memcpy(&e.f32[j], &bits, 4);
            }
        } else if (e.dtype == 1) {
            e.i64.resize(n);
            for (std::size_t j = 0; j < n; ++j) e.i64[j] = static_cast<std::int64_t>(r.u64());
        } else {
            throw FormatError("XTNS: unknown dtype " + std::to_string(e.dtype) + " in entry " + e.name);
        }
        entries.push_back(std::move(e));
    }
    if (r.pos != buf.size()) throw FormatError("XTNS: trailing bytes after last entry");
    return entries;
}

inline void xtns_write_file(const std::string& path, const std::vector<XtnsEntry>& entries) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open for writing: " + path);
    std::string buf = xtns_serialize(entries);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw FormatError("write failed: " + path);
}

inline std::vector<XtnsEntry> xtns_read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return xtns_parse(buf);
}

inline const XtnsEntry* xtns_find(const std::vector<XtnsEntry>& entries, const std::string& name) {
    for (const XtnsEntry& e : entries)
        if (e.name == name) return &e;
    return nullptr;
}

}  // namespace xmodal
