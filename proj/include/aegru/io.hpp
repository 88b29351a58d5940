#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "aegru/errors.hpp"

// Little-endian binary readers/writers shared by the recording and
// checkpoint formats. Files are staged through memory buffers; reads track
// the byte offset so format errors can name the exact position.

namespace aegru::detail {

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }

    void u16(std::uint16_t v) {
        u8(static_cast<std::uint8_t>(v));
        u8(static_cast<std::uint8_t>(v >> 8));
    }

    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

    void bytes(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }

    void to_file(const std::string& path) const {
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        if (!os) throw FormatError("cannot open for writing: " + path);
        os.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
        if (!os) throw FormatError("write failed: " + path);
    }

    const std::vector<char>& buffer() const { return buf_; }

private:
    std::vector<char> buf_;
};

class ByteReader {
public:
    explicit ByteReader(const std::string& path) : path_(path) {
        std::ifstream is(path, std::ios::binary | std::ios::ate);
        if (!is) throw FormatError("cannot open: " + path);
        const std::streamsize size = is.tellg();
        is.seekg(0);
        buf_.resize(static_cast<std::size_t>(size));
        is.read(buf_.data(), size);
        if (!is) throw FormatError("read failed: " + path);
    }

    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(buf_[pos_++]);
    }

    std::uint16_t u16() {
        need(2);
        std::uint16_t v = 0;
        for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(byte()) << (8 * i);
        return v;
    }

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte()) << (8 * i);
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte()) << (8 * i);
        return v;
    }

    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }

    std::string str(std::size_t n) {
        need(n);
        std::string s(buf_.data() + pos_, n);
        pos_ += n;
        return s;
    }

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return buf_.size() - pos_; }
    bool at_end() const { return pos_ == buf_.size(); }

    [[noreturn]] void fail(const std::string& what) const {
        throw FormatError(what + " at offset " + std::to_string(pos_) + " in " + path_);
    }

private:
    std::uint8_t byte() { return static_cast<std::uint8_t>(buf_[pos_++]); }

    void need(std::size_t n) const {
        if (buf_.size() - pos_ < n)
            throw FormatError("truncated file at offset " + std::to_string(pos_) + " in " +
                              path_);
    }

    std::string path_;
    std::vector<char> buf_;
    std::size_t pos_ = 0;
};

}  // namespace aegru::detail
