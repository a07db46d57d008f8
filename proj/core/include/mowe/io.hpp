#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "mowe/common.hpp"

namespace mowe {

/// Little-endian byte appender for the binary artifact formats.
class ByteWriter {
public:
    std::vector<std::uint8_t> bytes;

    void raw(const void* p, std::size_t n) {
        const std::uint8_t* b = static_cast<const std::uint8_t*>(p);
        bytes.insert(bytes.end(), b, b + n);
    }
    void u8(std::uint8_t v) { bytes.push_back(v); }
    void u16(std::uint16_t v) {
        for (int i = 0; i < 2; ++i) bytes.push_back(std::uint8_t(v >> (8 * i)));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(std::uint8_t(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes.push_back(std::uint8_t(v >> (8 * i)));
    }
    void f32(float v) {
        std::uint32_t u;
        static_assert(sizeof(u) == sizeof(v));
        __builtin_memcpy(&u, &v, 4);
        u32(u);
    }
    void f64(double v) {
        std::uint64_t u;
        __builtin_memcpy(&u, &v, 8);
        u64(u);
    }
    void str16(const std::string& s) {
        if (s.size() > 0xffff) throw FormatError("string too long for u16 length prefix");
        u16(static_cast<std::uint16_t>(s.size()));
        raw(s.data(), s.size());
    }
};

/// Bounds-checked little-endian reader; failures name the offending offset.
class ByteReader {
public:
    ByteReader(const std::uint8_t* data, std::size_t size, std::string origin)
        : data_(data), size_(size), origin_(std::move(origin)) {}

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return size_ - pos_; }

    void raw(void* out, std::size_t n) {
        need(n);
        __builtin_memcpy(out, data_ + pos_, n);
        pos_ += n;
    }
    std::uint8_t u8() {
        need(1);
        return data_[pos_++];
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = 0;
        for (int i = 0; i < 2; ++i) v |= std::uint16_t(data_[pos_ + i]) << (8 * i);
        pos_ += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(data_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(data_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32() {
        std::uint32_t u = u32();
        float v;
        __builtin_memcpy(&v, &u, 4);
        return v;
    }
    double f64() {
        std::uint64_t u = u64();
        double v;
        __builtin_memcpy(&v, &u, 8);
        return v;
    }
    std::string str16() {
        std::uint16_t n = u16();
        need(n);
        std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
        pos_ += n;
        return s;
    }

private:
    void need(std::size_t n) const {
        if (pos_ + n > size_)
            throw FormatError(origin_ + ": truncated at offset " + std::to_string(pos_) +
                              " (need " + std::to_string(n) + " bytes, have " +
                              std::to_string(size_ - pos_) + ")");
    }
    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
    std::string origin_;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

/// Writes through a temporary sibling and renames on success, so a failing
/// producer never leaves a partial artifact behind.
void atomic_write(const std::filesystem::path& path, const void* data, std::size_t size);

/// Same contract for producers that stream into an open file. The callback
/// receives the temporary file handle.
void atomic_write_stream(const std::filesystem::path& path,
                         const std::function<void(std::FILE*)>& producer);

}  // namespace mowe
