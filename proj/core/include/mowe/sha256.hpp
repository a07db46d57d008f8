#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>

namespace mowe {

/// Incremental SHA-256 (FIPS 180-4), used to fingerprint dataset headers.
class Sha256 {
public:
    Sha256();
    void update(const void* data, std::size_t len);
    std::array<std::uint8_t, 32> digest();

    static std::array<std::uint8_t, 32> of(const void* data, std::size_t len);
    static std::string hex(const std::array<std::uint8_t, 32>& d);

private:
    void process_block(const std::uint8_t* block);
    std::uint32_t state_[8];
    std::uint64_t length_ = 0;
    std::uint8_t buf_[64];
    std::size_t buf_len_ = 0;
};

}  // namespace mowe
