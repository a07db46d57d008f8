#include "mowe/io.hpp"

#include <cerrno>
#include <cstring>
#include <system_error>

namespace mowe {

namespace fs = std::filesystem;

std::vector<std::uint8_t> read_file(const fs::path& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw FormatError("cannot open '" + path.string() + "': " + std::strerror(errno));
    std::fseek(f, 0, SEEK_END);
    long size = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    std::vector<std::uint8_t> out(static_cast<std::size_t>(size < 0 ? 0 : size));
    if (!out.empty() && std::fread(out.data(), 1, out.size(), f) != out.size()) {
        std::fclose(f);
        throw FormatError("short read from '" + path.string() + "'");
    }
    std::fclose(f);
    return out;
}

void atomic_write_stream(const fs::path& path, const std::function<void(std::FILE*)>& producer) {
    fs::path tmp = path;
    tmp += ".tmp";
    std::FILE* f = std::fopen(tmp.c_str(), "wb");
    if (!f) throw FormatError("cannot create '" + tmp.string() + "': " + std::strerror(errno));
    try {
        producer(f);
    } catch (...) {
        std::fclose(f);
        std::error_code ec;
        fs::remove(tmp, ec);
        throw;
    }
    if (std::fflush(f) != 0 || std::ferror(f)) {
        std::fclose(f);
        std::error_code ec;
        fs::remove(tmp, ec);
        throw FormatError("write to '" + tmp.string() + "' failed");
    }
    std::fclose(f);
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw FormatError("cannot rename '" + tmp.string() + "' to '" + path.string() + "'");
    }
}

void atomic_write(const fs::path& path, const void* data, std::size_t size) {
    atomic_write_stream(path, [&](std::FILE* f) {
        if (size > 0 && std::fwrite(data, 1, size, f) != size)
            throw FormatError("short write to '" + path.string() + "'");
    });
}

}  // namespace mowe
