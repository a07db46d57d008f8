#include <complex>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "mowe/fft.hpp"
#include "mowe/io.hpp"
#include "mowe/kvconfig.hpp"
#include "mowe/rng.hpp"
#include "mowe/sha256.hpp"

using namespace mowe;
namespace fs = std::filesystem;

TEST_CASE("sha256 known vectors") {
    CHECK(Sha256::hex(Sha256::of("", 0)) ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(Sha256::hex(Sha256::of("abc", 3)) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    const char* msg = "abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq";
    CHECK(Sha256::hex(Sha256::of(msg, 56)) ==
          "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
}

TEST_CASE("sha256 incremental equals one-shot") {
    std::string data(1000, 'x');
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = char('a' + i % 26);
    Sha256 h;
    h.update(data.data(), 13);
    h.update(data.data() + 13, 64);
    h.update(data.data() + 77, data.size() - 77);
    CHECK(Sha256::hex(h.digest()) == Sha256::hex(Sha256::of(data.data(), data.size())));
}

TEST_CASE("byte writer and reader round trip") {
    ByteWriter w;
    w.u8(7);
    w.u16(65535);
    w.u32(123456789);
    w.u64(0x0123456789abcdefULL);
    w.f32(3.25f);
    w.f64(-1.5e-300);
    w.str16("experts");
    ByteReader r(w.bytes.data(), w.bytes.size(), "test");
    CHECK(r.u8() == 7);
    CHECK(r.u16() == 65535);
    CHECK(r.u32() == 123456789u);
    CHECK(r.u64() == 0x0123456789abcdefULL);
    CHECK(r.f32() == 3.25f);
    CHECK(r.f64() == -1.5e-300);
    CHECK(r.str16() == "experts");
    CHECK(r.remaining() == 0);
}

TEST_CASE("byte reader names the truncation offset") {
    ByteWriter w;
    w.u32(1);
    ByteReader r(w.bytes.data(), w.bytes.size(), "trunc");
    r.u32();
    CHECK_THROWS_WITH_AS(r.u32(), doctest::Contains("offset 4"), FormatError);
}

TEST_CASE("atomic_write never leaves partial files") {
    fs::path dir = fs::temp_directory_path() / "mowe_io_test";
    fs::create_directories(dir);
    fs::path target = dir / "artifact.bin";

    std::vector<std::uint8_t> payload{1, 2, 3, 4, 5};
    atomic_write(target, payload.data(), payload.size());
    CHECK(read_file(target) == payload);

    // a throwing producer must leave the previous content in place
    CHECK_THROWS_AS(atomic_write_stream(
                        target, [](std::FILE*) { throw FormatError("boom"); }),
                    FormatError);
    CHECK(read_file(target) == payload);
    CHECK(!fs::exists(target.string() + ".tmp"));
    fs::remove_all(dir);
}

TEST_CASE("kvconfig parses keys, comments and lists") {
    auto cfg = KvConfig::parse_text("# comment\n"
                                    "grid_height = 64\n"
                                    "lr = 3e-4\n"
                                    "name = alpha \n"
                                    "leads = 6, 12, 18\n"
                                    "\n",
                                    "inline");
    CHECK(cfg.get_int("grid_height") == 64);
    CHECK(cfg.get_real("lr") == doctest::Approx(3e-4));
    CHECK(cfg.get_str("name") == "alpha");
    CHECK(cfg.get_u32s("leads") == std::vector<std::uint32_t>{6, 12, 18});
    CHECK(cfg.get_int("absent", 5) == 5);
    CHECK_THROWS_AS(cfg.get_int("name"), ConfigError);
    CHECK_THROWS_AS(cfg.get_str("missing"), ConfigError);
    CHECK_THROWS_AS(KvConfig::parse_text("not a pair\n", "inline"), ConfigError);
}

TEST_CASE("fft matches a direct dft and inverts") {
    Rng rng(5);
    const std::size_t n = 64;
    std::vector<std::complex<double>> a(n);
    for (auto& x : a) x = {rng.normal(), rng.normal()};
    auto orig = a;

    // direct DFT oracle
    std::vector<std::complex<double>> ref(n);
    for (std::size_t k = 0; k < n; ++k) {
        std::complex<double> acc{0, 0};
        for (std::size_t j = 0; j < n; ++j) {
            double ang = -2.0 * 3.14159265358979323846 * double(k) * double(j) / double(n);
            acc += orig[j] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
        ref[k] = acc;
    }
    fft(a, false);
    for (std::size_t k = 0; k < n; ++k) CHECK(std::abs(a[k] - ref[k]) < 1e-9);
    fft(a, true);
    for (std::size_t k = 0; k < n; ++k) CHECK(std::abs(a[k] - orig[k]) < 1e-12);
}

TEST_CASE("fft2 round trips a 2d grid") {
    Rng rng(6);
    const std::size_t h = 8, w = 16;
    std::vector<std::complex<double>> g(h * w);
    for (auto& x : g) x = {rng.normal(), 0.0};
    auto orig = g;
    fft2(g, h, w, false);
    fft2(g, h, w, true);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(std::abs(g[i] - orig[i]) < 1e-12);
}

TEST_CASE("fft rejects non-power-of-two lengths") {
    std::vector<std::complex<double>> a(12);
    CHECK_THROWS_AS(fft(a, false), InternalError);
}

TEST_CASE("rng streams are deterministic and split cleanly") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    CHECK(seed_of(1, 2) != seed_of(2, 1));
    CHECK(seed_of(1, 2, 3) != seed_of(1, 2, 4));

    // normals have roughly the right first two moments
    Rng c(7);
    double s = 0, s2 = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double x = c.normal();
        s += x;
        s2 += x * x;
    }
    CHECK(std::abs(s / n) < 0.03);
    CHECK(std::abs(s2 / n - 1.0) < 0.05);

    // below() stays in range and is unbiased enough
    Rng d(8);
    int counts[5] = {0, 0, 0, 0, 0};
    for (int i = 0; i < 50000; ++i) ++counts[d.below(5)];
    for (int k = 0; k < 5; ++k) CHECK(std::abs(counts[k] - 10000) < 500);
}
