#include "mowe/dataset.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <filesystem>
#include <sstream>

#include "mowe/io.hpp"
#include "mowe/sha256.hpp"

namespace mowe {

namespace fs = std::filesystem;

namespace {
constexpr char kMagic[8] = {'M', 'O', 'W', 'E', 'D', 'S', '\0', '\0'};
}

void DatasetManifest::validate() const {
    if (version != 1) throw FormatError("unsupported dataset version " + std::to_string(version));
    if (n_experts < 2) throw DataError("dataset needs at least 2 experts");
    if (channels < 1 || height < 1 || width < 1) throw DataError("empty dataset dimensions");
    if (n_inits < 1) throw DataError("dataset holds no initializations");
    if (lead_hours.empty()) throw DataError("dataset lead set is empty");
    std::uint32_t prev = 0;
    for (std::uint32_t h : lead_hours) {
        if (h <= prev) throw DataError("lead hours must be strictly ascending and positive");
        prev = h;
    }
    if (expert_names.size() != n_experts) throw DataError("expert name count mismatch");
    if (mean.size() != channels || std_dev.size() != channels)
        throw DataError("per-channel statistics count mismatch");
    for (std::size_t c = 0; c < channels; ++c)
        if (!(std_dev[c] > 0))
            throw DataError("channel " + std::to_string(c) + " has non-positive std " +
                            std::to_string(std_dev[c]));
}

std::vector<std::uint8_t> DatasetManifest::serialize() const {
    ByteWriter w;
    w.raw(kMagic, 8);
    w.u32(version);
    w.u32(static_cast<std::uint32_t>(n_experts));
    w.u32(static_cast<std::uint32_t>(channels));
    w.u32(static_cast<std::uint32_t>(height));
    w.u32(static_cast<std::uint32_t>(width));
    w.u32(static_cast<std::uint32_t>(n_inits));
    w.u32(static_cast<std::uint32_t>(lead_hours.size()));
    for (std::uint32_t h : lead_hours) w.u32(h);
    for (const auto& name : expert_names) w.str16(name);
    for (double m : mean) w.f64(m);
    for (double s : std_dev) w.f64(s);
    w.u8(test_split ? 1 : 0);
    return w.bytes;
}

DatasetManifest DatasetManifest::parse(ByteReader& r) {
    char magic[8];
    r.raw(magic, 8);
    if (std::memcmp(magic, kMagic, 8) != 0)
        throw FormatError("bad magic; not a dataset file");
    DatasetManifest m;
    m.version = r.u32();
    if (m.version != 1)
        throw FormatError("unsupported dataset version " + std::to_string(m.version));
    m.n_experts = r.u32();
    m.channels = r.u32();
    m.height = r.u32();
    m.width = r.u32();
    m.n_inits = r.u32();
    const std::uint32_t n_leads = r.u32();
    if (n_leads > 1024) throw FormatError("implausible lead count " + std::to_string(n_leads));
    m.lead_hours.resize(n_leads);
    for (auto& h : m.lead_hours) h = r.u32();
    m.expert_names.resize(m.n_experts);
    for (auto& name : m.expert_names) name = r.str16();
    m.mean.resize(m.channels);
    for (auto& x : m.mean) x = r.f64();
    m.std_dev.resize(m.channels);
    for (auto& x : m.std_dev) x = r.f64();
    m.test_split = r.u8() != 0;
    return m;
}

std::size_t DatasetManifest::header_bytes() const { return serialize().size(); }

std::array<std::uint8_t, 32> DatasetManifest::family_hash() const {
    ByteWriter w;
    w.u32(version);
    w.u32(static_cast<std::uint32_t>(n_experts));
    w.u32(static_cast<std::uint32_t>(channels));
    w.u32(static_cast<std::uint32_t>(height));
    w.u32(static_cast<std::uint32_t>(width));
    w.u32(static_cast<std::uint32_t>(lead_hours.size()));
    for (std::uint32_t h : lead_hours) w.u32(h);
    for (const auto& name : expert_names) w.str16(name);
    for (double m : mean) w.f64(m);
    for (double s : std_dev) w.f64(s);
    return Sha256::of(w.bytes.data(), w.bytes.size());
}

std::string DatasetManifest::text_summary() const {
    std::ostringstream os;
    os << "format = mowe-dataset v" << version << "\n";
    os << "split = " << (test_split ? "test" : "train") << "\n";
    os << "experts = " << n_experts << "\n";
    os << "channels = " << channels << "\n";
    os << "height = " << height << "\n";
    os << "width = " << width << "\n";
    os << "inits = " << n_inits << "\n";
    os << "leads_hours =";
    for (std::uint32_t h : lead_hours) os << " " << h;
    os << "\n";
    os << "expert_names =";
    for (const auto& n : expert_names) os << " " << n;
    os << "\n";
    os << "base_seed = " << base_seed << "\n";
    os << "family_hash = " << Sha256::hex(family_hash()) << "\n";
    os.precision(12);
    for (std::size_t c = 0; c < channels; ++c)
        os << "channel" << c << "_mean_std = " << mean[c] << " " << std_dev[c] << "\n";
    return os.str();
}

DatasetReader::DatasetReader(const std::string& path) : path_(path) {
    fd_ = ::open(path.c_str(), O_RDONLY);
    if (fd_ < 0)
        throw FormatError("cannot open dataset '" + path + "': " + std::strerror(errno));
    // headers are small; read a generous prefix
    std::vector<std::uint8_t> head(1 << 16);
    ssize_t got = ::pread(fd_, head.data(), head.size(), 0);
    if (got < 0) {
        ::close(fd_);
        throw FormatError("cannot read dataset header of '" + path + "'");
    }
    head.resize(static_cast<std::size_t>(got));
    try {
        ByteReader r(head.data(), head.size(), path);
        manifest_ = DatasetManifest::parse(r);
        manifest_.validate();
        data_offset_ = r.offset();
    } catch (...) {
        ::close(fd_);
        fd_ = -1;
        throw;
    }
    const std::size_t expect = data_offset_ + manifest_.n_records() * manifest_.record_bytes();
    const auto actual = fs::file_size(path);
    if (actual != expect) {
        ::close(fd_);
        fd_ = -1;
        throw FormatError("dataset '" + path + "' is " + std::to_string(actual) +
                          " bytes, expected " + std::to_string(expect) +
                          " (truncated or trailing garbage at offset " +
                          std::to_string(std::min<std::size_t>(actual, expect)) + ")");
    }
}

DatasetReader::~DatasetReader() {
    if (fd_ >= 0) ::close(fd_);
}

void DatasetReader::read_at(std::size_t offset, void* out, std::size_t bytes) const {
    std::uint8_t* p = static_cast<std::uint8_t*>(out);
    while (bytes > 0) {
        ssize_t got = ::pread(fd_, p, bytes, static_cast<off_t>(offset));
        if (got <= 0)
            throw FormatError("dataset '" + path_ + "': read failed at offset " +
                              std::to_string(offset));
        p += got;
        offset += static_cast<std::size_t>(got);
        bytes -= static_cast<std::size_t>(got);
    }
}

void DatasetReader::read_truth(std::size_t init, std::size_t lead_index, float* out) const {
    if (init >= manifest_.n_inits || lead_index >= manifest_.lead_hours.size())
        throw ConfigError("record (" + std::to_string(init) + ", lead index " +
                          std::to_string(lead_index) + ") out of range");
    const std::size_t rec = init * manifest_.lead_hours.size() + lead_index;
    read_at(data_offset_ + rec * manifest_.record_bytes(), out, manifest_.field_values() * 4);
}

void DatasetReader::read_experts(std::size_t init, std::size_t lead_index, float* out) const {
    if (init >= manifest_.n_inits || lead_index >= manifest_.lead_hours.size())
        throw ConfigError("record (" + std::to_string(init) + ", lead index " +
                          std::to_string(lead_index) + ") out of range");
    const std::size_t rec = init * manifest_.lead_hours.size() + lead_index;
    read_at(data_offset_ + rec * manifest_.record_bytes() + manifest_.field_values() * 4, out,
            manifest_.n_experts * manifest_.field_values() * 4);
}

std::size_t DatasetReader::lead_index(std::uint32_t lead_hours) const {
    for (std::size_t i = 0; i < manifest_.lead_hours.size(); ++i)
        if (manifest_.lead_hours[i] == lead_hours) return i;
    throw ConfigError("lead " + std::to_string(lead_hours) + " h not in dataset lead set");
}

Batch sample_batch(const DatasetReader& ds, std::size_t batch_size, Rng& rng) {
    if (batch_size < 1) throw InternalError("batch size must be at least 1");
    const DatasetManifest& m = ds.manifest();
    const std::size_t n_leads = m.lead_hours.size();
    const std::size_t fv = m.field_values();
    const std::size_t ev = m.n_experts * fv;
    Batch b;
    b.size = batch_size;
    b.lead_hours.resize(batch_size);
    b.picks.resize(batch_size);
    b.experts.resize(batch_size * ev);
    b.truth.resize(batch_size * fv);

    std::vector<float> truth_raw(fv), experts_raw(ev);
    for (std::size_t s = 0; s < batch_size; ++s) {
        const std::uint64_t pick = rng.below(static_cast<std::uint64_t>(m.n_inits) * n_leads);
        const std::uint32_t init = static_cast<std::uint32_t>(pick / n_leads);
        const std::uint32_t lead = static_cast<std::uint32_t>(pick % n_leads);
        b.picks[s] = {init, lead};
        b.lead_hours[s] = m.lead_hours[lead];
        ds.read_truth(init, lead, truth_raw.data());
        ds.read_experts(init, lead, experts_raw.data());
        for (std::size_t c = 0; c < m.channels; ++c) {
            const double mu = m.mean[c], inv = 1.0 / m.std_dev[c];
            const std::size_t hw = m.height * m.width;
            for (std::size_t i = 0; i < hw; ++i)
                b.truth[s * fv + c * hw + i] =
                    static_cast<float>((truth_raw[c * hw + i] - mu) * inv);
            for (std::size_t e = 0; e < m.n_experts; ++e)
                for (std::size_t i = 0; i < hw; ++i)
                    b.experts[s * ev + (e * m.channels + c) * hw + i] = static_cast<float>(
                        (experts_raw[(e * m.channels + c) * hw + i] - mu) * inv);
        }
    }
    return b;
}

DatasetWriter::DatasetWriter(const std::string& path, const DatasetManifest& initial)
    : path_(path), tmp_path_(path + ".tmp"), manifest_(initial) {
    fd_ = ::open(tmp_path_.c_str(), O_CREAT | O_TRUNC | O_WRONLY, 0644);
    if (fd_ < 0)
        throw FormatError("cannot create '" + tmp_path_ + "': " + std::strerror(errno));
    const std::size_t total =
        manifest_.header_bytes() + manifest_.n_records() * manifest_.record_bytes();
    if (::ftruncate(fd_, static_cast<off_t>(total)) != 0) {
        ::close(fd_);
        fd_ = -1;
        throw FormatError("cannot size '" + tmp_path_ + "' to " + std::to_string(total) +
                          " bytes");
    }
}

DatasetWriter::~DatasetWriter() {
    if (fd_ >= 0) ::close(fd_);
    if (!finalized_) {
        std::error_code ec;
        fs::remove(tmp_path_, ec);
    }
}

void DatasetWriter::write_record(std::size_t init, std::size_t lead_index, const float* truth,
                                 const float* experts) {
    const std::size_t rec = init * manifest_.lead_hours.size() + lead_index;
    const std::size_t fv = manifest_.field_values();
    std::size_t off = manifest_.header_bytes() + rec * manifest_.record_bytes();
    auto put = [&](const void* data, std::size_t bytes) {
        const std::uint8_t* p = static_cast<const std::uint8_t*>(data);
        while (bytes > 0) {
            ssize_t put_n = ::pwrite(fd_, p, bytes, static_cast<off_t>(off));
            if (put_n <= 0) throw FormatError("write failed on '" + tmp_path_ + "'");
            p += put_n;
            off += static_cast<std::size_t>(put_n);
            bytes -= static_cast<std::size_t>(put_n);
        }
    };
    put(truth, fv * 4);
    put(experts, manifest_.n_experts * fv * 4);
}

void DatasetWriter::finalize(const DatasetManifest& final_manifest) {
    final_manifest.validate();
    std::vector<std::uint8_t> header = final_manifest.serialize();
    if (header.size() != manifest_.header_bytes())
        throw InternalError("dataset header size changed between open and finalize");
    std::size_t off = 0;
    while (off < header.size()) {
        ssize_t put_n = ::pwrite(fd_, header.data() + off, header.size() - off,
                                 static_cast<off_t>(off));
        if (put_n <= 0) throw FormatError("header write failed on '" + tmp_path_ + "'");
        off += static_cast<std::size_t>(put_n);
    }
    ::close(fd_);
    fd_ = -1;
    std::error_code ec;
    fs::rename(tmp_path_, path_, ec);
    if (ec) throw FormatError("cannot rename '" + tmp_path_ + "' to '" + path_ + "'");
    finalized_ = true;

    const std::string text = final_manifest.text_summary();
    atomic_write(path_ + ".manifest", text.data(), text.size());
}

}  // namespace mowe
