#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mowe/common.hpp"
#include "mowe/io.hpp"
#include "mowe/rng.hpp"

namespace mowe {

/// Header of the binary dataset format (magic "MOWEDS\0\0"). The mean/std
/// statistics always describe the training split's lead-0 truth, also in a
/// test-split file.
struct DatasetManifest {
    std::uint32_t version = 1;
    std::size_t n_experts = 0;
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t n_inits = 0;
    std::vector<std::uint32_t> lead_hours;
    std::vector<std::string> expert_names;
    std::vector<double> mean;  // per channel
    std::vector<double> std_dev;
    bool test_split = false;
    std::uint64_t base_seed = 0;  // mirrored in the text manifest, not the binary

    void validate() const;
    std::vector<std::uint8_t> serialize() const;
    static DatasetManifest parse(ByteReader& r);

    std::size_t field_values() const { return channels * height * width; }
    /// truth plus one field per expert, f32 row-major
    std::size_t record_bytes() const { return (1 + n_experts) * field_values() * 4; }
    std::size_t header_bytes() const;
    std::size_t n_records() const { return n_inits * lead_hours.size(); }

    /// Fingerprint of everything two compatible splits share: dims, leads,
    /// expert names and normalization statistics. Split tag, init count and
    /// seed are excluded so a checkpoint trained on the train file matches
    /// the sibling test file.
    std::array<std::uint8_t, 32> family_hash() const;

    std::string text_summary() const;
};

/// Random-access reader over a sealed dataset file. Uses positioned reads,
/// so one instance may serve concurrent threads.
class DatasetReader {
public:
    explicit DatasetReader(const std::string& path);
    ~DatasetReader();
    DatasetReader(const DatasetReader&) = delete;
    DatasetReader& operator=(const DatasetReader&) = delete;

    const DatasetManifest& manifest() const { return manifest_; }
    const std::string& path() const { return path_; }

    /// Physical-unit fields. `out` sizes: truth C*H*W, experts N*C*H*W.
    void read_truth(std::size_t init, std::size_t lead_index, float* out) const;
    void read_experts(std::size_t init, std::size_t lead_index, float* out) const;

    std::size_t lead_index(std::uint32_t lead_hours) const;

private:
    void read_at(std::size_t offset, void* out, std::size_t bytes) const;
    std::string path_;
    int fd_ = -1;
    DatasetManifest manifest_;
    std::size_t data_offset_ = 0;
};

/// One standardized training batch sampled uniformly over (init, lead).
struct Batch {
    std::size_t size = 0;
    std::vector<std::uint32_t> lead_hours;                     // per sample
    std::vector<std::pair<std::uint32_t, std::uint32_t>> picks;  // (init, lead index)
    std::vector<float> experts;  // size * N*C*H*W, standardized
    std::vector<float> truth;    // size * C*H*W, standardized
};

Batch sample_batch(const DatasetReader& ds, std::size_t batch_size, Rng& rng);

/// Parallel-safe writer used during generation: records land at their final
/// offsets in any order, the header is fixed up last, and the whole file
/// appears atomically on success.
class DatasetWriter {
public:
    DatasetWriter(const std::string& path, const DatasetManifest& initial);
    ~DatasetWriter();

    /// truth: C*H*W floats; experts: N*C*H*W floats in manifest expert order.
    void write_record(std::size_t init, std::size_t lead_index, const float* truth,
                      const float* experts);
    /// Writes the header (with final statistics), seals and renames the file,
    /// and emits the sibling text manifest.
    void finalize(const DatasetManifest& final_manifest);

private:
    std::string path_;
    std::string tmp_path_;
    int fd_ = -1;
    DatasetManifest manifest_;
    bool finalized_ = false;
};

}  // namespace mowe
