#pragma once

// CIFAR-10/100 binary ingestion, per-channel standardization, crop/flip
// augmentation, and deterministic stratified subsetting. Records are kept
// as raw bytes (lossless round-trips) and scaled to [0,1] floats on access.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "biasblend/rng.hpp"
#include "biasblend/tensor.hpp"

namespace bb::data {

enum class Variant { C10, C100 };
enum class Split { Train, Test };

inline std::int64_t record_bytes(Variant v) { return v == Variant::C10 ? 3073 : 3074; }
inline std::int64_t class_count(Variant v) { return v == Variant::C10 ? 10 : 100; }

constexpr std::int64_t kImageBytes = 3072;  // 3 channel-major 32x32 planes

struct LabeledImage {
    Tensor pixels;  // (3,32,32), values in [0,1]
    std::int64_t label = 0;
};

class DatasetHandle {
public:
    DatasetHandle() = default;
    DatasetHandle(Variant v, Split s, std::vector<std::uint8_t> bytes,
                  std::vector<std::int64_t> labels)
        : variant_(v), split_(s), bytes_(std::move(bytes)), labels_(std::move(labels)) {}

    std::int64_t size() const { return static_cast<std::int64_t>(labels_.size()); }
    std::int64_t classes() const { return class_count(variant_); }
    Variant variant() const { return variant_; }
    Split split() const { return split_; }
    std::int64_t label(std::int64_t i) const { return labels_[static_cast<std::size_t>(i)]; }

    const std::uint8_t* raw(std::int64_t i) const { return bytes_.data() + i * kImageBytes; }

    // scaled to [0,1]
    Tensor pixels(std::int64_t i) const;
    LabeledImage image(std::int64_t i) const { return {pixels(i), label(i)}; }

    // the original binary record (label byte(s) + pixel bytes)
    std::vector<std::uint8_t> serialize_record(std::int64_t i) const;

private:
    Variant variant_ = Variant::C10;
    Split split_ = Split::Train;
    std::vector<std::uint8_t> bytes_;  // size * 3072, channel-major planes
    std::vector<std::int64_t> labels_;
    std::vector<std::int64_t> coarse_;  // C100 only, kept for round-trips
    friend DatasetHandle load_cifar(const std::string&, Variant, Split);
    friend void append_record(DatasetHandle&, const std::uint8_t*, std::int64_t, std::int64_t);
};

// Canonical binary layout: C10 records are 3073 bytes (label + RGB planes),
// C100 records are 3074 (coarse, fine, planes); the fine label is used.
// C10 train reads data_batch_1..5.bin, test reads test_batch.bin; C100
// reads train.bin / test.bin.
DatasetHandle load_cifar(const std::string& dir, Variant variant, Split split);

// Per-channel standardization with statistics computed from a train split.
struct Normalizer {
    std::array<double, 3> mean{}, stddev{};

    static Normalizer fit(const DatasetHandle& train);
    // in: (n,3,32,32) with values in [0,1]
    void apply(Tensor& batch) const;
};

// pad-4 reflect, random 32x32 crop, horizontal flip with probability 1/2
Tensor augment(const Tensor& image, Rng& rng);
// deterministic core: offsets in [0,8], (4,4) is the center crop
Tensor augment_with(const Tensor& image, std::int64_t offset_y, std::int64_t offset_x, bool flip);

// Deterministic stratified sample of n records (per-class counts differ by
// at most one). n == size() returns the identity ordering.
DatasetHandle subset(const DatasetHandle& handle, std::int64_t n, std::uint64_t seed);

// Deterministic synthetic stand-in written in the canonical binary layout:
// class-dependent localized blobs plus color tints and pixel noise, exactly
// balanced per class. Used by tests and desk-scale runs when no real CIFAR
// files are available.
void write_synthetic_cifar(const std::string& dir, Variant variant, std::uint64_t seed,
                           std::int64_t train_n = 10000, std::int64_t test_n = 10000);

}  // namespace bb::data
