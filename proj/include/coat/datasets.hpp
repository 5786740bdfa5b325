#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "coat/rng.hpp"
#include "coat/tensor.hpp"

namespace coat {

class IngestionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// N x C x H x W pixels in [0,1] with integer labels.
struct ImageDataset {
    std::string name;
    std::string split;  // "train" | "test"
    int channels = 3;
    int side = 32;
    int num_classes = 10;
    std::vector<double> images;
    std::vector<int> labels;
    /// Filled by subsample: count of each label in the result.
    std::map<int, std::int64_t> label_counts;

    std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
    std::int64_t image_size() const { return static_cast<std::int64_t>(channels) * side * side; }
    /// Throws std::invalid_argument if a postcondition (range, shape) fails.
    void validate() const;
    /// Batch [n, C, H, W] of the given example indices.
    Array gather(std::span<const std::int64_t> idx) const;
    std::vector<int> gather_labels(std::span<const std::int64_t> idx) const;
    ImageDataset select(std::span<const std::int64_t> idx) const;
};

struct CifarPair {
    ImageDataset train, test;
};

inline constexpr int kCifarSide = 32;
inline constexpr int kCifarRecord = 1 + 3 * 32 * 32;

/// Reads data_batch_1..5.bin and test_batch.bin from `dir`.
CifarPair load_cifar10(const std::filesystem::path& dir);
ImageDataset load_cifar_batches(const std::vector<std::filesystem::path>& files, const std::string& split);
/// Writes a 3x32x32 dataset in the CIFAR-10 binary record layout.
void write_cifar_batch(const std::filesystem::path& file, const ImageDataset& ds);
/// Writes `train` over five batch files and `test` as test_batch.bin.
void write_cifar_dir(const std::filesystem::path& dir, const ImageDataset& train, const ImageDataset& test);

struct SyntheticSpec {
    std::int64_t n = 100;
    int num_classes = 2;
    int image_side = 8;
    int channels = 3;
    std::uint64_t seed = 0;
    double noise = 0.15;
    double margin = 0.1;
};

/// Class-prototype images plus Gaussian noise, clamped to [0,1]. Every sample
/// lies at distance >= margin from each bisector hyperplane between its own
/// prototype and another class's, so the set is linearly separable.
ImageDataset make_synthetic(const SyntheticSpec& spec);

/// Uniform without replacement; records label_counts.
ImageDataset subsample(const ImageDataset& ds, std::int64_t n, std::uint64_t seed);
std::vector<std::int64_t> subsample_indices(std::int64_t total, std::int64_t n, std::uint64_t seed);

enum class Augment { none, crop_flip };
std::string to_string(Augment a);
Augment parse_augment(const std::string& s);

/// Pad-4 random crop + random horizontal flip, in place on one [C,H,W] image.
void augment_crop_flip(std::span<double> image, int channels, int side, Rng& rng);

struct BatchPlan {
    std::int64_t batch_size = 128;
    std::uint64_t seed = 0;
    Augment augment = Augment::none;
    bool drop_last = false;
    bool shuffle = true;

    /// Index batches for one epoch; depends only on (seed, epoch).
    std::vector<std::vector<std::int64_t>> batches(std::int64_t n, int epoch) const;
    /// Gathers a batch and applies augmentation deterministically in (seed, epoch, batch).
    Array materialize(const ImageDataset& ds, std::span<const std::int64_t> idx, int epoch, std::size_t batch) const;
};

}  // namespace coat
