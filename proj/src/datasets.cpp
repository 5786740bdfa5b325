#include "coat/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace coat {

void ImageDataset::validate() const {
    if (labels.empty()) throw std::invalid_argument(name + ": dataset is empty");
    if (static_cast<std::int64_t>(images.size()) != size() * image_size()) {
        throw std::invalid_argument(name + ": " + std::to_string(images.size()) + " pixels for " +
                                    std::to_string(size()) + " images");
    }
    for (double v : images)
        if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument(name + ": pixel outside [0,1]");
    for (int y : labels)
        if (y < 0 || y >= num_classes) throw std::invalid_argument(name + ": label outside [0, num_classes)");
}

Array ImageDataset::gather(std::span<const std::int64_t> idx) const {
    const std::int64_t d = image_size();
    Array out(Shape{static_cast<std::int64_t>(idx.size()), channels, side, side});
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= size()) throw std::out_of_range("dataset index out of range");
        std::copy_n(images.begin() + idx[i] * d, d, out.data.begin() + static_cast<std::int64_t>(i) * d);
    }
    return out;
}

std::vector<int> ImageDataset::gather_labels(std::span<const std::int64_t> idx) const {
    std::vector<int> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(labels.at(i));
    return out;
}

ImageDataset ImageDataset::select(std::span<const std::int64_t> idx) const {
    ImageDataset out;
    out.name = name;
    out.split = split;
    out.channels = channels;
    out.side = side;
    out.num_classes = num_classes;
    out.images = gather(idx).data;
    out.labels = gather_labels(idx);
    return out;
}

ImageDataset load_cifar_batches(const std::vector<std::filesystem::path>& files, const std::string& split) {
    ImageDataset ds;
    ds.name = "cifar10";
    ds.split = split;
    std::vector<unsigned char> rec(kCifarRecord);
    for (const auto& f : files) {
        std::ifstream is(f, std::ios::binary);
        if (!is) throw IngestionError(f.string() + ": missing file");
        std::int64_t offset = 0;
        while (true) {
            is.read(reinterpret_cast<char*>(rec.data()), kCifarRecord);
            const auto got = is.gcount();
            if (got == 0) break;
            if (got != kCifarRecord) {
                throw IngestionError(f.string() + ": truncated record at offset " + std::to_string(offset));
            }
            if (rec[0] >= 10) {
                throw IngestionError(f.string() + ": label out of range (" + std::to_string(rec[0]) + ") at offset " +
                                     std::to_string(offset));
            }
            ds.labels.push_back(rec[0]);
            for (int j = 1; j < kCifarRecord; ++j) ds.images.push_back(rec[j] / 255.0);
            offset += kCifarRecord;
        }
    }
    if (ds.labels.empty()) throw IngestionError("no records in " + split + " files");
    return ds;
}

CifarPair load_cifar10(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> train;
    for (int i = 1; i <= 5; ++i) train.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
    for (const auto& f : train)
        if (!std::filesystem::exists(f)) throw IngestionError(f.string() + ": missing file");
    const auto test = dir / "test_batch.bin";
    if (!std::filesystem::exists(test)) throw IngestionError(test.string() + ": missing file");
    return {load_cifar_batches(train, "train"), load_cifar_batches({test}, "test")};
}

void write_cifar_batch(const std::filesystem::path& file, const ImageDataset& ds) {
    if (ds.channels != 3 || ds.side != kCifarSide) throw std::invalid_argument("CIFAR layout needs 3x32x32 images");
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    std::ofstream os(file, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write " + file.string());
    const std::int64_t d = ds.image_size();
    std::vector<unsigned char> rec(kCifarRecord);
    for (std::int64_t i = 0; i < ds.size(); ++i) {
        if (ds.labels[i] < 0 || ds.labels[i] >= 10) throw std::invalid_argument("label does not fit CIFAR-10 layout");
        rec[0] = static_cast<unsigned char>(ds.labels[i]);
        for (std::int64_t j = 0; j < d; ++j) {
            rec[1 + j] = static_cast<unsigned char>(std::lround(std::clamp(ds.images[i * d + j], 0.0, 1.0) * 255.0));
        }
        os.write(reinterpret_cast<const char*>(rec.data()), kCifarRecord);
    }
}

void write_cifar_dir(const std::filesystem::path& dir, const ImageDataset& train, const ImageDataset& test) {
    const std::int64_t n = train.size();
    for (int b = 0; b < 5; ++b) {
        std::vector<std::int64_t> idx;
        for (std::int64_t i = n * b / 5; i < n * (b + 1) / 5; ++i) idx.push_back(i);
        write_cifar_batch(dir / ("data_batch_" + std::to_string(b + 1) + ".bin"), train.select(idx));
    }
    write_cifar_batch(dir / "test_batch.bin", test);
}

ImageDataset make_synthetic(const SyntheticSpec& spec) {
    if (spec.num_classes < 2) throw std::invalid_argument("synthetic data needs at least 2 classes");
    if (spec.n < spec.num_classes) throw std::invalid_argument("synthetic data needs n >= num_classes");
    if (spec.image_side < 1 || spec.channels < 1) throw std::invalid_argument("invalid synthetic image geometry");
    Rng rng = make_rng(spec.seed, stream::synthetic);
    const std::int64_t d = static_cast<std::int64_t>(spec.channels) * spec.image_side * spec.image_side;
    const int k = spec.num_classes;

    std::uniform_real_distribution<double> proto_dist(0.2, 0.8);
    std::vector<std::vector<double>> proto(k, std::vector<double>(d));
    for (auto& p : proto)
        for (double& v : p) v = proto_dist(rng);

    // Bisector hyperplanes between class a and b: <x, mu_a - mu_b> - (|mu_a|^2 - |mu_b|^2)/2, scaled to unit normal.
    auto margin = [&](const std::vector<double>& x, int a, int b) {
        double dot = 0, na = 0, nb = 0, nd = 0;
        for (std::int64_t j = 0; j < d; ++j) {
            const double diff = proto[a][j] - proto[b][j];
            dot += x[j] * diff;
            na += proto[a][j] * proto[a][j];
            nb += proto[b][j] * proto[b][j];
            nd += diff * diff;
        }
        return (dot - 0.5 * (na - nb)) / std::sqrt(nd);
    };

    ImageDataset ds;
    ds.name = "synthetic";
    ds.split = "train";
    ds.channels = spec.channels;
    ds.side = spec.image_side;
    ds.num_classes = k;
    ds.images.reserve(spec.n * d);
    std::normal_distribution<double> noise(0.0, spec.noise);
    std::vector<double> x(d);
    for (std::int64_t i = 0; i < spec.n; ++i) {
        const int y = static_cast<int>(i % k);
        for (int attempt = 0;; ++attempt) {
            if (attempt == 1000) throw std::runtime_error("synthetic generation cannot meet the margin; lower the noise");
            // Quantized to k/255 so the CIFAR byte layout round-trips exactly.
            for (std::int64_t j = 0; j < d; ++j) {
                x[j] = std::round(std::clamp(proto[y][j] + noise(rng), 0.0, 1.0) * 255.0) / 255.0;
            }
            bool ok = true;
            for (int b = 0; b < k && ok; ++b) ok = b == y || margin(x, y, b) >= spec.margin;
            if (ok) break;
        }
        ds.images.insert(ds.images.end(), x.begin(), x.end());
        ds.labels.push_back(y);
    }
    return ds;
}

std::vector<std::int64_t> subsample_indices(std::int64_t total, std::int64_t n, std::uint64_t seed) {
    if (n < 0 || n > total) {
        throw std::invalid_argument("subsample of " + std::to_string(n) + " from " + std::to_string(total) + " examples");
    }
    std::vector<std::int64_t> idx(total);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng = make_rng(seed, stream::subsample);
    // Partial Fisher-Yates.
    for (std::int64_t i = 0; i < n; ++i) {
        std::uniform_int_distribution<std::int64_t> pick(i, total - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(n);
    return idx;
}

ImageDataset subsample(const ImageDataset& ds, std::int64_t n, std::uint64_t seed) {
    const auto idx = subsample_indices(ds.size(), n, seed);
    ImageDataset out = ds.select(idx);
    for (int y : out.labels) ++out.label_counts[y];
    return out;
}

std::string to_string(Augment a) { return a == Augment::none ? "none" : "crop_flip"; }

Augment parse_augment(const std::string& s) {
    if (s == "none") return Augment::none;
    if (s == "crop_flip") return Augment::crop_flip;
    throw std::invalid_argument("unknown augmentation '" + s + "' (expected none, crop_flip)");
}

void augment_crop_flip(std::span<double> image, int channels, int side, Rng& rng) {
    constexpr int pad = 4;
    std::uniform_int_distribution<int> off(0, 2 * pad);
    std::bernoulli_distribution flip(0.5);
    const int dy = off(rng) - pad, dx = off(rng) - pad;
    const bool f = flip(rng);
    std::vector<double> src(image.begin(), image.end());
    for (int c = 0; c < channels; ++c) {
        for (int i = 0; i < side; ++i) {
            for (int j = 0; j < side; ++j) {
                const int si = i + dy;
                const int sj = (f ? side - 1 - j : j) + dx;
                const bool inside = si >= 0 && si < side && sj >= 0 && sj < side;
                image[(c * side + i) * side + j] = inside ? src[(c * side + si) * side + sj] : 0.0;
            }
        }
    }
}

std::vector<std::vector<std::int64_t>> BatchPlan::batches(std::int64_t n, int epoch) const {
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    std::vector<std::int64_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    if (shuffle) {
        Rng rng(derive_seed(derive_seed(seed, stream::batches), static_cast<std::uint64_t>(epoch)));
        for (std::int64_t i = n - 1; i > 0; --i) {
            std::uniform_int_distribution<std::int64_t> pick(0, i);
            std::swap(order[i], order[pick(rng)]);
        }
    }
    std::vector<std::vector<std::int64_t>> out;
    for (std::int64_t s = 0; s < n; s += batch_size) {
        const std::int64_t e = std::min(n, s + batch_size);
        if (drop_last && e - s < batch_size) break;
        out.emplace_back(order.begin() + s, order.begin() + e);
    }
    return out;
}

Array BatchPlan::materialize(const ImageDataset& ds, std::span<const std::int64_t> idx, int epoch,
                             std::size_t batch) const {
    Array x = ds.gather(idx);
    if (augment == Augment::crop_flip) {
        Rng rng(derive_seed(derive_seed(derive_seed(seed, stream::augment), static_cast<std::uint64_t>(epoch)), batch));
        const std::int64_t d = ds.image_size();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            augment_crop_flip(std::span<double>(x.data).subspan(i * d, d), ds.channels, ds.side, rng);
        }
    }
    return x;
}

}  // namespace coat
