#include "biasblend/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace bb::data {

namespace fs = std::filesystem;

Tensor DatasetHandle::pixels(std::int64_t i) const {
    check(i >= 0 && i < size(), "image index ", i, " out of range [0,", size(), ")");
    Tensor t({3, 32, 32});
    const std::uint8_t* p = raw(i);
    for (std::int64_t j = 0; j < kImageBytes; ++j)
        t.data[j] = static_cast<float>(p[j]) * (1.0f / 255.0f);
    return t;
}

std::vector<std::uint8_t> DatasetHandle::serialize_record(std::int64_t i) const {
    std::vector<std::uint8_t> rec;
    rec.reserve(static_cast<std::size_t>(record_bytes(variant_)));
    if (variant_ == Variant::C100)
        rec.push_back(static_cast<std::uint8_t>(coarse_.empty() ? 0 : coarse_[static_cast<std::size_t>(i)]));
    rec.push_back(static_cast<std::uint8_t>(label(i)));
    rec.insert(rec.end(), raw(i), raw(i) + kImageBytes);
    return rec;
}

namespace {

void load_file(const std::string& path, Variant variant, std::vector<std::uint8_t>& bytes,
               std::vector<std::int64_t>& labels, std::vector<std::int64_t>& coarse) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    require(in.good(), "cannot open dataset file ", path, " (expected record size ",
            record_bytes(variant), " bytes)");
    const std::int64_t fsize = static_cast<std::int64_t>(in.tellg());
    const std::int64_t rec = record_bytes(variant);
    require(fsize > 0 && fsize % rec == 0, "dataset file ", path, " has ", fsize,
            " bytes, not a multiple of the record size ", rec,
            "; first bad byte offset ", (fsize / rec) * rec);
    in.seekg(0);
    const std::int64_t n = fsize / rec;
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(rec));
    for (std::int64_t i = 0; i < n; ++i) {
        in.read(reinterpret_cast<char*>(buf.data()), rec);
        require(in.good(), "dataset file ", path, " truncated at byte offset ", i * rec);
        std::size_t off = 0;
        if (variant == Variant::C100) coarse.push_back(buf[off++]);
        const std::int64_t label = buf[off++];
        require(label < class_count(variant), "dataset file ", path, ": label ", label,
                " out of range at record ", i, " (byte offset ", i * rec, ")");
        labels.push_back(label);
        bytes.insert(bytes.end(), buf.begin() + static_cast<std::ptrdiff_t>(off), buf.end());
    }
}

}  // namespace

DatasetHandle load_cifar(const std::string& dir, Variant variant, Split split) {
    std::vector<std::string> files;
    if (variant == Variant::C10) {
        if (split == Split::Train)
            for (int i = 1; i <= 5; ++i) files.push_back("data_batch_" + std::to_string(i) + ".bin");
        else
            files.push_back("test_batch.bin");
    } else {
        files.push_back(split == Split::Train ? "train.bin" : "test.bin");
    }
    DatasetHandle h;
    h.variant_ = variant;
    h.split_ = split;
    for (const auto& f : files) {
        const std::string path = (fs::path(dir) / f).string();
        load_file(path, variant, h.bytes_, h.labels_, h.coarse_);
    }
    return h;
}

Normalizer Normalizer::fit(const DatasetHandle& train) {
    Normalizer norm;
    const std::int64_t n = train.size();
    check(n > 0, "Normalizer::fit: empty train split");
    const std::int64_t plane = 32 * 32;
    for (int c = 0; c < 3; ++c) {
        double sum = 0, sumsq = 0;
        for (std::int64_t i = 0; i < n; ++i) {
            const std::uint8_t* p = train.raw(i) + c * plane;
            for (std::int64_t j = 0; j < plane; ++j) {
                const double v = p[j] * (1.0 / 255.0);
                sum += v;
                sumsq += v * v;
            }
        }
        const double cnt = static_cast<double>(n * plane);
        norm.mean[c] = sum / cnt;
        const double var = sumsq / cnt - norm.mean[c] * norm.mean[c];
        norm.stddev[c] = std::sqrt(std::max(var, 0.0));
    }
    return norm;
}

void Normalizer::apply(Tensor& batch) const {
    check(batch.ndim() == 4 && batch.shape[1] == 3, "Normalizer expects (n,3,h,w), got ",
          shape_str(batch.shape));
    const std::int64_t n = batch.shape[0], plane = batch.shape[2] * batch.shape[3];
    constexpr double kStdFloor = 1e-8;
    for (std::int64_t s = 0; s < n; ++s)
        for (int c = 0; c < 3; ++c) {
            float* p = batch.data.data() + (s * 3 + c) * plane;
            const float mu = static_cast<float>(mean[c]);
            const float inv = static_cast<float>(1.0 / std::max(stddev[c], kStdFloor));
            for (std::int64_t j = 0; j < plane; ++j) p[j] = (p[j] - mu) * inv;
        }
}

Tensor augment(const Tensor& image, Rng& rng) {
    constexpr std::int64_t pad = 4;
    const std::int64_t oy = static_cast<std::int64_t>(rng.below(2 * pad + 1));
    const std::int64_t ox = static_cast<std::int64_t>(rng.below(2 * pad + 1));
    return augment_with(image, oy, ox, rng.bernoulli(0.5));
}

Tensor augment_with(const Tensor& image, std::int64_t oy, std::int64_t ox, bool flip) {
    check(image.ndim() == 3 && image.shape[0] == 3 && image.shape[1] == 32 && image.shape[2] == 32,
          "augment expects a (3,32,32) image, got ", shape_str(image.shape));
    constexpr std::int64_t pad = 4, H = 32, W = 32;
    check(oy >= 0 && oy <= 2 * pad && ox >= 0 && ox <= 2 * pad, "crop offsets out of range");

    Tensor out({3, H, W});
    for (int c = 0; c < 3; ++c) {
        const float* src = image.data.data() + c * H * W;
        float* dst = out.data.data() + c * H * W;
        for (std::int64_t y = 0; y < H; ++y) {
            for (std::int64_t x = 0; x < W; ++x) {
                // reflect-pad lookup into the virtual (HP,HP) canvas
                std::int64_t sy = y + oy - pad;
                std::int64_t sx = x + ox - pad;
                if (sy < 0) sy = -sy;
                if (sy >= H) sy = 2 * H - 2 - sy;
                if (sx < 0) sx = -sx;
                if (sx >= W) sx = 2 * W - 2 - sx;
                const float v = src[sy * W + sx];
                dst[y * W + (flip ? W - 1 - x : x)] = v;
            }
        }
    }
    return out;
}

DatasetHandle subset(const DatasetHandle& handle, std::int64_t n, std::uint64_t seed) {
    check(n >= handle.classes(), "subset size ", n, " smaller than class count ",
          handle.classes());
    check(n <= handle.size(), "subset size ", n, " exceeds dataset size ", handle.size());
    if (n == handle.size()) return handle;

    const std::int64_t k = handle.classes();
    std::vector<std::vector<std::int64_t>> by_class(static_cast<std::size_t>(k));
    for (std::int64_t i = 0; i < handle.size(); ++i)
        by_class[static_cast<std::size_t>(handle.label(i))].push_back(i);

    Rng rng(derive_seed(seed, "subset"));
    std::vector<std::int64_t> chosen;
    const std::int64_t base = n / k, extra = n % k;
    for (std::int64_t c = 0; c < k; ++c) {
        auto& pool = by_class[static_cast<std::size_t>(c)];
        const std::int64_t want = base + (c < extra ? 1 : 0);
        check(static_cast<std::int64_t>(pool.size()) >= want, "class ", c, " has only ",
              pool.size(), " records, need ", want);
        rng.shuffle(pool);
        chosen.insert(chosen.end(), pool.begin(), pool.begin() + want);
    }
    std::sort(chosen.begin(), chosen.end());  // preserve file order

    std::vector<std::uint8_t> bytes;
    bytes.reserve(static_cast<std::size_t>(n * kImageBytes));
    std::vector<std::int64_t> labels;
    labels.reserve(static_cast<std::size_t>(n));
    for (auto i : chosen) {
        bytes.insert(bytes.end(), handle.raw(i), handle.raw(i) + kImageBytes);
        labels.push_back(handle.label(i));
    }
    return DatasetHandle(handle.variant(), handle.split(), std::move(bytes), std::move(labels));
}

// ------------------------------------------------------------- synthetic --

namespace {

struct Blob {
    double cx, cy, r;
    std::array<double, 3> amp;
};

struct ClassPattern {
    std::vector<Blob> blobs;
};

// Classes share a flat gray base so the signal is blob geometry, not color;
// per-image jitter, clutter blobs, and pixel noise keep the task from being
// a pure template lookup.
ClassPattern make_pattern(std::uint64_t seed, std::int64_t cls) {
    Rng rng(derive_seed(seed, "class-pattern", static_cast<std::uint64_t>(cls)));
    ClassPattern p;
    const int nblobs = 3;
    for (int b = 0; b < nblobs; ++b) {
        Blob blob;
        blob.cx = rng.uniform(8.0, 24.0);
        blob.cy = rng.uniform(8.0, 24.0);
        blob.r = rng.uniform(2.0, 4.0);
        for (auto& a : blob.amp) a = rng.uniform(-0.5, 0.5);
        p.blobs.push_back(blob);
    }
    return p;
}

void render_image(const ClassPattern& pat, Rng& rng, std::uint8_t* out) {
    const double jx = rng.uniform(-5.0, 5.0);
    const double jy = rng.uniform(-5.0, 5.0);
    std::array<double, 3> gain;
    for (auto& g : gain) g = rng.uniform(0.7, 1.3);
    // class-uncorrelated clutter
    std::array<Blob, 2> clutter;
    for (auto& b : clutter) {
        b.cx = rng.uniform(4.0, 28.0);
        b.cy = rng.uniform(4.0, 28.0);
        b.r = rng.uniform(2.0, 4.0);
        for (auto& a : b.amp) a = rng.uniform(-0.4, 0.4);
    }
    std::array<float, 3072> img;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 32; ++y)
            for (int x = 0; x < 32; ++x) {
                double v = 0.5;
                for (const auto& b : pat.blobs) {
                    const double dx = x - b.cx - jx, dy = y - b.cy - jy;
                    v += gain[c] * b.amp[c] * std::exp(-(dx * dx + dy * dy) / (2.0 * b.r * b.r));
                }
                for (const auto& b : clutter) {
                    const double dx = x - b.cx, dy = y - b.cy;
                    v += b.amp[c] * std::exp(-(dx * dx + dy * dy) / (2.0 * b.r * b.r));
                }
                img[c * 1024 + y * 32 + x] = static_cast<float>(v);
            }
    for (int i = 0; i < 3072; ++i) {
        const double noisy = img[i] + 0.22 * rng.normal();
        out[i] = static_cast<std::uint8_t>(std::clamp(noisy, 0.0, 1.0) * 255.0 + 0.5);
    }
}

void write_split(const std::string& dir, Variant variant, std::uint64_t seed, Split split,
                 std::int64_t total, const std::vector<std::string>& files) {
    const std::int64_t k = class_count(variant);
    check(total % k == 0, "synthetic split size ", total, " must be divisible by ", k);
    std::vector<ClassPattern> patterns;
    for (std::int64_t c = 0; c < k; ++c) patterns.push_back(make_pattern(seed, c));

    // balanced labels in a deterministic shuffled order
    std::vector<std::int64_t> labels;
    labels.reserve(static_cast<std::size_t>(total));
    for (std::int64_t c = 0; c < k; ++c)
        for (std::int64_t i = 0; i < total / k; ++i) labels.push_back(c);
    Rng order_rng(derive_seed(seed, split == Split::Train ? "train-order" : "test-order"));
    order_rng.shuffle(labels);

    const std::int64_t per_file = total / static_cast<std::int64_t>(files.size());
    std::int64_t idx = 0;
    Rng pixel_rng(derive_seed(seed, split == Split::Train ? "train-pixels" : "test-pixels"));
    std::vector<std::uint8_t> img(kImageBytes);
    for (const auto& fname : files) {
        std::ofstream out((fs::path(dir) / fname).string(), std::ios::binary);
        require(out.good(), "cannot write synthetic dataset file ", fname);
        for (std::int64_t i = 0; i < per_file; ++i, ++idx) {
            const std::int64_t label = labels[static_cast<std::size_t>(idx)];
            if (variant == Variant::C100)
                out.put(static_cast<char>(label / 5));  // nominal coarse label
            out.put(static_cast<char>(label));
            render_image(patterns[static_cast<std::size_t>(label)], pixel_rng, img.data());
            out.write(reinterpret_cast<const char*>(img.data()), kImageBytes);
        }
        require(out.good(), "short write to synthetic dataset file ", fname);
    }
}

}  // namespace

void write_synthetic_cifar(const std::string& dir, Variant variant, std::uint64_t seed,
                           std::int64_t train_n, std::int64_t test_n) {
    fs::create_directories(dir);
    if (variant == Variant::C10) {
        check(train_n % 5 == 0, "C10 train size must split across 5 files");
        write_split(dir, variant, seed, Split::Train, train_n,
                    {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin",
                     "data_batch_4.bin", "data_batch_5.bin"});
        write_split(dir, variant, seed, Split::Test, test_n, {"test_batch.bin"});
    } else {
        write_split(dir, variant, seed, Split::Train, train_n, {"train.bin"});
        write_split(dir, variant, seed, Split::Test, test_n, {"test.bin"});
    }
}

}  // namespace bb::data
