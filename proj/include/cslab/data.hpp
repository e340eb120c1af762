#pragma once

// Seeded synthetic Gaussian-mixture datasets with exact class labels,
// the CIFAR-10 binary record format, stochastic augmentations, and
// contrastive batch assembly (two independent views per instance).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "cslab/rng.hpp"
#include "cslab/tensor.hpp"

namespace cslab {

enum class SampleKind { vector_data, image_data };

struct Dataset {
    SampleKind kind = SampleKind::vector_data;
    std::vector<Tensor> samples; // rank 1 [dim] or rank 3 [c x h x w]
    std::vector<int> labels;
    std::string split = "train";

    int size() const { return static_cast<int>(samples.size()); }

    void validate() const {
        if (samples.size() != labels.size()) throw contract_error("samples/labels length mismatch");
    }
};

struct SyntheticConfig {
    int num_classes = 4;
    int samples_per_class = 100;
    int ambient_dim = 16;
    double cluster_std = 0.1;
    double min_centroid_angle_deg = 30.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (num_classes < 2) throw config_error("num_classes must be >= 2");
        if (samples_per_class < 1) throw config_error("samples_per_class must be >= 1");
        if (ambient_dim < 2) throw config_error("ambient_dim must be >= 2");
        if (cluster_std <= 0.0) throw config_error("cluster_std must be positive");
        if (min_centroid_angle_deg < 0.0 || min_centroid_angle_deg >= 180.0)
            throw config_error("min_centroid_angle must be in [0, 180)");
    }
};

// Centroids drawn uniformly on the unit sphere with pairwise-angle
// rejection (bounded at 10000 tries); samples are centroid + isotropic
// Gaussian noise.
inline Dataset synth_gaussian_mixture(const SyntheticConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    double max_cos = std::cos(cfg.min_centroid_angle_deg * std::numbers::pi / 180.0);

    std::vector<std::vector<double>> centroids;
    int tries = 0;
    while (static_cast<int>(centroids.size()) < cfg.num_classes) {
        if (++tries > 10000)
            throw generation_error("cannot place " + std::to_string(cfg.num_classes) +
                                   " centroids with pairwise angle >= " +
                                   std::to_string(cfg.min_centroid_angle_deg) + " deg");
        std::vector<double> c(static_cast<std::size_t>(cfg.ambient_dim));
        double n2 = 0.0;
        for (double& v : c) {
            v = rng.normal(0.0, 1.0);
            n2 += v * v;
        }
        double n = std::sqrt(n2);
        if (n < 1e-12) continue;
        for (double& v : c) v /= n;
        bool ok = true;
        for (const auto& prev : centroids) {
            double dot = std::inner_product(c.begin(), c.end(), prev.begin(), 0.0);
            if (dot > max_cos) {
                ok = false;
                break;
            }
        }
        if (ok) centroids.push_back(std::move(c));
    }

    Dataset ds;
    ds.kind = SampleKind::vector_data;
    for (int cls = 0; cls < cfg.num_classes; ++cls)
        for (int s = 0; s < cfg.samples_per_class; ++s) {
            Tensor x = Tensor::zeros({cfg.ambient_dim});
            for (int k = 0; k < cfg.ambient_dim; ++k)
                x.data[static_cast<std::size_t>(k)] =
                    centroids[static_cast<std::size_t>(cls)][static_cast<std::size_t>(k)] +
                    rng.normal(0.0, cfg.cluster_std);
            ds.samples.push_back(std::move(x));
            ds.labels.push_back(cls);
        }
    return ds;
}

// ---- CIFAR-10 binary format ---------------------------------------------
// Records of 3073 bytes: 1 label byte then 3072 pixel bytes as three
// 32x32 row-major planes (R, G, B). Pixels scale to [0, 1].

inline constexpr int kCifarRecordBytes = 3073;

inline Dataset cifar10_load(const std::string& path, int max_records = -1) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw format_error("cannot open " + path);
    std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (bytes.size() % kCifarRecordBytes != 0)
        throw format_error("truncated CIFAR file: " + std::to_string(bytes.size()) +
                           " bytes, remainder at offset " +
                           std::to_string(bytes.size() - bytes.size() % kCifarRecordBytes));
    int records = static_cast<int>(bytes.size() / kCifarRecordBytes);
    if (max_records >= 0) records = std::min(records, max_records);

    Dataset ds;
    ds.kind = SampleKind::image_data;
    for (int r = 0; r < records; ++r) {
        const unsigned char* rec =
            reinterpret_cast<const unsigned char*>(bytes.data()) + static_cast<std::size_t>(r) * kCifarRecordBytes;
        if (rec[0] > 9)
            throw format_error("label " + std::to_string(int(rec[0])) + " > 9 at record " + std::to_string(r));
        Tensor img = Tensor::zeros({3, 32, 32});
        for (int i = 0; i < 3072; ++i) img.data[static_cast<std::size_t>(i)] = rec[1 + i] / 255.0;
        ds.samples.push_back(std::move(img));
        ds.labels.push_back(int(rec[0]));
    }
    return ds;
}

inline void cifar10_save(const Dataset& ds, const std::string& path) {
    ds.validate();
    if (ds.kind != SampleKind::image_data) throw contract_error("cifar10_save requires image data");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw format_error("cannot open " + path + " for writing");
    for (int r = 0; r < ds.size(); ++r) {
        const Tensor& img = ds.samples[static_cast<std::size_t>(r)];
        if (img.size() != 3072) throw contract_error("cifar10_save requires 3x32x32 images");
        unsigned char rec[kCifarRecordBytes];
        rec[0] = static_cast<unsigned char>(ds.labels[static_cast<std::size_t>(r)]);
        for (int i = 0; i < 3072; ++i)
            rec[1 + i] = static_cast<unsigned char>(
                std::lround(std::clamp(img.data[static_cast<std::size_t>(i)], 0.0, 1.0) * 255.0));
        os.write(reinterpret_cast<const char*>(rec), kCifarRecordBytes);
    }
}

// ---- Augmentation --------------------------------------------------------

struct AugmentationConfig {
    // vectors
    double noise_std = 0.05;
    double scale_jitter_lo = 1.0, scale_jitter_hi = 1.0;
    // images
    int crop_padding = 0;
    double hflip_prob = 0.0;
    double brightness_jitter = 0.0;
    double contrast_jitter = 0.0;
    // weaker jitter for supervised runs comes through this multiplier
    double jitter_strength = 1.0;

    void validate() const {
        if (noise_std < 0.0 || brightness_jitter < 0.0 || contrast_jitter < 0.0 ||
            jitter_strength < 0.0)
            throw config_error("augmentation strengths must be >= 0");
        if (hflip_prob < 0.0 || hflip_prob > 1.0) throw config_error("hflip_prob must be in [0, 1]");
        if (scale_jitter_lo > scale_jitter_hi) throw config_error("scale jitter range inverted");
        if (crop_padding < 0) throw config_error("crop_padding must be >= 0");
    }
};

namespace detail {

inline Tensor pad_reflect(const Tensor& img, int pad) {
    int c = img.shape[0], h = img.shape[1], w = img.shape[2];
    Tensor out = Tensor::zeros({c, h + 2 * pad, w + 2 * pad});
    auto reflect = [](int i, int n) {
        // reflect without repeating the edge sample
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
        return std::clamp(i, 0, n - 1);
    };
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h + 2 * pad; ++y)
            for (int x = 0; x < w + 2 * pad; ++x)
                out.data[(static_cast<std::size_t>(ci) * (h + 2 * pad) + y) * (w + 2 * pad) + x] =
                    img.data[(static_cast<std::size_t>(ci) * h + reflect(y - pad, h)) * w +
                             reflect(x - pad, w)];
    return out;
}

inline Tensor hflip(const Tensor& img) {
    int c = img.shape[0], h = img.shape[1], w = img.shape[2];
    Tensor out = img;
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                out.data[(static_cast<std::size_t>(ci) * h + y) * w + x] =
                    img.data[(static_cast<std::size_t>(ci) * h + y) * w + (w - 1 - x)];
    return out;
}

} // namespace detail

inline Tensor augment(const Tensor& sample, SampleKind kind, const AugmentationConfig& cfg,
                      std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    if (kind == SampleKind::vector_data) {
        if (sample.rank() != 1) throw contract_error("vector augmentation on non-vector sample");
        Tensor out = sample;
        if (cfg.noise_std > 0.0)
            for (double& v : out.data) v += rng.normal(0.0, cfg.noise_std);
        if (cfg.scale_jitter_lo != 1.0 || cfg.scale_jitter_hi != 1.0) {
            double s = rng.uniform(cfg.scale_jitter_lo, cfg.scale_jitter_hi);
            for (double& v : out.data) v *= s;
        }
        return out;
    }
    if (sample.rank() != 3) throw contract_error("image augmentation on non-image sample");
    Tensor out = sample;
    int h = sample.shape[1], w = sample.shape[2];
    if (cfg.crop_padding > 0) {
        Tensor padded = detail::pad_reflect(out, cfg.crop_padding);
        int oy = static_cast<int>(rng.uniform_int(0, 2 * cfg.crop_padding));
        int ox = static_cast<int>(rng.uniform_int(0, 2 * cfg.crop_padding));
        Tensor crop = Tensor::zeros(sample.shape);
        int ph = h + 2 * cfg.crop_padding, pw = w + 2 * cfg.crop_padding;
        for (int ci = 0; ci < sample.shape[0]; ++ci)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    crop.data[(static_cast<std::size_t>(ci) * h + y) * w + x] =
                        padded.data[(static_cast<std::size_t>(ci) * ph + y + oy) * pw + x + ox];
        out = std::move(crop);
        (void)pw;
    }
    if (cfg.hflip_prob > 0.0 && rng.bernoulli(cfg.hflip_prob)) out = detail::hflip(out);
    if (cfg.brightness_jitter > 0.0) {
        double shift = rng.uniform(-cfg.brightness_jitter, cfg.brightness_jitter) * cfg.jitter_strength;
        for (double& v : out.data) v += shift;
    }
    if (cfg.contrast_jitter > 0.0) {
        double f = 1.0 + rng.uniform(-cfg.contrast_jitter, cfg.contrast_jitter) * cfg.jitter_strength;
        double mean = std::accumulate(out.data.begin(), out.data.end(), 0.0) /
                      static_cast<double>(out.size());
        for (double& v : out.data) v = mean + f * (v - mean);
    }
    if (cfg.noise_std > 0.0)
        for (double& v : out.data) v += rng.normal(0.0, cfg.noise_std);
    for (double& v : out.data) v = std::clamp(v, 0.0, 1.0);
    return out;
}

// ---- Contrastive batch assembly -----------------------------------------

// Raw-input side of a contrastive batch: two independently augmented
// views per sampled instance, stacked in encoder input layout. Labels
// travel along for audits and supervised baselines only.
struct BatchInputs {
    Tensor view1; // [n x dim] or [n x c x h x w]
    Tensor view2;
    std::vector<int> labels;
    std::vector<int> indices; // dataset rows, all distinct
};

inline Tensor stack_samples(const std::vector<Tensor>& samples, const std::vector<int>& idx) {
    const Tensor& first = samples[static_cast<std::size_t>(idx.at(0))];
    std::vector<int> shape;
    shape.push_back(static_cast<int>(idx.size()));
    for (int d : first.shape) shape.push_back(d);
    Tensor out = Tensor::zeros(shape);
    std::size_t stride = first.data.size();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const Tensor& s = samples[static_cast<std::size_t>(idx[i])];
        if (s.shape != first.shape) throw dimension_error("inhomogeneous sample shapes");
        std::copy(s.data.begin(), s.data.end(), out.data.begin() + i * stride);
    }
    return out;
}

inline BatchInputs make_contrastive_batch(const Dataset& ds, int batch_size,
                                          const AugmentationConfig& aug, std::uint64_t seed) {
    ds.validate();
    if (batch_size < 2) throw contract_error("contrastive batch needs n >= 2");
    if (batch_size > ds.size()) throw contract_error("batch larger than dataset");
    Rng rng(seed);
    std::vector<int> all(static_cast<std::size_t>(ds.size()));
    std::iota(all.begin(), all.end(), 0);
    rng.shuffle(all);
    all.resize(static_cast<std::size_t>(batch_size));

    BatchInputs b;
    b.indices = all;
    std::vector<Tensor> v1, v2;
    for (int idx : all) {
        std::uint64_t s1 = rng.next_seed(), s2 = rng.next_seed();
        v1.push_back(augment(ds.samples[static_cast<std::size_t>(idx)], ds.kind, aug, s1));
        v2.push_back(augment(ds.samples[static_cast<std::size_t>(idx)], ds.kind, aug, s2));
        b.labels.push_back(ds.labels[static_cast<std::size_t>(idx)]);
    }
    std::vector<int> seq(static_cast<std::size_t>(batch_size));
    std::iota(seq.begin(), seq.end(), 0);
    b.view1 = stack_samples(v1, seq);
    b.view2 = stack_samples(v2, seq);
    return b;
}

// label, then coordinates, one row per sample (vector datasets).
inline void dataset_to_csv(const Dataset& ds, std::ostream& os) {
    ds.validate();
    for (int i = 0; i < ds.size(); ++i) {
        os << ds.labels[static_cast<std::size_t>(i)];
        for (double v : ds.samples[static_cast<std::size_t>(i)].data) os << ',' << v;
        os << '\n';
    }
}

} // namespace cslab
