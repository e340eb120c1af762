#pragma once

// Gradient-based adversarial perturbations under linf/l2/l1 budgets,
// plus a small non-adversarial corruption suite. Attacks operate on a
// single example tensor; the norm is taken over the whole tensor and
// every output is clamped to the configured input range.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "cslab/losses.hpp"
#include "cslab/models.hpp"
#include "cslab/rng.hpp"
#include "cslab/tensor.hpp"

namespace cslab {

enum class AttackKind { fgsm, pgd, contrastive_instance };
enum class NormKind { linf, l2, l1 };

inline std::string norm_name(NormKind n) {
    switch (n) {
        case NormKind::linf: return "linf";
        case NormKind::l2: return "l2";
        default: return "l1";
    }
}
inline NormKind norm_from_name(const std::string& s) {
    if (s == "linf") return NormKind::linf;
    if (s == "l2") return NormKind::l2;
    if (s == "l1") return NormKind::l1;
    throw config_error("unknown norm: " + s);
}

struct AttackConfig {
    AttackKind kind = AttackKind::pgd;
    NormKind norm = NormKind::linf;
    double epsilon = 0.0;
    double step_size = 0.0;
    int iterations = 1;
    bool random_start = false;
    double clamp_low = 0.0, clamp_high = 1.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (epsilon < 0.0) throw config_error("epsilon must be >= 0");
        if (iterations < 1) throw config_error("iterations must be >= 1");
        if (kind != AttackKind::fgsm && iterations > 1 && step_size <= 0.0)
            throw config_error("iterative attacks need step_size > 0");
        if (clamp_low > clamp_high) throw config_error("clamp range inverted");
    }

    // PGD defaults: 40 iterations, alpha = eps/10, random start.
    static AttackConfig pgd_default(NormKind norm, double epsilon) {
        AttackConfig c;
        c.kind = AttackKind::pgd;
        c.norm = norm;
        c.epsilon = epsilon;
        c.step_size = epsilon / 10.0;
        c.iterations = 40;
        c.random_start = true;
        return c;
    }
};

// Differentiable input -> scalar loss map; the graph builder receives
// the input node and must return a scalar value id on the same tape.
using LossFn = std::function<ValueId(Tape&, ValueId)>;

namespace detail {

struct GradResult {
    Tensor grad;
    double loss;
};

inline GradResult input_gradient(const LossFn& loss_fn, const Tensor& x) {
    Tape tape;
    Tensor probe = x;
    probe.requires_grad = true;
    probe.grad.clear();
    ValueId xv = tape.param(probe);
    ValueId loss = loss_fn(tape, xv);
    double lv = tape.value(loss).data[0];
    tape.backward(loss);
    Tensor g = Tensor::zeros(x.shape);
    g.data = tape.grad_of(xv);
    for (double v : g.data)
        if (!std::isfinite(v)) throw attack_error("non-finite input gradient");
    if (!std::isfinite(lv)) throw attack_error("non-finite loss");
    return {std::move(g), lv};
}

inline double loss_value(const LossFn& loss_fn, const Tensor& x) {
    Tape tape;
    Tensor probe = x;
    return tape.value(loss_fn(tape, tape.constant(std::move(probe)))).data[0];
}

inline void clamp_inplace(Tensor& t, double lo, double hi) {
    for (double& v : t.data) v = std::clamp(v, lo, hi);
}

} // namespace detail

// Euclidean projection onto the epsilon-ball of the given norm.
// linf: per-coordinate clamp; l2: radial rescale; l1: sort-and-shrink
// simplex projection on the magnitudes.
inline Tensor project(Tensor delta, NormKind norm, double epsilon) {
    if (epsilon < 0.0) throw contract_error("projection radius must be >= 0");
    switch (norm) {
        case NormKind::linf:
            for (double& v : delta.data) v = std::clamp(v, -epsilon, epsilon);
            return delta;
        case NormKind::l2: {
            double n2 = 0.0;
            for (double v : delta.data) n2 += v * v;
            double n = std::sqrt(n2);
            if (n > epsilon) {
                double s = epsilon / n;
                for (double& v : delta.data) v *= s;
            }
            return delta;
        }
        case NormKind::l1: {
            double n1 = 0.0;
            for (double v : delta.data) n1 += std::abs(v);
            if (n1 <= epsilon) return delta;
            // soft-threshold magnitudes by theta chosen so the result
            // lands on the l1 sphere of radius epsilon
            std::vector<double> mags(delta.data.size());
            for (std::size_t i = 0; i < mags.size(); ++i) mags[i] = std::abs(delta.data[i]);
            std::vector<double> sorted = mags;
            std::sort(sorted.begin(), sorted.end(), std::greater<>());
            double cum = 0.0, theta = 0.0;
            for (std::size_t k = 0; k < sorted.size(); ++k) {
                cum += sorted[k];
                double cand = (cum - epsilon) / static_cast<double>(k + 1);
                if (k + 1 == sorted.size() || sorted[k + 1] <= cand) {
                    theta = cand;
                    break;
                }
            }
            for (std::size_t i = 0; i < delta.data.size(); ++i)
                delta.data[i] = sign0(delta.data[i]) * std::max(0.0, mags[i] - theta);
            return delta;
        }
    }
    throw contract_error("unreachable norm kind");
}

inline double norm_of(const Tensor& t, NormKind norm) {
    switch (norm) {
        case NormKind::linf: {
            double m = 0.0;
            for (double v : t.data) m = std::max(m, std::abs(v));
            return m;
        }
        case NormKind::l2: {
            double s = 0.0;
            for (double v : t.data) s += v * v;
            return std::sqrt(s);
        }
        default: {
            double s = 0.0;
            for (double v : t.data) s += std::abs(v);
            return s;
        }
    }
}

// x_adv = clamp(x + eps * sign(grad)); sign(0) = 0.
inline Tensor fgsm(const LossFn& loss_fn, const Tensor& x, const AttackConfig& cfg) {
    cfg.validate();
    auto [grad, lv] = detail::input_gradient(loss_fn, x);
    Tensor adv = x;
    for (std::size_t i = 0; i < adv.data.size(); ++i)
        adv.data[i] += cfg.epsilon * sign0(grad.data[i]);
    detail::clamp_inplace(adv, cfg.clamp_low, cfg.clamp_high);
    return adv;
}

// Iterative projected ascent; returns the best-loss post-step iterate.
inline Tensor pgd(const LossFn& loss_fn, const Tensor& x, const AttackConfig& cfg) {
    cfg.validate();
    double alpha = cfg.step_size > 0.0 ? cfg.step_size : cfg.epsilon;
    Rng rng(cfg.seed);
    Tensor delta = Tensor::zeros(x.shape);
    if (cfg.random_start && cfg.epsilon > 0.0) {
        for (double& v : delta.data) v = rng.uniform(-cfg.epsilon, cfg.epsilon);
        delta = project(std::move(delta), cfg.norm, cfg.epsilon);
    }

    Tensor best = x;
    double best_loss = -std::numeric_limits<double>::infinity();
    Tensor cur = x;
    for (std::size_t i = 0; i < cur.data.size(); ++i) cur.data[i] += delta.data[i];
    detail::clamp_inplace(cur, cfg.clamp_low, cfg.clamp_high);

    for (int it = 0; it < cfg.iterations; ++it) {
        auto [grad, lv] = detail::input_gradient(loss_fn, cur);
        // steepest-ascent direction under the step norm
        Tensor step = Tensor::zeros(x.shape);
        switch (cfg.norm) {
            case NormKind::linf:
                for (std::size_t i = 0; i < step.data.size(); ++i)
                    step.data[i] = alpha * sign0(grad.data[i]);
                break;
            case NormKind::l2: {
                double g2 = norm_of(grad, NormKind::l2);
                if (g2 > 0.0)
                    for (std::size_t i = 0; i < step.data.size(); ++i)
                        step.data[i] = alpha * grad.data[i] / g2;
                break;
            }
            case NormKind::l1: {
                std::size_t imax = 0;
                double gm = 0.0;
                for (std::size_t i = 0; i < grad.data.size(); ++i)
                    if (std::abs(grad.data[i]) > gm) {
                        gm = std::abs(grad.data[i]);
                        imax = i;
                    }
                if (gm > 0.0) step.data[imax] = alpha * sign0(grad.data[imax]);
                break;
            }
        }
        for (std::size_t i = 0; i < delta.data.size(); ++i)
            delta.data[i] = cur.data[i] - x.data[i] + step.data[i];
        delta = project(std::move(delta), cfg.norm, cfg.epsilon);
        cur = x;
        for (std::size_t i = 0; i < cur.data.size(); ++i) cur.data[i] += delta.data[i];
        detail::clamp_inplace(cur, cfg.clamp_low, cfg.clamp_high);
        double lv_cur = detail::loss_value(loss_fn, cur);
        if (lv_cur > best_loss) {
            best_loss = lv_cur;
            best = cur;
        }
    }
    return best;
}

inline Tensor run_attack(const LossFn& loss_fn, const Tensor& x, const AttackConfig& cfg) {
    return cfg.kind == AttackKind::fgsm ? fgsm(loss_fn, x, cfg) : pgd(loss_fn, x, cfg);
}

// Label-free PGD ascent on the InfoNCE loss of encode(x) against the
// positive view's embedding and a fixed negative pool. x and x_pos_view
// are single examples in encoder input shape; negatives are unit-norm
// embedding rows.
inline Tensor contrastive_instance_attack(const Encoder& encoder, const Tensor& x,
                                          const Tensor& x_pos_view, const Tensor& negatives,
                                          const AttackConfig& cfg, Temperature tau) {
    ContrastiveBatch::check_unit_rows(negatives);
    Tensor pos_emb = encoder.encode(x_pos_view); // [1 x d]
    LossFn loss_fn = [&encoder, &pos_emb, &negatives, tau](Tape& tape, ValueId xv) {
        ValueId e = encoder.encode_graph_frozen(tape, xv); // [1 x d]
        Tensor pe = pos_emb, ne = negatives;
        ValueId cand = tape.vstack(tape.constant(std::move(pe)), tape.constant(std::move(ne)));
        ValueId cos = tape.matmul(e, tape.transpose(cand)); // [1 x (1+m)]
        ValueId sims = tape.exp(tape.scale(cos, 1.0 / tau.tau));
        Tensor pos_pick = Tensor::zeros({1, tape.value(cos).cols()});
        pos_pick.at(0, 0) = 1.0;
        ValueId pos_cos = tape.sum(tape.mul(cos, tape.constant(pos_pick)));
        return tape.sub(tape.log(tape.sum(sims)), tape.scale(pos_cos, 1.0 / tau.tau));
    };
    AttackConfig pgd_cfg = cfg;
    pgd_cfg.kind = AttackKind::pgd;
    return pgd(loss_fn, x, pgd_cfg);
}

// ---- Corruptions ---------------------------------------------------------

enum class CorruptionKind { gaussian_noise, gaussian_blur, brightness, contrast };

inline std::string corruption_name(CorruptionKind k) {
    switch (k) {
        case CorruptionKind::gaussian_noise: return "gaussian_noise";
        case CorruptionKind::gaussian_blur: return "gaussian_blur";
        case CorruptionKind::brightness: return "brightness";
        default: return "contrast";
    }
}
inline CorruptionKind corruption_from_name(const std::string& s) {
    if (s == "gaussian_noise") return CorruptionKind::gaussian_noise;
    if (s == "gaussian_blur") return CorruptionKind::gaussian_blur;
    if (s == "brightness") return CorruptionKind::brightness;
    if (s == "contrast") return CorruptionKind::contrast;
    throw config_error("unknown corruption: " + s);
}

struct CorruptionConfig {
    CorruptionKind kind = CorruptionKind::gaussian_noise;
    int severity = 1; // 1..3
    double clamp_low = 0.0, clamp_high = 1.0;

    void validate() const {
        if (severity < 1 || severity > 3) throw config_error("corruption severity must be 1..3");
    }
};

namespace detail {

inline constexpr double kNoiseSigma[3] = {0.04, 0.08, 0.12};
inline constexpr double kBlurSigma[3] = {0.5, 1.0, 1.5};
inline constexpr double kBrightnessShift[3] = {0.05, 0.1, 0.2};
inline constexpr double kContrastFactor[3] = {0.85, 0.7, 0.5};

// Separable Gaussian blur with per-pixel kernel renormalization at the
// borders, so total mass is preserved for interior pixels.
inline Tensor blur_image(const Tensor& img, double sigma) {
    if (img.rank() != 3) throw contract_error("gaussian_blur requires an image [c x h x w]");
    int c = img.shape[0], h = img.shape[1], w = img.shape[2];
    int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    for (int k = -radius; k <= radius; ++k)
        kernel[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * (k * k) / (sigma * sigma));
    double ksum = std::accumulate(kernel.begin(), kernel.end(), 0.0);
    for (double& v : kernel) v /= ksum;

    auto pass = [&](const Tensor& src, bool horizontal) {
        Tensor dst = Tensor::zeros(src.shape);
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    double acc = 0.0, wsum = 0.0;
                    for (int k = -radius; k <= radius; ++k) {
                        int yy = horizontal ? y : y + k;
                        int xx = horizontal ? x + k : x;
                        if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                        double kv = kernel[static_cast<std::size_t>(k + radius)];
                        acc += kv * src.data[(static_cast<std::size_t>(ci) * h + yy) * w + xx];
                        wsum += kv;
                    }
                    dst.data[(static_cast<std::size_t>(ci) * h + y) * w + x] = acc / wsum;
                }
        return dst;
    };
    return pass(pass(img, true), false);
}

} // namespace detail

inline Tensor corrupt(const Tensor& x, const CorruptionConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    int s = cfg.severity - 1;
    Tensor out = x;
    switch (cfg.kind) {
        case CorruptionKind::gaussian_noise: {
            Rng rng(seed);
            for (double& v : out.data) v += rng.normal(0.0, detail::kNoiseSigma[s]);
            break;
        }
        case CorruptionKind::gaussian_blur:
            out = detail::blur_image(x, detail::kBlurSigma[s]);
            break;
        case CorruptionKind::brightness:
            for (double& v : out.data) v += detail::kBrightnessShift[s];
            break;
        case CorruptionKind::contrast: {
            double mean = std::accumulate(out.data.begin(), out.data.end(), 0.0) /
                          static_cast<double>(out.size());
            for (double& v : out.data) v = mean + detail::kContrastFactor[s] * (v - mean);
            break;
        }
    }
    detail::clamp_inplace(out, cfg.clamp_low, cfg.clamp_high);
    return out;
}

} // namespace cslab
