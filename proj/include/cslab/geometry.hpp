#pragma once

// Representation-space diagnostics: empirical inter/intra class
// separation, the relative accuracy drop metric, analytic sphere-area
// and separation-ratio helpers, false-negative detection quality, and
// top-1 accuracy.

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <vector>

#include "cslab/tensor.hpp"

namespace cslab {

struct ClassSeparation {
    double avg_intra = 0.0;
    double avg_inter = 0.0;
    double ratio = 0.0; // +inf marker when avg_intra == 0
    bool degenerate_intra = false;
    std::map<int, double> per_class_intra;
};

// Exhaustive pairwise Euclidean (chord) distances partitioned by label.
// Requires >= 2 classes and >= 2 points per class.
inline ClassSeparation class_distance_stats(const Tensor& embeddings, const std::vector<int>& labels) {
    if (embeddings.rank() != 2) throw dimension_error("embeddings must be [n x d]");
    int n = embeddings.rows(), d = embeddings.cols();
    if (static_cast<int>(labels.size()) != n) throw dimension_error("labels length mismatch");
    std::map<int, int> counts;
    for (int y : labels) counts[y]++;
    if (counts.size() < 2) throw contract_error("class_distance_stats needs >= 2 classes");
    for (auto& [cls, cnt] : counts)
        if (cnt < 2) throw contract_error("class " + std::to_string(cls) + " has < 2 points");

    ClassSeparation out;
    std::map<int, double> intra_sum;
    std::map<int, int> intra_cnt;
    double inter_sum = 0.0;
    std::int64_t intra_pairs = 0, inter_pairs = 0;
    double intra_total = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (int k = 0; k < d; ++k) {
                double diff = embeddings.at(i, k) - embeddings.at(j, k);
                s += diff * diff;
            }
            double dist = std::sqrt(s);
            if (labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(j)]) {
                intra_total += dist;
                ++intra_pairs;
                intra_sum[labels[static_cast<std::size_t>(i)]] += dist;
                intra_cnt[labels[static_cast<std::size_t>(i)]]++;
            } else {
                inter_sum += dist;
                ++inter_pairs;
            }
        }
    out.avg_intra = intra_total / static_cast<double>(intra_pairs);
    out.avg_inter = inter_sum / static_cast<double>(inter_pairs);
    for (auto& [cls, s] : intra_sum) {
        double m = s / intra_cnt[cls];
        out.per_class_intra[cls] = m;
        if (m == 0.0) out.degenerate_intra = true;
    }
    out.ratio = out.avg_intra > 0.0 ? out.avg_inter / out.avg_intra
                                    : std::numeric_limits<double>::infinity();
    return out;
}

// P_Drop = (clean - perturbed) / clean.
inline double relative_drop(double clean_acc, double perturbed_acc) {
    if (clean_acc <= 0.0) throw undefined_metric_error("relative_drop with clean accuracy 0");
    return (clean_acc - perturbed_acc) / clean_acc;
}

// A(d) = 2 * pi^((d-1)/2) / Gamma((d-1)/2), the formula used by the
// separation-ratio analysis (note: not the usual unit (d-1)-sphere
// area; kept as such deliberately).
inline double sphere_surface_area(int d) {
    if (d < 2) throw domain_error("sphere_surface_area requires d >= 2");
    double a = (d - 1) / 2.0;
    return 2.0 * std::exp(a * std::log(std::numbers::pi) - std::lgamma(a));
}

struct PredictedSeparation {
    double rho_supcon; // A_c / s_min
    double rho_csl;    // A_c * N / C
};

inline PredictedSeparation predicted_separation(int d, int num_classes, int num_instances,
                                                double s_min) {
    if (num_classes < 1 || num_instances < num_classes)
        throw domain_error("need C >= 1 and N >= C");
    if (s_min <= 0.0) throw domain_error("s_min must be positive");
    double a_c = sphere_surface_area(d) / num_classes;
    return {a_c / s_min, a_c * num_instances / num_classes};
}

struct DetectionQuality {
    double precision; // NaN marker when the mask is empty
    double recall;
    bool precision_defined;
};

inline DetectionQuality fn_detection_quality(const std::vector<std::uint8_t>& mask,
                                             const std::vector<std::uint8_t>& truth) {
    if (mask.size() != truth.size()) throw dimension_error("mask/truth size mismatch");
    std::int64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] && truth[i]) ++tp;
        else if (mask[i] && !truth[i]) ++fp;
        else if (!mask[i] && truth[i]) ++fn;
    }
    DetectionQuality q{};
    q.precision_defined = (tp + fp) > 0;
    q.precision = q.precision_defined ? static_cast<double>(tp) / (tp + fp)
                                      : std::numeric_limits<double>::quiet_NaN();
    q.recall = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 1.0;
    return q;
}

// Top-1 accuracy from logits; argmax ties break toward the lowest index.
inline double accuracy(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2) throw dimension_error("logits must be [n x C]");
    int n = logits.rows(), c = logits.cols();
    if (static_cast<int>(labels.size()) != n) throw dimension_error("labels length mismatch");
    if (n == 0) throw undefined_metric_error("accuracy of an empty set");
    int correct = 0;
    for (int i = 0; i < n; ++i) {
        int best = 0;
        for (int j = 1; j < c; ++j)
            if (logits.at(i, j) > logits.at(i, best)) best = j;
        if (best == labels[static_cast<std::size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / n;
}

inline double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
    if (predictions.size() != labels.size()) throw dimension_error("predictions/labels size mismatch");
    if (predictions.empty()) throw undefined_metric_error("accuracy of an empty set");
    int correct = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i)
        if (predictions[i] == labels[i]) ++correct;
    return static_cast<double>(correct) / predictions.size();
}

} // namespace cslab
