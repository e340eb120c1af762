#pragma once

// Contrastive loss family on hypersphere embeddings: InfoNCE, supervised
// contrastive (L_out form), cross-entropy, adaptive false-negative
// cancellation with a decaying cosine threshold, and the
// alignment/uniformity decomposition.
//
// Batch layout: n anchors (first augmented view), n positives (second
// view). The candidate pool for an anchor is the stacked [anchors;
// positives] matrix, 2n rows; column i is the anchor itself and column
// n+i its augmentation partner. InfoNCE denominators run over all
// columns except the anchor's own (the positive counted once), so the
// negative set per anchor has the expected 2(n-1) entries.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <ostream>
#include <vector>

#include "cslab/tensor.hpp"

namespace cslab {

struct Temperature {
    double tau;
    explicit Temperature(double t) : tau(t) {
        if (!(t > 0.0)) throw contract_error("temperature must be positive");
    }
};

struct ThresholdSchedule {
    double rho_initial = 0.99;
    double rho_final = 0.7;
    int total_epochs = 100;

    void validate() const {
        if (total_epochs <= 0) throw config_error("threshold schedule needs total_epochs >= 1");
        if (rho_initial < rho_final) throw config_error("threshold schedule must decay (rho_initial >= rho_final)");
        if (rho_initial > 1.0 || rho_final <= -1.0)
            throw config_error("threshold endpoints must lie in (-1, 1]");
    }
};

struct ThresholdValue {
    double rho;
    bool clamped; // epoch fell outside [0, total_epochs]
};

// Linear interpolation from rho_initial at epoch 0 to rho_final at
// total_epochs; out-of-range epochs clamp with a flag.
inline ThresholdValue threshold_at(const ThresholdSchedule& s, int epoch) {
    s.validate();
    bool clamped = epoch < 0 || epoch > s.total_epochs;
    int e = std::max(0, std::min(epoch, s.total_epochs));
    double t = static_cast<double>(e) / static_cast<double>(s.total_epochs);
    return {s.rho_initial + (s.rho_final - s.rho_initial) * t, clamped};
}

struct ContrastiveBatch {
    Tensor anchors;   // [n x d], unit rows
    Tensor positives; // [n x d], unit rows
    std::optional<std::vector<int>> labels; // [n]
    // Ground-truth same-class over the n x 2n anchor-candidate grid,
    // row-major; populated only when labels exist. Self columns are true
    // by definition (same instance).
    std::vector<std::uint8_t> same_class;

    int n() const { return anchors.rows(); }
    int dim() const { return anchors.cols(); }

    void validate() const {
        if (anchors.rank() != 2 || !anchors.same_shape(positives))
            throw dimension_error("anchors/positives must be matching [n x d]");
        if (n() < 1) throw contract_error("empty contrastive batch");
        check_unit_rows(anchors);
        check_unit_rows(positives);
        if (labels) {
            if (static_cast<int>(labels->size()) != n()) throw dimension_error("labels length mismatch");
            if (same_class.size() != static_cast<std::size_t>(n()) * 2 * n())
                throw dimension_error("same_class grid must be n x 2n");
        }
    }

    void fill_same_class_from_labels() {
        if (!labels) return;
        int m = n();
        same_class.assign(static_cast<std::size_t>(m) * 2 * m, 0);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < 2 * m; ++j)
                same_class[static_cast<std::size_t>(i) * 2 * m + j] =
                    (*labels)[static_cast<std::size_t>(i)] == (*labels)[static_cast<std::size_t>(j % m)] ? 1 : 0;
    }

    static void check_unit_rows(const Tensor& e) {
        for (int i = 0; i < e.rows(); ++i) {
            double s = 0.0;
            for (int j = 0; j < e.cols(); ++j) s += e.at(i, j) * e.at(i, j);
            if (std::abs(std::sqrt(s) - 1.0) > 1e-6)
                throw contract_error("embedding row " + std::to_string(i) + " not unit-norm");
        }
    }
};

struct SimilarityResult {
    Tensor exp_sim; // exp(cos / tau)
    Tensor cosine;  // raw A_i . B_j
};

// Entry (i,j) = exp((A_i . B_j)/tau); raw cosines exposed for
// thresholding. Rows must be unit-norm within 1e-6.
inline SimilarityResult pairwise_similarity(const Tensor& a, const Tensor& b, Temperature tau) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols())
        throw dimension_error("pairwise_similarity " + a.shape_str() + " vs " + b.shape_str());
    ContrastiveBatch::check_unit_rows(a);
    ContrastiveBatch::check_unit_rows(b);
    int n = a.rows(), m = b.rows(), d = a.cols();
    Tensor cos = Tensor::zeros({n, m});
    Tensor sim = Tensor::zeros({n, m});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) {
            double c = 0.0;
            for (int k = 0; k < d; ++k) c += a.at(i, k) * b.at(j, k);
            cos.at(i, j) = c;
            sim.at(i, j) = std::exp(c / tau.tau);
        }
    return {std::move(sim), std::move(cos)};
}

// mask(i,j) true iff cosine > rho: suspected false negative, to be
// dropped from the denominator. Raw cosine, not the exp-scaled value.
inline std::vector<std::uint8_t> false_negative_mask(const Tensor& cosines, double rho) {
    std::vector<std::uint8_t> mask(cosines.data.size());
    for (std::size_t i = 0; i < cosines.data.size(); ++i) {
        double c = cosines.data[i];
        if (c < -1.0 - 1e-9 || c > 1.0 + 1e-9)
            throw contract_error("cosine out of [-1, 1]");
        // clamp roundoff so rho = 1 never fires
        mask[i] = std::clamp(c, -1.0, 1.0) > rho ? 1 : 0;
    }
    return mask;
}

namespace detail {

// Raw cosine grid [n x 2n] between anchors and stacked candidate views,
// as a tape value (anchors/positives assumed unit-norm).
inline ValueId candidate_cosines(Tape& tape, ValueId anchors, ValueId positives) {
    return tape.matmul(anchors, tape.transpose(tape.vstack(anchors, positives)));
}

inline Tensor onehot_matrix(int rows, int cols, const std::vector<int>& hot) {
    Tensor m = Tensor::zeros({rows, cols});
    for (int i = 0; i < rows; ++i) m.at(i, hot[static_cast<std::size_t>(i)]) = 1.0;
    return m;
}

} // namespace detail

struct ContrastiveLossGraph {
    ValueId loss;
    // Applied false-negative mask over the n x 2n grid (all zero for
    // plain InfoNCE) and a flag for anchors left with no negatives.
    std::vector<std::uint8_t> mask;
    bool anchors_without_negatives = false;
    Tensor cosines; // forward snapshot of the candidate grid
};

// InfoNCE with optional denominator masking: loss_i =
//   -log( s(i, n+i) / (s(i, n+i) + sum over kept negatives) ).
// With rho = 1 nothing is masked (cosines clamp to [-1, 1] first), so
// the adaptive loss reduces to plain InfoNCE bit-exactly.
inline ContrastiveLossGraph contrastive_graph(Tape& tape, ValueId anchors, ValueId positives,
                                              Temperature tau,
                                              std::optional<double> rho = std::nullopt) {
    int n = tape.value(anchors).rows();
    if (n < 2) throw contract_error("contrastive loss needs >= 2 instances (no negatives otherwise)");
    ValueId cos = detail::candidate_cosines(tape, anchors, positives);
    Tensor cos_snapshot = tape.value(cos);

    std::vector<int> pos_col(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) pos_col[static_cast<std::size_t>(i)] = n + i;
    Tensor pos_onehot = detail::onehot_matrix(n, 2 * n, pos_col);

    // Denominator mask: self column excluded always; suspected false
    // negatives (cos > rho) excluded from the negative set; the
    // augmentation positive always kept.
    Tensor keep = Tensor::full({n, 2 * n}, 1.0);
    std::vector<std::uint8_t> fn_mask(static_cast<std::size_t>(n) * 2 * n, 0);
    bool starved = false;
    for (int i = 0; i < n; ++i) keep.at(i, i) = 0.0;
    if (rho) {
        for (int i = 0; i < n; ++i) {
            int negatives_left = 0;
            for (int j = 0; j < 2 * n; ++j) {
                if (j == i || j == n + i) continue;
                if (std::clamp(cos_snapshot.at(i, j), -1.0, 1.0) > *rho) {
                    keep.at(i, j) = 0.0;
                    fn_mask[static_cast<std::size_t>(i) * 2 * n + j] = 1;
                } else {
                    ++negatives_left;
                }
            }
            if (negatives_left == 0) starved = true;
        }
    }

    ValueId sims = tape.exp(tape.scale(cos, 1.0 / tau.tau));
    ValueId denom = tape.sum_axis(tape.mul(sims, tape.constant(keep)), 1);          // [n]
    ValueId pos_cos = tape.sum_axis(tape.mul(cos, tape.constant(pos_onehot)), 1);   // [n]
    ValueId per_anchor = tape.sub(tape.log(denom), tape.scale(pos_cos, 1.0 / tau.tau));
    ValueId loss = tape.mean(per_anchor);
    return {loss, std::move(fn_mask), starved, std::move(cos_snapshot)};
}

inline ContrastiveLossGraph info_nce_graph(Tape& tape, ValueId anchors, ValueId positives,
                                           Temperature tau) {
    return contrastive_graph(tape, anchors, positives, tau);
}

inline ContrastiveLossGraph adaptive_fnc_graph(Tape& tape, ValueId anchors, ValueId positives,
                                               Temperature tau, double rho) {
    return contrastive_graph(tape, anchors, positives, tau, rho);
}

// Supervised contrastive, summation-outside-the-log form: per anchor,
// average over same-label candidates p of -log(s(i,p) / sum_{j != i}
// s(i,j)); anchors with no positive are excluded from the mean. The
// candidate pool here excludes only the anchor's own column, so the
// augmentation partner counts as a positive (labels match themselves).
inline ValueId supcon_graph(Tape& tape, ValueId anchors, ValueId positives,
                            const std::vector<int>& labels, Temperature tau) {
    int n = tape.value(anchors).rows();
    if (static_cast<int>(labels.size()) != n) throw dimension_error("supcon labels length mismatch");
    if (n < 2) throw contract_error("supcon needs >= 2 instances");
    ValueId cos = detail::candidate_cosines(tape, anchors, positives);
    ValueId sims = tape.exp(tape.scale(cos, 1.0 / tau.tau));

    Tensor keep = Tensor::full({n, 2 * n}, 1.0);
    for (int i = 0; i < n; ++i) keep.at(i, i) = 0.0;
    ValueId denom = tape.sum_axis(tape.mul(sims, tape.constant(keep)), 1); // [n]
    ValueId log_denom = tape.log(denom);

    // Positive weights: 1/|P(i)| on same-label candidates (self column
    // excluded), 0 elsewhere; rows without positives dropped.
    Tensor pos_w = Tensor::zeros({n, 2 * n});
    Tensor row_keep = Tensor::zeros({n});
    int active = 0;
    for (int i = 0; i < n; ++i) {
        int count = 0;
        for (int j = 0; j < 2 * n; ++j)
            if (j != i && labels[static_cast<std::size_t>(j % n)] == labels[static_cast<std::size_t>(i)]) ++count;
        if (count == 0) continue;
        row_keep.data[static_cast<std::size_t>(i)] = 1.0;
        ++active;
        for (int j = 0; j < 2 * n; ++j)
            if (j != i && labels[static_cast<std::size_t>(j % n)] == labels[static_cast<std::size_t>(i)])
                pos_w.at(i, j) = 1.0 / count;
    }
    if (active == 0) throw contract_error("supcon: no anchor has a same-label candidate");

    // per-anchor: log_denom - sum_p w_p * cos(i,p)/tau
    ValueId weighted_pos = tape.sum_axis(tape.mul(tape.scale(cos, 1.0 / tau.tau), tape.constant(pos_w)), 1);
    ValueId per_anchor = tape.mul(tape.sub(log_denom, weighted_pos), tape.constant(row_keep));
    return tape.scale(tape.sum(per_anchor), 1.0 / active);
}

// Mean negative log-softmax of the true class, max-shift stabilized.
inline ValueId cross_entropy_graph(Tape& tape, ValueId logits, const std::vector<int>& labels) {
    const Tensor& L = tape.value(logits);
    if (L.rank() != 2) throw dimension_error("cross_entropy expects [n x C] logits");
    int n = L.rows(), C = L.cols();
    if (static_cast<int>(labels.size()) != n) throw dimension_error("labels length mismatch");
    for (int y : labels)
        if (y < 0 || y >= C) throw contract_error("label out of range [0, C)");

    Tensor shift = Tensor::zeros({n, C});
    for (int i = 0; i < n; ++i) {
        double m = L.at(i, 0);
        for (int j = 1; j < C; ++j) m = std::max(m, L.at(i, j));
        for (int j = 0; j < C; ++j) shift.at(i, j) = m;
    }
    ValueId z = tape.sub(logits, tape.constant(shift));
    ValueId log_sum = tape.log(tape.sum_axis(tape.exp(z), 1)); // [n]
    Tensor onehot = detail::onehot_matrix(n, C, labels);
    ValueId true_logit = tape.sum_axis(tape.mul(z, tape.constant(onehot)), 1);
    return tape.mean(tape.sub(log_sum, true_logit));
}

// Single-anchor closed form: -log( s+ / (s+ + sum s-) ) from raw
// cosines. The batch losses average this term over anchors.
inline double info_nce_single(double pos_cos, const std::vector<double>& neg_cos, Temperature tau) {
    if (neg_cos.empty()) throw contract_error("info_nce needs >= 1 negative");
    double s_pos = std::exp(pos_cos / tau.tau);
    double denom = s_pos;
    for (double c : neg_cos) denom += std::exp(c / tau.tau);
    return std::log(denom) - pos_cos / tau.tau;
}

// Same with cos > rho negatives dropped; all negatives dropped leaves
// only the positive term, which is exactly 0.
inline double adaptive_fnc_single(double pos_cos, const std::vector<double>& neg_cos,
                                  Temperature tau, double rho) {
    std::vector<double> kept;
    for (double c : neg_cos)
        if (std::clamp(c, -1.0, 1.0) <= rho) kept.push_back(c);
    if (kept.empty()) return 0.0;
    return info_nce_single(pos_cos, kept, tau);
}

// ---- Plain (non-graph) wrappers -----------------------------------------

inline double info_nce_loss(const ContrastiveBatch& batch, Temperature tau) {
    batch.validate();
    Tape tape;
    Tensor a = batch.anchors, p = batch.positives;
    return tape.value(info_nce_graph(tape, tape.constant(a), tape.constant(p), tau).loss).data[0];
}

struct AdaptiveFncResult {
    double loss;
    std::vector<std::uint8_t> mask; // n x 2n applied false-negative mask
    bool anchors_without_negatives;
};

inline AdaptiveFncResult adaptive_fnc_loss(const ContrastiveBatch& batch, Temperature tau, double rho) {
    batch.validate();
    Tape tape;
    Tensor a = batch.anchors, p = batch.positives;
    auto g = adaptive_fnc_graph(tape, tape.constant(a), tape.constant(p), tau, rho);
    return {tape.value(g.loss).data[0], std::move(g.mask), g.anchors_without_negatives};
}

inline double supcon_loss(const ContrastiveBatch& batch, Temperature tau) {
    batch.validate();
    if (!batch.labels) throw contract_error("supcon requires labels");
    Tape tape;
    Tensor a = batch.anchors, p = batch.positives;
    return tape.value(supcon_graph(tape, tape.constant(a), tape.constant(p), *batch.labels, tau)).data[0];
}

inline double cross_entropy_loss(const Tensor& logits, const std::vector<int>& labels) {
    Tape tape;
    Tensor l = logits;
    return tape.value(cross_entropy_graph(tape, tape.constant(l), labels)).data[0];
}

struct AlignmentUniformity {
    double alignment;          // -(1/tau) * mean over positive pairs of exp(cos/tau)
    double uniformity;         // mean over negative pairs of log exp(cos/tau) = mean cos/tau
    double uniformity_log_of_mean; // cited-source convention: log of the mean similarity
};

inline AlignmentUniformity alignment_uniformity(const ContrastiveBatch& batch, Temperature tau) {
    batch.validate();
    int n = batch.n();
    auto anchor_pos = pairwise_similarity(batch.anchors, batch.positives, tau);
    double align = 0.0;
    for (int i = 0; i < n; ++i) align += anchor_pos.exp_sim.at(i, i);
    align = -align / (n * tau.tau);

    Tensor all = Tensor::zeros({2 * n, batch.dim()});
    std::copy(batch.anchors.data.begin(), batch.anchors.data.end(), all.data.begin());
    std::copy(batch.positives.data.begin(), batch.positives.data.end(),
              all.data.begin() + batch.anchors.size());
    auto grid = pairwise_similarity(batch.anchors, all, tau);
    double log_sum = 0.0, sim_sum = 0.0;
    int count = 0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < 2 * n; ++j) {
            if (j == i || j == n + i) continue; // same instance: not a negative pair
            log_sum += grid.cosine.at(i, j) / tau.tau;
            sim_sum += grid.exp_sim.at(i, j);
            ++count;
        }
    if (count == 0) return {align, 0.0, 0.0};
    return {align, log_sum / count, std::log(sim_sum / count)};
}

// Per-step diagnostic dump enabling false-negative precision/recall
// audits downstream. One row per anchor-candidate pair.
inline void dump_mask_csv(std::ostream& os, int epoch, const Tensor& cosines,
                          const std::vector<std::uint8_t>& mask,
                          const std::vector<std::uint8_t>& same_class) {
    int n = cosines.rows(), m = cosines.cols();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) {
            std::size_t k = static_cast<std::size_t>(i) * m + j;
            os << epoch << ',' << i << ',' << j << ',' << cosines.at(i, j) << ','
               << int(mask[k]) << ',' << (same_class.empty() ? -1 : int(same_class[k])) << '\n';
        }
}

} // namespace cslab
