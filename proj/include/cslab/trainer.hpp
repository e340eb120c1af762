#pragma once

// Seeded optimization loops over the loss family, simplified adversarial
// contrastive training (adversarial views join as extra positives), the
// linear-probe evaluation protocol, and the robustness report.

#include <chrono>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cslab/attacks.hpp"
#include "cslab/data.hpp"
#include "cslab/geometry.hpp"
#include "cslab/losses.hpp"
#include "cslab/models.hpp"

namespace cslab {

enum class LossKind { cross_entropy, supcon, info_nce, adaptive_fnc };

inline std::string loss_name(LossKind k) {
    switch (k) {
        case LossKind::cross_entropy: return "cross_entropy";
        case LossKind::supcon: return "supcon";
        case LossKind::info_nce: return "info_nce";
        default: return "adaptive_fnc";
    }
}
inline LossKind loss_from_name(const std::string& s) {
    if (s == "cross_entropy") return LossKind::cross_entropy;
    if (s == "supcon") return LossKind::supcon;
    if (s == "info_nce") return LossKind::info_nce;
    if (s == "adaptive_fnc") return LossKind::adaptive_fnc;
    throw config_error("unknown loss: " + s);
}

struct AdversarialBlock {
    AttackConfig attack; // contrastive instance attack parameters
    double lambda = 1.0; // weight of the adversarial loss term
};

struct TrainConfig {
    LossKind loss = LossKind::info_nce;
    int epochs = 10;
    int batch_size = 32;
    double learning_rate = 0.1;
    double momentum = 0.9;
    double weight_decay = 0.0;
    double tau = 0.5;
    ThresholdSchedule schedule; // adaptive_fnc only
    std::optional<AdversarialBlock> adversarial;
    AugmentationConfig augmentation;
    std::uint64_t seed = 0;

    void validate() const {
        if (learning_rate <= 0.0) throw config_error("learning_rate must be positive");
        if (epochs < 1) throw config_error("epochs must be >= 1");
        if (batch_size < 2) throw config_error("batch_size must be >= 2");
        if (momentum < 0.0 || momentum >= 1.0) throw config_error("momentum must be in [0, 1)");
        if (!(tau > 0.0)) throw config_error("tau must be positive");
        if (adversarial && adversarial->lambda < 0.0) throw config_error("lambda must be >= 0");
        if (loss == LossKind::adaptive_fnc) schedule.validate();
        augmentation.validate();
    }
};

struct training_abort : std::runtime_error {
    int epoch;
    training_abort(int e, const std::string& msg)
        : std::runtime_error("training aborted at epoch " + std::to_string(e) + ": " + msg), epoch(e) {}
};

struct EpochRecord {
    int epoch;
    double loss;
    double rho;              // NaN when no threshold is in play
    double fn_precision;     // NaN when undefined or unlabeled
    double fn_recall;
    double alignment;
    double uniformity;
    double wall_clock_sec;   // informational only, never serialized

    // Wall-clock is deliberately left out so reruns are byte-identical.
    nlohmann::json to_json() const {
        auto num = [](double v) {
            return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
        };
        return {{"epoch", epoch}, {"loss", loss},         {"rho", num(rho)},
                {"fn_precision", num(fn_precision)},       {"fn_recall", num(fn_recall)},
                {"alignment", alignment},                  {"uniformity", uniformity}};
    }
};

struct RunMetrics {
    std::vector<EpochRecord> epochs;

    void to_jsonl(std::ostream& os) const {
        for (const auto& e : epochs) os << e.to_json().dump() << '\n';
    }
};

namespace detail {

// SGD with momentum and weight decay over a named parameter set.
class SgdState {
  public:
    void step(std::vector<std::pair<std::string, Tensor>>& params, double lr, double momentum,
              double weight_decay) {
        if (velocity_.empty())
            for (auto& [name, t] : params) velocity_.emplace_back(t.data.size(), 0.0);
        for (std::size_t p = 0; p < params.size(); ++p) {
            Tensor& t = params[p].second;
            t.ensure_grad();
            auto& v = velocity_[p];
            for (std::size_t i = 0; i < t.data.size(); ++i) {
                double g = t.grad[i] + weight_decay * t.data[i];
                v[i] = momentum * v[i] + g;
                t.data[i] -= lr * v[i];
            }
        }
    }

  private:
    std::vector<std::vector<double>> velocity_;
};

inline BatchInputs assemble_batch(const Dataset& ds, const std::vector<int>& idx,
                                  const AugmentationConfig& aug, Rng& rng) {
    BatchInputs b;
    b.indices = idx;
    std::vector<Tensor> v1, v2;
    for (int i : idx) {
        std::uint64_t s1 = rng.next_seed(), s2 = rng.next_seed();
        v1.push_back(augment(ds.samples[static_cast<std::size_t>(i)], ds.kind, aug, s1));
        v2.push_back(augment(ds.samples[static_cast<std::size_t>(i)], ds.kind, aug, s2));
        b.labels.push_back(ds.labels[static_cast<std::size_t>(i)]);
    }
    std::vector<int> seq(idx.size());
    std::iota(seq.begin(), seq.end(), 0);
    b.view1 = stack_samples(v1, seq);
    b.view2 = stack_samples(v2, seq);
    return b;
}

inline Tensor slice_example(const Tensor& batch, int row) {
    std::vector<int> shape(batch.shape.begin() + 1, batch.shape.end());
    shape.insert(shape.begin(), 1);
    std::size_t stride = static_cast<std::size_t>(Tensor::numel(shape));
    Tensor out = Tensor::zeros(shape);
    std::copy(batch.data.begin() + static_cast<std::size_t>(row) * stride,
              batch.data.begin() + (static_cast<std::size_t>(row) + 1) * stride, out.data.begin());
    return out;
}

inline int num_classes_of(const Dataset& ds) {
    int c = 0;
    for (int y : ds.labels) c = std::max(c, y + 1);
    return c;
}

} // namespace detail

// Core loop shared by clean and adversarial training. Adversarial views
// (when configured) are generated per anchor by the contrastive
// instance attack and enter as a lambda-weighted extra positive term;
// FNC masking applies to their denominator exactly as in clean training.
inline RunMetrics train(Encoder& encoder, const Dataset& ds, const TrainConfig& cfg,
                        std::ostream* mask_dump = nullptr) {
    cfg.validate();
    ds.validate();
    bool needs_labels = cfg.loss == LossKind::cross_entropy || cfg.loss == LossKind::supcon;
    if (needs_labels && ds.labels.empty())
        throw contract_error("supervised loss requires labels");
    if (cfg.adversarial && cfg.loss == LossKind::cross_entropy)
        throw config_error("adversarial contrastive block requires a contrastive loss");

    Temperature tau(cfg.tau);
    Rng rng(cfg.seed);
    detail::SgdState sgd;
    detail::SgdState head_sgd;
    std::optional<LinearProbe> head; // joint head for the cross-entropy baseline
    if (cfg.loss == LossKind::cross_entropy)
        head = LinearProbe::init(encoder.config.embedding_dim, detail::num_classes_of(ds),
                                 rng.next_seed());

    RunMetrics metrics;
    std::vector<int> order(static_cast<std::size_t>(ds.size()));
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        rng.shuffle(order);
        double rho = std::numeric_limits<double>::quiet_NaN();
        if (cfg.loss == LossKind::adaptive_fnc) rho = threshold_at(cfg.schedule, epoch).rho;

        double loss_sum = 0.0;
        int batches = 0;
        long fn_tp = 0, fn_fp = 0, fn_fn = 0;
        double align_sum = 0.0, unif_sum = 0.0;
        int align_count = 0;

        for (int start = 0; start + cfg.batch_size <= ds.size(); start += cfg.batch_size) {
            std::vector<int> idx(order.begin() + start, order.begin() + start + cfg.batch_size);
            BatchInputs batch = detail::assemble_batch(ds, idx, cfg.augmentation, rng);

            Tape tape;
            ValueId loss;
            std::vector<std::uint8_t> applied_mask;
            Tensor cos_snapshot;
            if (cfg.loss == LossKind::cross_entropy) {
                Tensor v1 = batch.view1;
                ValueId e1 = encoder.encode_graph(tape, tape.constant(std::move(v1)));
                ValueId logits = head->forward_graph(tape, e1, true);
                loss = cross_entropy_graph(tape, logits, batch.labels);
            } else {
                Tensor v1 = batch.view1, v2 = batch.view2;
                ValueId e1 = encoder.encode_graph(tape, tape.constant(std::move(v1)));
                ValueId e2 = encoder.encode_graph(tape, tape.constant(std::move(v2)));
                if (cfg.loss == LossKind::supcon) {
                    loss = supcon_graph(tape, e1, e2, batch.labels, tau);
                } else {
                    std::optional<double> mask_rho;
                    if (cfg.loss == LossKind::adaptive_fnc) mask_rho = rho;
                    auto g = contrastive_graph(tape, e1, e2, tau, mask_rho);
                    loss = g.loss;
                    applied_mask = std::move(g.mask);
                    cos_snapshot = std::move(g.cosines);
                    if (cfg.adversarial) {
                        // adversarial anchors against the second view,
                        // negatives drawn from the other instances
                        Tensor e2_val = tape.value(e2);
                        std::vector<Tensor> adv_rows;
                        for (int i = 0; i < cfg.batch_size; ++i) {
                            Tensor x_i = detail::slice_example(batch.view1, i);
                            Tensor pos_i = detail::slice_example(batch.view2, i);
                            Tensor negs = Tensor::zeros({cfg.batch_size - 1, e2_val.cols()});
                            int r = 0;
                            for (int j = 0; j < cfg.batch_size; ++j) {
                                if (j == i) continue;
                                for (int k = 0; k < e2_val.cols(); ++k) negs.at(r, k) = e2_val.at(j, k);
                                ++r;
                            }
                            AttackConfig acfg = cfg.adversarial->attack;
                            acfg.seed = rng.next_seed();
                            adv_rows.push_back(contrastive_instance_attack(encoder, x_i, pos_i, negs,
                                                                           acfg, tau));
                        }
                        // flatten [1 x ...] rows back into a batch tensor
                        Tensor adv = Tensor::zeros(batch.view1.shape);
                        std::size_t stride = adv.data.size() / static_cast<std::size_t>(cfg.batch_size);
                        for (int i = 0; i < cfg.batch_size; ++i)
                            std::copy(adv_rows[static_cast<std::size_t>(i)].data.begin(),
                                      adv_rows[static_cast<std::size_t>(i)].data.end(),
                                      adv.data.begin() + static_cast<std::size_t>(i) * stride);
                        ValueId e_adv = encoder.encode_graph(tape, tape.constant(std::move(adv)));
                        auto g_adv = contrastive_graph(tape, e_adv, e2, tau, mask_rho);
                        loss = tape.add(loss, tape.scale(g_adv.loss, cfg.adversarial->lambda));
                    }
                }
            }

            double lv = tape.value(loss).data[0];
            if (!std::isfinite(lv)) throw training_abort(epoch, "non-finite loss");
            loss_sum += lv;
            ++batches;

            encoder.zero_grad();
            if (head) head->zero_grad();
            tape.backward(loss);
            sgd.step(encoder.params, cfg.learning_rate, cfg.momentum, cfg.weight_decay);
            if (head) {
                std::vector<std::pair<std::string, Tensor>> hp;
                hp.emplace_back("w", std::move(head->weight));
                hp.emplace_back("b", std::move(head->bias));
                head_sgd.step(hp, cfg.learning_rate, cfg.momentum, cfg.weight_decay);
                head->weight = std::move(hp[0].second);
                head->bias = std::move(hp[1].second);
            }

            // diagnostics on the post-step snapshot of this batch
            if (!applied_mask.empty() && !ds.labels.empty()) {
                int n = cfg.batch_size;
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < 2 * n; ++j) {
                        bool same = batch.labels[static_cast<std::size_t>(i)] ==
                                    batch.labels[static_cast<std::size_t>(j % n)];
                        bool self = j == i || j == n + i;
                        std::size_t k = static_cast<std::size_t>(i) * 2 * n + j;
                        if (self) continue;
                        if (applied_mask[k] && same) ++fn_tp;
                        else if (applied_mask[k] && !same) ++fn_fp;
                        else if (!applied_mask[k] && same) ++fn_fn;
                    }
                if (mask_dump) {
                    std::vector<std::uint8_t> truth(static_cast<std::size_t>(n) * 2 * n, 0);
                    for (int i = 0; i < n; ++i)
                        for (int j = 0; j < 2 * n; ++j)
                            truth[static_cast<std::size_t>(i) * 2 * n + j] =
                                batch.labels[static_cast<std::size_t>(i)] ==
                                batch.labels[static_cast<std::size_t>(j % n)];
                    dump_mask_csv(*mask_dump, epoch, cos_snapshot, applied_mask, truth);
                }
            }
            if (cfg.loss != LossKind::cross_entropy) {
                ContrastiveBatch eb;
                eb.anchors = encoder.encode(batch.view1);
                eb.positives = encoder.encode(batch.view2);
                auto au = alignment_uniformity(eb, tau);
                align_sum += au.alignment;
                unif_sum += au.uniformity;
                ++align_count;
            }
        }

        if (batches == 0) throw contract_error("dataset smaller than one batch");
        EpochRecord rec{};
        rec.epoch = epoch;
        rec.loss = loss_sum / batches;
        rec.rho = rho;
        rec.fn_precision = (fn_tp + fn_fp) > 0 ? static_cast<double>(fn_tp) / (fn_tp + fn_fp)
                                               : std::numeric_limits<double>::quiet_NaN();
        rec.fn_recall = (fn_tp + fn_fn) > 0 ? static_cast<double>(fn_tp) / (fn_tp + fn_fn)
                                            : std::numeric_limits<double>::quiet_NaN();
        rec.alignment = align_count ? align_sum / align_count : 0.0;
        rec.uniformity = align_count ? unif_sum / align_count : 0.0;
        rec.wall_clock_sec =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        metrics.epochs.push_back(rec);
    }
    return metrics;
}

inline RunMetrics adversarial_train(Encoder& encoder, const Dataset& ds, const TrainConfig& cfg,
                                    std::ostream* mask_dump = nullptr) {
    if (!cfg.adversarial) throw config_error("adversarial_train requires the adversarial block");
    return train(encoder, ds, cfg, mask_dump);
}

// Fits a linear head by cross-entropy SGD on frozen embeddings; the
// encoder is const and its parameters are untouched by construction.
inline LinearProbe linear_probe_train(const Encoder& encoder, const Dataset& ds, int epochs,
                                      double lr, std::uint64_t seed) {
    ds.validate();
    if (ds.labels.empty()) throw contract_error("probe training requires labels");
    if (epochs < 1) throw config_error("probe epochs must be >= 1");
    int C = detail::num_classes_of(ds);
    LinearProbe probe = LinearProbe::init(encoder.config.embedding_dim, C, seed);

    // embed once; the encoder never re-runs during probe fitting
    std::vector<int> all(static_cast<std::size_t>(ds.size()));
    std::iota(all.begin(), all.end(), 0);
    Tensor embeddings = encoder.encode(stack_samples(ds.samples, all));

    Rng rng(seed + 1);
    detail::SgdState sgd;
    std::vector<int> order = all;
    const int batch = std::min(64, ds.size());
    for (int e = 0; e < epochs; ++e) {
        rng.shuffle(order);
        for (int start = 0; start + batch <= ds.size(); start += batch) {
            Tensor eb = Tensor::zeros({batch, embeddings.cols()});
            std::vector<int> labels;
            for (int i = 0; i < batch; ++i) {
                int row = order[static_cast<std::size_t>(start + i)];
                for (int k = 0; k < embeddings.cols(); ++k) eb.at(i, k) = embeddings.at(row, k);
                labels.push_back(ds.labels[static_cast<std::size_t>(row)]);
            }
            Tape tape;
            ValueId logits = probe.forward_graph(tape, tape.constant(std::move(eb)), true);
            ValueId loss = cross_entropy_graph(tape, logits, labels);
            if (!std::isfinite(tape.value(loss).data[0])) throw training_abort(e, "probe loss non-finite");
            probe.zero_grad();
            tape.backward(loss);
            std::vector<std::pair<std::string, Tensor>> pp;
            pp.emplace_back("w", std::move(probe.weight));
            pp.emplace_back("b", std::move(probe.bias));
            sgd.step(pp, lr, 0.9, 0.0);
            probe.weight = std::move(pp[0].second);
            probe.bias = std::move(pp[1].second);
        }
    }
    return probe;
}

// ---- Evaluation ----------------------------------------------------------

struct SweepEntry {
    std::string key; // e.g. "fgsm:linf:eps=0.1"
    AttackConfig attack;
};
struct CorruptionEntry {
    std::string key;
    CorruptionConfig corruption;
};

struct RobustnessReport {
    double clean_accuracy = 0.0;
    std::map<std::string, double> perturbed_accuracy;
    std::map<std::string, double> p_drop;
    std::map<std::string, std::string> errors; // sub-evaluation failures by key
    ClassSeparation separation;
    AlignmentUniformity align_unif{0.0, 0.0, 0.0};

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["clean_accuracy"] = clean_accuracy;
        j["perturbed_accuracy"] = perturbed_accuracy;
        j["p_drop"] = p_drop;
        j["errors"] = errors;
        j["separation"] = {{"avg_intra", separation.avg_intra},
                           {"avg_inter", separation.avg_inter},
                           {"ratio", std::isfinite(separation.ratio) ? nlohmann::json(separation.ratio)
                                                                     : nlohmann::json("inf")},
                           {"degenerate_intra", separation.degenerate_intra}};
        j["alignment"] = align_unif.alignment;
        j["uniformity"] = align_unif.uniformity;
        j["uniformity_log_of_mean"] = align_unif.uniformity_log_of_mean;
        return j;
    }
};

struct EvalOptions {
    int max_examples = -1; // cap attack evaluation cost; -1 = all
    AugmentationConfig augmentation; // for the alignment/uniformity probe views
    double tau = 0.5;
    std::uint64_t seed = 0;
};

inline RobustnessReport evaluate(const Encoder& encoder, const LinearProbe& probe,
                                 const Dataset& test, const std::vector<SweepEntry>& attacks,
                                 const std::vector<CorruptionEntry>& corruptions,
                                 const EvalOptions& opts = {}) {
    test.validate();
    if (test.size() == 0) throw contract_error("empty test set");
    RobustnessReport report;

    std::vector<int> all(static_cast<std::size_t>(test.size()));
    std::iota(all.begin(), all.end(), 0);
    Tensor embeddings = encoder.encode(stack_samples(test.samples, all));
    report.clean_accuracy = accuracy(probe_forward(probe, embeddings), test.labels);
    report.separation = class_distance_stats(embeddings, test.labels);

    {
        ContrastiveBatch eb;
        eb.anchors = embeddings;
        Rng rng(opts.seed);
        std::vector<Tensor> views;
        for (int i = 0; i < test.size(); ++i)
            views.push_back(augment(test.samples[static_cast<std::size_t>(i)], test.kind,
                                    opts.augmentation, rng.next_seed()));
        eb.positives = encoder.encode(stack_samples(views, all));
        report.align_unif = alignment_uniformity(eb, Temperature(opts.tau));
    }

    int n_eval = opts.max_examples > 0 ? std::min(opts.max_examples, test.size()) : test.size();

    auto predict_one = [&](const Tensor& x) {
        Tensor logits = probe_forward(probe, encoder.encode(x));
        int best = 0;
        for (int j = 1; j < logits.cols(); ++j)
            if (logits.at(0, j) > logits.at(0, best)) best = j;
        return best;
    };

    for (const auto& entry : attacks) {
        try {
            int correct = 0;
            for (int i = 0; i < n_eval; ++i) {
                Tensor x = detail::slice_example(stack_samples(test.samples, {i}), 0);
                int y = test.labels[static_cast<std::size_t>(i)];
                LossFn loss_fn = [&](Tape& tape, ValueId xv) {
                    ValueId e = encoder.encode_graph_frozen(tape, xv);
                    ValueId logits = probe.forward_graph_frozen(tape, e);
                    return cross_entropy_graph(tape, logits, {y});
                };
                AttackConfig cfg = entry.attack;
                cfg.seed = opts.seed * 1000003u + static_cast<std::uint64_t>(i);
                Tensor adv = run_attack(loss_fn, x, cfg);
                if (predict_one(adv) == y) ++correct;
            }
            double acc = static_cast<double>(correct) / n_eval;
            report.perturbed_accuracy[entry.key] = acc;
            report.p_drop[entry.key] = relative_drop(report.clean_accuracy, acc);
        } catch (const std::exception& e) {
            report.errors[entry.key] = e.what();
        }
    }

    for (const auto& entry : corruptions) {
        try {
            int correct = 0;
            for (int i = 0; i < n_eval; ++i) {
                const Tensor& sample = test.samples[static_cast<std::size_t>(i)];
                Tensor c = corrupt(sample, entry.corruption,
                                   opts.seed * 7919u + static_cast<std::uint64_t>(i));
                std::vector<Tensor> one{c};
                Tensor x = stack_samples(one, {0});
                if (predict_one(x) == test.labels[static_cast<std::size_t>(i)]) ++correct;
            }
            double acc = static_cast<double>(correct) / n_eval;
            report.perturbed_accuracy[entry.key] = acc;
            report.p_drop[entry.key] = relative_drop(report.clean_accuracy, acc);
        } catch (const std::exception& e) {
            report.errors[entry.key] = e.what();
        }
    }
    return report;
}

} // namespace cslab
