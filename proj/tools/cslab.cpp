// Experiment driver: dataset generation, seeded training, robustness
// evaluation, and grid sweeps, all from a single JSON run config.
//
// Exit codes: 0 success, 2 config error, 3 training abort,
// 4 checkpoint mismatch, 1 partial sweep failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cslab/data.hpp"
#include "cslab/geometry.hpp"
#include "cslab/models.hpp"
#include "cslab/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cslab;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitAbort = 3;
constexpr int kExitCheckpoint = 4;

struct checkpoint_mismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---- config plumbing ------------------------------------------------------

json load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw config_error("cannot open config: " + path);
    return json::parse(is);
}

// dotted-path override, value parsed as JSON when possible
void apply_override(json& cfg, const std::string& kv) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw config_error("--set expects key=value, got: " + kv);
    std::string key = kv.substr(0, eq), raw = kv.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::exception&) {
        value = raw;
    }
    json* node = &cfg;
    std::size_t start = 0;
    while (true) {
        auto dot = key.find('.', start);
        std::string part = key.substr(start, dot - start);
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        start = dot + 1;
    }
}

std::string config_hash(const json& cfg) {
    std::uint64_t h = 1469598103934665603ull; // FNV-1a
    for (unsigned char c : cfg.dump()) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::vector<std::uint64_t> seed_list(const json& cfg, std::optional<std::uint64_t> seed_flag) {
    if (seed_flag) return {*seed_flag};
    std::vector<std::uint64_t> seeds = cfg.value("seeds", std::vector<std::uint64_t>{0});
    if (seeds.empty()) throw config_error("seeds: list must be nonempty");
    return seeds;
}

fs::path out_dir(const json& cfg, const std::string& out_flag) {
    if (!out_flag.empty()) return out_flag;
    if (cfg.contains("out")) return cfg.at("out").get<std::string>();
    if (const char* root = std::getenv("CSLAB_OUT_ROOT")) return fs::path(root) / "run";
    return "out";
}

void write_manifest(const fs::path& dir, const json& cfg, const std::string& command,
                    const std::vector<std::uint64_t>& seeds) {
    json m{{"command", command}, {"config_hash", config_hash(cfg)}, {"seeds", seeds}};
    std::ofstream os(dir / "manifest.json");
    os << m.dump(2) << '\n';
}

// ---- typed sections -------------------------------------------------------

SyntheticConfig synthetic_from_json(const json& j) {
    SyntheticConfig c;
    c.num_classes = j.at("num_classes").get<int>();
    c.samples_per_class = j.at("samples_per_class").get<int>();
    c.ambient_dim = j.at("ambient_dim").get<int>();
    c.cluster_std = j.value("cluster_std", c.cluster_std);
    c.min_centroid_angle_deg = j.value("min_centroid_angle_deg", c.min_centroid_angle_deg);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

Dataset dataset_from_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw config_error("cannot open dataset: " + path);
    Dataset ds;
    ds.kind = SampleKind::vector_data;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string field;
        if (!std::getline(row, field, ',')) throw format_error("bad dataset row: " + line);
        ds.labels.push_back(std::stoi(field));
        std::vector<double> vals;
        while (std::getline(row, field, ',')) vals.push_back(std::stod(field));
        Tensor t({static_cast<int>(vals.size())}, std::move(vals));
        ds.samples.push_back(std::move(t));
    }
    ds.validate();
    return ds;
}

Dataset dataset_from_config(const json& cfg) {
    const json& d = cfg.at("data");
    if (d.contains("path")) {
        std::string path = d.at("path").get<std::string>();
        if (path.size() > 4 && path.substr(path.size() - 4) == ".bin")
            return cifar10_load(path, d.value("max_records", -1));
        return dataset_from_csv(path);
    }
    return synth_gaussian_mixture(synthetic_from_json(d.at("synthetic")));
}

AugmentationConfig augmentation_from_json(const json& j) {
    AugmentationConfig a;
    a.noise_std = j.value("noise_std", a.noise_std);
    a.scale_jitter_lo = j.value("scale_jitter_lo", a.scale_jitter_lo);
    a.scale_jitter_hi = j.value("scale_jitter_hi", a.scale_jitter_hi);
    a.crop_padding = j.value("crop_padding", a.crop_padding);
    a.hflip_prob = j.value("hflip_prob", a.hflip_prob);
    a.brightness_jitter = j.value("brightness_jitter", a.brightness_jitter);
    a.contrast_jitter = j.value("contrast_jitter", a.contrast_jitter);
    a.jitter_strength = j.value("jitter_strength", a.jitter_strength);
    a.validate();
    return a;
}

AttackConfig attack_from_json(const json& j) {
    AttackConfig a;
    std::string kind = j.at("kind").get<std::string>();
    if (kind == "fgsm") a.kind = AttackKind::fgsm;
    else if (kind == "pgd") a.kind = AttackKind::pgd;
    else throw config_error("eval attacks: unknown kind " + kind);
    a.norm = norm_from_name(j.value("norm", std::string("linf")));
    a.epsilon = j.at("epsilon").get<double>();
    a.step_size = j.value("step_size", a.epsilon / 10.0);
    a.iterations = j.value("iterations", a.kind == AttackKind::fgsm ? 1 : 40);
    a.random_start = j.value("random_start", a.kind == AttackKind::pgd);
    a.clamp_low = j.value("clamp_low", -10.0);
    a.clamp_high = j.value("clamp_high", 10.0);
    a.validate();
    return a;
}

TrainConfig train_from_json(const json& cfg) {
    const json& j = cfg.at("train");
    TrainConfig c;
    c.loss = loss_from_name(j.value("loss", std::string("info_nce")));
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.momentum = j.value("momentum", c.momentum);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.tau = j.value("tau", c.tau);
    if (j.contains("schedule")) {
        const json& s = j.at("schedule");
        c.schedule.rho_initial = s.at("rho_initial").get<double>();
        c.schedule.rho_final = s.at("rho_final").get<double>();
        c.schedule.total_epochs = s.value("total_epochs", std::max(1, c.epochs - 1));
    } else {
        c.schedule.total_epochs = std::max(1, c.epochs - 1);
    }
    if (j.contains("adversarial")) {
        const json& a = j.at("adversarial");
        AdversarialBlock b;
        b.attack.kind = AttackKind::contrastive_instance;
        b.attack.norm = norm_from_name(a.value("norm", std::string("linf")));
        b.attack.epsilon = a.at("epsilon").get<double>();
        b.attack.step_size = a.value("step_size", b.attack.epsilon / 10.0);
        b.attack.iterations = a.value("iterations", 5);
        b.attack.random_start = a.value("random_start", true);
        b.attack.clamp_low = a.value("clamp_low", -10.0);
        b.attack.clamp_high = a.value("clamp_high", 10.0);
        b.lambda = a.value("lambda", 1.0);
        c.adversarial = b;
    }
    if (j.contains("augmentation")) c.augmentation = augmentation_from_json(j.at("augmentation"));
    c.validate();
    return c;
}

std::vector<SweepEntry> attacks_from_config(const json& cfg) {
    std::vector<SweepEntry> out;
    if (!cfg.contains("eval") || !cfg.at("eval").contains("attacks")) return out;
    for (const json& j : cfg.at("eval").at("attacks")) {
        SweepEntry e;
        e.attack = attack_from_json(j);
        std::ostringstream key;
        key << (e.attack.kind == AttackKind::fgsm ? "fgsm" : "pgd") << ':'
            << norm_name(e.attack.norm) << ":eps=" << e.attack.epsilon
            << ":it=" << e.attack.iterations;
        e.key = key.str();
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<CorruptionEntry> corruptions_from_config(const json& cfg) {
    std::vector<CorruptionEntry> out;
    if (!cfg.contains("eval") || !cfg.at("eval").contains("corruptions")) return out;
    for (const json& j : cfg.at("eval").at("corruptions")) {
        CorruptionEntry e;
        e.corruption.kind = corruption_from_name(j.at("kind").get<std::string>());
        e.corruption.severity = j.at("severity").get<int>();
        e.corruption.validate();
        e.key = corruption_name(e.corruption.kind) + ":" + std::to_string(e.corruption.severity);
        out.push_back(std::move(e));
    }
    return out;
}

// ---- commands -------------------------------------------------------------

int cmd_gen_data(const json& cfg, const fs::path& out, const std::vector<std::uint64_t>& seeds) {
    Dataset ds = synth_gaussian_mixture(synthetic_from_json(cfg.at("data").at("synthetic")));
    fs::create_directories(out);
    std::ofstream os(out / "dataset.csv");
    os.precision(17);
    dataset_to_csv(ds, os);
    write_manifest(out, cfg, "gen-data", seeds);
    std::cout << "wrote " << (out / "dataset.csv").string() << " (" << ds.size() << " rows)\n";
    return 0;
}

int cmd_train(const json& cfg, const fs::path& out, const std::vector<std::uint64_t>& seeds) {
    Dataset ds = dataset_from_config(cfg);
    TrainConfig base = train_from_json(cfg);
    EncoderConfig ec = EncoderConfig::from_json(cfg.at("encoder"));
    fs::create_directories(out);

    for (std::uint64_t seed : seeds) {
        EncoderConfig sc = ec;
        sc.seed = seed;
        Encoder enc = encoder_init(sc);
        TrainConfig tc = base;
        tc.seed = seed;
        RunMetrics metrics = tc.adversarial ? adversarial_train(enc, ds, tc) : train(enc, ds, tc);
        std::string tag = "seed" + std::to_string(seed);
        save_checkpoint(enc, (out / ("checkpoint_" + tag + ".ckpt")).string());
        std::ofstream ms(out / ("metrics_" + tag + ".jsonl"));
        metrics.to_jsonl(ms);
        std::cout << tag << ": final loss " << metrics.epochs.back().loss << '\n';
    }
    write_manifest(out, cfg, "train", seeds);
    return 0;
}

struct EvalRow {
    std::string method;
    std::string seed;
    RobustnessReport report;
};

void write_comparison_csv(const fs::path& path, const std::vector<EvalRow>& rows) {
    // stable column set: union of perturbation keys across rows
    std::vector<std::string> keys;
    for (const auto& r : rows)
        for (const auto& [k, v] : r.report.perturbed_accuracy)
            if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
    std::sort(keys.begin(), keys.end());

    std::ofstream os(path);
    os.precision(17);
    os << "method,seed,clean";
    for (const auto& k : keys) os << ',' << k << "_acc," << k << "_p_drop";
    os << '\n';
    auto emit = [&](const std::string& method, const std::string& seed, const RobustnessReport& r) {
        os << method << ',' << seed << ',' << r.clean_accuracy;
        for (const auto& k : keys) {
            os << ',';
            if (r.perturbed_accuracy.count(k)) os << r.perturbed_accuracy.at(k);
            os << ',';
            if (r.p_drop.count(k)) os << r.p_drop.at(k);
        }
        os << '\n';
    };
    for (const auto& r : rows) emit(r.method, r.seed, r.report);

    // mean and min/max across rows sharing a method name
    std::map<std::string, std::vector<const RobustnessReport*>> by_method;
    for (const auto& r : rows) by_method[r.method].push_back(&r.report);
    for (const auto& [method, group] : by_method) {
        if (group.size() < 2) continue;
        auto fold = [&](const char* tag, auto combine, double init) {
            RobustnessReport agg;
            agg.clean_accuracy = init;
            for (const auto& k : keys) {
                agg.perturbed_accuracy[k] = init;
                agg.p_drop[k] = init;
            }
            bool first = true;
            for (const RobustnessReport* r : group) {
                agg.clean_accuracy =
                    first ? r->clean_accuracy : combine(agg.clean_accuracy, r->clean_accuracy);
                for (const auto& k : keys) {
                    if (!r->perturbed_accuracy.count(k)) continue;
                    agg.perturbed_accuracy[k] =
                        first ? r->perturbed_accuracy.at(k)
                              : combine(agg.perturbed_accuracy[k], r->perturbed_accuracy.at(k));
                    agg.p_drop[k] = first ? r->p_drop.at(k) : combine(agg.p_drop[k], r->p_drop.at(k));
                }
                first = false;
            }
            emit(method, tag, agg);
        };
        RobustnessReport mean;
        double n = static_cast<double>(group.size());
        for (const RobustnessReport* r : group) {
            mean.clean_accuracy += r->clean_accuracy / n;
            for (const auto& k : keys) {
                if (!r->perturbed_accuracy.count(k)) continue;
                mean.perturbed_accuracy[k] += r->perturbed_accuracy.at(k) / n;
                mean.p_drop[k] += r->p_drop.at(k) / n;
            }
        }
        emit(method, "mean", mean);
        fold("min", [](double a, double b) { return std::min(a, b); }, 0.0);
        fold("max", [](double a, double b) { return std::max(a, b); }, 0.0);
    }
}

void check_compatible(const EncoderConfig& loaded, const EncoderConfig& wanted) {
    if (arch_name(loaded.architecture) != arch_name(wanted.architecture) ||
        loaded.input_dim != wanted.input_dim || loaded.channels != wanted.channels ||
        loaded.height != wanted.height || loaded.width != wanted.width ||
        loaded.hidden_widths != wanted.hidden_widths ||
        loaded.embedding_dim != wanted.embedding_dim)
        throw checkpoint_mismatch("checkpoint encoder does not match config encoder section");
}

RobustnessReport eval_checkpoint(const json& cfg, const Dataset& ds, const std::string& ckpt,
                                 std::uint64_t seed) {
    Encoder enc = load_checkpoint(ckpt);
    check_compatible(enc.config, EncoderConfig::from_json(cfg.at("encoder")));
    json ev = cfg.value("eval", json::object());
    LinearProbe probe =
        linear_probe_train(enc, ds, ev.value("probe_epochs", 30), ev.value("probe_lr", 0.2), seed);
    EvalOptions opts;
    opts.max_examples = ev.value("max_examples", -1);
    opts.tau = cfg.contains("train") ? cfg.at("train").value("tau", 0.5) : 0.5;
    opts.seed = seed;
    if (cfg.contains("train") && cfg.at("train").contains("augmentation"))
        opts.augmentation = augmentation_from_json(cfg.at("train").at("augmentation"));
    return evaluate(enc, probe, ds, attacks_from_config(cfg), corruptions_from_config(cfg), opts);
}

int cmd_eval(const json& cfg, const fs::path& out, const std::vector<std::uint64_t>& seeds,
             const std::vector<std::string>& checkpoints) {
    if (checkpoints.empty()) throw config_error("eval requires at least one --checkpoint");
    Dataset ds = dataset_from_config(cfg);
    fs::create_directories(out);

    std::vector<EvalRow> rows;
    for (const std::string& ckpt : checkpoints) {
        RobustnessReport report = eval_checkpoint(cfg, ds, ckpt, seeds.front());
        std::string stem = fs::path(ckpt).stem().string();
        json j = report.to_json();
        j["config_hash"] = config_hash(cfg);
        j["checkpoint"] = ckpt;
        j["seed"] = seeds.front();
        std::ofstream rs(out / ("report_" + stem + ".json"));
        rs << j.dump(2) << '\n';
        rows.push_back({stem, std::to_string(seeds.front()), std::move(report)});
        if (!rows.back().report.errors.empty())
            for (const auto& [k, msg] : rows.back().report.errors)
                std::cerr << "warning: " << stem << " " << k << ": " << msg << '\n';
    }
    write_comparison_csv(out / "comparison.csv", rows);
    write_manifest(out, cfg, "eval", seeds);
    std::cout << "wrote " << (out / "comparison.csv").string() << '\n';
    return 0;
}

int cmd_sweep(const json& cfg, const fs::path& out, const std::vector<std::uint64_t>& seeds) {
    const json sweep = cfg.value("sweep", json::object());
    std::vector<std::string> losses =
        sweep.value("losses", std::vector<std::string>{cfg.at("train").value("loss", std::string("info_nce"))});
    std::vector<json> schedules;
    if (sweep.contains("rho_schedules"))
        for (const json& s : sweep.at("rho_schedules")) schedules.push_back(s);
    else
        schedules.push_back(json::object());
    std::vector<double> epsilons = sweep.value("epsilons", std::vector<double>{0.1});

    Dataset ds = dataset_from_config(cfg);
    fs::create_directories(out);
    std::ofstream agg(out / "sweep.csv");
    agg.precision(17);
    agg << "loss,rho_initial,rho_final,epsilon,seed,clean,perturbed,p_drop,status\n";

    int failures = 0;
    for (const std::string& loss : losses)
        for (const json& sched : schedules)
            for (double eps : epsilons)
                for (std::uint64_t seed : seeds) {
                    json cell = cfg;
                    cell["train"]["loss"] = loss;
                    if (!sched.empty()) cell["train"]["schedule"] = sched;
                    double ri = sched.value("rho_initial", 1.0), rf = sched.value("rho_final", 1.0);
                    std::ostringstream name;
                    name << loss << "_r" << ri << "-" << rf << "_e" << eps << "_s" << seed;
                    fs::path cell_dir = out / name.str();
                    agg << loss << ',' << ri << ',' << rf << ',' << eps << ',' << seed << ',';
                    try {
                        int rc = cmd_train(cell, cell_dir, {seed});
                        if (rc != 0) throw config_error("training failed");
                        std::string ckpt =
                            (cell_dir / ("checkpoint_seed" + std::to_string(seed) + ".ckpt")).string();
                        json eval_cfg = cell;
                        eval_cfg["eval"]["attacks"] = json::array(
                            {{{"kind", "fgsm"}, {"norm", "linf"}, {"epsilon", eps}}});
                        Dataset cell_ds = dataset_from_config(eval_cfg);
                        RobustnessReport r = eval_checkpoint(eval_cfg, cell_ds, ckpt, seed);
                        std::string key = attacks_from_config(eval_cfg).front().key;
                        if (r.errors.count(key)) throw attack_error(r.errors.at(key));
                        agg << r.clean_accuracy << ',' << r.perturbed_accuracy.at(key) << ','
                            << r.p_drop.at(key) << ",ok\n";
                    } catch (const std::exception& e) {
                        std::string msg = e.what();
                        std::replace(msg.begin(), msg.end(), ',', ';');
                        std::replace(msg.begin(), msg.end(), '\n', ' ');
                        agg << ",,," << msg << '\n';
                        ++failures;
                    }
                }
    write_manifest(out, cfg, "sweep", seeds);
    std::cout << "wrote " << (out / "sweep.csv").string();
    if (failures) std::cout << " (" << failures << " failed cells)";
    std::cout << '\n';
    return failures ? 1 : 0;
}

int cmd_report(const fs::path& out) {
    // aggregate every report_*.json under the output directory
    std::vector<EvalRow> rows;
    std::vector<fs::path> files;
    if (!fs::exists(out)) throw config_error("no such directory: " + out.string());
    for (const auto& entry : fs::recursive_directory_iterator(out)) {
        std::string name = entry.path().filename().string();
        if (name.rfind("report_", 0) == 0 && entry.path().extension() == ".json")
            files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw config_error("no report_*.json files under " + out.string());
    for (const fs::path& f : files) {
        std::ifstream is(f);
        json j = json::parse(is);
        EvalRow row;
        row.method = f.stem().string().substr(7);
        row.seed = j.contains("seed") ? j.at("seed").dump() : "-";
        row.report.clean_accuracy = j.at("clean_accuracy").get<double>();
        for (const auto& [k, v] : j.at("perturbed_accuracy").items())
            row.report.perturbed_accuracy[k] = v.get<double>();
        for (const auto& [k, v] : j.at("p_drop").items()) row.report.p_drop[k] = v.get<double>();
        rows.push_back(std::move(row));
    }
    write_comparison_csv(out / "comparison.csv", rows);
    std::cout << "aggregated " << rows.size() << " reports into "
              << (out / "comparison.csv").string() << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"contrastive robustness laboratory"};
    app.require_subcommand(1);

    std::string config_path, out_flag;
    std::optional<std::uint64_t> seed_flag;
    std::vector<std::string> overrides;
    std::vector<std::string> checkpoints;

    auto add_common = [&](CLI::App* sub, bool needs_config) {
        auto* opt = sub->add_option("--config", config_path, "run config JSON");
        if (needs_config) opt->required();
        sub->add_option("--out", out_flag, "output directory");
        sub->add_option("--seed", seed_flag, "override the config seed list");
        sub->add_option("--set", overrides, "config override key.path=value");
    };

    CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
    add_common(gen, true);
    CLI::App* train_cmd = app.add_subcommand("train", "train one encoder per seed");
    add_common(train_cmd, true);
    CLI::App* eval_cmd = app.add_subcommand("eval", "probe + robustness sweep on checkpoints");
    add_common(eval_cmd, true);
    eval_cmd->add_option("--checkpoint", checkpoints, "checkpoint file (repeatable)")->required();
    CLI::App* sweep_cmd = app.add_subcommand("sweep", "train+eval over a config grid");
    add_common(sweep_cmd, true);
    CLI::App* report_cmd = app.add_subcommand("report", "aggregate reports into a comparison CSV");
    add_common(report_cmd, false);

    CLI11_PARSE(app, argc, argv);

    try {
        json cfg;
        if (!config_path.empty()) {
            cfg = load_config(config_path);
            for (const std::string& kv : overrides) apply_override(cfg, kv);
        }
        std::vector<std::uint64_t> seeds = config_path.empty()
                                               ? std::vector<std::uint64_t>{0}
                                               : seed_list(cfg, seed_flag);
        fs::path out = out_dir(cfg, out_flag);

        if (gen->parsed()) return cmd_gen_data(cfg, out, seeds);
        if (train_cmd->parsed()) return cmd_train(cfg, out, seeds);
        if (eval_cmd->parsed()) return cmd_eval(cfg, out, seeds, checkpoints);
        if (sweep_cmd->parsed()) return cmd_sweep(cfg, out, seeds);
        if (report_cmd->parsed()) return cmd_report(out);
    } catch (const training_abort& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitAbort;
    } catch (const checkpoint_mismatch& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitCheckpoint;
    } catch (const config_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const json::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
