#pragma once

// Small encoders producing unit-norm embeddings on S^(d-1), a linear
// classification head, and bit-exact checkpoint round-tripping.
//
// MLP layout: linear+relu per hidden width, then one linear to the
// embedding dim, then l2_normalize. The last hidden block together with
// the final linear plays the SimCLR projection-head role.

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cslab/rng.hpp"
#include "cslab/tensor.hpp"

namespace cslab {

enum class Arch { mlp, small_cnn };

inline std::string arch_name(Arch a) { return a == Arch::mlp ? "mlp" : "small_cnn"; }
inline Arch arch_from_name(const std::string& s) {
    if (s == "mlp") return Arch::mlp;
    if (s == "small_cnn") return Arch::small_cnn;
    throw config_error("unknown architecture: " + s);
}

struct EncoderConfig {
    Arch architecture = Arch::mlp;
    int input_dim = 0; // mlp
    int channels = 0, height = 0, width = 0; // small_cnn
    std::vector<int> hidden_widths;
    int embedding_dim = 8;
    std::uint64_t seed = 0;

    void validate() const {
        if (embedding_dim < 2) throw config_error("embedding_dim must be >= 2");
        if (hidden_widths.empty()) throw config_error("hidden_widths must be nonempty");
        for (int w : hidden_widths)
            if (w <= 0) throw config_error("hidden width must be positive");
        if (architecture == Arch::mlp) {
            if (input_dim <= 0) throw config_error("mlp requires input_dim > 0");
        } else {
            if (channels <= 0 || height <= 0 || width <= 0)
                throw config_error("small_cnn requires positive image shape");
            if (height / 4 == 0 || width / 4 == 0)
                throw config_error("image too small for two pooling stages");
        }
    }

    nlohmann::json to_json() const {
        return {{"architecture", arch_name(architecture)}, {"input_dim", input_dim},
                {"channels", channels}, {"height", height}, {"width", width},
                {"hidden_widths", hidden_widths}, {"embedding_dim", embedding_dim},
                {"seed", seed}};
    }
    static EncoderConfig from_json(const nlohmann::json& j) {
        EncoderConfig c;
        c.architecture = arch_from_name(j.at("architecture").get<std::string>());
        c.input_dim = j.value("input_dim", 0);
        c.channels = j.value("channels", 0);
        c.height = j.value("height", 0);
        c.width = j.value("width", 0);
        c.hidden_widths = j.at("hidden_widths").get<std::vector<int>>();
        c.embedding_dim = j.at("embedding_dim").get<int>();
        c.seed = j.value("seed", std::uint64_t{0});
        return c;
    }
};

namespace detail {

inline Tensor init_tensor(std::vector<int> shape, int fan_in, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : t.data) v = rng.uniform(-bound, bound);
    t.requires_grad = true;
    return t;
}

} // namespace detail

struct Encoder {
    EncoderConfig config;
    std::vector<std::pair<std::string, Tensor>> params;

    Tensor& param(const std::string& name) {
        for (auto& [n, t] : params)
            if (n == name) return t;
        throw config_error("unknown parameter: " + name);
    }
    const Tensor& param(const std::string& name) const {
        return const_cast<Encoder*>(this)->param(name);
    }

    void zero_grad() {
        for (auto& [n, t] : params) t.zero_grad();
    }

    // Trainable forward: parameters join the tape so backward()
    // accumulates into their grad buffers.
    ValueId encode_graph(Tape& tape, ValueId input) {
        return forward(tape, input, /*train=*/true);
    }
    // Frozen forward: parameters enter as constants (used by attacks and
    // evaluation); the input can still receive gradients.
    ValueId encode_graph_frozen(Tape& tape, ValueId input) const {
        return const_cast<Encoder*>(this)->forward(tape, input, /*train=*/false);
    }

    Tensor encode(const Tensor& batch) const {
        Tape tape;
        Tensor in = batch;
        return tape.value(encode_graph_frozen(tape, tape.constant(std::move(in))));
    }

  private:
    ValueId bind(Tape& tape, const std::string& name, bool train) {
        return train ? tape.param(param(name)) : tape.constant(param(name));
    }

    ValueId forward(Tape& tape, ValueId x, bool train) {
        if (config.architecture == Arch::mlp) {
            const Tensor& in = tape.value(x);
            if (in.rank() != 2 || in.cols() != config.input_dim)
                throw dimension_error("encoder input must be [n x " + std::to_string(config.input_dim) + "]");
            ValueId h = x;
            for (std::size_t i = 0; i < config.hidden_widths.size(); ++i) {
                std::string tag = std::to_string(i);
                h = tape.relu(tape.add_rowvec(tape.matmul(h, bind(tape, "w" + tag, train)),
                                              bind(tape, "b" + tag, train)));
            }
            h = tape.add_rowvec(tape.matmul(h, bind(tape, "w_out", train)), bind(tape, "b_out", train));
            return tape.l2_normalize(h);
        }
        const Tensor& in = tape.value(x);
        if (in.rank() != 4 || in.shape[1] != config.channels || in.shape[2] != config.height ||
            in.shape[3] != config.width)
            throw dimension_error("encoder input must be [n x c x h x w] matching config");
        int n = in.shape[0];
        ValueId h = tape.avgpool2(tape.relu(
            tape.conv2d(x, bind(tape, "conv0_w", train), bind(tape, "conv0_b", train))));
        h = tape.avgpool2(tape.relu(
            tape.conv2d(h, bind(tape, "conv1_w", train), bind(tape, "conv1_b", train))));
        const Tensor& pooled = tape.value(h);
        int flat = pooled.shape[1] * pooled.shape[2] * pooled.shape[3];
        h = tape.reshape(h, {n, flat});
        h = tape.relu(tape.add_rowvec(tape.matmul(h, bind(tape, "fc_w", train)), bind(tape, "fc_b", train)));
        h = tape.add_rowvec(tape.matmul(h, bind(tape, "w_out", train)), bind(tape, "b_out", train));
        return tape.l2_normalize(h);
    }
};

inline Encoder encoder_init(const EncoderConfig& cfg) {
    cfg.validate();
    Encoder enc;
    enc.config = cfg;
    Rng rng(cfg.seed);
    if (cfg.architecture == Arch::mlp) {
        int prev = cfg.input_dim;
        for (std::size_t i = 0; i < cfg.hidden_widths.size(); ++i) {
            int w = cfg.hidden_widths[i];
            std::string tag = std::to_string(i);
            enc.params.emplace_back("w" + tag, detail::init_tensor({prev, w}, prev, rng));
            enc.params.emplace_back("b" + tag, detail::init_tensor({w}, prev, rng));
            prev = w;
        }
        enc.params.emplace_back("w_out", detail::init_tensor({prev, cfg.embedding_dim}, prev, rng));
        enc.params.emplace_back("b_out", detail::init_tensor({cfg.embedding_dim}, prev, rng));
    } else {
        int c0 = cfg.hidden_widths[0];
        int c1 = cfg.hidden_widths.size() > 1 ? cfg.hidden_widths[1] : c0;
        int fc_w = cfg.hidden_widths.back();
        enc.params.emplace_back("conv0_w", detail::init_tensor({c0, cfg.channels, 3, 3}, cfg.channels * 9, rng));
        enc.params.emplace_back("conv0_b", detail::init_tensor({c0}, cfg.channels * 9, rng));
        enc.params.emplace_back("conv1_w", detail::init_tensor({c1, c0, 3, 3}, c0 * 9, rng));
        enc.params.emplace_back("conv1_b", detail::init_tensor({c1}, c0 * 9, rng));
        int flat = c1 * (cfg.height / 4) * (cfg.width / 4);
        enc.params.emplace_back("fc_w", detail::init_tensor({flat, fc_w}, flat, rng));
        enc.params.emplace_back("fc_b", detail::init_tensor({fc_w}, flat, rng));
        enc.params.emplace_back("w_out", detail::init_tensor({fc_w, cfg.embedding_dim}, fc_w, rng));
        enc.params.emplace_back("b_out", detail::init_tensor({cfg.embedding_dim}, fc_w, rng));
    }
    return enc;
}

struct LinearProbe {
    Tensor weight; // [d x C]
    Tensor bias;   // [C]

    static LinearProbe init(int embedding_dim, int num_classes, std::uint64_t seed) {
        LinearProbe p;
        Rng rng(seed);
        p.weight = detail::init_tensor({embedding_dim, num_classes}, embedding_dim, rng);
        p.bias = detail::init_tensor({num_classes}, embedding_dim, rng);
        return p;
    }

    ValueId forward_graph(Tape& tape, ValueId embeddings, bool train) {
        ValueId w = train ? tape.param(weight) : tape.constant(weight);
        ValueId b = train ? tape.param(bias) : tape.constant(bias);
        return tape.add_rowvec(tape.matmul(embeddings, w), b);
    }
    ValueId forward_graph_frozen(Tape& tape, ValueId embeddings) const {
        return const_cast<LinearProbe*>(this)->forward_graph(tape, embeddings, false);
    }

    void zero_grad() {
        weight.zero_grad();
        bias.zero_grad();
    }
};

inline Tensor probe_forward(const LinearProbe& probe, const Tensor& embeddings) {
    if (embeddings.rank() != 2 || embeddings.cols() != probe.weight.rows())
        throw dimension_error("probe_forward dim mismatch");
    Tape tape;
    Tensor e = embeddings;
    return tape.value(probe.forward_graph_frozen(tape, tape.constant(std::move(e))));
}

// ---- Checkpoints ---------------------------------------------------------
// Text bundle: magic line, config JSON, then per parameter a header line
// and one line of hexfloat values. Hexfloat round-trips doubles exactly.

namespace detail {

inline void write_tensor_line(std::ostream& os, const Tensor& t) {
    char buf[64];
    for (std::size_t i = 0; i < t.data.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%a", t.data[i]);
        os << (i ? " " : "") << buf;
    }
    os << '\n';
}

inline std::vector<double> parse_hex_line(const std::string& line, std::size_t expect) {
    std::vector<double> out;
    out.reserve(expect);
    const char* p = line.c_str();
    char* end = nullptr;
    while (*p) {
        double v = std::strtod(p, &end);
        if (end == p) break;
        out.push_back(v);
        p = end;
    }
    if (out.size() != expect) throw format_error("checkpoint value count mismatch");
    return out;
}

} // namespace detail

inline void save_checkpoint(const Encoder& enc, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw format_error("cannot open checkpoint for writing: " + path);
    os << "cslab-checkpoint v1\n";
    os << enc.config.to_json().dump() << '\n';
    for (const auto& [name, t] : enc.params) {
        os << "param " << name;
        for (int d : t.shape) os << ' ' << d;
        os << '\n';
        detail::write_tensor_line(os, t);
    }
    os << "end\n";
}

inline Encoder load_checkpoint(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw format_error("cannot open checkpoint: " + path);
    std::string line;
    if (!std::getline(is, line) || line != "cslab-checkpoint v1")
        throw format_error("bad checkpoint magic");
    if (!std::getline(is, line)) throw format_error("missing checkpoint config");
    Encoder enc;
    enc.config = EncoderConfig::from_json(nlohmann::json::parse(line));
    while (std::getline(is, line)) {
        if (line == "end") return enc;
        std::istringstream hs(line);
        std::string kw, name;
        hs >> kw >> name;
        if (kw != "param") throw format_error("unexpected checkpoint line: " + line);
        std::vector<int> shape;
        int d;
        while (hs >> d) shape.push_back(d);
        if (!std::getline(is, line)) throw format_error("truncated checkpoint after " + name);
        Tensor t(shape, detail::parse_hex_line(line, static_cast<std::size_t>(Tensor::numel(shape))));
        t.requires_grad = true;
        enc.params.emplace_back(name, std::move(t));
    }
    throw format_error("checkpoint missing end marker");
}

} // namespace cslab
