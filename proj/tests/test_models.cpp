#include <catch2/catch_amalgamated.hpp>

#include <cstdio>

#include "cslab/gradcheck.hpp"
#include "cslab/models.hpp"

using namespace cslab;

namespace {

EncoderConfig mlp_config(std::uint64_t seed = 1) {
    EncoderConfig c;
    c.architecture = Arch::mlp;
    c.input_dim = 2;
    c.hidden_widths = {8, 8};
    c.embedding_dim = 4;
    c.seed = seed;
    return c;
}

std::size_t total_params(const Encoder& e) {
    std::size_t n = 0;
    for (const auto& [name, t] : e.params) n += t.data.size();
    return n;
}

} // namespace

TEST_CASE("encoder_init is seed-deterministic") {
    Encoder a = encoder_init(mlp_config(7));
    Encoder b = encoder_init(mlp_config(7));
    for (std::size_t i = 0; i < a.params.size(); ++i)
        CHECK(a.params[i].second.data == b.params[i].second.data);

    Encoder c = encoder_init(mlp_config(8));
    bool any_diff = false;
    for (std::size_t i = 0; i < a.params.size(); ++i)
        if (a.params[i].second.data != c.params[i].second.data) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("mlp parameter count matches layer arithmetic") {
    // 2->8 (16+8), 8->8 (64+8), 8->4 (32+4) = 132
    CHECK(total_params(encoder_init(mlp_config())) == 132);
}

TEST_CASE("config validation") {
    EncoderConfig c = mlp_config();
    c.embedding_dim = 1;
    CHECK_THROWS_AS(encoder_init(c), config_error);
    c = mlp_config();
    c.hidden_widths.clear();
    CHECK_THROWS_AS(encoder_init(c), config_error);
    c = mlp_config();
    c.hidden_widths = {8, 0};
    CHECK_THROWS_AS(encoder_init(c), config_error);
}

TEST_CASE("encode outputs unit rows and is deterministic") {
    Encoder enc = encoder_init(mlp_config());
    Tensor x = Tensor::row_major(3, 2, {0.5, -1.0, 0.5, -1.0, 2.0, 0.3});
    Tensor e = enc.encode(x);
    REQUIRE(e.shape == std::vector<int>{3, 4});
    for (int i = 0; i < 3; ++i) {
        double s = 0.0;
        for (int j = 0; j < 4; ++j) s += e.at(i, j) * e.at(i, j);
        CHECK(std::abs(std::sqrt(s) - 1.0) < 1e-9);
    }
    // duplicated input rows produce identical embeddings
    for (int j = 0; j < 4; ++j) CHECK(e.at(0, j) == e.at(1, j));
}

TEST_CASE("encode is permutation-equivariant") {
    Encoder enc = encoder_init(mlp_config());
    Tensor x = Tensor::row_major(3, 2, {1, 2, 3, 4, 5, 6});
    Tensor perm = Tensor::row_major(3, 2, {5, 6, 1, 2, 3, 4});
    Tensor e = enc.encode(x), ep = enc.encode(perm);
    for (int j = 0; j < 4; ++j) {
        CHECK(ep.at(0, j) == e.at(2, j));
        CHECK(ep.at(1, j) == e.at(0, j));
        CHECK(ep.at(2, j) == e.at(1, j));
    }
}

TEST_CASE("embedding input-gradient matches finite differences") {
    Encoder enc = encoder_init(mlp_config(3));
    Tensor x = Tensor::row_major(2, 2, {0.4, -0.7, 1.2, 0.1});

    // scalar probe: sum of the first embedding coordinate over the batch
    auto f = [&](const Tensor& xin) {
        Tensor e = enc.encode(xin);
        double s = 0.0;
        for (int i = 0; i < e.rows(); ++i) s += e.at(i, 0);
        return s;
    };
    Tensor xg = x;
    xg.requires_grad = true;
    Tape tape;
    auto xv = tape.param(xg);
    auto e = enc.encode_graph_frozen(tape, xv);
    Tensor pick = Tensor::zeros({2, 4});
    pick.at(0, 0) = pick.at(1, 0) = 1.0;
    tape.backward(tape.sum(tape.mul(e, tape.constant(pick))));

    Tensor fd = finite_difference_grad(f, x, 1e-5);
    for (std::size_t i = 0; i < fd.data.size(); ++i) {
        double denom = std::max(std::abs(fd.data[i]), 1e-6);
        CHECK(std::abs(xg.grad[i] - fd.data[i]) / denom < 1e-5);
    }
}

TEST_CASE("small_cnn encodes unit rows and differentiates") {
    EncoderConfig c;
    c.architecture = Arch::small_cnn;
    c.channels = 1;
    c.height = 8;
    c.width = 8;
    c.hidden_widths = {4, 4};
    c.embedding_dim = 4;
    c.seed = 5;
    Encoder enc = encoder_init(c);
    Tensor x = Tensor::zeros({2, 1, 8, 8});
    for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] = (static_cast<double>(i % 13)) / 13.0;
    Tensor e = enc.encode(x);
    REQUIRE(e.shape == std::vector<int>{2, 4});
    for (int i = 0; i < 2; ++i) {
        double s = 0.0;
        for (int j = 0; j < 4; ++j) s += e.at(i, j) * e.at(i, j);
        CHECK(std::abs(std::sqrt(s) - 1.0) < 1e-9);
    }

    auto f = [&](const Tensor& xin) {
        Tensor emb = enc.encode(xin);
        return emb.at(0, 1);
    };
    Tensor xg = x;
    xg.requires_grad = true;
    Tape tape;
    auto xv = tape.param(xg);
    auto ev = enc.encode_graph_frozen(tape, xv);
    Tensor pick = Tensor::zeros({2, 4});
    pick.at(0, 1) = 1.0;
    tape.backward(tape.sum(tape.mul(ev, tape.constant(pick))));
    Tensor fd = finite_difference_grad(f, x, 1e-5);
    for (std::size_t i = 0; i < fd.data.size(); ++i) {
        double denom = std::max(std::abs(fd.data[i]), 1e-6);
        CHECK(std::abs(xg.grad[i] - fd.data[i]) / denom < 2e-5);
    }
}

TEST_CASE("probe_forward basics") {
    LinearProbe p;
    p.weight = Tensor::zeros({3, 2});
    p.bias = Tensor({2}, {0.5, -1.0});
    Tensor e = Tensor::row_major(2, 3, {1, 2, 3, 4, 5, 6});
    Tensor logits = probe_forward(p, e);
    for (int i = 0; i < 2; ++i) {
        CHECK(logits.at(i, 0) == 0.5);
        CHECK(logits.at(i, 1) == -1.0);
    }

    // identity-like weights recover embeddings plus bias
    LinearProbe id;
    id.weight = Tensor::row_major(2, 2, {1, 0, 0, 1});
    id.bias = Tensor({2}, {0.1, 0.2});
    Tensor e2 = Tensor::row_major(1, 2, {3, 4});
    Tensor l2 = probe_forward(id, e2);
    CHECK(l2.at(0, 0) == Catch::Approx(3.1));
    CHECK(l2.at(0, 1) == Catch::Approx(4.2));

    CHECK_THROWS_AS(probe_forward(p, Tensor::zeros({2, 4})), dimension_error);
}

TEST_CASE("probe argmax separates a hand-built fixture") {
    // class 0 along +x, class 1 along +y
    LinearProbe p;
    p.weight = Tensor::row_major(2, 2, {1, -1, -1, 1});
    p.bias = Tensor::zeros({2});
    Tensor e = Tensor::row_major(4, 2, {0.9, 0.1, 0.8, 0.0, 0.1, 0.9, 0.2, 0.95});
    Tensor logits = probe_forward(p, e);
    std::vector<int> expect{0, 0, 1, 1};
    for (int i = 0; i < 4; ++i) {
        int best = logits.at(i, 0) >= logits.at(i, 1) ? 0 : 1;
        CHECK(best == expect[static_cast<std::size_t>(i)]);
    }
}

TEST_CASE("checkpoint round-trips bit-exactly") {
    Encoder enc = encoder_init(mlp_config(99));
    std::string path = std::string(std::tmpnam(nullptr)) + ".ckpt";
    save_checkpoint(enc, path);
    Encoder back = load_checkpoint(path);
    REQUIRE(back.params.size() == enc.params.size());
    for (std::size_t i = 0; i < enc.params.size(); ++i) {
        CHECK(back.params[i].first == enc.params[i].first);
        CHECK(back.params[i].second.shape == enc.params[i].second.shape);
        CHECK(back.params[i].second.data == enc.params[i].second.data);
    }
    CHECK(back.config.embedding_dim == enc.config.embedding_dim);
    CHECK(back.config.hidden_widths == enc.config.hidden_widths);
    std::remove(path.c_str());

    CHECK_THROWS_AS(load_checkpoint("/nonexistent/x.ckpt"), format_error);
}
