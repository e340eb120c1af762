#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "cslab/attacks.hpp"
#include "cslab/rng.hpp"

using namespace cslab;

namespace {

AttackConfig wide_cfg(AttackKind kind, NormKind norm, double eps) {
    AttackConfig c;
    c.kind = kind;
    c.norm = norm;
    c.epsilon = eps;
    c.step_size = eps > 0 ? eps / 4.0 : 0.1;
    c.iterations = kind == AttackKind::fgsm ? 1 : 5;
    c.clamp_low = -10.0;
    c.clamp_high = 10.0;
    return c;
}

// loss with a fixed, known input gradient
LossFn linear_loss(const Tensor& grad_dir) {
    return [grad_dir](Tape& tape, ValueId x) {
        Tensor g = grad_dir;
        return tape.sum(tape.mul(x, tape.constant(std::move(g))));
    };
}

} // namespace

TEST_CASE("fgsm sign arithmetic") {
    Tensor x = Tensor({2}, {0.5, 0.5});
    auto cfg = wide_cfg(AttackKind::fgsm, NormKind::linf, 0.1);
    Tensor adv = fgsm(linear_loss(Tensor({2}, {0.3, -0.2})), x, cfg);
    CHECK(adv.data[0] == Catch::Approx(0.6));
    CHECK(adv.data[1] == Catch::Approx(0.4));

    cfg.epsilon = 0.0;
    CHECK(fgsm(linear_loss(Tensor({2}, {0.3, -0.2})), x, cfg).data == x.data);

    cfg.epsilon = 0.1;
    CHECK(fgsm(linear_loss(Tensor({2}, {0.0, 0.0})), x, cfg).data == x.data); // sign(0) = 0
}

TEST_CASE("projection closed forms") {
    CHECK(project(Tensor({2}, {0.6, 0.8}), NormKind::l2, 0.5).data ==
          std::vector<double>{0.3, 0.4});
    CHECK(project(Tensor({2}, {0.2, -0.9}), NormKind::linf, 0.5).data ==
          std::vector<double>{0.2, -0.5});
    Tensor l1 = project(Tensor({2}, {0.6, -0.2}), NormKind::l1, 0.5);
    CHECK(l1.data[0] == Catch::Approx(0.45).margin(1e-12));
    CHECK(l1.data[1] == Catch::Approx(-0.05).margin(1e-12));
    CHECK(norm_of(l1, NormKind::l1) == Catch::Approx(0.5).margin(1e-12));
}

TEST_CASE("projection is idempotent") {
    Rng rng(2);
    for (auto norm : {NormKind::linf, NormKind::l2, NormKind::l1}) {
        for (int trial = 0; trial < 25; ++trial) {
            Tensor d = Tensor::zeros({6});
            for (double& v : d.data) v = rng.uniform(-2.0, 2.0);
            double eps = rng.uniform(0.1, 1.5);
            Tensor once = project(d, norm, eps);
            Tensor twice = project(once, norm, eps);
            for (std::size_t i = 0; i < d.data.size(); ++i)
                CHECK(twice.data[i] == Catch::Approx(once.data[i]).margin(1e-12));
            CHECK(norm_of(once, norm) <= eps + 1e-9);
        }
    }
}

TEST_CASE("l1 projection matches a 2-D grid-search oracle") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor d = Tensor({2}, {rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)});
        double eps = rng.uniform(0.2, 1.0);
        Tensor p = project(d, NormKind::l1, eps);
        // dense grid over the l1 ball, pick the closest point
        double best = 1e100;
        double bx = 0, by = 0;
        int steps = 800;
        for (int i = -steps; i <= steps; ++i)
            for (int j = -steps + std::abs(i); j <= steps - std::abs(i); ++j) {
                double x = eps * i / steps, y = eps * j / steps;
                double dist = (x - d.data[0]) * (x - d.data[0]) + (y - d.data[1]) * (y - d.data[1]);
                if (dist < best) {
                    best = dist;
                    bx = x;
                    by = y;
                }
            }
        CHECK(std::abs(p.data[0] - bx) < 1e-2);
        CHECK(std::abs(p.data[1] - by) < 1e-2);
        // projected point is no farther than the oracle's best grid point
        double pd = (p.data[0] - d.data[0]) * (p.data[0] - d.data[0]) +
                    (p.data[1] - d.data[1]) * (p.data[1] - d.data[1]);
        CHECK(pd <= best + 1e-4);
    }
}

TEST_CASE("pgd single step equals fgsm") {
    Tensor x = Tensor({3}, {0.1, -0.4, 0.7});
    Tensor g({3}, {1.0, -2.0, 0.5});
    AttackConfig pcfg = wide_cfg(AttackKind::pgd, NormKind::linf, 0.25);
    pcfg.iterations = 1;
    pcfg.step_size = 0.25;
    pcfg.random_start = false;
    AttackConfig fcfg = wide_cfg(AttackKind::fgsm, NormKind::linf, 0.25);
    CHECK(pgd(linear_loss(g), x, pcfg).data == fgsm(linear_loss(g), x, fcfg).data);
}

TEST_CASE("pgd respects budget and clamp on random problems") {
    Rng rng(77);
    for (auto norm : {NormKind::linf, NormKind::l2, NormKind::l1}) {
        for (int trial = 0; trial < 30; ++trial) {
            Tensor x = Tensor::zeros({4});
            Tensor g = Tensor::zeros({4});
            for (double& v : x.data) v = rng.uniform(-0.8, 0.8);
            for (double& v : g.data) v = rng.uniform(-1.0, 1.0);
            AttackConfig cfg = wide_cfg(AttackKind::pgd, norm, rng.uniform(0.05, 0.5));
            cfg.random_start = trial % 2 == 0;
            cfg.seed = static_cast<std::uint64_t>(trial);
            cfg.clamp_low = -1.0;
            cfg.clamp_high = 1.0;
            Tensor adv = pgd(linear_loss(g), x, cfg);
            Tensor delta = adv;
            for (std::size_t i = 0; i < delta.data.size(); ++i) delta.data[i] -= x.data[i];
            CHECK(norm_of(delta, norm) <= cfg.epsilon + 1e-9);
            for (double v : adv.data) {
                CHECK(v >= cfg.clamp_low);
                CHECK(v <= cfg.clamp_high);
            }
        }
    }
}

TEST_CASE("pgd-40 loss is at least pgd-1 loss on a seeded linear classifier") {
    // 2-D logistic-style loss: log(1 + exp(-w.x))
    Tensor w({2}, {1.3, -0.7});
    LossFn loss_fn = [w](Tape& tape, ValueId x) {
        Tensor wc = w;
        auto dot = tape.sum(tape.mul(x, tape.constant(std::move(wc))));
        return tape.log(tape.add_scalar(tape.exp(tape.neg(dot)), 1.0));
    };
    Tensor x = Tensor({2}, {0.2, 0.3});
    auto eval = [&](const Tensor& p) {
        Tape t;
        Tensor pc = p;
        return t.value(loss_fn(t, t.constant(std::move(pc)))).data[0];
    };
    AttackConfig c1 = wide_cfg(AttackKind::pgd, NormKind::l2, 0.4);
    c1.iterations = 1;
    c1.random_start = true;
    c1.seed = 9;
    AttackConfig c40 = c1;
    c40.iterations = 40;
    CHECK(eval(pgd(loss_fn, x, c40)) >= eval(pgd(loss_fn, x, c1)));
}

TEST_CASE("pgd determinism") {
    Tensor x = Tensor({3}, {0.0, 0.1, -0.2});
    Tensor g({3}, {0.5, -0.3, 0.8});
    AttackConfig cfg = wide_cfg(AttackKind::pgd, NormKind::l2, 0.3);
    cfg.random_start = true;
    cfg.seed = 1234;
    CHECK(pgd(linear_loss(g), x, cfg).data == pgd(linear_loss(g), x, cfg).data);
}

TEST_CASE("contrastive instance attack reduces positive cosine") {
    EncoderConfig ec;
    ec.architecture = Arch::mlp;
    ec.input_dim = 4;
    ec.hidden_widths = {8};
    ec.embedding_dim = 4;
    ec.seed = 3;
    Encoder enc = encoder_init(ec);

    Tensor x = Tensor::row_major(1, 4, {0.3, -0.2, 0.8, 0.1});
    Tensor pos = Tensor::row_major(1, 4, {0.32, -0.18, 0.78, 0.12});
    Rng rng(6);
    Tensor negs = Tensor::zeros({3, 4});
    for (int i = 0; i < 3; ++i) {
        double s = 0.0;
        for (int j = 0; j < 4; ++j) {
            negs.at(i, j) = rng.normal(0.0, 1.0);
            s += negs.at(i, j) * negs.at(i, j);
        }
        for (int j = 0; j < 4; ++j) negs.at(i, j) /= std::sqrt(s);
    }

    AttackConfig cfg = wide_cfg(AttackKind::contrastive_instance, NormKind::linf, 0.2);
    cfg.iterations = 10;
    cfg.step_size = 0.04;
    Tensor adv = contrastive_instance_attack(enc, x, pos, negs, cfg, Temperature(0.5));

    auto cos_pos = [&](const Tensor& in) {
        Tensor e = enc.encode(in);
        Tensor p = enc.encode(pos);
        double c = 0.0;
        for (int j = 0; j < 4; ++j) c += e.at(0, j) * p.at(0, j);
        return c;
    };
    CHECK(cos_pos(adv) <= cos_pos(x));

    // budget contract shared with pgd
    for (std::size_t i = 0; i < adv.data.size(); ++i)
        CHECK(std::abs(adv.data[i] - x.data[i]) <= cfg.epsilon + 1e-9);

    cfg.epsilon = 0.0;
    cfg.random_start = false;
    CHECK(contrastive_instance_attack(enc, x, pos, negs, cfg, Temperature(0.5)).data == x.data);
}

TEST_CASE("corruptions") {
    CorruptionConfig bright{CorruptionKind::brightness, 1};
    Tensor img = Tensor::full({1, 4, 4}, 0.5);
    Tensor out = corrupt(img, bright, 0);
    for (double v : out.data) CHECK(v == Catch::Approx(0.55));

    // contrast around the image's own mean is a fixed point on constants
    CorruptionConfig contrast{CorruptionKind::contrast, 3};
    Tensor c = corrupt(img, contrast, 0);
    for (double v : c.data) CHECK(v == Catch::Approx(0.5));

    // blur of a centered delta keeps total mass while the spread stays
    // away from the renormalized borders
    CorruptionConfig blur{CorruptionKind::gaussian_blur, 2};
    Tensor delta = Tensor::zeros({1, 15, 15});
    delta.data[static_cast<std::size_t>(7 * 15 + 7)] = 1.0;
    Tensor blurred = corrupt(delta, blur, 0);
    double total = 0.0;
    for (double v : blurred.data) total += v;
    CHECK(total == Catch::Approx(1.0).margin(1e-9));

    // noise is seed-deterministic
    CorruptionConfig noise{CorruptionKind::gaussian_noise, 2};
    CHECK(corrupt(img, noise, 42).data == corrupt(img, noise, 42).data);
    CHECK(corrupt(img, noise, 42).data != corrupt(img, noise, 43).data);

    // blur requires an image
    CHECK_THROWS_AS(corrupt(Tensor({4}, {0, 0, 0, 0}), blur, 0), contract_error);
    CorruptionConfig bad{CorruptionKind::gaussian_noise, 5};
    CHECK_THROWS_AS(corrupt(img, bad, 0), config_error);
}
