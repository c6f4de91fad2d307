#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstddef>
#include <vector>

#include "test_util.hpp"
#include "vqqat/errors.hpp"
#include "vqqat/nas.hpp"

namespace nas = vqqat::nas;
using vqqat::ConfigError;
using vqqat::codebook::Metric;
using vqqat::numerics::Rng;
using vqqat::numerics::VecF;

namespace {

nas::MixedLayer make_layer(Rng& rng, std::size_t out_dim, std::size_t in_dim,
                           std::size_t vec_len, std::size_t b_index,
                           int lq_bits) {
    nas::MixedLayer layer;
    layer.out_dim = out_dim;
    layer.in_dim = in_dim;
    layer.w_vq = testutil::gaussian_vec(out_dim * in_dim, rng);
    layer.w_lq = testutil::gaussian_vec(out_dim * in_dim, rng);
    layer.vq_spec = {static_cast<int>(b_index), vec_len};
    layer.lq_spec = {lq_bits, -2.0, 2.0};
    layer.cb.b_index = b_index;
    layer.cb.vec_len = vec_len;
    layer.cb.metric = Metric::Cosine;
    layer.cb.entries =
        testutil::gaussian_vec((std::size_t{1} << b_index) * vec_len, rng);
    return layer;
}

// Standalone evaluation of one branch: quantize from scratch and apply the
// linear map, without going through quantize_branch/regroup.
VecF branch_oracle(const nas::MixedLayer& layer, nas::Branch choice,
                   const VecF& x) {
    VecF w_q(layer.n_weights());
    if (choice == nas::Branch::VQ) {
        const auto gw = vqqat::codebook::group(
            layer.w_vq, {layer.out_dim, layer.in_dim}, layer.vq_spec.vec_len);
        for (std::size_t v = 0; v < gw.n_vectors; ++v) {
            const VecF w(gw.vec(v), gw.vec(v) + gw.vec_len);
            const auto res = vqqat::quantizers::havq_forward(w, layer.cb);
            for (std::size_t t = 0; t < gw.vec_len; ++t) {
                const std::size_t flat = v * gw.vec_len + t;
                if (flat < layer.n_weights()) w_q[flat] = res.w_q[t];
            }
        }
    } else {
        for (std::size_t i = 0; i < layer.n_weights(); ++i) {
            w_q[i] = vqqat::quantizers::lq_forward(layer.w_lq[i], layer.lq_spec).w_q;
        }
    }
    VecF y(layer.out_dim);
    for (std::size_t o = 0; o < layer.out_dim; ++o) {
        y[o] = vqqat::numerics::dot(
            VecF(w_q.begin() + o * layer.in_dim,
                 w_q.begin() + (o + 1) * layer.in_dim),
            x);
    }
    return y;
}

}  // namespace

TEST_CASE("prob_vq is the two-way softmax") {
    CHECK(nas::prob_vq({0.0, 0.0, false, nas::Branch::LQ}) == 0.5);
    CHECK(nas::prob_vq({1.3, 1.3, false, nas::Branch::LQ}) == 0.5);
    const double sigma1 = 1.0 / (1.0 + std::exp(-1.0));
    CHECK(nas::prob_vq({1.0, 0.0, false, nas::Branch::LQ}) ==
          doctest::Approx(sigma1).epsilon(1e-12));
    CHECK(nas::prob_vq({50.0, 0.0, false, nas::Branch::LQ}) ==
          doctest::Approx(1.0).epsilon(1e-12));
    CHECK(nas::prob_vq({0.0, 50.0, false, nas::Branch::LQ}) < 1e-20);
}

TEST_CASE("branch names") {
    CHECK(std::string(nas::branch_name(nas::Branch::VQ)) == "vq");
    CHECK(std::string(nas::branch_name(nas::Branch::LQ)) == "lq");
}

TEST_CASE("sample_branch saturates with extreme logits") {
    Rng rng(301);
    const nas::ArchParams arch{50.0, 0.0, false, nas::Branch::LQ};
    for (int i = 0; i < 1000; ++i) {
        const auto s = nas::sample_branch(arch, rng);
        CHECK(s.choice == nas::Branch::VQ);
    }
}

TEST_CASE("sample_branch frequency matches the softmax probability") {
    Rng rng(302);
    const nas::ArchParams arch{1.0, 0.0, false, nas::Branch::LQ};
    const double p = 1.0 / (1.0 + std::exp(-1.0));  // 0.73106
    const int n = 100000;
    int vq = 0;
    for (int i = 0; i < n; ++i) {
        if (nas::sample_branch(arch, rng).choice == nas::Branch::VQ) ++vq;
    }
    const double freq = static_cast<double>(vq) / n;
    const double se = std::sqrt(p * (1.0 - p) / n);
    CHECK(std::abs(freq - p) <= 3.0 * se);
    CHECK(std::abs(freq - p) <= 0.01);
}

TEST_CASE("frozen arch params sample deterministically without touching rng") {
    Rng rng(303);
    nas::ArchParams arch{-3.0, 2.0, false, nas::Branch::LQ};
    nas::freeze(arch);
    CHECK(arch.frozen);
    CHECK(arch.frozen_choice == nas::Branch::LQ);  // p_vq < 0.5

    const auto before = rng.state();
    const auto s = nas::sample_branch(arch, rng);
    CHECK(rng.state() == before);
    CHECK(s.choice == nas::Branch::LQ);
    CHECK(s.p_vq == nas::prob_vq(arch));
}

TEST_CASE("freeze picks the argmax branch with ties going to LQ") {
    nas::ArchParams vq_side{2.0, -1.0, false, nas::Branch::LQ};
    nas::freeze(vq_side);
    CHECK(vq_side.frozen_choice == nas::Branch::VQ);

    nas::ArchParams tie{0.7, 0.7, false, nas::Branch::VQ};
    nas::freeze(tie);
    CHECK(tie.frozen_choice == nas::Branch::LQ);

    // Freezing again never flips the stored choice.
    tie.logit_vq = 100.0;
    nas::freeze(tie);
    CHECK(tie.frozen_choice == nas::Branch::LQ);
}

TEST_CASE("mixed_forward frozen to LQ equals a plain LQ layer") {
    Rng rng(304);
    nas::MixedLayer layer = make_layer(rng, 3, 4, 4, 2, 4);
    layer.arch = {-5.0, 5.0, false, nas::Branch::LQ};
    nas::freeze(layer.arch);

    const VecF x = testutil::gaussian_vec(4, rng);
    Rng sample_rng(1);
    const auto res = nas::mixed_forward(layer, x, sample_rng);
    CHECK(res.choice == nas::Branch::LQ);

    const VecF expect = branch_oracle(layer, nas::Branch::LQ, x);
    REQUIRE(res.y.size() == expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i) {
        CHECK(testutil::bits_equal(res.y[i], expect[i]));
    }
}

TEST_CASE("mixed_forward with saturated VQ logits equals a pure VQ layer") {
    Rng rng(305);
    nas::MixedLayer layer = make_layer(rng, 2, 6, 3, 2, 8);
    layer.arch = {60.0, 0.0, false, nas::Branch::LQ};

    const VecF x = testutil::gaussian_vec(6, rng);
    Rng sample_rng(2);
    const auto res = nas::mixed_forward(layer, x, sample_rng);
    CHECK(res.choice == nas::Branch::VQ);

    const VecF expect = branch_oracle(layer, nas::Branch::VQ, x);
    for (std::size_t i = 0; i < expect.size(); ++i) {
        CHECK(testutil::bits_equal(res.y[i], expect[i]));
    }
}

TEST_CASE("mixed_forward always equals the sampled branch's standalone output") {
    Rng root(306);
    Rng sample_rng(307);
    int vq_seen = 0, lq_seen = 0;
    for (int trial = 0; trial < 200; ++trial) {
        Rng rng = root.fork(trial);
        const std::size_t out = 1 + rng.uniform_index(4);
        const std::size_t in = 1 + rng.uniform_index(6);
        const std::size_t vec_len = 1 + rng.uniform_index(4);
        nas::MixedLayer layer = make_layer(rng, out, in, vec_len, 2, 5);
        layer.arch = {0.4, -0.2, false, nas::Branch::LQ};

        const VecF x = testutil::gaussian_vec(in, rng);
        const auto res = nas::mixed_forward(layer, x, sample_rng);
        (res.choice == nas::Branch::VQ ? vq_seen : lq_seen)++;

        const VecF expect = branch_oracle(layer, res.choice, x);
        for (std::size_t i = 0; i < expect.size(); ++i) {
            CHECK(testutil::bits_equal(res.y[i], expect[i]));
        }
    }
    // The sampler really exercised both paths.
    CHECK(vq_seen > 20);
    CHECK(lq_seen > 20);
}

TEST_CASE("mixed_forward validates shapes and codebook consistency") {
    Rng rng(308);
    nas::MixedLayer layer = make_layer(rng, 2, 3, 3, 1, 4);
    Rng sample_rng(3);
    CHECK_THROWS_AS(nas::mixed_forward(layer, {1.0, 2.0}, sample_rng),
                    ConfigError);

    nas::MixedLayer bad = layer;
    bad.cb.vec_len = 2;
    CHECK_THROWS_AS(nas::mixed_forward(bad, {1.0, 2.0, 3.0}, sample_rng),
                    ConfigError);

    nas::MixedLayer short_w = layer;
    short_w.w_lq.pop_back();
    CHECK_THROWS_AS(nas::mixed_forward(short_w, {1.0, 2.0, 3.0}, sample_rng),
                    ConfigError);
}

TEST_CASE("arch_backward zero and sign behavior") {
    const nas::ArchParams arch{0.0, 0.0, false, nas::Branch::LQ};
    const VecF g{0.5, -1.0};

    // Indistinguishable branches give exactly zero gradient.
    const VecF y{1.0, 2.0};
    const auto zero = nas::arch_backward(g, y, y, arch);
    CHECK(zero.d_logit_vq == 0.0);
    CHECK(zero.d_logit_lq == 0.0);

    // <g, y_vq> > <g, y_lq>: the VQ branch raises the loss, so the gradient
    // on its logit is positive and descent moves probability toward LQ.
    const VecF y_vq{3.0, 0.0};
    const VecF y_lq{1.0, 0.0};
    const auto grad = nas::arch_backward(g, y_vq, y_lq, arch);
    CHECK(grad.d_logit_vq > 0.0);
    CHECK(grad.d_logit_lq == -grad.d_logit_vq);

    CHECK_THROWS_AS(nas::arch_backward(g, {1.0}, y_lq, arch), ConfigError);
}

TEST_CASE("frozen arch params receive exactly zero gradient") {
    nas::ArchParams arch{1.0, 0.0, false, nas::Branch::LQ};
    nas::freeze(arch);
    const auto grad = nas::arch_grad_from_dp(3.7, arch);
    CHECK(grad.d_logit_vq == 0.0);
    CHECK(grad.d_logit_lq == 0.0);
}

TEST_CASE("arch_backward matches finite differences of the soft gate") {
    Rng root(309);
    for (int inst = 0; inst < 120; ++inst) {
        Rng rng = root.fork(inst);
        const std::size_t k = 1 + rng.uniform_index(4);
        const VecF g = testutil::gaussian_vec(k, rng);
        const VecF y_vq = testutil::gaussian_vec(k, rng);
        const VecF y_lq = testutil::gaussian_vec(k, rng);
        nas::ArchParams arch;
        arch.logit_vq = rng.next_gaussian();
        arch.logit_lq = rng.next_gaussian();

        const auto grad = nas::arch_backward(g, y_vq, y_lq, arch);

        double a = arch.logit_vq, b = arch.logit_lq;
        const auto f = [&] {
            const VecF p = vqqat::numerics::softmax({a, b});
            double loss = 0.0;
            for (std::size_t i = 0; i < k; ++i) {
                loss += g[i] * (p[0] * y_vq[i] + p[1] * y_lq[i]);
            }
            return loss;
        };
        CHECK(testutil::grad_close(grad.d_logit_vq,
                                   testutil::central_diff(f, &a)));
        CHECK(testutil::grad_close(grad.d_logit_lq,
                                   testutil::central_diff(f, &b)));
    }
}

TEST_CASE("expected_storage hand values") {
    Rng rng(310);

    // Pure VQ, 160 weights in 16-long vectors with 8-bit indices: 80 bits.
    nas::MixedLayer vq = make_layer(rng, 10, 16, 16, 8, 8);
    vq.arch = {9.0, 0.0, false, nas::Branch::LQ};
    nas::freeze(vq.arch);
    CHECK(nas::expected_storage(vq) == 80.0);
    CHECK(nas::expected_storage(vq) / static_cast<double>(vq.n_weights()) ==
          0.5);

    // Pure LQ, 100 weights at 4 bits: 400 bits.
    nas::MixedLayer lq = make_layer(rng, 10, 10, 5, 3, 4);
    lq.arch = {0.0, 9.0, false, nas::Branch::LQ};
    nas::freeze(lq.arch);
    CHECK(nas::expected_storage(lq) == 400.0);

    // Even split, N=64, L=64, Q_vq=8, Q_lq=8: 0.5*8 + 0.5*512 = 260.
    nas::MixedLayer mid = make_layer(rng, 1, 64, 64, 8, 8);
    mid.arch = {1.4, 1.4, false, nas::Branch::LQ};
    CHECK(nas::expected_storage(mid) == 260.0);
}

TEST_CASE("expected_storage is linear in the branch probability") {
    Rng rng(311);
    nas::MixedLayer layer = make_layer(rng, 4, 8, 4, 3, 6);

    nas::MixedLayer at_vq = layer;
    at_vq.arch = {1.0, 0.0, true, nas::Branch::VQ};
    nas::MixedLayer at_lq = layer;
    at_lq.arch = {1.0, 0.0, true, nas::Branch::LQ};
    const double s1 = nas::expected_storage(at_vq);
    const double s0 = nas::expected_storage(at_lq);
    CHECK(s1 == 32.0 * 3.0 / 4.0);  // (N/L)*Q_vq = 8*3
    CHECK(s0 == 32.0 * 6.0);        // N*Q_lq

    nas::MixedLayer mid = layer;
    mid.arch = {0.0, 0.0, false, nas::Branch::LQ};
    CHECK(nas::expected_storage(mid) == doctest::Approx(0.5 * (s1 + s0)));

    CHECK(nas::storage_grad_p_vq(layer) == s1 - s0);
}

TEST_CASE("total_loss composes the three terms") {
    CHECK(nas::total_loss(1.25, 99.0, 640.0, 0.0, 0.0) == 1.25);

    Rng rng(312);
    for (int rep = 0; rep < 50; ++rep) {
        const double ce = std::abs(rng.next_gaussian());
        const double wsq = std::abs(rng.next_gaussian()) * 10.0;
        const double storage = std::abs(rng.next_gaussian()) * 1000.0;
        const double lambda = rng.next_double() * 0.1;
        const double beta = rng.next_double() * 0.01;
        const double expect = ce + lambda * wsq + beta * storage;
        CHECK(std::abs(nas::total_loss(ce, wsq, storage, lambda, beta) -
                       expect) <= 1e-12);
    }
}

TEST_CASE("storage gradient favors the cheaper branch") {
    Rng rng(313);
    // VQ much cheaper: (N/L)*Q_vq = 8*8 = 64 < N*Q_lq = 256.
    nas::MixedLayer layer = make_layer(rng, 4, 8, 4, 8, 8);
    CHECK(nas::storage_grad_p_vq(layer) < 0.0);  // descent raises p_vq

    // LQ cheaper: vec_len 1 makes VQ cost b_index per weight > 2-bit LQ.
    nas::MixedLayer lq_cheap = make_layer(rng, 4, 8, 1, 8, 2);
    CHECK(nas::storage_grad_p_vq(lq_cheap) > 0.0);
}

TEST_CASE("per-step storage descent direction is stable under beta > 0") {
    Rng rng(314);
    nas::MixedLayer layer = make_layer(rng, 4, 8, 4, 8, 8);  // VQ cheaper
    layer.arch = {-1.0, 1.0, false, nas::Branch::LQ};
    const double beta = 1e-3;
    // Pure storage objective: every step's gradient on logit_vq stays
    // negative (pushes p_vq up) until saturation, regardless of momentum.
    for (int step = 0; step < 200; ++step) {
        const double d_p = beta * nas::storage_grad_p_vq(layer);
        const auto grad = nas::arch_grad_from_dp(d_p, layer.arch);
        CHECK(grad.d_logit_vq < 0.0);
        layer.arch.logit_vq -= 0.5 * grad.d_logit_vq;
        layer.arch.logit_lq -= 0.5 * grad.d_logit_lq;
    }
    CHECK(nas::prob_vq(layer.arch) > 0.5);
}

TEST_CASE("update_budget averages bits over searched layers") {
    Rng rng(315);
    std::vector<nas::MixedLayer> layers;
    layers.push_back(make_layer(rng, 4, 16, 16, 8, 8));
    layers.push_back(make_layer(rng, 2, 32, 16, 8, 8));
    for (auto& l : layers) {
        l.arch = {5.0, 0.0, false, nas::Branch::LQ};
        nas::freeze(l.arch);
    }
    std::vector<nas::MixedLayer*> ptrs{&layers[0], &layers[1]};

    nas::BudgetController ctrl;
    ctrl.target_avg_bits = 0.1;  // unreachable; just measure
    nas::update_budget(ctrl, ptrs);
    CHECK(ctrl.current_avg_bits == 0.5);
    CHECK(!ctrl.triggered);

    CHECK_THROWS_AS(
        [&] {
            std::vector<nas::MixedLayer*> none;
            nas::BudgetController c2;
            nas::update_budget(c2, none);
        }(),
        ConfigError);
}

TEST_CASE("a loose budget triggers immediately and freezes everything") {
    Rng rng(316);
    std::vector<nas::MixedLayer> layers;
    for (int i = 0; i < 3; ++i) {
        layers.push_back(make_layer(rng, 3, 8, 4, 4, 8));
        layers.back().arch = {0.3 * i - 0.2, 0.1, false, nas::Branch::LQ};
    }
    std::vector<nas::MixedLayer*> ptrs;
    for (auto& l : layers) ptrs.push_back(&l);

    nas::BudgetController ctrl;
    ctrl.target_avg_bits = 64.0;
    CHECK(nas::update_budget(ctrl, ptrs));
    CHECK(ctrl.triggered);
    for (const auto& l : layers) CHECK(l.arch.frozen);

    // Logit edits after the freeze change nothing.
    const auto choice0 = layers[0].arch.frozen_choice;
    layers[0].arch.logit_vq += 100.0;
    CHECK(nas::update_budget(ctrl, ptrs));
    CHECK(layers[0].arch.frozen_choice == choice0);
    CHECK(nas::arch_grad_from_dp(1.0, layers[0].arch).d_logit_vq == 0.0);
}

TEST_CASE("budget trigger step matches a scalar replay oracle") {
    Rng rng(317);
    std::vector<nas::MixedLayer> layers;
    layers.push_back(make_layer(rng, 4, 8, 4, 4, 8));   // N=32
    layers.push_back(make_layer(rng, 2, 12, 4, 6, 6));  // N=24
    layers.push_back(make_layer(rng, 6, 6, 6, 8, 4));   // N=36
    std::vector<nas::MixedLayer*> ptrs;
    for (auto& l : layers) ptrs.push_back(&l);

    // Drive the logits along a fixed trajectory toward VQ.
    const auto logit_at = [](int step, int li) {
        return -2.0 + 0.05 * step * (1.0 + 0.3 * li);
    };

    nas::BudgetController ctrl;
    ctrl.target_avg_bits = 3.0;
    int trigger_step = -1;
    for (int step = 0; step < 120 && trigger_step < 0; ++step) {
        for (int li = 0; li < 3; ++li) {
            layers[li].arch.logit_vq = logit_at(step, li);
            layers[li].arch.logit_lq = 0.0;
        }
        if (nas::update_budget(ctrl, ptrs)) trigger_step = step;
    }
    REQUIRE(trigger_step >= 0);

    // Independent scalar replay of the same trajectory.
    const double n[3] = {32, 24, 36};
    const double vq_bits[3] = {32.0 / 4 * 4, 24.0 / 4 * 6, 36.0 / 6 * 8};
    const double lq_bits[3] = {32 * 8.0, 24 * 6.0, 36 * 4.0};
    int oracle_step = -1;
    for (int step = 0; step < 120 && oracle_step < 0; ++step) {
        double bits = 0.0;
        for (int li = 0; li < 3; ++li) {
            const double a = logit_at(step, li);
            const double p = a >= 0.0 ? 1.0 / (1.0 + std::exp(-a))
                                      : std::exp(a) / (1.0 + std::exp(a));
            bits += p * vq_bits[li] + (1.0 - p) * lq_bits[li];
        }
        if (bits / (n[0] + n[1] + n[2]) <= 3.0) oracle_step = step;
    }
    CHECK(trigger_step == oracle_step);

    // After the trigger the frozen choices stay put for the rest of the run.
    const nas::Branch frozen[3] = {layers[0].arch.frozen_choice,
                                   layers[1].arch.frozen_choice,
                                   layers[2].arch.frozen_choice};
    for (int step = trigger_step + 1; step < 120; ++step) {
        nas::update_budget(ctrl, ptrs);
        for (int li = 0; li < 3; ++li) {
            CHECK(layers[li].arch.frozen_choice == frozen[li]);
        }
    }
}
