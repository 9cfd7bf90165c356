// SPDX-License-Identifier: Apache-2.0
//
// Cross-modal interaction tests: the five attention modules.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "xmodal/interaction.hpp"

using namespace xmodal;

namespace {

Tensor random_tensor(Rng& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(v));
}

Tensor repeat_row(const std::vector<double>& row, int n) {
    std::vector<double> vals;
    for (int i = 0; i < n; ++i) vals.insert(vals.end(), row.begin(), row.end());
    return Tensor({n, static_cast<int>(row.size())}, std::move(vals));
}

EncoderOutput fake_encoder_output(const Tensor& states) {
    return finalize_encoder_output(states, BoolVec(static_cast<std::size_t>(states.dim(0)), 1));
}

}  // namespace

TEST_CASE("additive attention: identical keys give the mean of values", "[interaction]") {
    ParamStore ps(1);
    AdditiveAttention att(ps, "att", 4, 4, 4);
    Rng rng(2);
    Tensor keys = repeat_row({0.2, -0.5, 0.8, 0.1}, 3);
    Tensor values = random_tensor(rng, {3, 4});
    AttentionResult res = att.attend(random_tensor(rng, {4}), keys, values, {});
    for (int i = 0; i < 3; ++i) CHECK(std::fabs(res.weights.value_at(static_cast<std::size_t>(i)) - 1.0 / 3) < 1e-12);
    for (int j = 0; j < 4; ++j) {
        double m = (values.value_at(static_cast<std::size_t>(j)) + values.value_at(static_cast<std::size_t>(4 + j)) +
                    values.value_at(static_cast<std::size_t>(8 + j))) / 3.0;
        CHECK(std::fabs(res.context.value_at(static_cast<std::size_t>(j)) - m) < 1e-12);
    }
}

TEST_CASE("additive attention weights follow the logistic for two scores", "[interaction][oracle]") {
    // with scores e = [1, 2], softmax gives [1/(1+e), e/(1+e)]
    Tensor e({2}, {1.0, 2.0});
    Tensor w = softmax(e);
    CHECK(std::fabs(w.value_at(0) - 0.26894142) < 1e-7);
    CHECK(std::fabs(w.value_at(1) - 0.73105858) < 1e-7);

    // and the module reproduces it when its score path is an identity:
    // wq=0 so scores depend only on keys, wk = I (d_att = d_k), w = [1,0,..]
    ParamStore ps(3);
    AdditiveAttention att(ps, "att", 2, 2, 2);
    ps.at("att.wq").values_mut() = {0, 0, 0, 0};
    ps.at("att.wk").values_mut() = {1, 0, 0, 1};
    ps.at("att.w").values_mut() = {1, 0};
    // tanh is monotonic: craft keys whose tanh'd first component is 1 and 2
    const double k1 = std::atanh(0.5), k2 = std::atanh(0.9);
    Tensor keys({2, 2}, {k1, 0, k2, 0});
    AttentionResult res = att.attend(Tensor({2}, {0, 0}), keys, keys, {});
    Tensor expect = softmax(Tensor({2}, {0.5, 0.9}));
    CHECK(std::fabs(res.weights.value_at(0) - expect.value_at(0)) < 1e-12);
    CHECK(std::fabs(res.weights.value_at(1) - expect.value_at(1)) < 1e-12);
}

TEST_CASE("additive attention masks positions to exactly zero", "[interaction]") {
    ParamStore ps(5);
    AdditiveAttention att(ps, "att", 3, 3, 3);
    Rng rng(6);
    BoolVec mask = {0, 1, 1};
    AttentionResult res = att.attend(random_tensor(rng, {3}), random_tensor(rng, {3, 3}),
                                     random_tensor(rng, {3, 3}), mask);
    CHECK(res.weights.value_at(0) == 0.0);
    BoolVec none = {0, 0, 0};
    CHECK_THROWS_AS(att.attend(random_tensor(rng, {3}), random_tensor(rng, {3, 3}),
                               random_tensor(rng, {3, 3}), none),
                    DegenerateInputError);
}

TEST_CASE("top-down step attends a single region exactly", "[interaction]") {
    ParamStore ps(7);
    TopDownAttention td(ps, "td", 4, 4);
    Rng rng(8);
    Tensor region = random_tensor(rng, {1, 4});
    EncoderOutput enc = fake_encoder_output(region);
    auto [attended, state] = td.step(random_tensor(rng, {4}), random_tensor(rng, {4}), enc, td.initial_state());
    for (int j = 0; j < 4; ++j) CHECK(attended.value_at(static_cast<std::size_t>(j)) == region.value_at(static_cast<std::size_t>(j)));
    CHECK(state.size() == 2);
}

TEST_CASE("top-down step over identical regions returns that region", "[interaction]") {
    ParamStore ps(9);
    TopDownAttention td(ps, "td", 3, 3);
    Rng rng(10);
    Tensor regions = repeat_row({0.4, -0.1, 0.9}, 4);
    EncoderOutput enc = fake_encoder_output(regions);
    auto [attended, state] = td.step(random_tensor(rng, {3}), random_tensor(rng, {3}), enc, td.initial_state());
    for (int j = 0; j < 3; ++j) CHECK(std::fabs(attended.value_at(static_cast<std::size_t>(j)) - regions.value_at(static_cast<std::size_t>(j))) < 1e-12);
}

TEST_CASE("top-down step gradient check", "[interaction][grad]") {
    ParamStore ps(11);
    TopDownAttention td(ps, "td", 3, 3);
    Rng rng(12);
    Tensor regions = random_tensor(rng, {3, 3});
    Tensor h = random_tensor(rng, {3});
    Tensor emb = random_tensor(rng, {3});
    Tensor weights = random_tensor(rng, {3});
    auto f = [&] {
        EncoderOutput enc = fake_encoder_output(regions);
        auto [attended, state] = td.step(h, emb, enc, td.initial_state());
        return mean(mul(attended, weights));
    };
    CHECK(gradient_check(f, ps.tensors(), 1e-4) < 1e-4);
}

TEST_CASE("co-attention with tied streams maps equal inputs equally", "[interaction]") {
    ParamStore ps(13);
    CoAttentionBlock co(ps, "co", 6, 2, /*tied=*/true);
    Rng rng(14);
    Tensor x = random_tensor(rng, {3, 6});
    auto [a, b] = co.apply(x, x, BoolVec(3, 1), BoolVec(3, 1));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.value_at(i) == b.value_at(i));
}

TEST_CASE("co-attention with a single source position copies its value", "[interaction]") {
    // M=1: every A-position attends the single B row with weight 1, so the
    // context is the same for all A rows.
    ParamStore ps(15);
    CoAttentionBlock co(ps, "co", 4, 2);
    Rng rng(16);
    Tensor x_a = random_tensor(rng, {3, 4});
    Tensor x_b = random_tensor(rng, {1, 4});
    // identical A rows would trivially match; instead probe that changing
    // non-selected B rows is impossible (M=1) while A output stays finite
    auto [a, b] = co.apply(x_a, x_b, BoolVec(3, 1), BoolVec(1, 1));
    CHECK(a.dim(0) == 3);
    CHECK(b.dim(0) == 1);
    // the attention context for every A row equals wo(v(x_b)); verify
    // indirectly: two different A rows with the same values produce the same
    // output rows even though other A rows differ
    std::vector<double> vals = x_a.values();
    for (int j = 0; j < 4; ++j) vals[static_cast<std::size_t>(4 + j)] = vals[static_cast<std::size_t>(j)];
    auto [a2, b2] = co.apply(Tensor({3, 4}, vals), x_b, BoolVec(3, 1), BoolVec(1, 1));
    for (int j = 0; j < 4; ++j)
        CHECK(a2.value_at(static_cast<std::size_t>(j)) == a2.value_at(static_cast<std::size_t>(4 + j)));
}

TEST_CASE("co-attention gradient check", "[interaction][grad]") {
    ParamStore ps(17);
    CoAttentionBlock co(ps, "co", 4, 2);
    Rng rng(18);
    Tensor x_a = random_tensor(rng, {3, 4});
    Tensor x_b = random_tensor(rng, {3, 4});
    Tensor wa = random_tensor(rng, {3, 4});
    Tensor wb = random_tensor(rng, {3, 4});
    auto f = [&] {
        auto [a, b] = co.apply(x_a, x_b, BoolVec(3, 1), BoolVec(3, 1));
        return mean(add(mul(a, wa), mul(b, wb)));
    };
    CHECK(gradient_check(f, ps.tensors(), 1e-4) < 2e-4);
}

TEST_CASE("meshed memory with zero slots equals plain attention bitwise", "[interaction]") {
    ParamStore ps(19);
    MeshedMemoryAttention meshed(ps, "m", 6, 2, 0);
    Rng rng(20);
    Tensor x = random_tensor(rng, {4, 6});
    BoolVec mask(4, 1);
    Tensor a = meshed.apply(x, mask);
    Tensor b = meshed.mha().apply(x, x, mask, false);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.value_at(i) == b.value_at(i));
}

TEST_CASE("meshed memory weights split evenly between token and slot", "[interaction]") {
    // N=1 with one memory slot holding identical key rows: weights 0.5/0.5,
    // so the context is the average of the projected input value and the
    // memory value row.
    ParamStore ps(21);
    MeshedMemoryAttention meshed(ps, "m", 4, 1, 1);
    Rng rng(22);
    Tensor x = random_tensor(rng, {1, 4});
    // force the memory key row to equal the projected key of x
    Tensor proj_k = meshed.mha().project_keys(x);
    Tensor mem_k = ps.at("m.mem_k");
    for (int j = 0; j < 4; ++j) mem_k.values_mut()[static_cast<std::size_t>(j)] = proj_k.value_at(static_cast<std::size_t>(j));
    Tensor out = meshed.apply(x, BoolVec(1, 1));
    Tensor proj_v = meshed.mha().project_values(x);
    Tensor mem_v = ps.at("m.mem_v");
    std::vector<double> avg(4);
    for (int j = 0; j < 4; ++j) avg[static_cast<std::size_t>(j)] = 0.5 * (proj_v.value_at(static_cast<std::size_t>(j)) + mem_v.value_at(static_cast<std::size_t>(j)));
    Tensor expect = meshed.mha().wo.rows(Tensor({1, 4}, avg));
    for (int j = 0; j < 4; ++j) CHECK(std::fabs(out.value_at(static_cast<std::size_t>(j)) - expect.value_at(static_cast<std::size_t>(j))) < 1e-12);
}

TEST_CASE("meshed memory rows receive gradient", "[interaction][grad]") {
    ParamStore ps(23);
    MeshedMemoryAttention meshed(ps, "m", 4, 2, 2);
    Rng rng(24);
    Tensor x = random_tensor(rng, {3, 4});
    Tensor weights = random_tensor(rng, {3, 4});
    auto f = [&] { return mean(mul(meshed.apply(x, BoolVec(3, 1)), weights)); };
    CHECK(gradient_check(f, ps.tensors(), 1e-4) < 1e-4);

    ps.zero_grads();
    Tape tape;
    {
        TapeScope scope(tape);
        backward(f(), tape);
    }
    double mag = 0.0;
    for (double g : ps.at("m.mem_k").grad()) mag += std::fabs(g);
    for (double g : ps.at("m.mem_v").grad()) mag += std::fabs(g);
    CHECK(mag > 0.0);
}

TEST_CASE("x-linear attention over identical sources", "[interaction]") {
    ParamStore ps(25);
    XLinearAttention att(ps, "x", 4);
    Rng rng(26);
    Tensor kv = repeat_row({0.3, -0.6, 0.2, 0.8}, 3);
    Tensor query = random_tensor(rng, {4});
    AttentionResult res = att.attend(query, kv, kv, {});
    for (int i = 0; i < 3; ++i) CHECK(std::fabs(res.weights.value_at(static_cast<std::size_t>(i)) - 1.0 / 3) < 1e-12);
    // context equals the gated common value row
    Tensor one = att.attend(query, repeat_row({0.3, -0.6, 0.2, 0.8}, 1), repeat_row({0.3, -0.6, 0.2, 0.8}, 1), {}).context;
    for (int j = 0; j < 4; ++j) CHECK(std::fabs(res.context.value_at(static_cast<std::size_t>(j)) - one.value_at(static_cast<std::size_t>(j))) < 1e-12);
}

TEST_CASE("x-linear spatial weights sum to one", "[interaction][property]") {
    ParamStore ps(27);
    XLinearAttention att(ps, "x", 4);
    Rng rng(28);
    for (int rep = 0; rep < 20; ++rep) {
        AttentionResult res = att.attend(random_tensor(rng, {4}), random_tensor(rng, {4, 4}),
                                         random_tensor(rng, {4, 4}), {});
        double total = 0.0;
        for (int i = 0; i < 4; ++i) {
            total += res.weights.value_at(static_cast<std::size_t>(i));
            CHECK(res.weights.value_at(static_cast<std::size_t>(i)) >= 0.0);
        }
        CHECK(std::fabs(total - 1.0) < 1e-9);
    }
}

TEST_CASE("x-linear full-parameter gradient check", "[interaction][grad]") {
    ParamStore ps(29);
    XLinearAttention att(ps, "x", 4);
    Rng rng(30);
    Tensor q = random_tensor(rng, {4});
    Tensor keys = random_tensor(rng, {3, 4});
    Tensor values = random_tensor(rng, {3, 4});
    Tensor weights = random_tensor(rng, {4});
    auto f = [&] { return mean(mul(att.attend(q, keys, values, {}).context, weights)); };
    CHECK(gradient_check(f, ps.tensors(), 1e-3) < 1e-4);
}

TEST_CASE("spatial argmax is invariant to constant score shifts", "[interaction][property]") {
    // the softmax inputs of each module shift by a constant when every key
    // gets the same additive score offset; verify at the softmax level and
    // through the additive module with a crafted score path
    Rng rng(31);
    for (int rep = 0; rep < 10; ++rep) {
        Tensor e = random_tensor(rng, {5}, -3, 3);
        Tensor shifted = add_scalar(e, rng.uniform(-10, 10));
        Tensor w1 = softmax(e);
        Tensor w2 = softmax(shifted);
        int a1 = 0, a2 = 0;
        for (int i = 1; i < 5; ++i) {
            if (w1.value_at(static_cast<std::size_t>(i)) > w1.value_at(static_cast<std::size_t>(a1))) a1 = i;
            if (w2.value_at(static_cast<std::size_t>(i)) > w2.value_at(static_cast<std::size_t>(a2))) a2 = i;
        }
        CHECK(a1 == a2);
    }
}

TEST_CASE("masked source values never influence the context", "[interaction][property]") {
    Rng rng(33);
    BoolVec mask = {1, 0, 1, 1};

    auto poke = [](const Tensor& m, int row) {
        std::vector<double> vals = m.values();
        for (int j = 0; j < m.dim(1); ++j) vals[static_cast<std::size_t>(row * m.dim(1) + j)] = 500.0 + j;
        return Tensor(m.shape(), vals);
    };

    ParamStore ps1(34);
    AdditiveAttention add_att(ps1, "a", 4, 4, 4);
    Tensor q = random_tensor(rng, {4});
    Tensor keys = random_tensor(rng, {4, 4});
    Tensor values = random_tensor(rng, {4, 4});
    AttentionResult base = add_att.attend(q, keys, values, mask);
    AttentionResult poked = add_att.attend(q, poke(keys, 1), poke(values, 1), mask);
    for (int j = 0; j < 4; ++j) CHECK(base.context.value_at(static_cast<std::size_t>(j)) == poked.context.value_at(static_cast<std::size_t>(j)));
    CHECK(poked.weights.value_at(1) == 0.0);

    ParamStore ps2(35);
    XLinearAttention xl(ps2, "x", 4);
    AttentionResult xbase = xl.attend(q, keys, values, mask);
    AttentionResult xpoked = xl.attend(q, poke(keys, 1), poke(values, 1), mask);
    for (int j = 0; j < 4; ++j) CHECK(xbase.context.value_at(static_cast<std::size_t>(j)) == xpoked.context.value_at(static_cast<std::size_t>(j)));

    ParamStore ps3(36);
    CoAttentionBlock co(ps3, "c", 4, 2);
    Tensor x_a = random_tensor(rng, {3, 4});
    auto [a_base, b_base] = co.apply(x_a, keys, BoolVec(3, 1), mask);
    auto [a_poked, b_poked] = co.apply(x_a, poke(keys, 1), BoolVec(3, 1), mask);
    for (std::size_t i = 0; i < a_base.size(); ++i) CHECK(a_base.value_at(i) == a_poked.value_at(i));

    ParamStore ps4(37);
    MeshedMemoryAttention meshed(ps4, "m", 4, 2, 2);
    Tensor m_base = meshed.apply(keys, mask);
    Tensor m_poked = meshed.apply(poke(keys, 1), mask);
    // only the masked row's own output may differ
    for (int i = 0; i < 4; ++i) {
        if (i == 1) continue;
        for (int j = 0; j < 4; ++j)
            CHECK(m_base.value_at(static_cast<std::size_t>(i * 4 + j)) == m_poked.value_at(static_cast<std::size_t>(i * 4 + j)));
    }

    ParamStore ps5(38);
    TopDownAttention td(ps5, "t", 4, 4);
    EncoderOutput enc_base = finalize_encoder_output(keys, mask);
    EncoderOutput enc_poked = finalize_encoder_output(poke(keys, 1), mask);
    auto [att_base, s1] = td.step(q, q, enc_base, td.initial_state());
    auto [att_poked, s2] = td.step(q, q, enc_poked, td.initial_state());
    for (int j = 0; j < 4; ++j) CHECK(att_base.value_at(static_cast<std::size_t>(j)) == att_poked.value_at(static_cast<std::size_t>(j)));
}

TEST_CASE("interaction outputs move smoothly with small input changes", "[interaction][property]") {
    // relative output change bounded by 10x the relative input perturbation
    Rng rng(39);
    ParamStore ps(40);
    XLinearAttention xl(ps, "x", 4);
    ParamStore ps2(41);
    AdditiveAttention add_att(ps2, "a", 4, 4, 4);
    ParamStore ps3(42);
    TopDownAttention td(ps3, "t", 4, 4);
    ParamStore ps4(43);
    CoAttentionBlock co(ps4, "c", 4, 2);
    ParamStore ps5(44);
    MeshedMemoryAttention meshed(ps5, "m", 4, 2, 2);

    Tensor q = random_tensor(rng, {4}, 0.2, 1.0);
    Tensor keys = random_tensor(rng, {4, 4}, 0.2, 1.0);
    Tensor values = random_tensor(rng, {4, 4}, 0.2, 1.0);

    auto norm = [](const std::vector<double>& v) {
        double s = 0;
        for (double x : v) s += x * x;
        return std::sqrt(s);
    };

    const double rel = 1e-6;
    std::vector<double> kv = keys.values();
    for (double& x : kv) x *= (1.0 + rel);
    Tensor keys2(keys.shape(), kv);

    auto outputs = [&](const Tensor& k) {
        std::vector<Tensor> out;
        out.push_back(xl.attend(q, k, values, {}).context);
        out.push_back(add_att.attend(q, k, values, {}).context);
        EncoderOutput enc = finalize_encoder_output(k, BoolVec(4, 1));
        out.push_back(td.step(q, q, enc, td.initial_state()).first);
        auto [ca, cb] = co.apply(k, values, BoolVec(4, 1), BoolVec(4, 1));
        out.push_back(ca);
        out.push_back(meshed.apply(k, BoolVec(4, 1)));
        return out;
    };
    std::vector<Tensor> base = outputs(keys);
    std::vector<Tensor> moved = outputs(keys2);
    for (std::size_t m = 0; m < base.size(); ++m) {
        std::vector<double> diff(base[m].size());
        for (std::size_t i = 0; i < base[m].size(); ++i) diff[i] = moved[m].value_at(i) - base[m].value_at(i);
        const double rel_out = norm(diff) / std::max(norm(base[m].values()), 1e-12);
        INFO("module " << m);
        CHECK(rel_out <= 10.0 * rel);
    }
}
