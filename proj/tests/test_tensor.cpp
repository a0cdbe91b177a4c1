#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "stemsep/sparse_attention.hpp"
#include "stemsep/tensor.hpp"
#include "stemsep/threading.hpp"
#include "stemsep/transformer.hpp"

using namespace stemsep;
using stemsep::test::fd_check;
using stemsep::test::max_abs_diff;
using stemsep::test::random_tensor;

namespace {

// Independent triple-loop oracle for matmul.
Tensor matmul_oracle(const Tensor& a, const Tensor& b) {
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = Tensor::zeros({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int kk = 0; kk < k; ++kk)
                acc += static_cast<double>(a.at({i, kk})) * b.at({kk, j});
            out.data()[static_cast<std::size_t>(i) * n + j] = static_cast<float>(acc);
        }
    return out;
}

// erf via its Maclaurin series, independent of std::erf.
double erf_series(double x) {
    const double two_over_sqrt_pi = 1.1283791670955126;
    double term = x, sum = x;
    for (int n = 1; n < 60; ++n) {
        term *= -x * x / n;
        sum += term / (2 * n + 1);
    }
    return two_over_sqrt_pi * sum;
}

}  // namespace

TEST_SUITE_BEGIN("tensor");

TEST_CASE("matmul identity and zero cases") {
    Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor b = Tensor::from_data({2, 2}, {3, 4, 5, 6});
    Tensor c = matmul(eye, b);
    CHECK(max_abs_diff(c, b) == 0.0);

    Tensor a = Tensor::from_data({1, 2}, {1, 2});
    Tensor z = Tensor::from_data({2, 1}, {0, 0});
    CHECK(matmul(a, z).item() == 0.0f);

    CHECK_THROWS_AS(matmul(a, Tensor::from_data({3, 1}, {1, 2, 3})), DimensionError);
}

TEST_CASE("matmul matches the triple-loop oracle") {
    Rng rng(7);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 2}, rng);
    CHECK(max_abs_diff(matmul(a, b), matmul_oracle(a, b)) < 1e-5);
}

TEST_CASE("conv1d identity kernel, sliding-window oracle, zero weights") {
    Tensor x = Tensor::from_data({1, 4}, {1, 2, 3, 4});
    Tensor w_id = Tensor::from_data({1, 1, 1}, {1});
    CHECK(max_abs_diff(conv1d(x, w_id, 1, 0), x) == 0.0);

    Tensor w = Tensor::from_data({1, 1, 2}, {0.5f, 0.5f});
    Tensor y = conv1d(x, w, 2, 0);
    REQUIRE(y.shape() == std::vector<int>{1, 2});
    CHECK(y.at({0, 0}) == doctest::Approx(1.5).epsilon(1e-6));
    CHECK(y.at({0, 1}) == doctest::Approx(3.5).epsilon(1e-6));

    Tensor wz = Tensor::zeros({3, 1, 2});
    Tensor yz = conv1d(x, wz, 1, 0);
    CHECK(tensor_max_abs(yz) == 0.0f);

    CHECK_THROWS_AS(conv1d(x, Tensor::zeros({1, 1, 8}), 1, 0), DimensionError);
}

TEST_CASE("conv1d then transposed variant round-trips the length") {
    Rng rng(3);
    for (int s : {2, 4}) {
        for (int mult : {3, 5, 8}) {
            const int T = s * mult;
            Tensor x = random_tensor({2, T}, rng);
            Tensor w = random_tensor({3, 2, s}, rng);
            Tensor mid = conv1d(x, w, s, 0);
            Tensor wt = random_tensor({3, 2, s}, rng);
            Tensor back = conv1d_transpose(mid, wt, s, 0);
            CHECK(back.dim(1) == T);
        }
    }
}

TEST_CASE("softmax trivial and masked cases") {
    Tensor c = Tensor::from_data({3}, {2.5f, 2.5f, 2.5f});
    Tensor sc = softmax(c, 0);
    for (int i = 0; i < 3; ++i) CHECK(sc.vec()[static_cast<std::size_t>(i)] == doctest::Approx(1.0 / 3).epsilon(1e-6));

    Tensor two = Tensor::from_data({2}, {0.0f, std::log(2.0f)});
    Tensor st = softmax(two, 0);
    CHECK(st.vec()[0] == doctest::Approx(1.0 / 3).epsilon(1e-6));
    CHECK(st.vec()[1] == doctest::Approx(2.0 / 3).epsilon(1e-6));

    // mask keeps {0, 2}: dense softmax over the kept subset is the oracle
    Tensor x = Tensor::from_data({1, 3}, {5, 1, 9});
    SparsityPattern pat;
    pat.n_queries = 1;
    pat.n_keys = 3;
    pat.row_offsets = {0, 2};
    pat.cols = {0, 2};
    Tensor sm = softmax(x, 1, &pat);
    const double e5 = std::exp(5.0), e9 = std::exp(9.0);
    CHECK(sm.at({0, 0}) == doctest::Approx(e5 / (e5 + e9)).epsilon(1e-5));
    CHECK(sm.at({0, 1}) == 0.0f);
    CHECK(sm.at({0, 2}) == doctest::Approx(e9 / (e5 + e9)).epsilon(1e-5));

    SparsityPattern empty_row;
    empty_row.n_queries = 1;
    empty_row.n_keys = 3;
    empty_row.row_offsets = {0, 0};
    CHECK_THROWS_AS(softmax(x, 1, &empty_row), DegenerateRowError);
}

TEST_CASE("softmax sums to one for any finite input and legal mask") {
    Rng rng(11);
    for (int seed = 0; seed < 20; ++seed) {
        Tensor x = random_tensor({5, 7}, rng, false, -30.0f, 30.0f);
        Tensor s = softmax(x, 1);
        for (int i = 0; i < 5; ++i) {
            double total = 0.0;
            for (int j = 0; j < 7; ++j) total += s.at({i, j});
            CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("layer_norm analytic and oracle cases") {
    Tensor g1 = Tensor::scalar(1.0f);
    Tensor b0 = Tensor::scalar(0.0f);

    Tensor c = Tensor::full({4}, 3.25f);
    Tensor out = layer_norm(c, {0}, g1, b0);
    CHECK(tensor_max_abs(out) < 1e-3);  // eps guards the zero-variance case

    Tensor x = Tensor::from_data({2}, {1, 3});
    Tensor nx = layer_norm(x, {0}, g1, b0, 1e-12f);
    CHECK(nx.vec()[0] == doctest::Approx(-1.0).epsilon(1e-4));
    CHECK(nx.vec()[1] == doctest::Approx(1.0).epsilon(1e-4));

    // random 4x6, token-wise and all-token axis sets vs a two-pass oracle
    Rng rng(5);
    Tensor r = random_tensor({4, 6}, rng);
    Tensor gg = Tensor::full({6}, 1.0f);
    Tensor bb = Tensor::zeros({6});
    const float eps = 1e-5f;

    Tensor tok = layer_norm(r, {1}, gg, bb, eps);
    for (int i = 0; i < 4; ++i) {
        double mu = 0, var = 0;
        for (int j = 0; j < 6; ++j) mu += r.at({i, j});
        mu /= 6;
        for (int j = 0; j < 6; ++j) var += (r.at({i, j}) - mu) * (r.at({i, j}) - mu);
        var /= 6;
        for (int j = 0; j < 6; ++j) {
            const double expect = (r.at({i, j}) - mu) / std::sqrt(var + eps);
            CHECK(tok.at({i, j}) == doctest::Approx(expect).epsilon(1e-5));
        }
    }

    Tensor all = layer_norm(r, {0, 1}, gg, bb, eps);
    double mu = 0, var = 0;
    for (std::size_t i = 0; i < r.numel(); ++i) mu += r.vec()[i];
    mu /= static_cast<double>(r.numel());
    for (std::size_t i = 0; i < r.numel(); ++i) var += (r.vec()[i] - mu) * (r.vec()[i] - mu);
    var /= static_cast<double>(r.numel());
    for (std::size_t i = 0; i < r.numel(); ++i) {
        const double expect = (r.vec()[i] - mu) / std::sqrt(var + eps);
        CHECK(all.vec()[i] == doctest::Approx(expect).epsilon(1e-5));
    }
}

TEST_CASE("gelu and glu analytic cases") {
    Tensor z = Tensor::scalar(0.0f);
    CHECK(gelu(z).item() == 0.0f);

    // glu([a; 0]) gates by sigmoid(0) = 0.5
    Tensor ag = Tensor::from_data({4}, {1.0f, -2.0f, 0.0f, 0.0f});
    Tensor gated = glu(ag, 0);
    CHECK(gated.vec()[0] == doctest::Approx(0.5).epsilon(1e-6));
    CHECK(gated.vec()[1] == doctest::Approx(-1.0).epsilon(1e-6));

    CHECK_THROWS_AS(glu(Tensor::zeros({3}), 0), DimensionError);

    for (float v : {-2.0f, -1.0f, 1.0f, 2.0f}) {
        const double expect = v * 0.5 * (1.0 + erf_series(v / std::sqrt(2.0)));
        CHECK(gelu(Tensor::scalar(v)).item() == doctest::Approx(expect).epsilon(1e-6));
    }
}

TEST_CASE("backward populates gradients on linear and quadratic cases") {
    Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
    Tensor loss = sum(x);
    backward(loss);
    for (float g : x.grad_vec()) CHECK(g == 1.0f);

    Tensor y = Tensor::from_data({2}, {1, 2}, true);
    Tensor loss2 = sum(mul(y, y));
    backward(loss2);
    CHECK(y.grad_vec()[0] == doctest::Approx(2.0));
    CHECK(y.grad_vec()[1] == doctest::Approx(4.0));

    // accumulation on reuse
    Tensor z = Tensor::from_data({1}, {2}, true);
    Tensor loss3 = add(sum(z), sum(z));
    backward(loss3);
    CHECK(z.grad_vec()[0] == doctest::Approx(2.0));

    CHECK_THROWS_AS(backward(Tensor::from_data({2}, {1, 2}, true)), ContractError);
    CHECK_THROWS_AS(backward(Tensor::scalar(1.0f)), ContractError);
}

TEST_CASE("finite differences agree across the op set") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed * 131 + 1);
        CAPTURE(seed);

        {
            Tensor a = random_tensor({3, 4}, rng, true);
            Tensor b = random_tensor({4, 2}, rng, true);
            auto loss = [&] { return sum(mul(matmul(a, b), matmul(a, b))); };
            test::FdFailure f;
            CHECK_MESSAGE(fd_check(loss, {{"a", a}, {"b", b}}, 1e-3, 1e-2, &f),
                          f.param << "[" << f.index << "] analytic=" << f.analytic
                                  << " numeric=" << f.numeric);
        }
        {
            Tensor x = random_tensor({2, 3, 9}, rng, true);
            Tensor w = random_tensor({4, 3, 3}, rng, true);
            Tensor bias = random_tensor({4}, rng, true);
            auto loss = [&] { return mean(mul(conv1d(x, w, bias, 2, 1), conv1d(x, w, bias, 2, 1))); };
            CHECK(fd_check(loss, {{"x", x}, {"w", w}, {"bias", bias}}, 1e-3, 1e-2));
        }
        {
            Tensor x = random_tensor({2, 3, 5}, rng, true);
            Tensor w = random_tensor({3, 2, 4}, rng, true);
            Tensor bias = random_tensor({2}, rng, true);
            auto loss = [&] {
                return mean(mul(conv1d_transpose(x, w, bias, 2, 1), conv1d_transpose(x, w, bias, 2, 1)));
            };
            CHECK(fd_check(loss, {{"x", x}, {"w", w}, {"bias", bias}}, 1e-3, 1e-2));
        }
        {
            Tensor x = random_tensor({4, 5}, rng, true);
            Tensor t = random_tensor({4, 5}, rng);
            auto loss = [&] { return mean(mul(softmax(x, 1), t)); };
            CHECK(fd_check(loss, {{"x", x}}, 1e-3, 1e-2));
        }
        {
            Tensor x = random_tensor({3, 6}, rng, true);
            Tensor g = random_tensor({6}, rng, true, 0.5f, 1.5f);
            Tensor b = random_tensor({6}, rng, true);
            Tensor t = random_tensor({3, 6}, rng);
            auto loss = [&] { return mean(mul(layer_norm(x, {1}, g, b), t)); };
            CHECK(fd_check(loss, {{"x", x}, {"g", g}, {"b", b}}, 1e-3, 1e-2));
        }
        {
            Tensor x = random_tensor({8}, rng, true);
            auto loss = [&] { return sum(mul(gelu(x), gelu(x))); };
            CHECK(fd_check(loss, {{"x", x}}, 1e-3, 1e-2));
        }
        {
            Tensor x = random_tensor({6, 3}, rng, true);
            auto loss = [&] { return mean(mul(glu(x, 0), glu(x, 0))); };
            CHECK(fd_check(loss, {{"x", x}}, 1e-3, 1e-2));
        }
        {
            Tensor x = random_tensor({4, 6}, rng, true);
            Tensor s = random_tensor({6}, rng, true);
            auto loss = [&] { return mean(mul_lastdim(x, s)); };
            CHECK(fd_check(loss, {{"x", x}, {"s", s}}, 1e-3, 1e-2));
        }
        {
            Tensor x = random_tensor({2, 7}, rng, true);
            Tensor t = random_tensor({2, 11}, rng);
            auto loss = [&] { return mean(mul(pad_lastdim(x, 2, 2, PadMode::kReflect), t)); };
            CHECK(fd_check(loss, {{"x", x}}, 1e-3, 1e-2));
        }
        {
            Tensor x = random_tensor({3, 4}, rng, true);
            Tensor w = random_tensor({5, 4}, rng, true);
            Tensor b = random_tensor({5}, rng, true);
            auto loss = [&] { return mean(mul(linear(x, w, b), linear(x, w, b))); };
            CHECK(fd_check(loss, {{"x", x}, {"w", w}, {"b", b}}, 1e-3, 1e-2));
        }
        {
            Tensor x = random_tensor({2, 3, 4}, rng, true);
            Tensor t = random_tensor({4, 2, 3}, rng);
            auto loss = [&] { return mean(mul(permute(x, {2, 0, 1}), t)); };
            CHECK(fd_check(loss, {{"x", x}}, 1e-3, 1e-2));
        }
        {
            Tensor a = random_tensor({2, 3}, rng, true);
            Tensor b = random_tensor({2, 2}, rng, true);
            auto loss = [&] { return mean(mul(concat(a, b, 1), concat(a, b, 1))); };
            CHECK(fd_check(loss, {{"a", a}, {"b", b}}, 1e-3, 1e-2));
        }
        {
            Tensor x = random_tensor({3, 5}, rng, true);
            auto loss = [&] { return mean(mul(slice(x, 1, 1, 3), slice(x, 1, 1, 3))); };
            CHECK(fd_check(loss, {{"x", x}}, 1e-3, 1e-2));
        }
    }
}

TEST_CASE("finite differences on a full transformer layer") {
    TransformerConfig cfg;
    cfg.dim = 16;
    cfg.heads = 4;
    cfg.depth = 1;
    Rng rng(21);
    EncoderLayerParams layer = make_encoder_layer(cfg, false, rng);
    Tensor x = random_tensor({8, 16}, rng, false);
    Tensor probe = random_tensor({8, 16}, rng);

    auto loss = [&] {
        return mean(mul(encoder_layer_forward(layer, cfg, x, nullptr, nullptr, 0), probe));
    };
    ParamRegistry reg;
    register_encoder_layer(layer, "layer", reg);
    std::vector<std::pair<std::string, Tensor>> params(reg.items.begin(), reg.items.end());
    test::FdFailure f;
    const bool ok = fd_check(loss, params, 1e-3, 1e-2, &f, 4);
    CHECK_MESSAGE(ok, f.param << "[" << f.index << "] analytic=" << f.analytic
                              << " numeric=" << f.numeric);
}

TEST_CASE("ops are deterministic across repeated evaluation and thread counts") {
    Rng rng(17);
    Tensor a = random_tensor({33, 47}, rng);
    Tensor b = random_tensor({47, 29}, rng);
    Tensor c1 = matmul(a, b);
    Tensor c2 = matmul(a, b);
    CHECK(max_abs_diff(c1, c2) == 0.0);

    set_num_threads(1);
    Tensor c3 = matmul(a, b);
    set_num_threads(2);
    Tensor c4 = matmul(a, b);
    CHECK(max_abs_diff(c3, c4) == 0.0);
}

TEST_SUITE_END();
