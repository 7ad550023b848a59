#include <doctest.h>

#include "diffgen/ops.hpp"
#include "diffgen/optim.hpp"
#include "gradcheck.hpp"

using namespace diffgen;
using diffgen::testing::gradcheck_max_rel_err;
using diffgen::testing::random_tensor;

namespace {

template <typename S>
VarT<S> leaf_rand(Shape shape, Rng& rng, double scale = 1.0) {
    return leaf<S>(random_tensor<S>(std::move(shape), rng, scale), "x");
}

/// Nudge values away from zero so ReLU kinks stay clear of the FD step.
template <typename S>
void add_margin(TensorT<S>& t, S margin) {
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] += (t[i] >= S(0) ? margin : -margin);
}

template <typename S>
double tol() {
    return std::is_same_v<S, double> ? 1e-5 : 1e-3;
}

template <typename S>
S fd_step() {
    return std::is_same_v<S, double> ? S(1e-5) : S(1e-2);
}

}  // namespace

TEST_CASE("identity 1x1 conv reproduces the image") {
    Rng rng(1);
    Tensor img = random_tensor<float>({1, 1, 2, 2}, rng);
    Tensor w({1, 1, 1, 1}, {1.0f});
    Tensor y = kernels::conv2d_forward<float>(img, w, nullptr, {});
    for (std::size_t i = 0; i < img.numel(); ++i) CHECK(y[i] == img[i]);
}

TEST_CASE("matmul worked example") {
    Tensor x({2, 2}, {1, 2, 3, 4});
    Tensor w({1, 2}, {1, 1});  // linear weight (out,in): y = x w^T
    Tensor y = kernels::linear_forward<float>(x, w, nullptr);
    CHECK(y[0] == doctest::Approx(3.0f));
    CHECK(y[1] == doctest::Approx(7.0f));
}

TEST_CASE("relu worked example") {
    auto x = leaf<float>(Tensor({1, 3}, {-1.0f, 0.0f, 2.0f}), "x");
    auto y = relu(x);
    CHECK(y->value[0] == 0.0f);
    CHECK(y->value[1] == 0.0f);
    CHECK(y->value[2] == 2.0f);
}

TEST_CASE("backward of x squared and x*y") {
    auto x = leaf<double>(TensorT<double>::scalar(3.0), "x");
    auto y = mul(x, x);
    backward(y);
    CHECK(x->grad[0] == doctest::Approx(6.0).epsilon(1e-12));

    auto a = leaf<double>(TensorT<double>::scalar(2.0), "a");
    auto b = leaf<double>(TensorT<double>::scalar(5.0), "b");
    auto p = mul(a, b);
    backward(p);
    CHECK(a->grad[0] == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(b->grad[0] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("3x3 conv adjoint matches finite differences at 64-bit") {
    Rng rng(7);
    auto x = leaf_rand<double>({1, 1, 8, 8}, rng);
    auto w = leaf_rand<double>({2, 1, 3, 3}, rng);
    auto b = leaf_rand<double>({2}, rng);
    const double err = gradcheck_max_rel_err<double>(
        {x, w, b}, [&](const std::vector<VarT<double>>& in) { return conv2d(in[0], in[1], in[2], {.stride = 1, .pad = 1}); },
        rng, 1e-5);
    CHECK(err < 1e-5);
}

TEST_CASE_TEMPLATE("every primitive passes finite-difference checks over random shapes", S, float, double) {
    Rng rng(42);
    const double lim = tol<S>();
    const S h = fd_step<S>();
    int cases = 0;

    for (int rep = 0; rep < 10; ++rep) {
        const int B = 1 + rng.uniform_int(2);
        const int C = 2 * (1 + rng.uniform_int(2));  // even channel counts for group norm
        const int H = 4 + 2 * rng.uniform_int(3);
        const int W = H;

        // conv2d with random stride/pad, bias, occasionally grouped
        {
            const int k = 1 + 2 * rng.uniform_int(2);  // 1 or 3
            const int stride = 1 + rng.uniform_int(2);
            const int pad = k / 2;
            const int groups = (rep % 3 == 0) ? C : 1;
            const int cout = groups == 1 ? 2 + rng.uniform_int(3) : C;
            auto x = leaf_rand<S>({B, C, H, W}, rng);
            auto w = leaf_rand<S>({cout, C / groups, k, k}, rng, 0.5);
            auto b = leaf_rand<S>({cout}, rng, 0.2);
            Conv2dSpec spec{.stride = stride, .pad = pad, .groups = groups};
            CHECK(gradcheck_max_rel_err<S>(
                      {x, w, b}, [&](const std::vector<VarT<S>>& in) { return conv2d(in[0], in[1], in[2], spec); }, rng,
                      h) < lim);
            ++cases;
        }
        // nearest upsample
        {
            auto x = leaf_rand<S>({B, C, H / 2, W / 2}, rng);
            CHECK(gradcheck_max_rel_err<S>(
                      {x}, [&](const std::vector<VarT<S>>& in) { return upsample_nearest(in[0], 2); }, rng, h) < lim);
            ++cases;
        }
        // max pool; widen each window winner's margin so the FD step cannot
        // flip the argmax
        {
            auto x = leaf_rand<S>({B, C, H, W}, rng);
            std::vector<std::int32_t> argmax;
            kernels::maxpool2d_forward<S>(x->value, 2, 2, 0, argmax);
            const int Ho = H / 2, Wo = W / 2;
            for (int bc = 0; bc < B * C; ++bc)
                for (int o = 0; o < Ho * Wo; ++o)
                    x->value[static_cast<std::size_t>(bc) * H * W +
                             static_cast<std::size_t>(argmax[static_cast<std::size_t>(bc) * Ho * Wo + o])] += S(0.5);
            CHECK(gradcheck_max_rel_err<S>(
                      {x}, [&](const std::vector<VarT<S>>& in) { return maxpool2d(in[0], 2, 2); }, rng, h) < lim);
            ++cases;
        }
        // global average pool
        {
            auto x = leaf_rand<S>({B, C, H, W}, rng);
            CHECK(gradcheck_max_rel_err<S>(
                      {x}, [&](const std::vector<VarT<S>>& in) { return global_avg_pool(in[0]); }, rng, h) < lim);
            ++cases;
        }
        // linear
        {
            const int in_f = 3 + rng.uniform_int(4), out_f = 2 + rng.uniform_int(3);
            auto x = leaf_rand<S>({B, in_f}, rng);
            auto w = leaf_rand<S>({out_f, in_f}, rng, 0.5);
            auto b = leaf_rand<S>({out_f}, rng, 0.2);
            CHECK(gradcheck_max_rel_err<S>(
                      {x, w, b}, [&](const std::vector<VarT<S>>& in) { return linear(in[0], in[1], in[2]); }, rng, h) <
                  lim);
            ++cases;
        }
        // group norm
        {
            auto x = leaf_rand<S>({B, C, H, W}, rng);
            auto gamma = leaf<S>(TensorT<S>::full({C}, S(1)), "gamma");
            auto beta = leaf<S>(TensorT<S>::zeros({C}), "beta");
            for (std::size_t i = 0; i < gamma->value.numel(); ++i) gamma->value[i] = S(1) + S(0.1) * static_cast<S>(rng.normal());
            const int groups = 2;
            CHECK(gradcheck_max_rel_err<S>(
                      {x, gamma, beta},
                      [&](const std::vector<VarT<S>>& in) { return group_norm(in[0], in[1], in[2], groups); }, rng,
                      h) < lim);
            ++cases;
        }
        // relu / silu
        {
            auto x = leaf_rand<S>({B, C, H, W}, rng);
            add_margin(x->value, S(0.25));
            CHECK(gradcheck_max_rel_err<S>({x}, [&](const std::vector<VarT<S>>& in) { return relu(in[0]); }, rng, h) <
                  lim);
            auto x2 = leaf_rand<S>({B, C, H, W}, rng);
            CHECK(gradcheck_max_rel_err<S>({x2}, [&](const std::vector<VarT<S>>& in) { return silu(in[0]); }, rng, h) <
                  lim);
            cases += 2;
        }
        // softmax
        {
            auto x = leaf_rand<S>({B, 3 + rng.uniform_int(3)}, rng);
            CHECK(gradcheck_max_rel_err<S>({x}, [&](const std::vector<VarT<S>>& in) { return softmax(in[0]); }, rng, h) <
                  lim);
            ++cases;
        }
        // add / mul / scale / channel bias / concat / reshape
        {
            auto a = leaf_rand<S>({B, C, H, W}, rng);
            auto b = leaf_rand<S>({B, C, H, W}, rng);
            CHECK(gradcheck_max_rel_err<S>(
                      {a, b}, [&](const std::vector<VarT<S>>& in) { return add(in[0], in[1]); }, rng, h) < lim);
            CHECK(gradcheck_max_rel_err<S>(
                      {a, b}, [&](const std::vector<VarT<S>>& in) { return mul(in[0], in[1]); }, rng, h) < lim);
            CHECK(gradcheck_max_rel_err<S>(
                      {a}, [&](const std::vector<VarT<S>>& in) { return scale(in[0], S(1.7)); }, rng, h) < lim);
            auto v = leaf_rand<S>({B, C}, rng);
            CHECK(gradcheck_max_rel_err<S>(
                      {a, v}, [&](const std::vector<VarT<S>>& in) { return add_channel_bias(in[0], in[1]); }, rng, h) <
                  lim);
            CHECK(gradcheck_max_rel_err<S>(
                      {a, b},
                      [&](const std::vector<VarT<S>>& in) {
                          return concat_channels<S>({in[0], in[1]});
                      },
                      rng, h) < lim);
            CHECK(gradcheck_max_rel_err<S>(
                      {a},
                      [&](const std::vector<VarT<S>>& in) { return reshape(in[0], {B, C * H * W}); }, rng, h) < lim);
            cases += 6;
        }
        // losses and embeddings
        {
            auto pred = leaf_rand<S>({B, C, H, W}, rng);
            auto target = leaf_rand<S>({B, C, H, W}, rng);
            CHECK(gradcheck_max_rel_err<S>(
                      {pred, target}, [&](const std::vector<VarT<S>>& in) { return mse_mean(in[0], in[1]); }, rng, h) <
                  lim);
            const int classes = 3;
            auto logits = leaf_rand<S>({B, classes}, rng);
            std::vector<int> labels;
            for (int i = 0; i < B; ++i) labels.push_back(rng.uniform_int(classes));
            CHECK(gradcheck_max_rel_err<S>(
                      {logits}, [&](const std::vector<VarT<S>>& in) { return cross_entropy(in[0], labels); }, rng, h) <
                  lim);
            auto table = leaf_rand<S>({4, 6}, rng);
            std::vector<int> ids;
            for (int i = 0; i < B; ++i) ids.push_back(rng.uniform_int(4));
            CHECK(gradcheck_max_rel_err<S>(
                      {table}, [&](const std::vector<VarT<S>>& in) { return embedding_lookup(in[0], ids); }, rng, h) <
                  lim);
            cases += 3;
        }
    }
    CHECK(cases >= 10 * 14);
}

TEST_CASE("forward evaluation is deterministic") {
    Rng rng(3);
    Tensor x = random_tensor<float>({2, 4, 8, 8}, rng);
    Tensor w = random_tensor<float>({4, 4, 3, 3}, rng);
    Tensor b = random_tensor<float>({4}, rng);
    Tensor y1 = kernels::conv2d_forward<float>(x, w, &b, {.stride = 1, .pad = 1});
    Tensor y2 = kernels::conv2d_forward<float>(x, w, &b, {.stride = 1, .pad = 1});
    for (std::size_t i = 0; i < y1.numel(); ++i) CHECK(y1[i] == y2[i]);
}

TEST_CASE("softmax rows sum to one") {
    Rng rng(5);
    Tensor x = random_tensor<float>({16, 7}, rng, 3.0);
    Tensor p = kernels::softmax_rows<float>(x);
    for (int b = 0; b < 16; ++b) {
        double s = 0;
        for (int c = 0; c < 7; ++c) s += p[static_cast<std::size_t>(b) * 7 + c];
        CHECK(std::abs(s - 1.0) < 1e-6);
    }
}

TEST_CASE("cross entropy worked examples") {
    auto logits = leaf<double>(TensorT<double>({1, 2}, {0.0, 0.0}), "l");
    auto loss = cross_entropy(logits, {0});
    CHECK(loss->value.item() == doctest::Approx(std::log(2.0)).epsilon(1e-9));

    auto confident = leaf<double>(TensorT<double>({1, 2}, {1000.0, 0.0}), "l");
    auto loss2 = cross_entropy(confident, {0});
    CHECK(std::isfinite(loss2->value.item()));
    CHECK(loss2->value.item() == doctest::Approx(0.0).epsilon(1e-12));

    CHECK(loss->value.item() >= 0.0);
    CHECK_THROWS(cross_entropy(logits, {2}));
}

TEST_CASE("cross entropy gradient equals softmax minus onehot") {
    Rng rng(11);
    auto logits = leaf<double>(random_tensor<double>({4, 3}, rng), "l");
    std::vector<int> labels = {0, 2, 1, 2};
    auto loss = cross_entropy(logits, labels);
    backward(loss);
    TensorT<double> p = kernels::softmax_rows<double>(logits->value);
    for (int b = 0; b < 4; ++b)
        for (int c = 0; c < 3; ++c) {
            double expected = p[static_cast<std::size_t>(b) * 3 + c] / 4.0;
            if (c == labels[static_cast<std::size_t>(b)]) expected -= 1.0 / 4.0;
            CHECK(std::abs(logits->grad[static_cast<std::size_t>(b) * 3 + c] - expected) < 1e-6);
        }
}

TEST_CASE("adamw single step matches the hand trace") {
    AdamWConfigT<double> cfg{.lr = 0.1, .beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8, .weight_decay = 0.01};
    TensorT<double> theta = TensorT<double>::scalar(1.0);
    TensorT<double> grad = TensorT<double>::scalar(0.5);
    TensorT<double> m = TensorT<double>::zeros({1}), v = TensorT<double>::zeros({1});
    std::int64_t t = 0;
    TensorT<double> out = adamw_step(theta, grad, m, v, t, cfg);

    // independent scalar trace
    const double m1 = 0.1 * 0.5, v1 = 0.001 * 0.25;
    const double mhat = m1 / 0.1, vhat = v1 / 0.001;
    const double expected = 1.0 - 0.1 * (mhat / (std::sqrt(vhat) + 1e-8) + 0.01 * 1.0);
    CHECK(out[0] == doctest::Approx(expected).epsilon(1e-15));
    CHECK(out[0] == doctest::Approx(0.899000).epsilon(1e-6));
    CHECK(t == 1);
}

TEST_CASE("adamw two-step scalar quadratic matches a reference trace to 1e-10") {
    AdamWConfigT<double> cfg{.lr = 0.05, .beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8, .weight_decay = 0.004};
    // loss = 0.5 * theta^2, grad = theta
    TensorT<double> theta = TensorT<double>::scalar(0.7);
    TensorT<double> m = TensorT<double>::zeros({1}), v = TensorT<double>::zeros({1});
    std::int64_t t = 0;
    for (int step = 0; step < 2; ++step) {
        TensorT<double> g = TensorT<double>::scalar(theta[0]);
        theta = adamw_step(theta, g, m, v, t, cfg);
    }

    double ref = 0.7, rm = 0, rv = 0;
    for (int step = 1; step <= 2; ++step) {
        const double g = ref;
        rm = 0.9 * rm + 0.1 * g;
        rv = 0.999 * rv + 0.001 * g * g;
        const double mh = rm / (1.0 - std::pow(0.9, step));
        const double vh = rv / (1.0 - std::pow(0.999, step));
        ref -= 0.05 * (mh / (std::sqrt(vh) + 1e-8) + 0.004 * ref);
    }
    CHECK(std::abs(theta[0] - ref) < 1e-10);
}

TEST_CASE("adamw invariants") {
    SUBCASE("zero gradient with zero weight decay leaves parameters unchanged") {
        AdamWConfigT<double> cfg{.lr = 0.1, .beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8, .weight_decay = 0.0};
        TensorT<double> theta = TensorT<double>::scalar(1.25);
        TensorT<double> m = TensorT<double>::zeros({1}), v = TensorT<double>::zeros({1});
        std::int64_t t = 0;
        for (int i = 0; i < 5; ++i) theta = adamw_step(theta, TensorT<double>::zeros({1}), m, v, t, cfg);
        CHECK(theta[0] == 1.25);
        CHECK(t == 5);
    }
    SUBCASE("lr zero leaves parameters unchanged") {
        AdamWConfigT<double> cfg{.lr = 0.0, .beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8, .weight_decay = 0.01};
        TensorT<double> theta = TensorT<double>::scalar(-0.4);
        TensorT<double> m = TensorT<double>::zeros({1}), v = TensorT<double>::zeros({1});
        std::int64_t t = 0;
        theta = adamw_step(theta, TensorT<double>::scalar(3.0), m, v, t, cfg);
        CHECK(theta[0] == -0.4);
    }
    SUBCASE("non-finite gradient rejects the step") {
        AdamWConfigT<double> cfg{.lr = 0.1, .beta1 = 0.9, .beta2 = 0.999, .eps = 1e-8, .weight_decay = 0.0};
        TensorT<double> theta = TensorT<double>::scalar(1.0);
        TensorT<double> m = TensorT<double>::zeros({1}), v = TensorT<double>::zeros({1});
        std::int64_t t = 0;
        CHECK_THROWS_AS(adamw_step(theta, TensorT<double>::scalar(std::nan("")), m, v, t, cfg), std::runtime_error);
        CHECK(t == 0);  // state untouched
        CHECK(m[0] == 0.0);
    }
}

TEST_CASE("gradients of parameters unused by the graph stay zero") {
    ParamStoreT<double> store;
    auto used = store.add("used", TensorT<double>::scalar(2.0));
    auto unused = store.add("unused", TensorT<double>::scalar(3.0));
    store.zero_grad();
    auto y = mul(used, used);
    backward(y);
    auto grads = store.named_grads();
    CHECK(grads.at("used")[0] == doctest::Approx(4.0));
    CHECK(grads.at("unused")[0] == 0.0);
    CHECK_THROWS(store.add("used", TensorT<double>::scalar(0.0)));
}

TEST_CASE("backward seed shape must match output") {
    auto x = leaf<float>(Tensor({2, 2}, {1, 2, 3, 4}), "x");
    auto y = relu(x);
    CHECK_THROWS_AS(backward_grad(y, Tensor({1, 2}, {1, 1})), std::invalid_argument);
}
