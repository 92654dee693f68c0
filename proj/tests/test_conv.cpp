#include <doctest.h>

#include "csunet/conv.hpp"
#include "csunet/gradcheck.hpp"

using namespace csunet;

namespace {

// Direct 6-nested-loop cross-correlation reference.
Tensor<double> conv_reference(const Tensor<double>& x, const Tensor<double>& w,
                              const Tensor<double>& bias, int64_t stride, int64_t pad,
                              int64_t groups) {
    const int64_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int64_t Ho = (H + 2 * pad - kh) / stride + 1, Wo = (W + 2 * pad - kw) / stride + 1;
    const int64_t cpg_in = Cin / groups, cpg_out = Cout / groups;
    Tensor<double> out = Tensor<double>::zeros({N, Cout, Ho, Wo});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t co = 0; co < Cout; ++co)
            for (int64_t oy = 0; oy < Ho; ++oy)
                for (int64_t ox = 0; ox < Wo; ++ox) {
                    double acc = bias.defined() ? bias.ptr()[co] : 0.0;
                    const int64_t g = co / cpg_out;
                    for (int64_t ci = 0; ci < cpg_in; ++ci)
                        for (int64_t ky = 0; ky < kh; ++ky)
                            for (int64_t kx = 0; kx < kw; ++kx) {
                                const int64_t iy = oy * stride + ky - pad;
                                const int64_t ix = ox * stride + kx - pad;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += x.at({n, g * cpg_in + ci, iy, ix}) *
                                       w.at({co, ci, ky, kx});
                            }
                    out.ptr()[((n * Cout + co) * Ho + oy) * Wo + ox] = acc;
                }
    return out;
}

}  // namespace

TEST_CASE("conv2d of all-ones counts kernel overlaps") {
    auto x = Tensor<double>::full({1, 1, 3, 3}, 1.0);
    auto w = Tensor<double>::full({1, 1, 3, 3}, 1.0);
    auto y = conv2d(x, w, {}, 1, 1);
    CHECK(y.at({0, 0, 1, 1}) == doctest::Approx(9.0));
    CHECK(y.at({0, 0, 0, 0}) == doctest::Approx(4.0));
    CHECK(y.at({0, 0, 2, 2}) == doctest::Approx(4.0));
    CHECK(y.at({0, 0, 0, 1}) == doctest::Approx(6.0));
}

TEST_CASE("depthwise conv keeps channels separate") {
    Rng rng(5);
    auto x = gradcheck::rand_tensor({1, 2, 4, 4}, rng, 1.0, false);
    auto w = gradcheck::rand_tensor({2, 1, 3, 3}, rng, 1.0, false);
    auto y = conv2d(x, w, {}, 1, 1, 2);

    // channel 0 of the output only depends on channel 0 of the input
    auto x2 = x.clone();
    for (int64_t i = 0; i < 16; ++i) x2.ptr()[16 + i] += 10.0;  // perturb channel 1
    auto y2 = conv2d(x2, w, {}, 1, 1, 2);
    for (int64_t i = 0; i < 16; ++i) CHECK(y.ptr()[i] == y2.ptr()[i]);
    for (int64_t i = 16; i < 32; ++i) CHECK(y.ptr()[i] != y2.ptr()[i]);
}

TEST_CASE("conv2d matches the naive loop reference") {
    Rng rng(17);
    for (int rep = 0; rep < 3; ++rep) {
        auto x = gradcheck::rand_tensor({2, 3, 8, 8}, rng, 1.0, false);
        auto w = gradcheck::rand_tensor({4, 3, 3, 3}, rng, 1.0, false);
        auto b = gradcheck::rand_tensor({4}, rng, 1.0, false);
        auto got = conv2d(x, w, b, 2, 1);
        auto want = conv_reference(x, w, b, 2, 1, 1);
        REQUIRE(got.shape() == want.shape());
        for (int64_t i = 0; i < got.size(); ++i)
            CHECK(got.ptr()[i] == doctest::Approx(want.ptr()[i]).epsilon(1e-6));
    }
    // grouped path
    auto x = gradcheck::rand_tensor({2, 6, 7, 5}, rng, 1.0, false);
    auto w = gradcheck::rand_tensor({9, 2, 3, 3}, rng, 1.0, false);
    auto got = conv2d(x, w, {}, 1, 1, 3);
    auto want = conv_reference(x, w, {}, 1, 1, 3);
    for (int64_t i = 0; i < got.size(); ++i)
        CHECK(got.ptr()[i] == doctest::Approx(want.ptr()[i]).epsilon(1e-6));
}

TEST_CASE("conv2d identity kernel is the identity map") {
    Rng rng(2);
    auto x = gradcheck::rand_tensor({2, 3, 5, 5}, rng, 1.0, false);
    auto w = Tensor<double>::zeros({3, 3, 3, 3});
    for (int64_t c = 0; c < 3; ++c) w.ptr()[((c * 3 + c) * 3 + 1) * 3 + 1] = 1.0;
    auto y = conv2d(x, w, {}, 1, 1);
    for (int64_t i = 0; i < x.size(); ++i) CHECK(y.ptr()[i] == doctest::Approx(x.ptr()[i]));
}

TEST_CASE("conv2d error contract") {
    auto x = Tensor<double>::zeros({1, 3, 4, 4});
    auto w = Tensor<double>::zeros({4, 2, 3, 3});
    CHECK_THROWS_AS(conv2d(x, w, {}, 1, 1, 2), ConfigError);  // 3 % 2 != 0
    auto w2 = Tensor<double>::zeros({4, 3, 7, 7});
    CHECK_THROWS_AS(conv2d(x, w2, {}, 1, 0), ShapeError);  // output extent < 1
}

TEST_CASE("conv_transpose2d single-pixel broadcast and adjoint identity") {
    auto x = Tensor<double>::full({1, 1, 1, 1}, 3.5);
    auto w = Tensor<double>::full({1, 1, 2, 2}, 1.0);
    auto y = conv_transpose2d(x, w, {}, 2);
    REQUIRE(y.shape() == Shape{1, 1, 2, 2});
    for (int64_t i = 0; i < 4; ++i) CHECK(y.ptr()[i] == doctest::Approx(3.5));

    // transpose then conv with the same kernel on a 1-pixel input equals
    // multiplication by the kernel's Gram (sum of squares)
    Rng rng(9);
    auto k = gradcheck::rand_tensor({1, 1, 2, 2}, rng, 1.0, false);
    auto up = conv_transpose2d(x, k, {}, 2);
    auto kc = Tensor<double>::from({k.ptr()[0], k.ptr()[1], k.ptr()[2], k.ptr()[3]},
                                   {1, 1, 2, 2});
    auto back = conv2d(up, kc, {}, 2, 0);
    double gram = 0;
    for (int64_t i = 0; i < 4; ++i) gram += k.ptr()[i] * k.ptr()[i];
    CHECK(back.item() == doctest::Approx(3.5 * gram).epsilon(1e-9));
}

TEST_CASE("finite-difference checks for convolution ops") {
    for (const char* scope :
         {"conv2d", "conv2d_grouped", "depthwise_conv", "conv_transpose2d"}) {
        gradcheck::Report r = gradcheck::run(scope, 23);
        INFO(r.name, " err=", r.max_err);
        CHECK(r.max_err < gradcheck::kTolElementary);
    }
}
