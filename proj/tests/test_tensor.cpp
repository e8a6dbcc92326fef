#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "cxr/kernels.hpp"
#include "cxr/tensor.hpp"
#include "oracles.hpp"

using namespace cxr;
namespace K = cxr::kernels;

TEST_CASE("tensor shape and data invariants") {
    Tensor t({2, 3, 4, 5});
    CHECK(t.numel() == 120);
    CHECK(t.rank() == 4);
    CHECK(t.shape_str() == "[2,3,4,5]");
    for (std::int64_t i = 0; i < t.numel(); ++i) CHECK(t[i] == 0.0f);

    Tensor v({2, 2}, {1, 2, 3, 4});
    CHECK(v.at2(1, 0) == 3.0f);
    CHECK(Tensor::full({3}, 2.5f)[2] == 2.5f);

    CHECK_THROWS_AS(Tensor(std::vector<int>{}), ShapeError);
    CHECK_THROWS_AS(Tensor({1, 2, 3, 4, 5}), ShapeError);
    CHECK_THROWS_AS(Tensor({2, 0}), ShapeError);
    CHECK_THROWS_AS(Tensor({2, -3}), ShapeError);
    CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), ShapeError);
}

TEST_CASE("rng determinism and distribution ranges") {
    Rng a(42), b(42), c(43);
    bool all_same = true, any_diff = false;
    for (int i = 0; i < 100; ++i) {
        const double x = a.uniform(), y = b.uniform(), z = c.uniform();
        all_same = all_same && x == y;
        any_diff = any_diff || x != z;
        CHECK(x >= 0.0);
        CHECK(x < 1.0);
    }
    CHECK(all_same);
    CHECK(any_diff);

    Rng r(7);
    for (int i = 0; i < 200; ++i) {
        const double u = r.uniform(-2.0, 3.0);
        CHECK(u >= -2.0);
        CHECK(u < 3.0);
        const int k = r.uniform_int(7);
        CHECK(k >= 0);
        CHECK(k < 7);
    }
    CHECK(Rng::mix(1, 2) == Rng::mix(1, 2));
    CHECK(Rng::mix(1, 2) != Rng::mix(1, 3));
    CHECK(Rng::mix(1, 2) != Rng::mix(2, 2));

    std::vector<int> v(50);
    std::iota(v.begin(), v.end(), 0);
    Rng s(5);
    s.shuffle(v);
    CHECK(std::set<int>(v.begin(), v.end()).size() == 50); // still a permutation
    std::vector<int> w(50);
    std::iota(w.begin(), w.end(), 0);
    CHECK(v != w); // and actually moved
}

TEST_CASE("conv2d identity kernel reproduces input") {
    Rng rng(1);
    Tensor x = oracles::random_tensor({2, 3, 5, 5}, rng);
    Tensor k({3, 3, 3, 3});
    for (int c = 0; c < 3; ++c) k.at4(c, c, 1, 1) = 1.0f; // center tap only
    Tensor y = K::conv2d(x, k, Tensor({3}), 1, 1);
    CHECK(oracles::mad(y, x) == 0.0);
}

TEST_CASE("conv2d all-zero kernel annihilates") {
    Rng rng(2);
    Tensor x = oracles::random_tensor({1, 2, 4, 4}, rng);
    Tensor y = K::conv2d(x, Tensor({2, 2, 3, 3}), Tensor({2}), 1, 0);
    for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] == 0.0f);
}

TEST_CASE("conv2d spec example shape vs naive oracle") {
    Rng rng(3);
    Tensor x = oracles::random_tensor({1, 2, 4, 4}, rng);
    Tensor k = oracles::random_tensor({3, 2, 3, 3}, rng);
    Tensor b = oracles::random_tensor({3}, rng);
    Tensor got = K::conv2d(x, k, b, 1, 0);
    CHECK(got.shape() == std::vector<int>{1, 3, 2, 2});
    CHECK(oracles::mad(got, oracles::conv2d(x, k, b, 1, 0)) <= 1e-6);
}

TEST_CASE("conv2d errors and shape formula") {
    Rng rng(4);
    Tensor x = oracles::random_tensor({1, 2, 6, 6}, rng);
    CHECK_THROWS_AS(K::conv2d(x, Tensor({3, 4, 3, 3}), Tensor({3}), 1, 0), ShapeError);
    CHECK_THROWS_AS(K::conv2d(x, Tensor({3, 2, 7, 7}), Tensor({3}), 1, 0), ShapeError);

    for (int stride : {1, 2, 3}) {
        for (int pad : {0, 1, 2}) {
            Tensor k = oracles::random_tensor({2, 2, 3, 3}, rng);
            Tensor y = K::conv2d(x, k, Tensor({2}), stride, pad);
            CHECK(y.dim(2) == (6 + 2 * pad - 3) / stride + 1);
            CHECK(y.dim(3) == (6 + 2 * pad - 3) / stride + 1);
        }
    }
}

TEST_CASE("conv2d linearity in the input") {
    Rng rng(5);
    Tensor x = oracles::random_tensor({1, 2, 5, 5}, rng);
    Tensor k = oracles::random_tensor({3, 2, 3, 3}, rng);
    const Tensor zero_bias({3});
    for (float a : {-10.0f, -0.5f, 2.0f, 10.0f}) {
        Tensor ax = x;
        for (std::int64_t i = 0; i < ax.numel(); ++i) ax[i] *= a;
        Tensor lhs = K::conv2d(ax, k, zero_bias, 1, 1);
        Tensor rhs = K::conv2d(x, k, zero_bias, 1, 1);
        for (std::int64_t i = 0; i < rhs.numel(); ++i) rhs[i] *= a;
        CHECK(oracles::mad(lhs, rhs) <= 1e-5);
    }
}

TEST_CASE("depthwise separable conv identity and two-stage composition") {
    Rng rng(6);
    Tensor x = oracles::random_tensor({1, 3, 5, 5}, rng);

    Tensor dw({3, 1, 3, 3});
    for (int c = 0; c < 3; ++c) dw.at4(c, 0, 1, 1) = 1.0f;
    Tensor pw({3, 3, 1, 1});
    for (int c = 0; c < 3; ++c) pw.at4(c, c, 0, 0) = 1.0f;
    Tensor y = K::depthwise_separable_conv(x, dw, pw, Tensor({3}), 1, 1);
    CHECK(oracles::mad(y, x) == 0.0);

    // equals explicitly chained depthwise stage then 1x1 conv
    Tensor rdw = oracles::random_tensor({3, 1, 3, 3}, rng);
    Tensor rpw = oracles::random_tensor({4, 3, 1, 1}, rng);
    Tensor rb = oracles::random_tensor({4}, rng);
    Tensor fused = K::depthwise_separable_conv(x, rdw, rpw, rb, 1, 0);
    Tensor staged = K::conv2d(K::depthwise_conv2d(x, rdw, 1, 0), rpw, rb, 1, 0);
    CHECK(oracles::mad(fused, staged) <= 1e-6);

    CHECK_THROWS_AS(K::depthwise_separable_conv(x, Tensor({2, 1, 3, 3}), rpw, rb, 1, 0),
                    ShapeError);
}

TEST_CASE("maxpool spec examples") {
    Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
    auto r = K::maxpool2d(x, 2, 2);
    CHECK(r.output.shape() == std::vector<int>{1, 1, 1, 1});
    CHECK(r.output[0] == 4.0f);

    Tensor c = Tensor::full({2, 3, 4, 4}, 1.25f);
    auto rc = K::maxpool2d(c, 2, 2);
    for (std::int64_t i = 0; i < rc.output.numel(); ++i) CHECK(rc.output[i] == 1.25f);

    CHECK_THROWS_AS(K::maxpool2d(Tensor({1, 1, 2, 2}), 3, 1), ShapeError);
}

TEST_CASE("maxpool dominates any fixed sub-window selection") {
    Rng rng(7);
    Tensor x = oracles::random_tensor({1, 2, 6, 6}, rng);
    auto r = K::maxpool2d(x, 2, 2);
    for (int c = 0; c < 2; ++c)
        for (int oy = 0; oy < 3; ++oy)
            for (int ox = 0; ox < 3; ++ox)
                for (int ky = 0; ky < 2; ++ky)
                    for (int kx = 0; kx < 2; ++kx)
                        CHECK(r.output.at4(0, c, oy, ox) >=
                              x.at4(0, c, 2 * oy + ky, 2 * ox + kx));
}

TEST_CASE("global average pool examples") {
    Tensor c = Tensor::full({2, 3, 4, 5}, 0.7f);
    Tensor y = K::global_avg_pool(c);
    for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(0.7f));

    Tensor one({1, 1, 2, 2}, {0, 1, 2, 3});
    CHECK(K::global_avg_pool(one)[0] == doctest::Approx(1.5f));
}

TEST_CASE("dense examples") {
    Rng rng(8);
    Tensor x = oracles::random_tensor({3, 4}, rng);
    Tensor eye({4, 4});
    for (int i = 0; i < 4; ++i) eye.at2(i, i) = 1.0f;
    CHECK(oracles::mad(K::dense(x, eye, Tensor({4})), x) == 0.0);

    Tensor b = oracles::random_tensor({5}, rng);
    Tensor y = K::dense(x, Tensor({4, 5}), b);
    for (int n = 0; n < 3; ++n)
        for (int m = 0; m < 5; ++m) CHECK(y.at2(n, m) == b[m]);

    CHECK_THROWS_AS(K::dense(x, Tensor({3, 5}), Tensor({5})), ShapeError);
}

TEST_CASE("relu and softmax examples") {
    Tensor x({1, 4}, {-1.0f, 0.0f, 2.0f, -0.5f});
    Tensor r = K::relu(x);
    CHECK(r.at2(0, 0) == 0.0f);
    CHECK(r.at2(0, 2) == 2.0f);

    Tensor z({1, 4});
    Tensor p = K::softmax_rows(z);
    for (int c = 0; c < 4; ++c) CHECK(p.at2(0, c) == doctest::Approx(0.25f));

    Tensor zs({1, 4}, {1, 2, 3, 4});
    Tensor ps = K::softmax_rows(zs);
    CHECK(oracles::mad(ps, oracles::softmax(zs)) <= 1e-7);

    // shift invariance
    Tensor shifted = zs;
    for (std::int64_t i = 0; i < shifted.numel(); ++i) shifted[i] += 123.0f;
    CHECK(oracles::mad(K::softmax_rows(shifted), ps) <= 1e-6);

    // rows sum to 1
    Rng rng(9);
    Tensor big = oracles::random_tensor({10, 4}, rng, -30.0, 30.0);
    Tensor probs = K::softmax_rows(big);
    for (int n = 0; n < 10; ++n) {
        double s = 0.0;
        for (int c = 0; c < 4; ++c) s += probs.at2(n, c);
        CHECK(std::fabs(s - 1.0) <= 1e-6);
    }
}

TEST_CASE("bilinear resize examples") {
    Rng rng(10);
    Tensor x = oracles::random_tensor({2, 5, 7}, rng);
    CHECK(oracles::mad(K::bilinear_resize(x, 5, 7), x) <= 1e-6);

    Tensor c = Tensor::full({1, 3, 3}, 0.4f);
    Tensor up = K::bilinear_resize(c, 9, 5);
    for (std::int64_t i = 0; i < up.numel(); ++i) CHECK(up[i] == doctest::Approx(0.4f));

    // 2x2 -> 4x4 closed form: interpolation weights (1,0),(.75,.25),(.25,.75),(0,1)
    Tensor q({1, 2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
    Tensor g = K::bilinear_resize(q, 4, 4);
    const double wy[4][2] = {{1, 0}, {0.75, 0.25}, {0.25, 0.75}, {0, 1}};
    for (int oy = 0; oy < 4; ++oy)
        for (int ox = 0; ox < 4; ++ox) {
            const double top = wy[ox][0] * 1.0 + wy[ox][1] * 2.0;
            const double bot = wy[ox][0] * 3.0 + wy[ox][1] * 4.0;
            const double want = wy[oy][0] * top + wy[oy][1] * bot;
            CHECK(g.at3(0, oy, ox) == doctest::Approx(want).epsilon(1e-6));
        }

    CHECK_THROWS_AS(K::bilinear_resize(x, 0, 4), ValueError);

    // output bounded by input range
    Tensor big = oracles::random_tensor({1, 6, 6}, rng, -3.0, 5.0);
    float lo = 1e30f, hi = -1e30f;
    for (std::int64_t i = 0; i < big.numel(); ++i) {
        lo = std::min(lo, big[i]);
        hi = std::max(hi, big[i]);
    }
    Tensor rs = K::bilinear_resize(big, 13, 4);
    for (std::int64_t i = 0; i < rs.numel(); ++i) {
        CHECK(rs[i] >= lo - 1e-6f);
        CHECK(rs[i] <= hi + 1e-6f);
    }
}

TEST_CASE("fifty random shapes match the naive oracles within 1e-6") {
    Rng rng(77);
    for (int it = 0; it < 50; ++it) {
        const int n = 1 + rng.uniform_int(2);
        const int cin = 1 + rng.uniform_int(3);
        const int h = 3 + rng.uniform_int(6);
        const int w = 3 + rng.uniform_int(6);
        const int cout = 1 + rng.uniform_int(3);
        const int k = 1 + rng.uniform_int(3);
        const int stride = 1 + rng.uniform_int(2);
        const int pad = rng.uniform_int(2);

        Tensor x = oracles::random_tensor({n, cin, h, w}, rng);
        Tensor kr = oracles::random_tensor({cout, cin, k, k}, rng);
        Tensor br = oracles::random_tensor({cout}, rng);
        CHECK(oracles::mad(K::conv2d(x, kr, br, stride, pad),
                           oracles::conv2d(x, kr, br, stride, pad)) <= 1e-6);

        Tensor dk = oracles::random_tensor({cin, 1, k, k}, rng);
        CHECK(oracles::mad(K::depthwise_conv2d(x, dk, stride, pad),
                           oracles::depthwise(x, dk, stride, pad)) <= 1e-6);

        const int win = 1 + rng.uniform_int(std::min(h, w));
        const int pstride = 1 + rng.uniform_int(2);
        CHECK(oracles::mad(K::maxpool2d(x, win, pstride).output,
                           oracles::maxpool(x, win, pstride)) == 0.0);

        CHECK(oracles::mad(K::global_avg_pool(x), oracles::gap(x)) <= 1e-6);

        const int d = 1 + rng.uniform_int(8);
        const int m = 1 + rng.uniform_int(6);
        Tensor dx = oracles::random_tensor({n, d}, rng);
        Tensor dw = oracles::random_tensor({d, m}, rng);
        Tensor db = oracles::random_tensor({m}, rng);
        CHECK(oracles::mad(K::dense(dx, dw, db), oracles::dense(dx, dw, db)) <= 1e-6);

        Tensor img = oracles::random_tensor({cin, h, w}, rng);
        const int oh = 1 + rng.uniform_int(12);
        const int ow = 1 + rng.uniform_int(12);
        CHECK(oracles::mad(K::bilinear_resize(img, oh, ow), oracles::resize(img, oh, ow)) <= 1e-6);
    }
}

TEST_CASE("kernel backward spot checks") {
    Rng rng(11);

    // maxpool routes gradient to the argmax position
    Tensor x({1, 1, 2, 2}, {1, 5, 3, 4});
    auto mp = K::maxpool2d(x, 2, 2);
    Tensor gout({1, 1, 1, 1}, {2.5f});
    Tensor gin = K::maxpool2d_backward(x.shape(), mp.argmax, gout);
    CHECK(gin.at4(0, 0, 0, 1) == 2.5f);
    CHECK(gin.at4(0, 0, 0, 0) == 0.0f);

    // gap spreads gradient evenly
    Tensor gg = K::global_avg_pool_backward(Tensor({1, 2}, {4.0f, 8.0f}), 2, 2);
    CHECK(gg.at4(0, 0, 1, 1) == doctest::Approx(1.0f));
    CHECK(gg.at4(0, 1, 0, 0) == doctest::Approx(2.0f));

    // relu masks by forward output
    Tensor out({1, 3}, {0.0f, 2.0f, 0.0f});
    Tensor g({1, 3}, {1.0f, 1.0f, 1.0f});
    Tensor rg = K::relu_backward(out, g);
    CHECK(rg.at2(0, 0) == 0.0f);
    CHECK(rg.at2(0, 1) == 1.0f);

    // softmax jacobian: numeric check on a single row
    Tensor z = oracles::random_tensor({1, 4}, rng);
    Tensor up = oracles::random_tensor({1, 4}, rng);
    Tensor probs = K::softmax_rows(z);
    Tensor an = K::softmax_rows_backward(probs, up);
    for (int c = 0; c < 4; ++c) {
        const double eps = 1e-4;
        Tensor zp = z, zm = z;
        zp.at2(0, c) += static_cast<float>(eps);
        zm.at2(0, c) -= static_cast<float>(eps);
        double lp = 0.0, lm = 0.0;
        Tensor pp = K::softmax_rows(zp), pm = K::softmax_rows(zm);
        for (int j = 0; j < 4; ++j) {
            lp += static_cast<double>(pp.at2(0, j)) * up.at2(0, j);
            lm += static_cast<double>(pm.at2(0, j)) * up.at2(0, j);
        }
        CHECK(an.at2(0, c) == doctest::Approx((lp - lm) / (2 * eps)).epsilon(1e-2));
    }
}
