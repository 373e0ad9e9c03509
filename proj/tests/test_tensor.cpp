#include <doctest.h>

#include <cmath>
#include <vector>

#include "fd_check.hpp"
#include "pcrec/rng.hpp"
#include "pcrec/tensor.hpp"

using pcrec::MaxRows;
using pcrec::Rng;
using pcrec::Tape;
using pcrec::Tensor;
using testutil::max_grad_error;
using testutil::rand_tensor;

// these cases are built away from kinks and switching points, so every probe
// must be smooth and within tolerance
static void check_exact_grads(const testutil::FdReport& r, double tol = 1e-6) {
    CHECK(r.skipped == 0);
    CHECK(r.max_err < tol);
}

TEST_SUITE("tensor") {

TEST_CASE("construction and element access") {
    Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.ndim() == 2);
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
    CHECK(t.size() == 6);
    CHECK(t(1, 2) == 6.0);
    CHECK(Tensor::scalar(7.5).item() == 7.5);
    CHECK_THROWS_AS(t.item(), std::invalid_argument);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor({0, 3}), std::invalid_argument);
}

TEST_CASE("copies share storage, clone detaches") {
    Tensor a({2}, {1, 2});
    Tensor alias = a;
    alias[0] = 9;
    CHECK(a[0] == 9.0);
    Tensor deep = a.clone();
    deep[0] = 4;
    CHECK(a[0] == 9.0);
    CHECK(deep[1] == 2.0);
}

TEST_CASE("affine matches hand computation") {
    Tape tape;
    Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor w({3, 2}, {1, 0, 0, 1, 1, 1});
    Tensor b({2}, {10, 20});
    Tensor y = tape.affine(x, w, b);
    REQUIRE(y.shape() == std::vector<std::size_t>{2, 2});
    CHECK(y(0, 0) == 1 + 3 + 10);
    CHECK(y(0, 1) == 2 + 3 + 20);
    CHECK(y(1, 0) == 4 + 6 + 10);
    CHECK(y(1, 1) == 5 + 6 + 20);
}

TEST_CASE("affine rejects mismatched operands") {
    Tape tape;
    Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor w({2, 2}, {1, 2, 3, 4});
    Tensor b({2}, {0, 0});
    CHECK_THROWS_AS(tape.affine(x, w, b), std::invalid_argument);
    Tensor w3({3, 2}, {1, 2, 3, 4, 5, 6});
    Tensor b3({3}, {0, 0, 0});
    CHECK_THROWS_AS(tape.affine(x, w3, b3), std::invalid_argument);
}

TEST_CASE("relu clamps negatives") {
    Tape tape;
    Tensor x({1, 4}, {-2, -0.5, 0, 3});
    Tensor y = tape.relu(x);
    CHECK(y[0] == 0.0);
    CHECK(y[1] == 0.0);
    CHECK(y[2] == 0.0);
    CHECK(y[3] == 3.0);
}

TEST_CASE("max_over_rows picks column maxima, ties to the lowest row") {
    Tape tape;
    Tensor x({3, 2}, {1, 5, 3, 5, 3, 2});
    MaxRows m = tape.max_over_rows(x);
    CHECK(m.values[0] == 3.0);
    CHECK(m.values[1] == 5.0);
    CHECK(m.argmax[0] == 1);  // rows 1 and 2 tie on column 0
    CHECK(m.argmax[1] == 0);  // rows 0 and 1 tie on column 1
}

TEST_CASE("segment_max_rows reduces each block independently") {
    Tape tape;
    Tensor x({5, 2}, {1, 2, 3, 0, 9, 9, 4, 8, 5, 7});
    Tensor y = tape.segment_max_rows(x, {0, 2, 5});
    REQUIRE(y.shape() == std::vector<std::size_t>{2, 2});
    CHECK(y(0, 0) == 3.0);
    CHECK(y(0, 1) == 2.0);
    CHECK(y(1, 0) == 9.0);
    CHECK(y(1, 1) == 9.0);
    CHECK_THROWS_AS(tape.segment_max_rows(x, {0, 2, 2, 5}), std::invalid_argument);
    CHECK_THROWS_AS(tape.segment_max_rows(x, {1, 5}), std::invalid_argument);
}

TEST_CASE("concat_cols stitches column blocks") {
    Tape tape;
    Tensor a({2, 1}, {1, 2});
    Tensor b({2, 2}, {3, 4, 5, 6});
    Tensor y = tape.concat_cols({a, b});
    REQUIRE(y.shape() == std::vector<std::size_t>{2, 3});
    CHECK(y(0, 0) == 1.0);
    CHECK(y(0, 1) == 3.0);
    CHECK(y(0, 2) == 4.0);
    CHECK(y(1, 0) == 2.0);
    CHECK(y(1, 2) == 6.0);
    Tensor c({3, 1}, {0, 0, 0});
    CHECK_THROWS_AS(tape.concat_cols({a, c}), std::invalid_argument);
}

TEST_CASE("tile_rows lays the k copies of row i at rows k*i..k*i+k-1") {
    Tape tape;
    Tensor x({2, 2}, {1, 2, 3, 4});
    Tensor y = tape.tile_rows(x, 3);
    REQUIRE(y.shape() == std::vector<std::size_t>{6, 2});
    for (std::size_t r = 0; r < 3; ++r) {
        CHECK(y(r, 0) == 1.0);
        CHECK(y(3 + r, 1) == 4.0);
    }
}

TEST_CASE("conv2d matches a brute-force loop") {
    Rng rng(11);
    const std::size_t c_in = 2, h = 5, w = 5, c_out = 3, k = 3;
    Tensor x = rand_tensor(rng, {c_in, h, w});
    Tensor kern = rand_tensor(rng, {c_out, c_in, k, k});
    Tensor bias = rand_tensor(rng, {c_out});

    for (std::size_t stride : {std::size_t(1), std::size_t(2)}) {
        for (std::size_t pad : {std::size_t(0), std::size_t(1)}) {
            Tape tape;
            Tensor y = tape.conv2d(x, kern, bias, stride, pad);
            const std::size_t ho = (h + 2 * pad - k) / stride + 1;
            const std::size_t wo = (w + 2 * pad - k) / stride + 1;
            REQUIRE(y.shape() == std::vector<std::size_t>{c_out, ho, wo});
            for (std::size_t co = 0; co < c_out; ++co)
                for (std::size_t i = 0; i < ho; ++i)
                    for (std::size_t j = 0; j < wo; ++j) {
                        double acc = bias[co];
                        for (std::size_t ci = 0; ci < c_in; ++ci)
                            for (std::size_t u = 0; u < k; ++u)
                                for (std::size_t v = 0; v < k; ++v) {
                                    const long long r = (long long)(i * stride + u) - (long long)pad;
                                    const long long c = (long long)(j * stride + v) - (long long)pad;
                                    if (r < 0 || c < 0 || r >= (long long)h || c >= (long long)w)
                                        continue;
                                    acc += x[(ci * h + r) * w + c] *
                                           kern[((co * c_in + ci) * k + u) * k + v];
                                }
                        CHECK(y[(co * ho + i) * wo + j] == doctest::Approx(acc).epsilon(1e-12));
                    }
        }
    }
}

TEST_CASE("conv2d validates kernel and extent") {
    Tape tape;
    Rng rng(3);
    Tensor x = rand_tensor(rng, {1, 4, 4});
    CHECK_THROWS_AS(tape.conv2d(x, rand_tensor(rng, {1, 1, 2, 2}), Tensor(), 1, 0),
                    std::invalid_argument);
    CHECK_THROWS_AS(tape.conv2d(x, rand_tensor(rng, {1, 2, 3, 3}), Tensor(), 1, 0),
                    std::invalid_argument);
    CHECK_THROWS_AS(tape.conv2d(x, rand_tensor(rng, {1, 1, 5, 5}), Tensor(), 1, 0),
                    std::invalid_argument);
}

TEST_CASE("reshape and gather_rows") {
    Tape tape;
    Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor r = tape.reshape(x, {3, 2});
    CHECK(r(2, 1) == 6.0);
    CHECK_THROWS_AS(tape.reshape(x, {4, 2}), std::invalid_argument);

    Tensor g = tape.gather_rows(x, {1, 1, 0});
    REQUIRE(g.shape() == std::vector<std::size_t>{3, 3});
    CHECK(g(0, 0) == 4.0);
    CHECK(g(1, 2) == 6.0);
    CHECK(g(2, 0) == 1.0);
    CHECK_THROWS_AS(tape.gather_rows(x, {2}), std::invalid_argument);
}

TEST_CASE("add, sub, scale, sum") {
    Tape tape;
    Tensor a({2}, {1, 2});
    Tensor b({2}, {10, 20});
    CHECK(tape.add(a, b)[1] == 22.0);
    CHECK(tape.sub(b, a)[0] == 9.0);
    CHECK(tape.scale(a, -2.0)[1] == -4.0);
    CHECK(tape.sum(b).item() == 30.0);
    Tensor c({3}, {0, 0, 0});
    CHECK_THROWS_AS(tape.add(a, c), std::invalid_argument);
}

TEST_CASE("gradients match finite differences per op") {
    Rng rng(101);

    SUBCASE("affine") {
        Tensor x = rand_tensor(rng, {3, 4});
        Tensor w = rand_tensor(rng, {4, 2});
        Tensor b = rand_tensor(rng, {2});
        auto f = [&](Tape& t) { return t.sum(t.affine(x, w, b)); };
        check_exact_grads(max_grad_error({x, w, b}, f));
    }
    SUBCASE("relu chain") {
        // keep pre-activations away from the kink at 0
        Tensor x({2, 3}, {0.8, -0.6, 0.9, -0.7, 0.5, -0.4});
        Tensor w = rand_tensor(rng, {3, 3}, 0.5, 1.0);
        Tensor b({3}, {0.3, -0.2, 0.4});
        auto f = [&](Tape& t) { return t.sum(t.relu(t.affine(x, w, b))); };
        check_exact_grads(max_grad_error({x, w, b}, f));
    }
    SUBCASE("max_over_rows") {
        Tensor x = rand_tensor(rng, {5, 3});
        auto f = [&](Tape& t) { return t.sum(t.max_over_rows(x).values); };
        check_exact_grads(max_grad_error({x}, f));
    }
    SUBCASE("segment_max_rows") {
        Tensor x = rand_tensor(rng, {6, 3});
        auto f = [&](Tape& t) { return t.sum(t.segment_max_rows(x, {0, 2, 3, 6})); };
        check_exact_grads(max_grad_error({x}, f));
    }
    SUBCASE("conv2d") {
        Tensor x = rand_tensor(rng, {2, 4, 4});
        Tensor k = rand_tensor(rng, {2, 2, 3, 3});
        Tensor b = rand_tensor(rng, {2});
        auto f = [&](Tape& t) { return t.sum(t.conv2d(x, k, b, 2, 1)); };
        check_exact_grads(max_grad_error({x, k, b}, f));
    }
    SUBCASE("structural ops composed") {
        Tensor x = rand_tensor(rng, {2, 2});
        Tensor y = rand_tensor(rng, {2, 3});
        auto f = [&](Tape& t) {
            pcrec::Tensor cat = t.concat_cols({x, y});        // [2,5]
            pcrec::Tensor tiled = t.tile_rows(cat, 2);        // [4,5]
            pcrec::Tensor picked = t.gather_rows(tiled, {0, 3, 3, 2});
            pcrec::Tensor flat = t.reshape(picked, {20});
            return t.sum(t.scale(flat, 0.5));
        };
        check_exact_grads(max_grad_error({x, y}, f));
    }
    SUBCASE("add sub scale") {
        Tensor a = rand_tensor(rng, {4});
        Tensor b = rand_tensor(rng, {4});
        auto f = [&](Tape& t) { return t.sum(t.scale(t.sub(t.add(a, b), t.scale(b, 0.25)), 3.0)); };
        check_exact_grads(max_grad_error({a, b}, f));
    }
    SUBCASE("two-layer network end to end") {
        Tensor x = rand_tensor(rng, {3, 4});
        Tensor w1 = rand_tensor(rng, {4, 5}, 0.4, 1.1);
        Tensor b1 = rand_tensor(rng, {5}, 0.1, 0.3);
        Tensor w2 = rand_tensor(rng, {5, 2});
        Tensor b2 = rand_tensor(rng, {2});
        auto f = [&](Tape& t) {
            return t.sum(t.affine(t.relu(t.affine(x, w1, b1)), w2, b2));
        };
        check_exact_grads(max_grad_error({x, w1, b1, w2, b2}, f));
    }
}

TEST_CASE("max tie routes the gradient to the lowest row") {
    Tape tape;
    Tensor x({2, 1}, {2, 2});
    MaxRows m = tape.max_over_rows(x);
    tape.backward(tape.sum(m.values));
    CHECK(x.grad()[0] == 1.0);
    CHECK(x.grad()[1] == 0.0);
}

TEST_CASE("leaf gradients accumulate across tapes until zeroed") {
    Tensor x({2}, {1.0, 2.0});
    {
        Tape t1;
        t1.backward(t1.sum(t1.scale(x, 2.0)));
    }
    CHECK(x.grad()[0] == 2.0);
    {
        Tape t2;
        t2.backward(t2.sum(t2.scale(x, 3.0)));
    }
    CHECK(x.grad()[0] == 5.0);
    CHECK(x.grad()[1] == 5.0);
    x.zero_grad();
    CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("custom op participates in backward") {
    Rng rng(5);
    Tensor x = rand_tensor(rng, {3});
    auto f = [&](Tape& t) {
        // forward: sum of squares computed outside the engine
        double v = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) v += x[i] * x[i];
        std::vector<double> snapshot(x.values());
        const Tensor inputs[1] = {x};
        return t.custom(inputs, {1}, {v},
                        [snapshot](const double* og, const std::vector<double*>& gs) {
                            for (std::size_t i = 0; i < snapshot.size(); ++i)
                                gs[0][i] += 2.0 * snapshot[i] * og[0];
                        });
    };
    check_exact_grads(max_grad_error({x}, f));
}

TEST_CASE("backward rejects non-scalar and foreign losses") {
    Tape tape;
    Tensor x({2}, {1, 2});
    Tensor y = tape.scale(x, 2.0);
    CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
    Tape other;
    Tensor z = other.sum(other.scale(x, 1.0));
    CHECK_THROWS_AS(tape.backward(z), std::invalid_argument);
}

TEST_CASE("same seed reproduces gradients bitwise") {
    auto run = [] {
        Rng rng(99);
        Tensor x = rand_tensor(rng, {4, 4});
        Tensor w = rand_tensor(rng, {4, 3});
        Tensor b = rand_tensor(rng, {3});
        Tape t;
        t.backward(t.sum(t.relu(t.affine(x, w, b))));
        return std::make_pair(w.grad(), x.grad());
    };
    auto [gw1, gx1] = run();
    auto [gw2, gx2] = run();
    CHECK(gw1 == gw2);
    CHECK(gx1 == gx2);
}

}  // TEST_SUITE
