#include "gtalk/diffmath/ops.hpp"
#include "gtalk/util/error.hpp"
#include "gtalk/util/rng.hpp"

#include "doctest.h"

#include <cmath>

using namespace gtalk;
using namespace gtalk::diff;

namespace {

Array random_array(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    Array a(std::move(shape));
    for (double& v : a.values()) v = rng.uniform(lo, hi);
    return a;
}

// Keeps |x| away from zero so relu and mean_abs stay differentiable under the probe.
Array away_from_zero(Rng& rng, Shape shape) {
    Array a(std::move(shape));
    for (double& v : a.values()) v = rng.uniform(0.1, 1.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    return a;
}

} // namespace

TEST_CASE("matmul identity") {
    Tape t;
    Var a = t.constant(Array({2, 2}, {1, 2, 3, 4}));
    Var i = t.constant(Array({2, 2}, {1, 0, 0, 1}));
    CHECK(matmul(a, i).value() == Array({2, 2}, {1, 2, 3, 4}));
}

TEST_CASE("softmax of equal logits is uniform") {
    Tape t;
    Var y = softmax(t.constant(Array({3}, {0, 0, 0})));
    for (double v : y.value().values()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("relu definition") {
    Tape t;
    CHECK(relu(t.constant(Array({2}, {-1, 2}))).value() == Array({2}, {0, 2}));
}

TEST_CASE("shape mismatch names the op and both shapes") {
    Tape t;
    Var a = t.constant(Array({2, 3}));
    Var b = t.constant(Array({2, 2}));
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("matmul") != std::string::npos);
        CHECK(msg.find("[2,3]") != std::string::npos);
        CHECK(msg.find("[2,2]") != std::string::npos);
    }
    CHECK_THROWS_AS(add(a, b), ShapeError);
    CHECK_THROWS_AS(mul(a, b), ShapeError);
}

TEST_CASE("backward of x*x at 3 is 6") {
    Tape t;
    Var x = t.leaf(Array::scalar(3.0));
    Var y = mul(x, x);
    auto g = t.backward(y, Array::scalar(1.0));
    CHECK(g[x].item() == 6.0);
}

TEST_CASE("softmax jacobian rows sum to zero") {
    Tape t;
    Var x = t.leaf(Array({2}, {0.7, 0.7}));
    auto g = t.backward(softmax(x), Array({2}, {1.0, -1.0}));
    CHECK(std::abs(g[x][0] + g[x][1]) < 1e-15);
}

TEST_CASE("backward errors") {
    Tape empty;
    Tape other;
    Var v = other.leaf(Array::scalar(1.0));
    CHECK_THROWS_AS(empty.backward(v, Array::scalar(1.0)), Error);
    Var y = scale(v, 2.0);
    CHECK_THROWS_AS(other.backward(y, Array({2})), ShapeError);
}

TEST_CASE("untouched trainable leaves get zero gradients") {
    Tape t;
    Var used = t.leaf(Array({2}, {1, 2}));
    Var unused = t.leaf(Array({3}, {1, 2, 3}));
    auto g = t.backward(reduce_sum(used), Array::scalar(1.0));
    CHECK(g[unused] == Array({3}));
    CHECK(g[used] == Array({2}, {1, 1}));
}

TEST_CASE("finite difference check examples") {
    Rng rng(1);
    SUBCASE("sum of squares") {
        const Array x = random_array(rng, {7});
        double err = finite_difference_check([](Tape&, Var v) { return reduce_sum(mul(v, v)); }, x, 1e-5);
        CHECK(err <= 1e-6);
    }
    SUBCASE("constant function") {
        const Array x = random_array(rng, {4});
        double err = finite_difference_check(
            [](Tape& t, Var) { return t.constant(Array::scalar(2.5)); }, x, 1e-5);
        CHECK(err == 0.0);
    }
    SUBCASE("matmul chain depth 3") {
        const Array w1 = random_array(rng, {4, 5});
        const Array w2 = random_array(rng, {5, 3});
        const Array w3 = random_array(rng, {3, 2});
        const Array x = random_array(rng, {2, 4});
        double err = finite_difference_check(
            [&](Tape& t, Var v) {
                return matmul(matmul(matmul(v, t.constant(w1)), t.constant(w2)), t.constant(w3));
            },
            x, 1e-5);
        CHECK(err <= 1e-5);
    }
    SUBCASE("non-finite forward is an error") {
        const Array x({1}, {800.0});
        CHECK_THROWS_AS(finite_difference_check([](Tape&, Var v) { return exp(v); }, x, 1e-5), NumericError);
    }
}

// 100 random instances of every op kind at 64-bit precision.
TEST_CASE("every op matches central differences on 100 random instances") {
    Rng rng(42);
    const double tol = 1e-5;
    const double eps = 1e-5;
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t m = 1 + rng.index(4), k = 1 + rng.index(4), n = 2 + rng.index(4);
        const Array other_mk = random_array(rng, {m, k});
        const Array other_kn = random_array(rng, {k, n});
        const Array other_mn = random_array(rng, {m, n});
        const Array extra = random_array(rng, {m, 2});
        const Array x_mn = random_array(rng, {m, n});
        const Array x_mk = random_array(rng, {m, k});
        const Array x_row = random_array(rng, {1, n});
        const Array x_nz = away_from_zero(rng, {m, n});

        auto run = [&](const char* name, const RecordedFn& f, const Array& x) {
            const double err = finite_difference_check(f, x, eps);
            INFO(name << " trial " << trial << " err " << err);
            CHECK(err <= tol);
            worst = std::max(worst, err);
        };

        run("matmul lhs", [&](Tape& t, Var v) { return matmul(v, t.constant(other_kn)); }, x_mk);
        run("matmul rhs", [&](Tape& t, Var v) { return matmul(t.constant(other_mk), v); }, other_kn);
        run("add", [&](Tape& t, Var v) { return add(v, t.constant(other_mn)); }, x_mn);
        run("sub", [&](Tape& t, Var v) { return sub(t.constant(other_mn), v); }, x_mn);
        run("add scalar", [&](Tape& t, Var v) { return add(t.constant(other_mn), v); }, Array::scalar(0.3));
        run("mul", [&](Tape& t, Var v) { return mul(v, t.constant(other_mn)); }, x_mn);
        run("mul self", [&](Tape&, Var v) { return mul(v, v); }, x_mn);
        run("concat", [&](Tape& t, Var v) {
            const Var parts[] = {t.constant(extra), v, v};
            return concat(parts, 1);
        }, x_mn);
        run("concat axis0", [&](Tape& t, Var v) {
            const Var parts[] = {v, t.constant(other_mn)};
            return concat(parts, 0);
        }, x_mn);
        run("slice", [&](Tape&, Var v) { return slice(v, 1, 1, n); }, x_mn);
        run("softmax", [&](Tape&, Var v) { return softmax(v); }, x_mn);
        run("relu", [&](Tape&, Var v) { return relu(v); }, x_nz);
        run("tanh", [&](Tape&, Var v) { return tanh(v); }, x_mn);
        run("sigmoid", [&](Tape&, Var v) { return sigmoid(v); }, x_mn);
        run("exp", [&](Tape&, Var v) { return exp(v); }, x_mn);
        run("scale", [&](Tape&, Var v) { return scale(v, -1.7); }, x_mn);
        run("reduce_sum", [&](Tape&, Var v) { return reduce_sum(v); }, x_mn);
        run("layer_norm", [&](Tape&, Var v) { return layer_norm(v); }, x_mn);
        run("transpose", [&](Tape&, Var v) { return transpose(v); }, x_mn);
        run("reshape", [&](Tape&, Var v) { return reshape(v, {m * n}); }, x_mn);
        run("tile_rows", [&](Tape&, Var v) { return tile_rows(v, m); }, x_row);
        run("normalize_rows", [&](Tape&, Var v) { return normalize_rows(v); }, x_nz);
        run("mean_abs", [&](Tape&, Var v) { return mean_abs(v); }, x_nz);
    }
    MESSAGE("worst relative error over all op kinds: " << worst);
}

TEST_CASE("backward is linear in the recorded function") {
    Rng rng(3);
    const Array x0 = random_array(rng, {3, 4});
    const Array w = random_array(rng, {4, 2});
    auto f = [&](Var v) { return reduce_sum(tanh(matmul(v, v.tape()->constant(w)))); };
    auto g = [&](Var v) { return reduce_sum(mul(softmax(v), v)); };

    Tape t1;
    Var x1 = t1.leaf(x0);
    Array gf = t1.backward(f(x1), Array::scalar(1.0))[x1];
    Tape t2;
    Var x2 = t2.leaf(x0);
    Array gg = t2.backward(g(x2), Array::scalar(1.0))[x2];
    Tape t3;
    Var x3 = t3.leaf(x0);
    Array gsum = t3.backward(add(f(x3), g(x3)), Array::scalar(1.0))[x3];
    gf += gg;
    CHECK(max_abs_diff(gf, gsum) < 1e-12);
}

TEST_CASE("softmax rows are distributions") {
    Rng rng(9);
    for (int trial = 0; trial < 100; ++trial) {
        Tape t;
        Var y = softmax(t.constant(random_array(rng, {5, 4}, -30.0, 30.0)));
        for (std::size_t r = 0; r < 5; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < 4; ++c) {
                CHECK(y.value().at(r, c) >= 0.0);
                s += y.value().at(r, c);
            }
            CHECK(std::abs(s - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("external leaves are not copied and receive gradients") {
    Array params({2, 2}, {1, 2, 3, 4});
    Tape t;
    Var p = t.leaf_ref(params);
    CHECK(&p.value() == &params);
    auto g = t.backward(reduce_sum(scale(p, 3.0)), Array::scalar(1.0));
    CHECK(g[p] == Array({2, 2}, 3.0));
}
