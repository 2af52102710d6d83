#include "doctest.h"

#include "patchcast/numerics.hpp"

#include <cmath>

using namespace patchcast;

namespace {

Matrix<double> random_matrix(Rng& rng, Index r, Index c) {
    Matrix<double> m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

// sum(y ⊙ probe) as a scalar objective over a single linear layer
double probe_loss(LinearLayer<double>& layer, const Matrix<double>& x, const Matrix<double>& probe, bool grad) {
    layer.zero_grad();
    const Matrix<double> y = layer.forward(x);
    if (grad) layer.backward(probe);
    return y.cwiseProduct(probe).sum();
}

} // namespace

TEST_CASE("linear forward matches hand products") {
    LinearLayer<double> layer(2, 2);
    layer.weight << 2, 3, 4, 5;
    layer.bias << 1, 1;
    Matrix<double> x(2, 2);
    x << 1, 0, 0, 1;
    const Matrix<double> y = layer.forward(x);
    Matrix<double> expected(2, 2);
    expected << 3, 5, 4, 6;
    CHECK(y == expected);

    LinearLayer<double> id(2, 2);
    id.weight.setIdentity();
    Matrix<double> row(1, 2);
    row << 1, 2;
    CHECK(id.forward(row) == row);
}

TEST_CASE("linear forward on an empty batch") {
    LinearLayer<double> layer(3, 2);
    const Matrix<double> y = layer.forward(Matrix<double>(0, 3));
    CHECK(y.rows() == 0);
    CHECK(y.cols() == 2);
}

TEST_CASE("linear shape mismatch names both shapes") {
    LinearLayer<double> layer(3, 2);
    try {
        layer.forward(Matrix<double>::Zero(4, 2));
        FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("4x2") != std::string::npos);
        CHECK(msg.find("2x3") != std::string::npos);
    }
}

TEST_CASE("linear backward") {
    LinearLayer<double> layer(2, 2);
    CHECK_THROWS_AS(layer.backward(Matrix<double>::Zero(1, 2)), StateError);

    SUBCASE("zero gradient") {
        Rng rng(1);
        layer.weight = random_matrix(rng, 2, 2);
        layer.forward(random_matrix(rng, 3, 2));
        const Matrix<double> g = layer.backward(Matrix<double>::Zero(3, 2));
        CHECK(g.isZero(0));
        CHECK(layer.grad_weight.isZero(0));
        CHECK(layer.grad_bias.isZero(0));
    }
    SUBCASE("identity weight passes the gradient through") {
        layer.weight.setIdentity();
        Matrix<double> x(1, 2);
        x << 0.5, -1.5;
        layer.forward(x);
        Matrix<double> g(1, 2);
        g << 0.25, 4.0;
        CHECK(layer.backward(g) == g);
    }
    SUBCASE("accumulates across calls") {
        Rng rng(2);
        layer.weight = random_matrix(rng, 2, 2);
        const Matrix<double> x = random_matrix(rng, 3, 2);
        const Matrix<double> g = random_matrix(rng, 3, 2);
        layer.forward(x);
        layer.backward(g);
        layer.forward(x);
        layer.backward(g);
        const Matrix<double> once = g.transpose() * x;
        CHECK((layer.grad_weight - 2.0 * once).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("linear gradients match central differences") {
    Rng rng(3);
    LinearLayer<double> layer(2, 3);
    layer.weight = random_matrix(rng, 3, 2);
    layer.bias = random_matrix(rng, 3, 1);
    const Matrix<double> x = random_matrix(rng, 3, 2);
    const Matrix<double> probe = random_matrix(rng, 3, 3);

    std::vector<ParamView<double>> params;
    layer.collect("fc", params);
    const auto result =
        grad_check([&](bool g) { return probe_loss(layer, x, probe, g); }, std::span<const ParamView<double>>(params));
    CHECK(result.max_relative_error < 1e-7);
    CHECK(result.entries_checked == 9);

    // input gradient
    layer.zero_grad();
    layer.forward(x);
    const Matrix<double> gx = layer.backward(probe);
    const double eps = 1e-5;
    for (Index i = 0; i < x.size(); ++i) {
        Matrix<double> xp = x;
        Matrix<double> xm = x;
        xp.data()[i] += eps;
        xm.data()[i] -= eps;
        const double numeric = (layer.forward(xp).cwiseProduct(probe).sum() -
                                layer.forward(xm).cwiseProduct(probe).sum()) / (2 * eps);
        CHECK(relative_error(gx.data()[i], numeric) < 1e-6);
    }
}

TEST_CASE("collect names weight and bias") {
    LinearLayer<float> layer(4, 2);
    std::vector<ParamView<float>> params;
    layer.collect("head", params);
    REQUIRE(params.size() == 2);
    CHECK(params[0].name == "head.weight");
    CHECK(params[0].rows == 2);
    CHECK(params[0].cols == 4);
    CHECK(params[1].name == "head.bias");
    CHECK(params[1].value.size() == 2);
}

TEST_CASE("gelu values and asymptotes") {
    CHECK(gelu(0.0) == 0.0);
    CHECK(gelu(1000.0) == doctest::Approx(1000.0));
    CHECK(std::abs(gelu(-1000.0)) < 1e-12);
    for (double x : {-2.0, -0.5, 0.3, 4.0}) {
        const double eps = 1e-6;
        const double numeric = (gelu(x + eps) - gelu(x - eps)) / (2 * eps);
        CHECK(relative_error(gelu_derivative(x), numeric) < 1e-5);
    }
}

TEST_CASE("activation backward") {
    Activation<double> act(ActivationKind::gelu);
    CHECK_THROWS_AS(act.backward(Matrix<double>::Ones(1, 1)), StateError);
    Matrix<double> x(1, 4);
    x << -2, -0.5, 0.3, 4;
    act.forward(x);
    const Matrix<double> g = act.backward(Matrix<double>::Ones(1, 4));
    for (Index i = 0; i < 4; ++i) CHECK(g(0, i) == doctest::Approx(gelu_derivative(x(0, i))));

    Activation<double> relu(ActivationKind::relu);
    Matrix<double> y = relu.forward(x);
    CHECK(y(0, 0) == 0.0);
    CHECK(y(0, 3) == 4.0);
    const Matrix<double> gr = relu.backward(Matrix<double>::Ones(1, 4));
    CHECK(gr(0, 1) == 0.0);
    CHECK(gr(0, 2) == 1.0);
}

TEST_CASE("dropout") {
    Rng rng(4);
    const Matrix<double> x = random_matrix(rng, 5, 7);
    SUBCASE("rate 0 is the identity") {
        Dropout<double> d(0.0);
        CHECK(d.forward(x, rng, true) == x);
    }
    SUBCASE("inference is bit-exact identity") {
        Dropout<double> d(0.7);
        CHECK(d.forward(x, rng, false) == x);
        CHECK(d.backward(x) == x);
    }
    SUBCASE("inverted scaling keeps the mean") {
        Dropout<double> d(0.5);
        const Matrix<double> ones = Matrix<double>::Ones(100000, 1);
        const double mean = d.forward(ones, rng, true).mean();
        CHECK(mean >= 0.97);
        CHECK(mean <= 1.03);
    }
    SUBCASE("backward uses the same mask") {
        Dropout<double> d(0.3);
        const Matrix<double> y = d.forward(Matrix<double>::Ones(4, 4), rng, true);
        CHECK(d.backward(Matrix<double>::Ones(4, 4)) == y);
    }
    CHECK_THROWS_AS(Dropout<double>(1.0), ConfigError);
    CHECK_THROWS_AS(Dropout<double>(-0.1), ConfigError);
}

TEST_CASE("avgpool1d_same") {
    Vector<double> x(4);
    x << 1, 2, 3, 4;
    const Vector<double> y = avgpool1d_same(x, 3);
    CHECK(y(0) == doctest::Approx(4.0 / 3.0));
    CHECK(y(1) == doctest::Approx(2.0));
    CHECK(y(2) == doctest::Approx(3.0));
    CHECK(y(3) == doctest::Approx(11.0 / 3.0));

    CHECK(avgpool1d_same(x, 1) == x);
    for (Index k : {1, 3, 5, 7}) {
        const Vector<double> c = Vector<double>::Constant(4, 2.5);
        CHECK((avgpool1d_same(c, k) - c).cwiseAbs().maxCoeff() < 1e-12);
    }
    CHECK_THROWS_AS(avgpool1d_same(x, 2), ConfigError);
    CHECK_THROWS_AS(avgpool1d_same(x, 9), ConfigError);
    CHECK_THROWS_AS(avgpool1d_same(x, 0), ConfigError);
}

TEST_CASE("avgpool is linear and the rows variant agrees") {
    Rng rng(5);
    const Matrix<double> a = random_matrix(rng, 3, 11);
    const Matrix<double> b = random_matrix(rng, 3, 11);
    const Matrix<double> lhs = avgpool_rows<double>(Matrix<double>(2.0 * a - 0.5 * b), 5);
    const Matrix<double> rhs = 2.0 * avgpool_rows(a, 5) - 0.5 * avgpool_rows(b, 5);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
    for (Index r = 0; r < 3; ++r) {
        const Vector<double> row = a.row(r).transpose();
        CHECK((avgpool_rows(a, 5).row(r).transpose() - avgpool1d_same(row, 5)).cwiseAbs().maxCoeff() < 1e-15);
    }
}

TEST_CASE("avgpool backward is the adjoint") {
    Rng rng(6);
    const Matrix<double> x = random_matrix(rng, 2, 9);
    const Matrix<double> g = random_matrix(rng, 2, 9);
    const double lhs = avgpool_rows(x, 7).cwiseProduct(g).sum();
    const double rhs = x.cwiseProduct(avgpool_rows_backward(g, 7)).sum();
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("mse loss") {
    Matrix<double> p(1, 1);
    p << 2;
    Matrix<double> t(1, 1);
    t << 0;
    const auto r = mse_loss(p, t);
    CHECK(r.value == 4.0);
    CHECK(r.grad(0, 0) == 4.0);

    const auto zero = mse_loss(p, p);
    CHECK(zero.value == 0.0);
    CHECK(zero.grad(0, 0) == 0.0);

    CHECK_THROWS_AS(mse_loss(p, Matrix<double>(2, 1)), DimensionError);

    Rng rng(7);
    const Matrix<double> pred = random_matrix(rng, 4, 3);
    const Matrix<double> target = random_matrix(rng, 4, 3);
    const auto base = mse_loss(pred, target);
    const double eps = 1e-5;
    for (Index i = 0; i < pred.size(); ++i) {
        Matrix<double> pp = pred;
        Matrix<double> pm = pred;
        pp.data()[i] += eps;
        pm.data()[i] -= eps;
        const double numeric = (mse_loss(pp, target).value - mse_loss(pm, target).value) / (2 * eps);
        CHECK(relative_error(base.grad.data()[i], numeric) < 1e-7);
    }
}

TEST_CASE("grad_check rejects bad eps and non-finite loss") {
    LinearLayer<double> layer(1, 1);
    std::vector<ParamView<double>> params;
    layer.collect("fc", params);
    const auto ok = [](bool) { return 1.0; };
    CHECK_THROWS_AS(grad_check(ok, std::span<const ParamView<double>>(params), 0.0), ConfigError);
    const auto bad = [](bool) { return std::nan(""); };
    CHECK_THROWS_AS(grad_check(bad, std::span<const ParamView<double>>(params)), NumericError);
}

TEST_CASE("grad_check flags a wrong gradient") {
    Rng rng(8);
    LinearLayer<double> layer(2, 2);
    layer.weight = random_matrix(rng, 2, 2);
    const Matrix<double> x = random_matrix(rng, 3, 2);
    const Matrix<double> probe = random_matrix(rng, 3, 2);
    std::vector<ParamView<double>> params;
    layer.collect("fc", params);
    const auto result = grad_check(
        [&](bool g) {
            const double v = probe_loss(layer, x, probe, g);
            if (g) layer.grad_bias *= 2.0;
            return v;
        },
        std::span<const ParamView<double>>(params));
    CHECK(result.max_relative_error > 0.1);
    CHECK(result.worst_parameter == "fc.bias");
}

TEST_CASE("rng streams and determinism") {
    Rng a(42, 0);
    Rng b(42, 0);
    Rng c(42, 1);
    bool differs = false;
    for (int i = 0; i < 16; ++i) {
        const auto x = a.next();
        CHECK(x == b.next());
        differs = differs || x != c.next();
    }
    CHECK(differs);

    Rng r(9);
    for (int i = 0; i < 1000; ++i) {
        const double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        CHECK(r.below(7) < 7);
    }
    std::vector<int> items{0, 1, 2, 3, 4, 5};
    r.shuffle(items);
    std::vector<int> sorted = items;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<int>{0, 1, 2, 3, 4, 5});
}
