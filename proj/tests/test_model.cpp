#include "heckcn/model.hpp"
#include "support/oracles.hpp"

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <doctest.h>

#include <random>

using namespace heckcn;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

const double na = std::numeric_limits<double>::quiet_NaN();

SelectionData toy_data() {
    SelectionData d;
    d.x.resize(3, 2);
    d.x << 1, 0.4, 1, -1.2, 1, 0.7;
    d.w.resize(3, 3);
    d.w << 1, 0.4, 0.3, 1, -1.2, -0.8, 1, 0.7, 1.9;
    d.v1.resize(3);
    d.v1 << 1.9, na, -0.35;
    d.c.resize(3);
    d.c << 1, 0, 1;
    return d;
}

Theta toy_theta() {
    Theta t;
    t.beta = (VectorXd(2) << 0.8, 0.5).finished();
    t.gamma = (VectorXd(3) << 0.6, 0.3, -0.5).finished();
    t.sigma2 = 1.3;
    t.rho = 0.45;
    t.nu1 = 0.2;
    t.nu2 = 0.15;
    return t;
}

Theta random_theta(std::mt19937_64& rng, Eigen::Index p, Eigen::Index q) {
    std::uniform_real_distribution<double> u(0, 1);
    Theta t;
    t.beta = VectorXd::NullaryExpr(p, [&] { return 2 * u(rng) - 1; });
    t.gamma = VectorXd::NullaryExpr(q, [&] { return 2 * u(rng) - 1; });
    t.sigma2 = 0.3 + 2 * u(rng);
    t.rho = 1.8 * u(rng) - 0.9;
    t.nu1 = 0.05 + 0.9 * u(rng);
    t.nu2 = 0.05 + 0.9 * u(rng);
    return t;
}

SelectionData make_data(std::mt19937_64& rng, Eigen::Index n) {
    std::normal_distribution<double> nd;
    SelectionData d;
    d.x.resize(n, 2);
    d.w.resize(n, 3);
    d.v1.resize(n);
    d.c.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double a = nd(rng), b = nd(rng);
        d.x.row(i) << 1, a;
        d.w.row(i) << 1, a, b;
        d.c(i) = nd(rng) + 0.5 > 0;
        d.v1(i) = d.c(i) ? 1 + 0.5 * a + nd(rng) : na;
    }
    return d;
}

}  // namespace

TEST_CASE("loglik against a 50-digit term-by-term oracle") {
    namespace bmp = boost::multiprecision;
    using mp = bmp::cpp_bin_float_50;
    const auto d = toy_data();
    const auto t = toy_theta();
    const mp pi = boost::math::constants::pi<mp>();
    auto phi = [&](mp x, mp m, mp s2) { return bmp::exp(-(x - m) * (x - m) / (2 * s2)) / bmp::sqrt(2 * pi * s2); };
    auto Phi = [&](mp z) { return boost::math::erfc(-z / bmp::sqrt(mp(2))) / 2; };
    const mp s2 = t.sigma2, rho = t.rho, nu1 = t.nu1, nu2 = t.nu2, s = bmp::sqrt(s2);
    mp total = 0;
    for (int i = 0; i < 3; ++i) {
        mp m1 = 0, m2 = 0;
        for (int j = 0; j < 2; ++j) m1 += mp(d.x(i, j)) * mp(t.beta(j));
        for (int j = 0; j < 3; ++j) m2 += mp(d.w(i, j)) * mp(t.gamma(j));
        if (d.c(i) == 1) {
            const mp v = d.v1(i);
            const mp f = nu1 * phi(v, m1, s2 / nu2) + (1 - nu1) * phi(v, m1, s2);
            const mp omega = nu1 * phi(v, m1, s2 / nu2) / f;
            const mp mt = m2 + rho / s * (v - m1), st = bmp::sqrt(1 - rho * rho);
            total += bmp::log(f) + bmp::log(omega * Phi(bmp::sqrt(nu2) * mt / st) + (1 - omega) * Phi(mt / st));
        } else {
            total += bmp::log(nu1 * Phi(-bmp::sqrt(nu2) * m2) + (1 - nu1) * Phi(-m2));
        }
    }
    CHECK(std::abs(loglik(t, d, ModelKind::SLcn) - total.convert_to<double>()) <= 1e-13);
}

TEST_CASE("SLcn reduces to SLn at the nu1 boundary") {
    std::mt19937_64 rng(31);
    const auto d = make_data(rng, 200);
    auto t = random_theta(rng, 2, 3);
    const double ln = loglik(t, d, ModelKind::SLn);
    t.nu1 = 1e-12;
    CHECK(std::abs(loglik(t, d, ModelKind::SLcn) - ln) <= 1e-6);
    t.nu1 = 1e-10;
    CHECK(std::abs(loglik(t, d, ModelKind::SLcn) - ln) <= 1e-5);
}

TEST_CASE("rho = 0 factorizes selected contributions") {
    const auto d = toy_data();
    auto t = toy_theta();
    t.rho = 0;
    for (Eigen::Index i : {0, 2}) {
        const double m1 = d.x.row(i).dot(t.beta), m2 = d.w.row(i).dot(t.gamma), v = d.v1(i);
        const double fn = oracle::phi(v, m1, t.sigma2) * oracle::Phi(m2);
        CHECK(unit_loglik(t, d, i, ModelKind::SLn) == doctest::Approx(std::log(fn)).epsilon(1e-14));
        // the CN errors are uncorrelated but share the mixing variable, so only each component factorizes
        const double fcn = t.nu1 * oracle::phi(v, m1, t.sigma2 / t.nu2) * oracle::Phi(std::sqrt(t.nu2) * m2) +
                           (1 - t.nu1) * fn;
        CHECK(unit_loglik(t, d, i, ModelKind::SLcn) == doctest::Approx(std::log(fcn)).epsilon(1e-14));
    }
}

TEST_CASE("loglik errors") {
    auto d = toy_data();
    auto t = toy_theta();
    t.rho = 1.0;
    CHECK_THROWS_AS(loglik(t, d, ModelKind::SLcn), std::domain_error);
    t = toy_theta();
    d.v1(0) = 1e200;  // squared residual overflows to -inf
    try {
        loglik(t, d, ModelKind::SLcn);
        FAIL("expected LikelihoodError");
    } catch (const LikelihoodError& e) {
        CHECK(e.unit == 0);
    }
}

TEST_CASE("data validation") {
    auto d = toy_data();
    CHECK_NOTHROW(d.validate());
    d.v1(0) = na;
    CHECK_THROWS_AS(d.validate(), DataError);
    d = toy_data();
    d.v1(1) = 0.3;
    CHECK_THROWS_AS(d.validate(), DataError);
    d = toy_data();
    d.c(1) = 2;
    CHECK_THROWS_AS(d.validate(), DataError);
}

TEST_CASE("observed outcome density") {
    std::mt19937_64 rng(41);
    std::normal_distribution<double> nd;
    for (int t = 0; t < 100; ++t) {
        const auto th = random_theta(rng, 2, 3);
        const VectorXd xi = (VectorXd(2) << 1, nd(rng)).finished();
        const VectorXd wi = (VectorXd(3) << 1, xi(1), nd(rng)).finished();
        const double m1 = xi.dot(th.beta), m2 = wi.dot(th.gamma), s = th.sigma();
        auto direct = [&](double v) {
            const double delta = (m2 + th.rho / s * (v - m1)) / std::sqrt(1 - th.rho * th.rho);
            const double num = th.nu1 * oracle::phi(v, m1, th.sigma2 / th.nu2) * oracle::Phi(std::sqrt(th.nu2) * delta) +
                               (1 - th.nu1) * oracle::phi(v, m1, th.sigma2) * oracle::Phi(delta);
            return num / (th.nu1 * oracle::Phi(std::sqrt(th.nu2) * m2) + (1 - th.nu1) * oracle::Phi(m2));
        };
        for (double v : {m1 - 2.0, m1, m1 + 1.5}) {
            const double f = observed_outcome_density(v, xi, wi, th);
            CHECK(f >= 0);
            CHECK(f == doctest::Approx(direct(v)).epsilon(1e-12));
        }
        if (t < 30) {
            const double mass =
                oracle::integrate([&](double v) { return observed_outcome_density(v, xi, wi, th); }, -oracle::pinf, oracle::pinf);
            CHECK(std::abs(mass - 1) <= 1e-8);
            const double mean = oracle::integrate([&](double v) { return v * observed_outcome_density(v, xi, wi, th); },
                                                  -oracle::pinf, oracle::pinf);
            CHECK(std::abs(conditional_mean_observed(xi, wi, th) - mean) <= 1e-7);
        }
        // one-unit dataset: log-likelihood = log density + log selection probability
        SelectionData one;
        one.x = xi.transpose();
        one.w = wi.transpose();
        one.v1 = VectorXd::Constant(1, m1 + 0.3);
        one.c = Eigen::VectorXi::Ones(1);
        const double lhs = loglik(th, one, ModelKind::SLcn);
        const double rhs = std::log(observed_outcome_density(m1 + 0.3, xi, wi, th)) + std::log(selection_probability(wi, th));
        CHECK(std::abs(lhs - rhs) <= 1e-12);
    }

    SUBCASE("normal limit") {
        auto th = toy_theta();
        const VectorXd xi = toy_data().x.row(0).transpose(), wi = toy_data().w.row(0).transpose();
        const double m1 = xi.dot(th.beta), m2 = wi.dot(th.gamma), s = th.sigma(), st = std::sqrt(1 - th.rho * th.rho);
        const double v = 0.9;
        const double ref = oracle::phi(v, m1, th.sigma2) * oracle::Phi((m2 + th.rho / s * (v - m1)) / st) / oracle::Phi(m2);
        CHECK(observed_outcome_density(v, xi, wi, th, ModelKind::SLn) == doctest::Approx(ref).epsilon(1e-13));
        th.nu1 = 1e-14;
        CHECK(observed_outcome_density(v, xi, wi, th) == doctest::Approx(ref).epsilon(1e-10));
    }
}

TEST_CASE("lambda_cn and its derivative") {
    CHECK(lambda_cn(0.0, 0.0, 1.0) == doctest::Approx(0.7978845608).epsilon(1e-10));
    CHECK(lambda_cn(0.0, 1e-14, 0.3) == doctest::Approx(0.7978845608).epsilon(1e-10));
    for (double nu1 : {0.0, 0.1, 0.5, 0.9})
        for (double nu2 : {0.05, 0.3, 0.8, 1.0})
            for (double x = -3; x <= 3; x += 0.5) {
                const double h = 1e-6;
                const double fd = (lambda_cn(x + h, nu1, nu2) - lambda_cn(x - h, nu1, nu2)) / (2 * h);
                CHECK(std::abs(lambda_cn_prime(x, nu1, nu2) - fd) <= 1e-5 * std::abs(fd));
            }
    for (double x = -10; x <= 10; x += 0.1) {
        CHECK(lambda_cn(x, 0.3, 0.1) > 0);
        CHECK(std::isfinite(lambda_cn_prime(x, 0.3, 0.1)));
    }

    SUBCASE("expectation identity E[eps1 C]") {
        for (double nu1 : {0.1, 0.4}) {
            for (double nu2 : {0.1, 0.6}) {
                for (double wg : {-1.0, 0.3, 1.7}) {
                    const double rho = 0.6, sigma = 1.2;
                    const auto law = cn_univariate(0.0, 1.0, nu1, nu2);
                    const double lhs =
                        oracle::integrate([&](double e) { return rho * sigma * e * cn_pdf(e, law); }, -wg, oracle::pinf);
                    const double sel = cn_cdf(0.0, cn_univariate(-wg, 1.0, nu1, nu2));
                    CHECK(std::abs(lhs - rho * sigma * lambda_cn(wg, nu1, nu2) * sel) <= 1e-8);
                }
            }
        }
    }
}

TEST_CASE("conditional mean and marginal effects") {
    auto th = toy_theta();
    const VectorXd xi = toy_data().x.row(0).transpose(), wi = toy_data().w.row(0).transpose();
    const double m2 = wi.dot(th.gamma);
    th.rho = 0;
    CHECK(conditional_mean_observed(xi, wi, th) == xi.dot(th.beta));
    th = toy_theta();
    CHECK(conditional_mean_observed(xi, wi, th, ModelKind::SLn) ==
          doctest::Approx(xi.dot(th.beta) + th.rho_star() * oracle::phi(m2) / oracle::Phi(m2)).epsilon(1e-14));

    const double lit = marginal_effect(1, xi, wi, th);
    CHECK(lit == doctest::Approx(th.beta(1) + th.rho_star() * lambda_cn_prime(m2, th.nu1, th.nu2)).epsilon(1e-15));
    const double chain = marginal_effect(1, xi, wi, th, ModelKind::SLcn, MarginalEffect::ChainRule, 1);
    // chain-rule variant is the derivative of the conditional mean in the shared covariate
    const double h = 1e-6;
    VectorXd xp = xi, xm = xi, wp = wi, wm = wi;
    xp(1) += h, wp(1) += h, xm(1) -= h, wm(1) -= h;
    const double fd = (conditional_mean_observed(xp, wp, th) - conditional_mean_observed(xm, wm, th)) / (2 * h);
    CHECK(chain == doctest::Approx(fd).epsilon(1e-7));
    CHECK(marginal_effect(1, xi, wi, th, ModelKind::SLcn, MarginalEffect::ChainRule) == th.beta(1));
    CHECK_THROWS_AS(marginal_effect(5, xi, wi, th), std::out_of_range);
}

TEST_CASE("lambda_curve_export") {
    std::vector<double> grid;
    for (int k = 0; k <= 800; ++k) grid.push_back(-4 + 0.01 * k);
    const auto rows = lambda_curve_export({0.0, 0.1, 0.3, 0.5}, {0.1, 0.3, 0.5, 1.0}, grid);
    CHECK(rows.size() == 16 * grid.size());
    bool found = false;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        CHECK(rows[r].lambda > 0);
        if (rows[r].nu1 == 0 && rows[r].nu2 == 1.0 && std::abs(rows[r].x) < 1e-12) {
            found = true;
            CHECK(rows[r].label == "normal");
            CHECK(rows[r].lambda == doctest::Approx(0.7978846).epsilon(1e-7));
        }
        if (r > 0 && rows[r - 1].nu1 == rows[r].nu1 && rows[r - 1].nu2 == rows[r].nu2) CHECK(rows[r].lambda < rows[r - 1].lambda);
    }
    CHECK(found);
    CHECK_THROWS(lambda_curve_export({}, {0.1}, grid));
}
