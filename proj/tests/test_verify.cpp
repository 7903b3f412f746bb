#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <helm/verify.hpp>

using namespace helm;

namespace {

DiscreteTrajectory sampled(double dt, std::size_t K, std::size_t N,
                           const std::function<std::vector<double>(double)>& f) {
    DiscreteTrajectory traj;
    traj.dt = dt;
    for (std::size_t k = 0; k < K; ++k) traj.states.push_back(f(dt * k));
    (void)N;
    return traj;
}

DiscreteAction oscillator_action_so() {
    // L = v^2/2 - x^2/2
    DiscreteAction a;
    a.dim = 1;
    a.value = [](double, std::span<const double> x, std::span<const double> v) {
        return 0.5 * v[0] * v[0] - 0.5 * x[0] * x[0];
    };
    a.grad_x = [](double, std::span<const double> x, std::span<const double>) {
        return std::vector<double>{-x[0]};
    };
    a.grad_v = [](double, std::span<const double>, std::span<const double> v) {
        return std::vector<double>{v[0]};
    };
    return a;
}

QuadraticAction oscillator_quadratic() {
    SymbolEnv env({"q", "p"});
    ExprMat A = expr_mat(2, 2);
    A[0][1] = num(1.0);
    A[1][0] = num(-1.0);
    LinearSystem lin(env, A, {num(0.0), num(0.0)});
    std::vector<double> grid;
    for (int i = 0; i <= 10; ++i) grid.push_back(0.1 * i);
    return quadratic_action(lin, SymplecticSeed::canonical(2), grid);
}

LinearSystem oscillator_linear() {
    SymbolEnv env({"q", "p"});
    ExprMat A = expr_mat(2, 2);
    A[0][1] = num(1.0);
    A[1][0] = num(-1.0);
    return LinearSystem(env, A, {num(0.0), num(0.0)});
}

}  // namespace

TEST_CASE("discrete variational derivative: free particle on a straight line is exact") {
    DiscreteAction a;
    a.dim = 1;
    a.value = [](double, std::span<const double>, std::span<const double> v) {
        return 0.5 * v[0] * v[0];
    };
    a.grad_x = [](double, std::span<const double>, std::span<const double>) {
        return std::vector<double>{0.0};
    };
    a.grad_v = [](double, std::span<const double>, std::span<const double> v) {
        return std::vector<double>{v[0]};
    };
    auto traj = sampled(0.05, 41, 1, [](double t) { return std::vector<double>{0.3 + 1.7 * t}; });
    for (const auto& r : discrete_variational_derivative(a, traj))
        CHECK(std::fabs(r[0]) < 1e-12);  // zero up to grid-arithmetic roundoff
}

TEST_CASE("discrete variational derivative: oscillator solution at dt=1e-2 stays under 1e-3") {
    auto a = oscillator_action_so();
    auto traj = sampled(1e-2, 101, 1, [](double t) { return std::vector<double>{std::cos(t)}; });
    double worst = 0.0;
    for (const auto& r : discrete_variational_derivative(a, traj))
        worst = std::max(worst, std::fabs(r[0]));
    CHECK(worst < 1e-3);
    CHECK(worst > 0.0);
}

TEST_CASE("discrete variational derivative: first-order oscillator action on (cos, -sin)") {
    auto qa = oscillator_quadratic();
    DiscreteAction a;
    a.dim = 2;
    a.value = [&](double t, std::span<const double> x, std::span<const double> v) {
        return qa.lagrangian(t, x, v);
    };
    a.grad_x = [&](double t, std::span<const double> x, std::span<const double> v) {
        return qa.grad_x(t, x, v);
    };
    a.grad_v = [&](double t, std::span<const double> x, std::span<const double>) {
        return qa.grad_v(t, x);
    };
    auto traj = sampled(1e-2, 101, 2, [](double t) {
        return std::vector<double>{std::cos(t), -std::sin(t)};
    });
    double worst = 0.0;
    for (const auto& r : discrete_variational_derivative(a, traj))
        for (double v : r) worst = std::max(worst, std::fabs(v));
    CHECK(worst < 1e-3);

    // halving the grid divides the residual by about four
    auto traj2 = sampled(5e-3, 201, 2, [](double t) {
        return std::vector<double>{std::cos(t), -std::sin(t)};
    });
    double worst2 = 0.0;
    for (const auto& r : discrete_variational_derivative(a, traj2))
        for (double v : r) worst2 = std::max(worst2, std::fabs(v));
    double order = std::log2(worst / worst2);
    CHECK(order == doctest::Approx(2.0).epsilon(0.2));
}

TEST_CASE("trajectory validation") {
    DiscreteTrajectory bad;
    bad.dt = 0.1;
    bad.states = {{1.0}, {2.0}};
    CHECK_THROWS_AS(bad.validate(), error);
    bad.states = {{1.0}, {2.0}, {std::numeric_limits<double>::infinity()}};
    CHECK_THROWS_AS(bad.validate(), error);
}

TEST_CASE("helmholtz asymmetry separates raw from multiplied first-order equations") {
    auto traj = sampled(1e-2, 101, 2, [](double t) {
        return std::vector<double>{std::cos(t), -std::sin(t)};
    });

    // raw equations x' - f: not self-adjoint
    EquationStencil raw = [](double, std::span<const double> xm, std::span<const double> x0,
                             std::span<const double> xp, double dt) {
        std::vector<double> g(2);
        g[0] = (xp[0] - xm[0]) / (2 * dt) - x0[1];
        g[1] = (xp[1] - xm[1]) / (2 * dt) + x0[0];
        return g;
    };
    CHECK(helmholtz_asymmetry(raw, 2, traj) > 0.1);

    // multiplied by the canonical seed: self-adjoint
    EquationStencil mult = [](double, std::span<const double> xm, std::span<const double> x0,
                              std::span<const double> xp, double dt) {
        double g0 = (xp[0] - xm[0]) / (2 * dt) - x0[1];
        double g1 = (xp[1] - xm[1]) / (2 * dt) + x0[0];
        return std::vector<double>{g1, -g0};  // Omega0 (x' - f)
    };
    CHECK(helmholtz_asymmetry(mult, 2, traj) < 1e-6);
}

TEST_CASE("helmholtz asymmetry of genuine Euler-Lagrange equations vanishes") {
    // second differences of L = v^2/2 - x^2/2
    EquationStencil el = [](double, std::span<const double> xm, std::span<const double> x0,
                            std::span<const double> xp, double dt) {
        double qdd = (xp[0] - 2 * x0[0] + xm[0]) / (dt * dt);
        return std::vector<double>{-(qdd + x0[0])};
    };
    auto traj = sampled(1e-2, 51, 1, [](double t) { return std::vector<double>{std::cos(t)}; });
    CHECK(helmholtz_asymmetry(el, 1, traj) < 1e-6);
}

TEST_CASE("certify: quadratic oscillator action passes at 1e-4") {
    auto qa = oscillator_quadratic();
    auto subject = subject_of(qa, oscillator_linear());
    CertifyOptions opt;
    auto rep = certify(subject, opt);
    CHECK(rep.max_residual < 1e-4);
    CHECK(rep.match_residual < 1e-3);
    CHECK(rep.helmholtz < 1e-5);
    REQUIRE(rep.order.has_value());
    CHECK(*rep.order == doctest::Approx(2.0).epsilon(0.15));
}

TEST_CASE("certify: dissipative reconstruction passes") {
    SymbolEnv env({"x", "y"}, {{"alpha", 0.3}});
    SecondOrderSystem sys(env, {parse("x + alpha*dx", env), parse("y + alpha*dy", env)});
    auto found = search_multiplier(sys, Ansatz::scaled_time);
    REQUIRE(found.found());
    auto lag = build_lagrangian(sys, *found.multiplier, {});
    auto subject = subject_of(lag, sys, *found.multiplier);
    auto rep = certify(subject);
    CHECK(rep.max_residual < 1e-4);
    CHECK(rep.match_residual < 1e-3);
    REQUIRE(rep.order.has_value());
    CHECK(*rep.order == doctest::Approx(2.0).epsilon(0.15));
}

TEST_CASE("certify: corrupted action fails with residual near the gradient magnitude") {
    auto qa = oscillator_quadratic();
    auto lin = oscillator_linear();
    auto subject = subject_of(qa, lin);
    // double H: gradients acquire an extra Bx + C
    auto q = std::make_shared<QuadraticAction>(qa);
    subject.action.value = [q](double t, std::span<const double> x, std::span<const double> v) {
        Mat B = q->b_at_time(t);
        double extra = 0.0;
        for (std::size_t a = 0; a < 2; ++a)
            for (std::size_t b = 0; b < 2; ++b) extra -= 0.5 * x[a] * B(a, b) * x[b];
        return q->lagrangian(t, x, v) + extra;
    };
    subject.action.grad_x = [q](double t, std::span<const double> x, std::span<const double> v) {
        auto g = q->grad_x(t, x, v);
        Mat B = q->b_at_time(t);
        for (std::size_t a = 0; a < 2; ++a)
            for (std::size_t b = 0; b < 2; ++b) g[a] -= B(a, b) * x[b];
        return g;
    };
    CertifyOptions opt;
    opt.estimate_order = false;
    auto rep = certify(subject, opt);
    CHECK(rep.max_residual > 0.05);
    // |grad of the injected H| = |B x| with B = -I, |x| <= 2 sqrt(2) on the box
    CHECK(rep.max_residual < 10.0);
}

TEST_CASE("certify is deterministic given the seed") {
    auto qa = oscillator_quadratic();
    auto subject = subject_of(qa, oscillator_linear());
    auto a = certify(subject);
    auto b = certify(subject);
    CHECK(a.max_residual == b.max_residual);
    CHECK(a.match_residual == b.match_residual);
    CHECK(a.helmholtz == b.helmholtz);
    CHECK(*a.order == *b.order);
}

TEST_CASE("total-derivative invariance: adding dF/dt with F = t*q leaves residuals unchanged") {
    SymbolEnv env({"q"});
    SecondOrderSystem sys(env, {parse("-q", env)});
    MultiplierCandidate mc{expr_identity(1)};
    auto lag = build_lagrangian(sys, mc, {});

    LagrangianSO shifted = lag;
    shifted.L = simplify(add(lag.L, parse("q + t*dq", env)));

    auto r1 = certify(subject_of(lag, sys, mc));
    auto r2 = certify(subject_of(shifted, sys, mc));
    CHECK(std::fabs(r1.max_residual - r2.max_residual) < 1e-10);
    CHECK(std::fabs(r1.match_residual - r2.match_residual) < 1e-10);
}

TEST_CASE("certify: flow-built first-order action on the oscillator") {
    SymbolEnv env({"q", "p"});
    FirstOrderSystem osc(env, {parse("p", env), parse("-q", env)});
    auto fm = std::make_shared<FlowMap>(osc);
    FirstOrderAction action(fm, SymplecticSeed::canonical(2));
    auto subject = subject_of(action);
    CertifyOptions opt;
    opt.trajectories = 1;
    opt.grid_dt = 0.02;
    opt.horizon = 0.6;
    auto rep = certify(subject, opt);
    CHECK(rep.max_residual < 1e-4);
    CHECK(rep.match_residual < 1e-3);
    REQUIRE(rep.order.has_value());
    CHECK(*rep.order == doctest::Approx(2.0).epsilon(0.2));
}

TEST_CASE("gauge invariance: polynomial gauge does not move the residual zero set") {
    SymbolEnv env({"q", "p"});
    FirstOrderSystem osc(env, {parse("p", env), parse("-q", env)});
    auto fm = std::make_shared<FlowMap>(osc);
    FirstOrderAction plain(fm, SymplecticSeed::canonical(2));
    FirstOrderActionOptions gopt;
    gopt.gauge = parse("t*(q + p)", env);
    FirstOrderAction gauged(fm, SymplecticSeed::canonical(2), gopt);

    CertifyOptions opt;
    opt.trajectories = 1;
    opt.grid_dt = 0.02;
    opt.horizon = 0.6;
    opt.estimate_order = false;
    auto r1 = certify(subject_of(plain), opt);
    auto r2 = certify(subject_of(gauged), opt);
    CHECK(std::fabs(r1.max_residual - r2.max_residual) < 1e-9);
    CHECK(std::fabs(r1.match_residual - r2.match_residual) < 1e-9);
}
