// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure.  Each criterion pins its tolerances in code.

#include <chrono>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <helm/cli.hpp>

using namespace helm;

namespace {

const std::string corpus = HELM_CORPUS_DIR;

struct Criterion {
    int id;
    std::string label;
    double time_budget_s;
    std::function<void(std::ostream&)> run;  // throws on failure
};

struct failure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require(bool cond, const std::string& what) {
    if (!cond) throw failure(what);
}

template <typename T>
void require_le(T value, T bound, const std::string& what) {
    if (!(value <= bound)) {
        std::ostringstream os;
        os << what << " (got " << value << ", bound " << bound << ")";
        throw failure(os.str());
    }
}

// ------------------------------------------------------------------ systems

SecondOrderSystem dissipative2d() {
    SymbolEnv env({"x", "y"}, {{"alpha", 0.3}});
    return SecondOrderSystem(env, {parse("x + alpha*dx", env), parse("y + alpha*dy", env)});
}

SecondOrderSystem magnetic() {
    SymbolEnv env({"x", "y"}, {{"alpha", 0.3}, {"beta", 0.5}});
    return SecondOrderSystem(env,
                             {parse("alpha*dx - beta*dy", env), parse("beta*dx + alpha*dy", env)});
}

SecondOrderSystem douglas() {
    SymbolEnv env({"x", "y"});
    return SecondOrderSystem(env, {parse("-dy", env), parse("-y", env)});
}

MultiplierCandidate magnetic_multiplier(const SecondOrderSystem& sys) {
    ExprMat h = expr_mat(2, 2);
    h[0][0] = parse("2*dx/(dx^2+dy^2)", sys.env);
    h[0][1] = parse("2*dy/(dx^2+dy^2)", sys.env);
    h[1][0] = parse("2*dy/(dx^2+dy^2)", sys.env);
    h[1][1] = parse("-2*dx/(dx^2+dy^2)", sys.env);
    return {h};
}

void check_el_identity(const SecondOrderSystem& sys, const LagrangianSO& lag,
                       const MultiplierCandidate& mc, double tol) {
    auto el = euler_lagrange(lag.L, sys.env);
    EquivOptions eopt;
    eopt.tol = tol;
    for (std::size_t i = 0; i < sys.dim(); ++i) {
        std::vector<Expr> parts = {el[i]};
        for (std::size_t j = 0; j < sys.dim(); ++j)
            parts.push_back(mul(mc.entries[i][j], sub(sym(sys.env.accel(j)), sys.forces[j])));
        require(equiv_zero(simplify(sum_of(std::move(parts))), sys.env, eopt),
                "EL(L) + h(q''-f) != 0 in component " + std::to_string(i + 1));
    }
}

// ------------------------------------------------------------------ criteria

void criterion1(std::ostream& log) {
    auto sys = dissipative2d();
    auto found = search_multiplier(sys, Ansatz::scaled_time);
    require(found.found(), "no scaled_time multiplier found");
    const auto& h = found.multiplier->entries;

    // c(t) * identity with c solving c' + alpha c = 0
    require(h[0][1].is_zero() && h[1][0].is_zero(), "multiplier is not diagonal");
    require(h[0][0] == h[1][1], "multiplier is not a scaled identity");
    Expr ode = simplify(add(diff(h[0][0], "t"), mul(sym("alpha"), h[0][0])));
    EquivOptions strict;
    strict.tol = 1e-8;
    require(equiv_zero(ode, sys.env, strict), "time factor does not solve c' + alpha c = 0");

    // the exponent resolution must be documented in the report
    require(found.note.find("c' + a*c = 0") != std::string::npos,
            "report note does not document the transport resolution");
    log << "multiplier note: " << found.note << "  ";

    auto lag = build_lagrangian(sys, *found.multiplier, {});
    check_el_identity(sys, lag, *found.multiplier, 1e-8);
}

void criterion2(std::ostream& log) {
    auto sys = magnetic();
    auto mc = magnetic_multiplier(sys);

    CheckOptions copt;
    copt.tol = 1e-8;
    auto rep = check_multiplier(sys, mc, copt);
    for (const auto& c : rep.conditions)
        require(c.pass, "condition " + c.id + " failed with value " + std::to_string(c.value));

    auto lag = build_lagrangian(sys, mc, {});
    check_el_identity(sys, lag, mc, 1e-8);

    // reference closed form: the homotopy construction applied to this
    // multiplier (the velocity Hessian of the published half-size display is
    // half of it, so the reference carries the factor two)
    Expr Lref =
        parse("dx*ln(dx^2+dy^2) + 2*dy*arctan(dx/dy) + 2*alpha*x - 2*beta*y", sys.env);
    auto el_built = euler_lagrange(lag.L, sys.env);
    auto el_ref = euler_lagrange(Lref, sys.env);
    EquivOptions eopt;
    eopt.tol = 1e-6;
    for (std::size_t i = 0; i < 2; ++i)
        require(equiv_random(el_built[i], el_ref[i], sys.env, eopt),
                "EL(L_built) - EL(L_ref) != 0 in component " + std::to_string(i + 1));

    // the display normalization is exactly half the built one
    Expr Ldisplay =
        parse("dx*ln(dx^2+dy^2)/2 + dy*arctan(dx/dy) + alpha*x - beta*y", sys.env);
    auto el_disp = euler_lagrange(Ldisplay, sys.env);
    for (std::size_t i = 0; i < 2; ++i)
        require(equiv_random(el_built[i], simplify(mul(num(2.0), el_disp[i])), sys.env, eopt),
                "display normalization factor is not 2");
    log << "display EL = built EL / 2 confirmed  ";
}

void criterion3(std::ostream& log) {
    auto sys = douglas();
    for (auto ansatz : {Ansatz::constant, Ansatz::scaled_time, Ansatz::diagonal_functions}) {
        auto res = search_multiplier(sys, ansatz);
        require(!res.found(), std::string("unexpected multiplier in ansatz ") + ansatz_name(ansatz));
        require(res.obstruction.has_value(), "missing obstruction");
        require(res.obstruction->describe() == "alg19 -> h12 = 0; sym11 -> h11 = 0; det h = 0",
                std::string("wrong chain for ") + ansatz_name(ansatz) + ": " +
                    res.obstruction->describe());
    }

    auto B = b_matrix(sys);
    require(B[0][1].is_zero() && B[1][0].is_zero(), "B is not diagonal");
    require(B[0][0].is_zero(), "B11 != 0");
    require(B[1][1].is_number() && std::fabs(std::fabs(B[1][1].number()) - 2.0) < 1e-14,
            "|B22| != 2");
    log << "B = diag(0, " << to_string(B[1][1]) << ")  ";
}

void criterion4(std::ostream&) {
    auto sys = magnetic();
    auto res = search_multiplier(sys, Ansatz::constant);
    require(!res.basis_alg19.empty(), "empty algebraic solution space");
    require(res.basis_alg19.size() == 2, "algebraic solution space should have dimension 2");
    for (const auto& b : res.basis_alg19)
        require_le(std::fabs(b(0, 0) + b(1, 1)), 1e-13, "basis member is not traceless");
}

void criterion5(std::ostream& log) {
    auto fos = reduce_to_first_order(douglas());
    auto fm = std::make_shared<FlowMap>(fos, FlowSettings{1e-3});
    FirstOrderAction action(fm, SymplecticSeed::canonical(4));

    FirstOrderCheckOptions copt;
    copt.samples = 8;
    copt.tol = 1e-5;
    copt.horizon = 1.0;
    auto rep = check_first_order_conditions(action.probe(), copt);
    for (const auto& c : rep.conditions)
        require(c.pass, "condition " + c.id + " failed with value " + std::to_string(c.value));

    CertifyOptions certopt;
    certopt.trajectories = 1;
    certopt.grid_dt = 0.01;
    auto cert = certify(subject_of(action), certopt);
    require_le(cert.max_residual, 1e-4, "on-solution residual too large");
    require(cert.order.has_value(), "no convergence order measured");
    require(std::fabs(*cert.order - 2.0) <= 0.3,
            "convergence order " + std::to_string(*cert.order) + " outside 2.0 +- 0.3");
    log << "residual " << cert.max_residual << ", order " << *cert.order << "  ";
}

void criterion6(std::ostream& log) {
    auto seed2 = SymplecticSeed::canonical(2);
    std::vector<double> grid;
    for (int i = 0; i <= 100; ++i) grid.push_back(0.01 * i);

    SymbolEnv env({"q", "p"});
    ExprMat A = expr_mat(2, 2);
    A[0][1] = num(1.0);
    A[1][0] = num(-1.0);
    LinearSystem osc(env, A, {num(0.0), num(0.0)});
    auto qa = quadratic_action(osc, seed2, grid);
    for (std::size_t k = 0; k < grid.size(); ++k) {
        Mat diffm = qa.omega_table()[k] - seed2.omega0;
        require_le(diffm.max_abs(), 1e-8, "Omega(t) deviates from the seed");
        Mat bplus = qa.b_table()[k] + Mat::identity(2);
        require_le(bplus.max_abs(), 1e-8, "B != -identity");
        require_le(std::fabs(qa.c_table()[k][0]) + std::fabs(qa.c_table()[k][1]), 1e-12,
                   "C != 0");
    }
    auto cert = certify(subject_of(qa, osc));
    require_le(cert.max_residual, 1e-4, "oscillator certification failed");

    // random constant 4x4 system with constant drive
    auto rng = point_rng(2026, 0);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    SymbolEnv env4({"x1", "x2", "x3", "x4"});
    ExprMat A4 = expr_mat(4, 4);
    std::vector<Expr> j4;
    for (auto& row : A4)
        for (auto& e : row) e = num(dist(rng));
    for (int i = 0; i < 4; ++i) j4.push_back(num(dist(rng)));
    LinearSystem lin4(env4, A4, j4);
    auto qa4 = quadratic_action(lin4, SymplecticSeed::canonical(4), grid);
    for (const auto& B : qa4.b_table()) {
        Mat asym = B - B.transposed();
        require_le(asym.max_abs(), 1e-10, "B(t) is not symmetric");
    }
    auto cert4 = certify(subject_of(qa4, lin4));
    require_le(cert4.max_residual, 1e-4, "4x4 certification failed");
    log << "residuals " << cert.max_residual << " / " << cert4.max_residual << "  ";
}

void criterion7(std::ostream& log) {
    // raw oscillator equations vs their seed-multiplied form, ten seeds
    double worst_mult = 0.0, best_raw = std::numeric_limits<double>::infinity();
    for (int s = 0; s < 10; ++s) {
        auto rng = point_rng(300 + s, 0);
        std::uniform_real_distribution<double> dist(-1.5, 1.5);
        double q0 = dist(rng), p0 = dist(rng);
        if (std::fabs(q0) + std::fabs(p0) < 0.2) q0 += 0.5;

        DiscreteTrajectory traj;
        traj.dt = 1e-2;
        for (int k = 0; k <= 100; ++k) {
            double t = traj.dt * k;
            traj.states.push_back(
                {q0 * std::cos(t) + p0 * std::sin(t), -q0 * std::sin(t) + p0 * std::cos(t)});
        }

        EquationStencil raw = [](double, std::span<const double> xm, std::span<const double> x0,
                                 std::span<const double> xp, double dt) {
            return std::vector<double>{(xp[0] - xm[0]) / (2 * dt) - x0[1],
                                       (xp[1] - xm[1]) / (2 * dt) + x0[0]};
        };
        EquationStencil mult = [](double, std::span<const double> xm, std::span<const double> x0,
                                  std::span<const double> xp, double dt) {
            double g0 = (xp[0] - xm[0]) / (2 * dt) - x0[1];
            double g1 = (xp[1] - xm[1]) / (2 * dt) + x0[0];
            return std::vector<double>{g1, -g0};
        };
        best_raw = std::min(best_raw, helmholtz_asymmetry(raw, 2, traj));
        worst_mult = std::max(worst_mult, helmholtz_asymmetry(mult, 2, traj));
    }
    require(best_raw > 0.1, "raw asymmetry too small: " + std::to_string(best_raw));
    require_le(worst_mult, 1e-6, "multiplied form is not self-adjoint");
    log << "raw >= " << best_raw << ", multiplied <= " << worst_mult << "  ";
}

void criterion8(std::ostream& log) {
    // total-derivative invariance with F = t q
    SymbolEnv env({"q"});
    SecondOrderSystem sys(env, {parse("-q", env)});
    MultiplierCandidate mc{expr_identity(1)};
    auto lag = build_lagrangian(sys, mc, {});
    LagrangianSO shifted = lag;
    shifted.L = simplify(add(lag.L, parse("q + t*dq", env)));
    auto r1 = certify(subject_of(lag, sys, mc));
    auto r2 = certify(subject_of(shifted, sys, mc));
    require_le(std::fabs(r1.max_residual - r2.max_residual), 1e-10,
               "gauge term moved the on-solution residual");
    require_le(std::fabs(r1.match_residual - r2.match_residual), 1e-10,
               "gauge term moved the matching residual");

    // two seeds, coinciding residual zero sets on ten solution trajectories
    SymbolEnv env2({"q", "p"});
    ExprMat A = expr_mat(2, 2);
    A[0][1] = num(1.0);
    A[1][0] = num(-1.0);
    LinearSystem osc(env2, A, {num(0.0), num(0.0)});
    std::vector<double> grid;
    for (int i = 0; i <= 100; ++i) grid.push_back(0.01 * i);
    Mat other(2, 2);
    other(0, 1) = 2.0;
    other(1, 0) = -2.0;
    auto qa1 = quadratic_action(osc, SymplecticSeed::canonical(2), grid);
    auto qa2 = quadratic_action(osc, SymplecticSeed(other), grid);
    auto s1 = subject_of(qa1, osc);
    auto s2 = subject_of(qa2, osc);

    for (int i = 0; i < 10; ++i) {
        auto rng = point_rng(500 + i, 0);
        SampleBox box;
        std::vector<double> x0 = {box.draw(rng), box.draw(rng)};
        auto traj = s1.make_trajectory(x0, 1.0, 1e-3);

        double on1 = 0.0, on2 = 0.0;
        for (const auto& r : discrete_variational_derivative(s1.action, traj))
            for (double v : r) on1 = std::max(on1, std::fabs(v));
        for (const auto& r : discrete_variational_derivative(s2.action, traj))
            for (double v : r) on2 = std::max(on2, std::fabs(v));
        require_le(on1, 1e-6, "seed 1 residual nonzero on a solution");
        require_le(on2, 1e-6, "seed 2 residual nonzero on a solution");

        // off the solution both must move off zero
        DiscreteTrajectory pert = traj;
        for (std::size_t k = 0; k < pert.points(); ++k) {
            double w = std::sin(M_PI * pert.time(k) / 1.0);
            pert.states[k][0] += 1e-2 * w * w;
        }
        double off1 = 0.0, off2 = 0.0;
        for (const auto& r : discrete_variational_derivative(s1.action, pert))
            for (double v : r) off1 = std::max(off1, std::fabs(v));
        for (const auto& r : discrete_variational_derivative(s2.action, pert))
            for (double v : r) off2 = std::max(off2, std::fabs(v));
        require(off1 > 1e-4 && off2 > 1e-4, "perturbed residuals did not move off zero");
    }
    log << "10 trajectories, zero sets agree  ";
}

void criterion9(std::ostream& log) {
    SymbolEnv env({"q"}, {{"alpha", 0.4}});
    SecondOrderSystem sys(env, {parse("alpha*dq + q", env)});
    const char* seeds_h0[] = {"1", "1 + q^2/4", "1 + dq^2/8"};
    double worst = 0.0;
    for (const char* h0 : seeds_h0) {
        auto field = solve_1d_multiplier(sys, parse(h0, env), 1e-3);
        auto rep = check_field_1d(sys, field);
        for (const auto& c : rep.conditions)
            require(c.pass, std::string("condition ") + c.id + " failed for h0 = " + h0);
        worst = std::max(worst, rep.find("sym11").value);
    }
    // transport residual is first order in the characteristic step
    require_le(worst, 1e-4, "transport residual is not O(step)");
    log << "max transport residual " << worst << "  ";
}

}  // namespace

int main() {
    std::vector<Criterion> criteria = {
        {1, "dissipative reconstruction (scaled-time multiplier, EL identity)", 5.0, criterion1},
        {2, "magnetic-friction verification and Lagrangian equivalence", 10.0, criterion2},
        {3, "obstruction chain and B matrix for the no-multiplier system", 2.0, criterion3},
        {4, "trace condition from the algebraic reduction", 2.0, criterion4},
        {5, "first-order universality on the reduced 4-D system", 30.0, criterion5},
        {6, "quadratic theory closed forms and certification", 10.0, criterion6},
        {7, "self-adjointness discrimination", 10.0, criterion7},
        {8, "gauge and seed equivalence", 20.0, criterion8},
        {9, "one-dimensional transport solvability", 10.0, criterion9},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        auto start = std::chrono::steady_clock::now();
        std::ostringstream note;
        std::string verdict = "PASS";
        std::string detail;
        try {
            c.run(note);
        } catch (const std::exception& e) {
            verdict = "FAIL";
            detail = e.what();
            ++failures;
        }
        double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (verdict == "PASS" && secs >= c.time_budget_s) {
            verdict = "FAIL";
            detail = "runtime " + std::to_string(secs) + "s exceeds budget";
            ++failures;
        }
        std::cout << "[" << verdict << "] criterion " << c.id << ": " << c.label << " ("
                  << std::fixed << std::setprecision(2) << secs << "s)";
        if (!note.str().empty()) std::cout << " -- " << note.str();
        if (!detail.empty()) std::cout << " -- " << detail;
        std::cout << std::endl;
    }
    return failures == 0 ? 0 : 1;
}
