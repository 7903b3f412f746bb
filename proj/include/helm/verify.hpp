#pragma once

// Independent numeric certification.  The action is discretized with the
// midpoint rule,
//   S = sum_k L(t_k + dt/2, (x_k + x_{k+1})/2, (x_{k+1} - x_k)/dt) dt,
// and differentiated in closed form with respect to interior grid points;
// the result is second-order accurate in dt.  On solution trajectories it
// must vanish; on perturbed ones it must match the multiplied equations.

#include "first_order.hpp"
#include "second_order.hpp"

namespace helm {

// ---------------------------------------------------------------- trajectories

struct DiscreteTrajectory {
    double t0 = 0.0;
    double dt = 0.0;
    std::vector<std::vector<double>> states;

    std::size_t points() const { return states.size(); }
    std::size_t dim() const { return states.empty() ? 0 : states.front().size(); }
    double time(std::size_t k) const { return t0 + dt * static_cast<double>(k); }

    void validate() const {
        if (dt <= 0.0) throw error("trajectory step must be positive");
        if (points() < 3) throw error("trajectory needs at least 3 points");
        for (const auto& s : states)
            for (double v : s)
                if (!std::isfinite(v)) throw error("trajectory state is not finite");
    }
};

// ---------------------------------------------------------------- action interface

/// Closed-form partials of a Lagrangian L(t, x, x'), however it is backed.
struct DiscreteAction {
    std::size_t dim = 0;
    std::function<double(double, std::span<const double>, std::span<const double>)> value;
    std::function<std::vector<double>(double, std::span<const double>, std::span<const double>)>
        grad_x;
    std::function<std::vector<double>(double, std::span<const double>, std::span<const double>)>
        grad_v;
};

/// Discrete equation residual on the three-point stencil around t_k.
using EquationStencil = std::function<std::vector<double>(
    double, std::span<const double>, std::span<const double>, std::span<const double>, double)>;

/// delta S / delta x at the interior grid points (per-point N-vectors),
/// normalized as a density (divided by dt).
inline std::vector<std::vector<double>> discrete_variational_derivative(
    const DiscreteAction& action, const DiscreteTrajectory& traj) {
    traj.validate();
    std::size_t K = traj.points(), N = traj.dim();
    if (N != action.dim) throw error("action dimension does not match trajectory");

    // per-segment midpoint gradients
    std::vector<std::vector<double>> gx(K - 1), gv(K - 1);
    std::vector<double> xm(N), vm(N);
    for (std::size_t k = 0; k + 1 < K; ++k) {
        for (std::size_t i = 0; i < N; ++i) {
            xm[i] = 0.5 * (traj.states[k][i] + traj.states[k + 1][i]);
            vm[i] = (traj.states[k + 1][i] - traj.states[k][i]) / traj.dt;
        }
        double tm = traj.time(k) + 0.5 * traj.dt;
        gx[k] = action.grad_x(tm, xm, vm);
        gv[k] = action.grad_v(tm, xm, vm);
    }

    std::vector<std::vector<double>> out;
    out.reserve(K - 2);
    for (std::size_t k = 1; k + 1 < K; ++k) {
        std::vector<double> r(N);
        for (std::size_t i = 0; i < N; ++i)
            r[i] = 0.5 * (gx[k][i] + gx[k - 1][i]) - (gv[k][i] - gv[k - 1][i]) / traj.dt;
        out.push_back(std::move(r));
    }
    return out;
}

// ---------------------------------------------------------------- helmholtz asymmetry

/// Finite-difference estimate of the asymmetry of the discrete functional
/// derivative matrix d g_a(t_k) / d x_b(t_l), aggregated over the band
/// |k - l| <= 1 where the stencil couples.
inline double helmholtz_asymmetry(const EquationStencil& g, std::size_t gdim,
                                  const DiscreteTrajectory& traj, double eps = 1e-6) {
    traj.validate();
    std::size_t K = traj.points(), N = traj.dim();

    auto eval_g = [&](std::size_t k, const std::vector<std::vector<double>>& st) {
        return g(traj.time(k), st[k - 1], st[k], st[k + 1], traj.dt);
    };
    // dG[a at k] / dx[b at l]
    auto fd = [&](std::size_t k, std::size_t b, std::size_t l) {
        std::vector<std::vector<double>> st = traj.states;
        st[l][b] += eps;
        auto plus = eval_g(k, st);
        st[l][b] -= 2 * eps;
        auto minus = eval_g(k, st);
        std::vector<double> d(gdim);
        for (std::size_t a = 0; a < gdim; ++a) d[a] = (plus[a] - minus[a]) / (2 * eps);
        return d;
    };

    double worst = 0.0;
    for (std::size_t k = 1; k + 1 < K; ++k) {
        for (std::size_t l = (k >= 2 ? k - 1 : 1); l <= k + 1 && l + 1 < K; ++l) {
            for (std::size_t b = 0; b < N; ++b) {
                auto dgk = fd(k, b, l);
                for (std::size_t a = 0; a < gdim; ++a) {
                    auto dgl = fd(l, a, k);
                    worst = std::max(worst, std::fabs(dgk[a] - dgl[b]));
                }
            }
        }
    }
    return worst;
}

// ---------------------------------------------------------------- certification

struct CertifyOptions {
    int trajectories = 3;
    std::uint64_t seed = 42;
    double horizon = 1.0;
    double grid_dt = 0.01;   // discrete-action grid step
    double flow_dt = 1e-3;   // trajectory integration substep
    double bump = 1e-2;      // off-solution perturbation amplitude
    SampleBox box{};
    bool estimate_order = true;
};

struct VerificationReport {
    double max_residual = 0.0;    // on-solution discrete EL residual
    double match_residual = 0.0;  // |delta S - multiplied equations| off solution
    double helmholtz = 0.0;       // asymmetry norm of the multiplied equations
    std::optional<double> order;  // measured convergence order under grid halving
};

/// What certification needs to know about an action/system pair.  The
/// trajectory factory integrates the full internal state (phase space for
/// second-order systems) and records the action's configuration variables.
struct CertifySubject {
    std::size_t dim = 0;        // configuration dimension of the action
    std::size_t state_dim = 0;  // dimension of sampled initial data
    DiscreteAction action;
    EquationStencil multiplied_equations;  // target residual of the dynamics
    std::function<DiscreteTrajectory(std::span<const double>, double, double)> make_trajectory;
};

namespace detail {

inline double max_norm(const std::vector<std::vector<double>>& rows) {
    double m = 0.0;
    for (const auto& r : rows)
        for (double v : r) m = std::max(m, std::fabs(v));
    return m;
}

inline DiscreteTrajectory perturb(const DiscreteTrajectory& traj, double amp,
                                  std::uint64_t seed) {
    auto rng = point_rng(seed, 77);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<double> dir(traj.dim());
    double norm = 0.0;
    for (auto& v : dir) {
        v = dist(rng);
        norm += v * v;
    }
    norm = std::sqrt(norm);
    DiscreteTrajectory out = traj;
    double T = traj.dt * (traj.points() - 1);
    for (std::size_t k = 0; k < traj.points(); ++k) {
        double w = std::sin(M_PI * (traj.time(k) - traj.t0) / T);
        double b = amp * w * w;
        for (std::size_t i = 0; i < traj.dim(); ++i) out.states[k][i] += b * dir[i] / norm;
    }
    return out;
}

inline double on_solution_residual(const CertifySubject& s, const DiscreteTrajectory& traj) {
    return max_norm(discrete_variational_derivative(s.action, traj));
}

}  // namespace detail

/// Integrate seeded random trajectories of the system, check that the
/// discrete variational derivative of the action vanishes along them, and
/// that it reproduces the multiplied equations on perturbed trajectories.
inline VerificationReport certify(const CertifySubject& subject, const CertifyOptions& opt = {}) {
    VerificationReport rep;
    DiscreteTrajectory first;
    for (int i = 0; i < opt.trajectories; ++i) {
        auto rng = point_rng(opt.seed, 200 + i);
        std::vector<double> x0(subject.state_dim);
        for (auto& v : x0) v = opt.box.draw(rng);
        DiscreteTrajectory traj = subject.make_trajectory(x0, opt.horizon, opt.grid_dt);
        if (i == 0) first = traj;
        rep.max_residual = std::max(rep.max_residual, detail::on_solution_residual(subject, traj));

        // perturbed trajectory: residual must track the multiplied equations
        DiscreteTrajectory pert = detail::perturb(traj, opt.bump, opt.seed + i);
        auto dvar = discrete_variational_derivative(subject.action, pert);
        for (std::size_t k = 1; k + 1 < pert.points(); ++k) {
            auto target = subject.multiplied_equations(pert.time(k), pert.states[k - 1],
                                                       pert.states[k], pert.states[k + 1], pert.dt);
            for (std::size_t a = 0; a < subject.dim; ++a)
                rep.match_residual =
                    std::max(rep.match_residual, std::fabs(dvar[k - 1][a] - target[a]));
        }
    }

    rep.helmholtz = helmholtz_asymmetry(subject.multiplied_equations, subject.dim, first);

    if (opt.estimate_order) {
        auto rng = point_rng(opt.seed, 200);
        std::vector<double> x0(subject.state_dim);
        for (auto& v : x0) v = opt.box.draw(rng);
        DiscreteTrajectory coarse = subject.make_trajectory(x0, opt.horizon, opt.grid_dt);
        DiscreteTrajectory fine = subject.make_trajectory(x0, opt.horizon, opt.grid_dt / 2);
        double rc = detail::on_solution_residual(subject, coarse);
        double rf = detail::on_solution_residual(subject, fine);
        if (rf > 0.0 && rc > 0.0) rep.order = std::log2(rc / rf);
    }
    return rep;
}

// ---------------------------------------------------------------- adapters

/// Discrete action of a (symbolic or quadrature-backed) second-order
/// Lagrangian.
inline DiscreteAction action_of(const LagrangianSO& lag, const SecondOrderSystem& sys) {
    DiscreteAction a;
    std::size_t n = sys.dim();
    a.dim = n;
    if (lag.numeric) {
        a.value = lag.value;
        a.grad_x = [g = lag.grad_q, n](double t, std::span<const double> x,
                                       std::span<const double> v) {
            std::vector<double> out(n);
            for (std::size_t i = 0; i < n; ++i) out[i] = g(t, x, v, i);
            return out;
        };
        a.grad_v = [g = lag.grad_v, n](double t, std::span<const double> x,
                                       std::span<const double> v) {
            std::vector<double> out(n);
            for (std::size_t i = 0; i < n; ++i) out[i] = g(t, x, v, i);
            return out;
        };
        return a;
    }
    std::vector<std::string> lay = {"t"};
    for (std::size_t i = 0; i < n; ++i) lay.push_back(sys.env.coordinate(i));
    for (std::size_t i = 0; i < n; ++i) lay.push_back(sys.env.velocity(i));
    auto val = std::make_shared<Program>(lag.L, lay, sys.env);
    auto gx = std::make_shared<std::vector<Program>>();
    auto gv = std::make_shared<std::vector<Program>>();
    for (std::size_t i = 0; i < n; ++i) {
        gx->emplace_back(diff(lag.L, sys.env.coordinate(i)), lay, sys.env);
        gv->emplace_back(diff(lag.L, sys.env.velocity(i)), lay, sys.env);
    }
    auto pack = [n](double t, std::span<const double> x, std::span<const double> v) {
        std::vector<double> pt(1 + 2 * n);
        pt[0] = t;
        for (std::size_t i = 0; i < n; ++i) pt[1 + i] = x[i];
        for (std::size_t i = 0; i < n; ++i) pt[1 + n + i] = v[i];
        return pt;
    };
    a.value = [val, pack](double t, std::span<const double> x, std::span<const double> v) {
        return val->run(pack(t, x, v));
    };
    a.grad_x = [gx, pack, n](double t, std::span<const double> x, std::span<const double> v) {
        auto pt = pack(t, x, v);
        std::vector<double> out(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = (*gx)[i].run(pt);
        return out;
    };
    a.grad_v = [gv, pack, n](double t, std::span<const double> x, std::span<const double> v) {
        auto pt = pack(t, x, v);
        std::vector<double> out(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = (*gv)[i].run(pt);
        return out;
    };
    return a;
}

/// Equation stencil -h (q'' - f) with accelerations by second differences.
inline EquationStencil multiplied_equations_of(const SecondOrderSystem& sys,
                                               const MultiplierCandidate& mc) {
    std::size_t n = sys.dim();
    std::vector<std::string> lay = {"t"};
    for (std::size_t i = 0; i < n; ++i) lay.push_back(sys.env.coordinate(i));
    for (std::size_t i = 0; i < n; ++i) lay.push_back(sys.env.velocity(i));
    auto hp = std::make_shared<std::vector<Program>>();
    auto fp = std::make_shared<std::vector<Program>>();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) hp->emplace_back(mc.entries[i][j], lay, sys.env);
    for (std::size_t i = 0; i < n; ++i) fp->emplace_back(sys.forces[i], lay, sys.env);
    return [hp, fp, n](double t, std::span<const double> xm, std::span<const double> x0,
                       std::span<const double> xp, double dt) {
        std::vector<double> pt(1 + 2 * n);
        pt[0] = t;
        for (std::size_t i = 0; i < n; ++i) pt[1 + i] = x0[i];
        for (std::size_t i = 0; i < n; ++i) pt[1 + n + i] = (xp[i] - xm[i]) / (2 * dt);
        std::vector<double> residual(n);
        for (std::size_t i = 0; i < n; ++i) {
            double qdd = (xp[i] - 2 * x0[i] + xm[i]) / (dt * dt);
            residual[i] = qdd - (*fp)[i].run(pt);
        }
        std::vector<double> mult(n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) mult[i] -= (*hp)[i * n + j].run(pt) * residual[j];
        return mult;
    };
}

inline CertifySubject subject_of(const LagrangianSO& lag, const SecondOrderSystem& sys,
                                 const MultiplierCandidate& mc, double flow_dt = 1e-3) {
    CertifySubject s;
    std::size_t n = sys.dim();
    s.dim = n;
    s.state_dim = 2 * n;  // initial (q, q')
    s.action = action_of(lag, sys);
    s.multiplied_equations = multiplied_equations_of(sys, mc);

    auto fo = std::make_shared<FlowMap>(reduce_to_first_order(sys), FlowSettings{flow_dt});
    s.make_trajectory = [fo, n](std::span<const double> state0, double horizon, double grid_dt) {
        DiscreteTrajectory traj;
        traj.dt = grid_dt;
        std::size_t K = static_cast<std::size_t>(std::llround(horizon / grid_dt)) + 1;
        std::vector<double> state(state0.begin(), state0.end());
        traj.states.emplace_back(state.begin(), state.begin() + n);
        for (std::size_t k = 1; k < K; ++k) {
            state = fo->advance(grid_dt * (k - 1), state, grid_dt * k);
            traj.states.emplace_back(state.begin(), state.begin() + n);
        }
        return traj;
    };
    return s;
}

/// First-order action over its flow map; point evaluations are memoized per
/// midpoint so grad_x and grad_v share one ray cache.
inline CertifySubject subject_of(const FirstOrderAction& action) {
    CertifySubject s;
    std::size_t n = action.dim();
    s.dim = n;
    s.state_dim = n;

    struct Memo {
        double t = std::numeric_limits<double>::quiet_NaN();
        std::vector<double> x;
        FirstOrderAction::PointEval eval;
    };
    auto memo = std::make_shared<Memo>();
    auto act = std::make_shared<FirstOrderAction>(action);
    auto lookup = [memo, act](double t, std::span<const double> x) -> const FirstOrderAction::PointEval& {
        if (memo->t != t || !std::equal(x.begin(), x.end(), memo->x.begin(), memo->x.end())) {
            memo->t = t;
            memo->x.assign(x.begin(), x.end());
            memo->eval = act->at(t, x);
        }
        return memo->eval;
    };

    s.action.dim = n;
    s.action.value = [lookup, n](double t, std::span<const double> x, std::span<const double> v) {
        const auto& e = lookup(t, x);
        double acc = -e.H;
        for (std::size_t i = 0; i < n; ++i) acc += e.J[i] * v[i];
        return acc;
    };
    s.action.grad_x = [lookup, n](double t, std::span<const double> x, std::span<const double> v) {
        const auto& e = lookup(t, x);
        std::vector<double> out(n, 0.0);
        for (std::size_t a = 0; a < n; ++a) {
            for (std::size_t b = 0; b < n; ++b) out[a] += e.dJ(a, b) * v[b];
            out[a] -= e.G[a];
        }
        return out;
    };
    s.action.grad_v = [lookup, n](double t, std::span<const double> x, std::span<const double>) {
        return lookup(t, x).J;
    };

    auto fm = act;
    s.multiplied_equations = [fm, n](double t, std::span<const double> xm,
                                     std::span<const double> x0, std::span<const double> xp,
                                     double dt) {
        Mat Om = fm->omega(t, x0);
        auto f = fm->flow_map().field_at(t, x0);
        std::vector<double> out(n, 0.0);
        for (std::size_t a = 0; a < n; ++a) {
            for (std::size_t b = 0; b < n; ++b) {
                double xdot = (xp[b] - xm[b]) / (2 * dt);
                out[a] += Om(a, b) * (xdot - f[b]);
            }
        }
        return out;
    };
    s.make_trajectory = [act, n](std::span<const double> x0, double horizon, double grid_dt) {
        DiscreteTrajectory traj;
        traj.dt = grid_dt;
        std::size_t K = static_cast<std::size_t>(std::llround(horizon / grid_dt)) + 1;
        std::vector<double> x(x0.begin(), x0.end());
        traj.states.push_back(x);
        for (std::size_t k = 1; k < K; ++k) {
            x = act->flow_map().advance(grid_dt * (k - 1), x, grid_dt * k);
            traj.states.push_back(x);
        }
        (void)n;
        return traj;
    };
    return s;
}

inline CertifySubject subject_of(const QuadraticAction& qa, const LinearSystem& lin,
                                 double flow_dt = 1e-3) {
    CertifySubject s;
    std::size_t n = qa.dim();
    s.dim = n;
    s.state_dim = n;
    auto q = std::make_shared<QuadraticAction>(qa);
    s.action.dim = n;
    s.action.value = [q](double t, std::span<const double> x, std::span<const double> v) {
        return q->lagrangian(t, x, v);
    };
    s.action.grad_x = [q](double t, std::span<const double> x, std::span<const double> v) {
        return q->grad_x(t, x, v);
    };
    s.action.grad_v = [q](double t, std::span<const double> x, std::span<const double>) {
        return q->grad_v(t, x);
    };
    s.multiplied_equations = [q, n](double t, std::span<const double> xm,
                                    std::span<const double> x0, std::span<const double> xp,
                                    double dt) {
        Mat Om = q->omega_at_time(t);
        Mat A = q->A_at(t);
        auto j = q->j_at(t);
        std::vector<double> out(n, 0.0);
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b < n; ++b) {
                double xdot = (xp[b] - xm[b]) / (2 * dt);
                double fb = j[b];
                for (std::size_t g = 0; g < n; ++g) fb += A(b, g) * x0[g];
                out[a] += Om(a, b) * (xdot - fb);
            }
        return out;
    };
    auto fm = std::make_shared<FlowMap>(lin.to_system(), FlowSettings{flow_dt});
    s.make_trajectory = [fm](std::span<const double> x0, double horizon, double grid_dt) {
        DiscreteTrajectory traj;
        traj.dt = grid_dt;
        std::size_t K = static_cast<std::size_t>(std::llround(horizon / grid_dt)) + 1;
        std::vector<double> x(x0.begin(), x0.end());
        traj.states.push_back(x);
        for (std::size_t k = 1; k < K; ++k) {
            x = fm->advance(grid_dt * (k - 1), x, grid_dt * k);
            traj.states.push_back(x);
        }
        return traj;
    };
    return s;
}

}  // namespace helm
