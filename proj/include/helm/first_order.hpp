#pragma once

// First-order inverse problem.  The multiplier field is transported along the
// flow: Omega(t,x) = (dchi)^T Omega0 (dchi) with chi the backward flow map,
// and the action parts J, H come from radial homotopy integrals of Omega.
//
// Evaluation strategy: every quantity at (t, x) only needs Omega and its
// first derivatives along the ray {u x : u in [0,1]}.  One backward solve per
// Chebyshev node on the ray (state + first + second variational equations)
// feeds a barycentric interpolant; all quadratures run on the interpolant.

#include <functional>

#include "calculus.hpp"
#include "linalg.hpp"
#include "second_order.hpp"

namespace helm {

// ---------------------------------------------------------------- systems

/// x'^a = f^a(t, x) with an even number of coordinates.
struct FirstOrderSystem {
    SymbolEnv env;
    std::vector<Expr> field;

    FirstOrderSystem(SymbolEnv e, std::vector<Expr> f) : env(std::move(e)), field(std::move(f)) {
        if (env.dim() % 2 != 0 || env.dim() < 2)
            throw error("first-order phase space must have even dimension >= 2");
        if (field.size() != env.dim()) throw error("field count does not match coordinate count");
        for (const auto& fe : field) {
            for (const auto& s : free_symbols(fe)) {
                auto k = env.classify(s);
                if (k != SymbolEnv::SymKind::time && k != SymbolEnv::SymKind::coordinate &&
                    k != SymbolEnv::SymKind::parameter)
                    throw error("velocity field depends on invalid symbol '" + s + "'");
            }
        }
    }

    std::size_t dim() const { return env.dim(); }
};

/// Introduce momenta p_<name> = d<name> and rewrite the forces.
inline FirstOrderSystem reduce_to_first_order(const SecondOrderSystem& sys) {
    std::size_t n = sys.dim();
    std::vector<std::string> coords = sys.env.coordinates();
    std::map<std::string, Expr> rename;
    for (std::size_t i = 0; i < n; ++i) {
        std::string p = "p_" + sys.env.coordinate(i);
        if (sys.env.knows(p)) throw error("momentum name '" + p + "' collides with a declared symbol");
        coords.push_back(p);
        rename[sys.env.velocity(i)] = sym(p);
    }
    SymbolEnv env(coords, sys.env.parameters());
    std::vector<Expr> field;
    for (std::size_t i = 0; i < n; ++i) field.push_back(sym("p_" + sys.env.coordinate(i)));
    for (std::size_t i = 0; i < n; ++i) field.push_back(subst(sys.forces[i], rename));
    return FirstOrderSystem(std::move(env), std::move(field));
}

/// Constant antisymmetric nonsingular seed for the multiplier transport.
struct SymplecticSeed {
    Mat omega0;

    explicit SymplecticSeed(Mat m) : omega0(std::move(m)) {
        std::size_t n = omega0.rows();
        if (n != omega0.cols()) throw error("seed matrix must be square");
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (std::fabs(omega0(i, j) + omega0(j, i)) > 1e-12)
                    throw error("seed matrix must be antisymmetric");
        if (std::fabs(det(omega0)) < 1e-12) throw error("seed matrix must be nonsingular");
    }

    /// block form [[0, I], [-I, 0]]
    static SymplecticSeed canonical(std::size_t dim) {
        Mat m(dim, dim);
        std::size_t h = dim / 2;
        for (std::size_t i = 0; i < h; ++i) {
            m(i, h + i) = 1.0;
            m(h + i, i) = -1.0;
        }
        return SymplecticSeed(std::move(m));
    }
};

// ---------------------------------------------------------------- flow map

struct FlowSettings {
    double dt = 1e-3;
};

/// Fixed-step RK4 solution of the Cauchy problem, its inverse, and the first
/// and second variational equations along the backward trajectory.
class FlowMap {
public:
    FlowMap(FirstOrderSystem system, FlowSettings settings = {})
        : sys_(std::move(system)), set_(settings), n_(sys_.dim()) {
        std::vector<std::string> lay = {"t"};
        for (std::size_t i = 0; i < n_; ++i) lay.push_back(sys_.env.coordinate(i));
        for (std::size_t a = 0; a < n_; ++a) f_.emplace_back(sys_.field[a], lay, sys_.env);
        linear_ = true;
        for (std::size_t a = 0; a < n_; ++a) {
            for (std::size_t b = 0; b < n_; ++b) {
                Expr d1 = diff(sys_.field[a], sys_.env.coordinate(b));
                jac_.emplace_back(d1, lay, sys_.env);
                for (std::size_t c = 0; c < n_; ++c) {
                    Expr d2 = diff(d1, sys_.env.coordinate(c));
                    if (!d2.is_zero()) linear_ = false;
                    hess_.emplace_back(d2, lay, sys_.env);
                }
            }
        }
    }

    const FirstOrderSystem& system() const { return sys_; }
    const FlowSettings& settings() const { return set_; }
    std::size_t dim() const { return n_; }
    bool linear_field() const { return linear_; }

    std::vector<double> field_at(double t, std::span<const double> x) const {
        std::vector<double> pt = point(t, x);
        std::vector<double> out(n_);
        for (std::size_t a = 0; a < n_; ++a) out[a] = f_[a].run(pt);
        return out;
    }

    Mat jacobian_at(double t, std::span<const double> x) const {
        std::vector<double> pt = point(t, x);
        Mat F(n_, n_);
        for (std::size_t a = 0; a < n_; ++a)
            for (std::size_t b = 0; b < n_; ++b) F(a, b) = jac_[a * n_ + b].run(pt);
        return F;
    }

    /// forward solution x = phi(t, x0)
    std::vector<double> flow(double t, std::span<const double> x0) const {
        std::vector<double> u(x0.begin(), x0.end());
        integrate_state(0.0, t, u);
        return u;
    }

    /// backward solution x0 = chi(t, x)
    std::vector<double> inverse_flow(double t, std::span<const double> x) const {
        std::vector<double> u(x.begin(), x.end());
        integrate_state(t, 0.0, u);
        return u;
    }

    /// advance a trajectory from (t0, x0) to t1
    std::vector<double> advance(double t0, std::span<const double> x0, double t1) const {
        std::vector<double> u(x0.begin(), x0.end());
        integrate_state(t0, t1, u);
        return u;
    }

    struct Backward {
        std::vector<double> chi;  // N
        Mat dchi;                 // N x N
        std::vector<double> d2chi;  // N^3, [g][a][b]; empty for linear fields
    };

    /// chi and its derivatives by the variational equations, not differences.
    Backward backward(double t, std::span<const double> x, bool need_second = false) const {
        bool second = need_second && !linear_;
        std::size_t len = n_ + n_ * n_ + (second ? n_ * n_ * n_ : 0);
        std::vector<double> s(len, 0.0);
        for (std::size_t i = 0; i < n_; ++i) s[i] = x[i];
        for (std::size_t i = 0; i < n_; ++i) s[n_ + i * n_ + i] = 1.0;
        integrate_full(t, 0.0, s, second);
        Backward out;
        out.chi.assign(s.begin(), s.begin() + n_);
        out.dchi = Mat(n_, n_);
        for (std::size_t a = 0; a < n_; ++a)
            for (std::size_t b = 0; b < n_; ++b) out.dchi(a, b) = s[n_ + a * n_ + b];
        if (second) out.d2chi.assign(s.begin() + n_ + n_ * n_, s.end());
        return out;
    }

    Mat flow_jacobian(double t, std::span<const double> x) const { return backward(t, x).dchi; }

private:
    std::vector<double> point(double t, std::span<const double> x) const {
        std::vector<double> pt(1 + n_);
        pt[0] = t;
        for (std::size_t i = 0; i < n_; ++i) pt[1 + i] = x[i];
        return pt;
    }

    void state_deriv(double t, const std::vector<double>& u, std::vector<double>& du) const {
        std::vector<double> pt(1 + n_);
        pt[0] = t;
        for (std::size_t i = 0; i < n_; ++i) pt[1 + i] = u[i];
        for (std::size_t a = 0; a < n_; ++a) du[a] = f_[a].run(pt);
    }

    void full_deriv(double t, const std::vector<double>& s, std::vector<double>& ds,
                    bool second) const {
        std::vector<double> pt(1 + n_);
        pt[0] = t;
        for (std::size_t i = 0; i < n_; ++i) pt[1 + i] = s[i];
        std::vector<double> F(n_ * n_);
        for (std::size_t a = 0; a < n_; ++a) ds[a] = f_[a].run(pt);
        for (std::size_t ab = 0; ab < n_ * n_; ++ab) F[ab] = jac_[ab].run(pt);
        const double* Y = s.data() + n_;
        double* dY = ds.data() + n_;
        for (std::size_t g = 0; g < n_; ++g)
            for (std::size_t a = 0; a < n_; ++a) {
                double acc = 0.0;
                for (std::size_t m = 0; m < n_; ++m) acc += F[g * n_ + m] * Y[m * n_ + a];
                dY[g * n_ + a] = acc;
            }
        if (!second) return;
        std::vector<double> H(n_ * n_ * n_);
        for (std::size_t i = 0; i < H.size(); ++i) H[i] = hess_[i].run(pt);
        const double* Z = s.data() + n_ + n_ * n_;
        double* dZ = ds.data() + n_ + n_ * n_;
        for (std::size_t g = 0; g < n_; ++g) {
            for (std::size_t a = 0; a < n_; ++a) {
                for (std::size_t b = 0; b < n_; ++b) {
                    double acc = 0.0;
                    for (std::size_t m = 0; m < n_; ++m) {
                        double ym = Y[m * n_ + a];
                        if (ym != 0.0) {
                            double inner = 0.0;
                            for (std::size_t nn = 0; nn < n_; ++nn)
                                inner += H[(g * n_ + m) * n_ + nn] * Y[nn * n_ + b];
                            acc += inner * ym;
                        }
                        acc += F[g * n_ + m] * Z[(m * n_ + a) * n_ + b];
                    }
                    dZ[(g * n_ + a) * n_ + b] = acc;
                }
            }
        }
    }

    template <typename Deriv>
    void rk4(double t0, double t1, std::vector<double>& s, Deriv&& deriv) const {
        if (t0 == t1) return;
        int steps = static_cast<int>(std::ceil(std::fabs(t1 - t0) / set_.dt));
        double h = (t1 - t0) / steps;
        std::vector<double> k1(s.size()), k2(s.size()), k3(s.size()), k4(s.size()), tmp(s.size());
        double t = t0;
        try {
            for (int k = 0; k < steps; ++k) {
                deriv(t, s, k1);
                for (std::size_t i = 0; i < s.size(); ++i) tmp[i] = s[i] + 0.5 * h * k1[i];
                deriv(t + 0.5 * h, tmp, k2);
                for (std::size_t i = 0; i < s.size(); ++i) tmp[i] = s[i] + 0.5 * h * k2[i];
                deriv(t + 0.5 * h, tmp, k3);
                for (std::size_t i = 0; i < s.size(); ++i) tmp[i] = s[i] + h * k3[i];
                deriv(t + h, tmp, k4);
                for (std::size_t i = 0; i < s.size(); ++i)
                    s[i] += h / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
                t += h;
                for (double v : s)
                    if (!std::isfinite(v)) throw integration_error("flow blow-up: non-finite state");
            }
        } catch (const expr_domain_error& e) {
            throw integration_error(std::string("flow left the evaluable domain: ") + e.what());
        }
    }

    void integrate_state(double t0, double t1, std::vector<double>& u) const {
        rk4(t0, t1, u, [this](double t, const std::vector<double>& s, std::vector<double>& ds) {
            state_deriv(t, s, ds);
        });
    }
    void integrate_full(double t0, double t1, std::vector<double>& s, bool second) const {
        rk4(t0, t1, s, [this, second](double t, const std::vector<double>& v, std::vector<double>& dv) {
            full_deriv(t, v, dv, second);
        });
    }

    FirstOrderSystem sys_;
    FlowSettings set_;
    std::size_t n_;
    std::vector<Program> f_, jac_, hess_;
    bool linear_ = false;
};

/// Omega(t, x) = (dchi)^T Omega0 (dchi)
inline Mat omega_at(const FlowMap& fm, const SymplecticSeed& seed, double t,
                    std::span<const double> x) {
    Mat Y = fm.flow_jacobian(t, x);
    return Y.transposed() * seed.omega0 * Y;
}

// ---------------------------------------------------------------- ray cache

namespace detail {

/// Omega, its spatial gradient and its time derivative sampled on Chebyshev
/// nodes of the homotopy ray {u x}, with barycentric interpolation.
class RayCache {
public:
    RayCache(const FlowMap& fm, const Mat& omega0, double t, std::span<const double> x,
             int nodes = 25)
        : n_(fm.dim()), m_(nodes), x_(x.begin(), x.end()) {
        u_.resize(m_);
        wb_.resize(m_);
        omega_.resize(m_ * n_ * n_);
        domega_.resize(m_ * n_ * n_ * n_);
        dtomega_.resize(m_ * n_ * n_);
        for (int k = 0; k < m_; ++k) {
            u_[k] = 0.5 * (1.0 - std::cos(M_PI * k / (m_ - 1)));
            wb_[k] = (k % 2 == 0 ? 1.0 : -1.0) * ((k == 0 || k == m_ - 1) ? 0.5 : 1.0);
            fill_node(fm, omega0, t, k);
        }
    }

    double omega(double u, std::size_t a, std::size_t b) const {
        return interp(u, omega_.data() + 0, n_ * n_, a * n_ + b);
    }
    double domega(double u, std::size_t g, std::size_t a, std::size_t b) const {
        return interp(u, domega_.data(), n_ * n_ * n_, (g * n_ + a) * n_ + b);
    }
    double dtomega(double u, std::size_t a, std::size_t b) const {
        return interp(u, dtomega_.data(), n_ * n_, a * n_ + b);
    }

    std::size_t dim() const { return n_; }
    const std::vector<double>& ray_point() const { return x_; }

private:
    void fill_node(const FlowMap& fm, const Mat& omega0, double t, int k) {
        std::vector<double> xu(n_);
        for (std::size_t i = 0; i < n_; ++i) xu[i] = u_[k] * x_[i];
        auto bw = fm.backward(t, xu, /*need_second=*/true);
        const Mat& Y = bw.dchi;
        Mat Om = Y.transposed() * omega0 * Y;
        for (std::size_t a = 0; a < n_; ++a)
            for (std::size_t b = 0; b < n_; ++b) omega_[k * n_ * n_ + a * n_ + b] = Om(a, b);

        // spatial gradient from the second variational solution
        const std::vector<double>& Z = bw.d2chi;
        for (std::size_t g = 0; g < n_; ++g) {
            for (std::size_t a = 0; a < n_; ++a) {
                for (std::size_t b = 0; b < n_; ++b) {
                    double acc = 0.0;
                    if (!Z.empty()) {
                        for (std::size_t mm = 0; mm < n_; ++mm)
                            for (std::size_t nn = 0; nn < n_; ++nn) {
                                double w = omega0(mm, nn);
                                if (w == 0.0) continue;
                                acc += Z[(mm * n_ + g) * n_ + a] * w * Y(nn, b);
                                acc += Y(mm, a) * w * Z[(nn * n_ + g) * n_ + b];
                            }
                    }
                    domega_[(static_cast<std::size_t>(k) * n_ + g) * n_ * n_ + a * n_ + b] = acc;
                }
            }
        }

        // time derivative from the transport law: dOmega/dt = -Lie_f Omega
        auto f = fm.field_at(t, xu);
        Mat F = fm.jacobian_at(t, xu);
        for (std::size_t a = 0; a < n_; ++a) {
            for (std::size_t b = 0; b < n_; ++b) {
                double acc = 0.0;
                for (std::size_t g = 0; g < n_; ++g) {
                    acc += f[g] * domega_[(static_cast<std::size_t>(k) * n_ + g) * n_ * n_ + a * n_ + b];
                    acc += F(g, a) * Om(g, b);
                    acc += F(g, b) * Om(a, g);
                }
                dtomega_[k * n_ * n_ + a * n_ + b] = -acc;
            }
        }
    }

    double interp(double u, const double* table, std::size_t stride, std::size_t offset) const {
        double numer = 0.0, denom = 0.0;
        for (int k = 0; k < m_; ++k) {
            double d = u - u_[k];
            if (std::fabs(d) < 1e-14) return table[k * stride + offset];
            double w = wb_[k] / d;
            numer += w * table[k * stride + offset];
            denom += w;
        }
        return numer / denom;
    }

    std::size_t n_;
    int m_;
    std::vector<double> x_, u_, wb_;
    std::vector<double> omega_, domega_, dtomega_;
};

}  // namespace detail

// ---------------------------------------------------------------- first-order action

struct FirstOrderActionOptions {
    FlowSettings flow{};
    double horizon = 1.0;
    int ray_nodes = 25;
    Expr gauge = num(0.0);  // phi(t, x); zero keeps the canonical gauge
};

/// Probe bundle the condition checker works against; allows fault injection
/// in tests.
struct ActionProbe {
    std::size_t dim = 0;
    std::function<Mat(double, std::span<const double>)> omega;
    std::function<std::vector<double>(double, std::span<const double>)> J;
    std::function<double(double, std::span<const double>)> H;
    std::function<std::vector<double>(double, std::span<const double>)> field;
    std::function<Mat(double, std::span<const double>)> field_jac;
    std::function<std::vector<double>(double, std::span<const double>, double)> advance;
};

/// Action functional L = J_a x'^a - H for a first-order system, built from
/// the flow-transported multiplier with a constant seed.
class FirstOrderAction {
public:
    FirstOrderAction(std::shared_ptr<const FlowMap> fm, SymplecticSeed seed,
                     FirstOrderActionOptions opt = {})
        : fm_(std::move(fm)), seed_(std::move(seed)), opt_(std::move(opt)), n_(fm_->dim()) {
        if (seed_.omega0.rows() != n_) throw error("seed dimension does not match system");
        const auto& env = fm_->system().env;
        env.validate_expr(opt_.gauge);
        std::vector<std::string> lay = {"t"};
        for (std::size_t i = 0; i < n_; ++i) lay.push_back(env.coordinate(i));
        for (std::size_t a = 0; a < n_; ++a) {
            Expr da = diff(opt_.gauge, env.coordinate(a));
            gauge_dx_.emplace_back(da, lay, env);
            gauge_dxt_.emplace_back(diff(da, "t"), lay, env);
            for (std::size_t b = 0; b < n_; ++b)
                gauge_dxx_.emplace_back(diff(da, env.coordinate(b)), lay, env);
        }
        gauge_dt_ = Program(diff(opt_.gauge, "t"), lay, env);
    }

    std::size_t dim() const { return n_; }
    const FlowMap& flow_map() const { return *fm_; }
    const Mat& seed() const { return seed_.omega0; }
    const FirstOrderActionOptions& options() const { return opt_; }

    Mat omega(double t, std::span<const double> x) const { return omega_at(*fm_, seed_, t, x); }

    struct PointEval {
        std::vector<double> J;   // N
        Mat dJ;                  // dJ(a,b) = d_a J_b
        std::vector<double> G;   // Omega f - dJ/dt  (gradient of H)
        double H = 0.0;
        Mat omega;
    };

    /// Everything the discrete action needs at one point, from one ray cache.
    PointEval at(double t, std::span<const double> x) const {
        detail::RayCache cache(*fm_, seed_.omega0, t, x, opt_.ray_nodes);
        const auto& g = GaussLegendre01::get();
        PointEval out;
        out.J.assign(n_, 0.0);
        out.G.assign(n_, 0.0);
        out.dJ = Mat(n_, n_);
        out.omega = Mat(n_, n_);
        for (std::size_t a = 0; a < n_; ++a)
            for (std::size_t b = 0; b < n_; ++b) out.omega(a, b) = cache.omega(1.0, a, b);

        for (int i = 0; i < 32; ++i) {
            double s = g.x[i], w = g.w[i];
            for (std::size_t b = 0; b < n_; ++b) {
                double jb = 0.0;
                for (std::size_t gidx = 0; gidx < n_; ++gidx)
                    jb += x[gidx] * cache.omega(s, gidx, b);
                out.J[b] += w * s * jb;
                for (std::size_t a = 0; a < n_; ++a) {
                    double v = cache.omega(s, a, b);
                    for (std::size_t gidx = 0; gidx < n_; ++gidx)
                        v += s * x[gidx] * cache.domega(s, a, gidx, b);
                    out.dJ(a, b) += w * s * v;
                }
            }
        }

        // H = int ds x^b [Omega_ba f^a](s x)  -  int ds x^b dJ_b/dt (s x);
        // the second integrand contracts the antisymmetric dOmega/dt with
        // x x and vanishes up to quadrature noise, but is kept literal.
        double h1 = 0.0, h2 = 0.0;
        std::vector<double> xs(n_);
        for (int i = 0; i < 32; ++i) {
            double s = g.x[i], w = g.w[i];
            for (std::size_t k = 0; k < n_; ++k) xs[k] = s * x[k];
            auto f = fm_->field_at(t, xs);
            double cell = 0.0;
            for (std::size_t b = 0; b < n_; ++b)
                for (std::size_t a = 0; a < n_; ++a) cell += x[b] * cache.omega(s, b, a) * f[a];
            h1 += w * cell;
            double inner_total = 0.0;
            for (int ii = 0; ii < 32; ++ii) {
                double sp = g.x[ii];
                double cell2 = 0.0;
                for (std::size_t b = 0; b < n_; ++b)
                    for (std::size_t gidx = 0; gidx < n_; ++gidx)
                        cell2 += x[b] * sp * (s * x[gidx]) * cache.dtomega(sp * s, gidx, b);
                inner_total += g.w[ii] * cell2;
            }
            h2 += w * inner_total;
        }
        out.H = h1 - h2;

        // G_a = (Omega f)_a - dJ_a/dt at the full point
        auto f = fm_->field_at(t, x);
        for (std::size_t a = 0; a < n_; ++a) {
            double v = 0.0;
            for (std::size_t b = 0; b < n_; ++b) v += out.omega(a, b) * f[b];
            out.G[a] = v;
        }
        for (int i = 0; i < 32; ++i) {
            double s = g.x[i], w = g.w[i];
            for (std::size_t a = 0; a < n_; ++a) {
                double v = 0.0;
                for (std::size_t gidx = 0; gidx < n_; ++gidx)
                    v += x[gidx] * cache.dtomega(s, gidx, a);
                out.G[a] -= w * s * v;
            }
        }

        apply_gauge(t, x, out);
        return out;
    }

    std::vector<double> J(double t, std::span<const double> x) const { return at(t, x).J; }
    double H(double t, std::span<const double> x) const { return at(t, x).H; }

    ActionProbe probe() const {
        ActionProbe p;
        p.dim = n_;
        p.omega = [this](double t, std::span<const double> x) { return omega(t, x); };
        p.J = [this](double t, std::span<const double> x) { return J(t, x); };
        p.H = [this](double t, std::span<const double> x) { return H(t, x); };
        p.field = [this](double t, std::span<const double> x) { return fm_->field_at(t, x); };
        p.field_jac = [this](double t, std::span<const double> x) { return fm_->jacobian_at(t, x); };
        p.advance = [this](double t0, std::span<const double> x0, double t1) {
            return fm_->advance(t0, x0, t1);
        };
        return p;
    }

private:
    void apply_gauge(double t, std::span<const double> x, PointEval& out) const {
        if (opt_.gauge.is_zero()) return;
        std::vector<double> pt(1 + n_);
        pt[0] = t;
        for (std::size_t i = 0; i < n_; ++i) pt[1 + i] = x[i];
        out.H -= gauge_dt_.run(pt);
        for (std::size_t a = 0; a < n_; ++a) {
            out.J[a] += gauge_dx_[a].run(pt);
            // G tracks the gradient of H, so it loses the mixed term
            out.G[a] -= gauge_dxt_[a].run(pt);
            for (std::size_t b = 0; b < n_; ++b) out.dJ(a, b) += gauge_dxx_[a * n_ + b].run(pt);
        }
    }

    std::shared_ptr<const FlowMap> fm_;
    SymplecticSeed seed_;
    FirstOrderActionOptions opt_;
    std::size_t n_;
    std::vector<Program> gauge_dx_, gauge_dxt_, gauge_dxx_;
    Program gauge_dt_;
};

/// Radial homotopy of the multiplier: J_a(t,x) = int_0^1 s x^b Omega_ba(t,sx) ds.
inline std::vector<double> build_J(const FlowMap& fm, const SymplecticSeed& seed, double t,
                                   std::span<const double> x) {
    FirstOrderAction a(std::make_shared<FlowMap>(fm), seed);
    return a.J(t, x);
}

inline double build_H(const FlowMap& fm, const SymplecticSeed& seed, double t,
                      std::span<const double> x) {
    FirstOrderAction a(std::make_shared<FlowMap>(fm), seed);
    return a.H(t, x);
}

// ---------------------------------------------------------------- condition checks

struct FirstOrderCheckOptions {
    int samples = 8;
    double tol = 1e-5;
    std::uint64_t seed = 42;
    SampleBox box{};
    double horizon = 1.0;
    double fd_x = 1e-4;
    double fd_t = 1e-4;
};

/// Residuals of antisymmetry, the cyclic gradient identity, the transport
/// equation along trajectories, the curl identity for J, and the gradient
/// identity for H; all derivatives by central differences.
inline ConditionReport check_first_order_conditions(const ActionProbe& action,
                                                    const FirstOrderCheckOptions& opt = {}) {
    std::size_t n = action.dim;
    ConditionReport rep;
    ConditionResult antisym{"antisym2b", true, 0.0, {}};
    ConditionResult jacobi{"jacobi3b", true, 0.0, {}};
    ConditionResult transport{"transport4b", true, 0.0, {}};
    ConditionResult curl{"curl11b", true, 0.0, {}};
    ConditionResult grad{"grad12b", true, 0.0, {}};

    auto record = [&](ConditionResult& res, double v, double t, std::span<const double> x) {
        if (v > res.value) {
            res.value = v;
            res.witness.clear();
            res.witness["t"] = t;
            for (std::size_t i = 0; i < n; ++i) res.witness["x" + std::to_string(i + 1)] = x[i];
        }
    };

    for (int k = 0; k < opt.samples; ++k) {
        auto rng = point_rng(opt.seed, k);
        std::uniform_real_distribution<double> tdist(0.0, opt.horizon);
        double t = tdist(rng);
        std::vector<double> x(n);
        for (auto& v : x) v = opt.box.draw(rng);

        Mat Om = action.omega(t, x);
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b < n; ++b)
                record(antisym, std::fabs(Om(a, b) + Om(b, a)), t, x);

        // spatial derivatives of Omega by central differences
        std::vector<Mat> dOm;
        for (std::size_t g = 0; g < n; ++g) {
            std::vector<double> xp = x, xm = x;
            xp[g] += opt.fd_x;
            xm[g] -= opt.fd_x;
            dOm.push_back((1.0 / (2 * opt.fd_x)) * (action.omega(t, xp) - action.omega(t, xm)));
        }
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = a + 1; b < n; ++b)
                for (std::size_t g = b + 1; g < n; ++g) {
                    double v = dOm[a](b, g) + dOm[b](g, a) + dOm[g](a, b);
                    record(jacobi, std::fabs(v), t, x);
                }

        // transport along the trajectory through (t, x): at the sample point
        // and at a point advanced along the flow
        auto transport_at = [&](double tt, std::span<const double> xx,
                                const std::vector<Mat>& dOmToUse, const Mat& OmToUse) {
            Mat dtOm = (1.0 / (2 * opt.fd_t)) *
                       (action.omega(tt + opt.fd_t, xx) - action.omega(tt - opt.fd_t, xx));
            auto f = action.field(tt, xx);
            Mat F = action.field_jac(tt, xx);
            for (std::size_t a = 0; a < n; ++a)
                for (std::size_t b = 0; b < n; ++b) {
                    double v = dtOm(a, b);
                    for (std::size_t g = 0; g < n; ++g) {
                        v += f[g] * dOmToUse[g](a, b);
                        v += F(g, a) * OmToUse(g, b);
                        v += F(g, b) * OmToUse(a, g);
                    }
                    record(transport, std::fabs(v), tt, xx);
                }
        };
        transport_at(t, x, dOm, Om);
        double t2 = std::min(t + 0.25 * opt.horizon, opt.horizon);
        if (t2 > t) {
            auto x2 = action.advance(t, x, t2);
            Mat Om2 = action.omega(t2, x2);
            std::vector<Mat> dOm2;
            for (std::size_t g = 0; g < n; ++g) {
                std::vector<double> xp = x2, xm = x2;
                xp[g] += opt.fd_x;
                xm[g] -= opt.fd_x;
                dOm2.push_back((1.0 / (2 * opt.fd_x)) *
                               (action.omega(t2, xp) - action.omega(t2, xm)));
            }
            transport_at(t2, x2, dOm2, Om2);
        }

        // curl of J against Omega
        std::vector<std::vector<double>> Jp(n), Jm(n);
        for (std::size_t a = 0; a < n; ++a) {
            std::vector<double> xp = x, xm = x;
            xp[a] += opt.fd_x;
            xm[a] -= opt.fd_x;
            Jp[a] = action.J(t, xp);
            Jm[a] = action.J(t, xm);
        }
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = 0; b < n; ++b) {
                double dJab = (Jp[a][b] - Jm[a][b]) / (2 * opt.fd_x);
                double dJba = (Jp[b][a] - Jm[b][a]) / (2 * opt.fd_x);
                record(curl, std::fabs(dJab - dJba - Om(a, b)), t, x);
            }

        // gradient of H against Omega f - dJ/dt
        auto f = action.field(t, x);
        auto Jt_p = action.J(t + opt.fd_t, x);
        auto Jt_m = action.J(t - opt.fd_t, x);
        for (std::size_t a = 0; a < n; ++a) {
            std::vector<double> xp = x, xm = x;
            xp[a] += opt.fd_x;
            xm[a] -= opt.fd_x;
            double dH = (action.H(t, xp) - action.H(t, xm)) / (2 * opt.fd_x);
            double rhs = 0.0;
            for (std::size_t b = 0; b < n; ++b) rhs += Om(a, b) * f[b];
            rhs -= (Jt_p[a] - Jt_m[a]) / (2 * opt.fd_t);
            record(grad, std::fabs(dH - rhs), t, x);
        }
    }

    for (auto* c : {&antisym, &jacobi, &transport, &curl, &grad}) {
        c->pass = c->value < opt.tol;
        rep.conditions.push_back(*c);
    }
    return rep;
}

// ---------------------------------------------------------------- quadratic theory

/// x' = A(t) x + j(t), matrix notation.
struct LinearSystem {
    SymbolEnv env;
    ExprMat A;
    std::vector<Expr> j;

    LinearSystem(SymbolEnv e, ExprMat a, std::vector<Expr> rhs)
        : env(std::move(e)), A(std::move(a)), j(std::move(rhs)) {
        std::size_t n = env.dim();
        if (n % 2 != 0 || n < 2) throw error("linear system must have even dimension >= 2");
        if (A.size() != n || j.size() != n) throw error("linear system has wrong dimensions");
        for (const auto& row : A) {
            if (row.size() != n) throw error("A must be square");
            for (const auto& e2 : row) check_time_only(e2);
        }
        for (const auto& e2 : j) check_time_only(e2);
    }

    std::size_t dim() const { return env.dim(); }

    FirstOrderSystem to_system() const {
        std::vector<Expr> field;
        for (std::size_t a = 0; a < dim(); ++a) {
            std::vector<Expr> parts = {j[a]};
            for (std::size_t b = 0; b < dim(); ++b)
                parts.push_back(mul(A[a][b], sym(env.coordinate(b))));
            field.push_back(simplify(sum_of(std::move(parts))));
        }
        return FirstOrderSystem(env, std::move(field));
    }

private:
    void check_time_only(const Expr& e) const {
        for (const auto& s : free_symbols(e)) {
            auto k = env.classify(s);
            if (k != SymbolEnv::SymKind::time && k != SymbolEnv::SymKind::parameter)
                throw error("linear system coefficients must depend on time only");
        }
    }
};

/// Closed-form action data for the quadratic theory, tabulated on a time
/// grid: Gamma' = A Gamma, Lambda = Gamma^{-1}, Omega = Lambda^T Omega0
/// Lambda, B = (Omega A - A^T Omega)/2, C = Omega j.  The Lagrangian is
/// L = x Omega x'/2 - x B x/2 - C x, whose variational expressions equal
/// Omega (x' - A x - j).
class QuadraticAction {
public:
    QuadraticAction(const LinearSystem& lin, SymplecticSeed seed, std::vector<double> grid,
                    FlowSettings settings = {})
        : n_(lin.dim()), seed_(std::move(seed)), set_(settings), times_(std::move(grid)) {
        if (seed_.omega0.rows() != n_) throw error("seed dimension does not match system");
        if (times_.empty() || times_.front() != 0.0) throw schema_error("time grid must start at 0");
        for (std::size_t i = 1; i < times_.size(); ++i)
            if (times_[i] <= times_[i - 1]) throw schema_error("time grid must increase");

        std::vector<std::string> lay = {"t"};
        for (std::size_t a = 0; a < n_; ++a)
            for (std::size_t b = 0; b < n_; ++b) aprog_.emplace_back(lin.A[a][b], lay, lin.env);
        for (std::size_t a = 0; a < n_; ++a) jprog_.emplace_back(lin.j[a], lay, lin.env);

        Mat Gamma = Mat::identity(n_);
        tabulate(0.0, Gamma);
        for (std::size_t k = 1; k < times_.size(); ++k) {
            integrate_gamma(times_[k - 1], times_[k], Gamma);
            tabulate(times_[k], Gamma);
        }
    }

    std::size_t dim() const { return n_; }
    const std::vector<double>& grid() const { return times_; }
    const std::vector<Mat>& gamma_table() const { return gamma_; }
    const std::vector<Mat>& omega_table() const { return omega_; }
    const std::vector<Mat>& b_table() const { return bmat_; }
    const std::vector<std::vector<double>>& c_table() const { return cvec_; }

    Mat A_at(double t) const {
        Mat A(n_, n_);
        double pt[1] = {t};
        for (std::size_t a = 0; a < n_; ++a)
            for (std::size_t b = 0; b < n_; ++b) A(a, b) = aprog_[a * n_ + b].run(pt);
        return A;
    }
    std::vector<double> j_at(double t) const {
        std::vector<double> j(n_);
        double pt[1] = {t};
        for (std::size_t a = 0; a < n_; ++a) j[a] = jprog_[a].run(pt);
        return j;
    }

    /// Gamma at arbitrary t, integrated from the nearest grid node below.
    Mat gamma_at(double t) const {
        std::size_t k = 0;
        while (k + 1 < times_.size() && times_[k + 1] <= t) ++k;
        Mat Gamma = gamma_[k];
        integrate_gamma(times_[k], t, Gamma);
        return Gamma;
    }

    Mat omega_at_time(double t) const { return omega_from_gamma(gamma_at(t)); }
    Mat b_at_time(double t) const {
        Mat Om = omega_at_time(t);
        Mat A = A_at(t);
        return 0.5 * (Om * A - A.transposed() * Om);
    }
    std::vector<double> c_at_time(double t) const { return omega_at_time(t).apply(j_at(t)); }

    double lagrangian(double t, std::span<const double> x, std::span<const double> xdot) const {
        Mat Om = omega_at_time(t);
        Mat B = 0.5 * (Om * A_at(t) - A_at(t).transposed() * Om);
        auto C = Om.apply(j_at(t));
        double acc = 0.0;
        for (std::size_t a = 0; a < n_; ++a) {
            for (std::size_t b = 0; b < n_; ++b)
                acc += 0.5 * x[a] * Om(a, b) * xdot[b] - 0.5 * x[a] * B(a, b) * x[b];
            acc -= C[a] * x[a];
        }
        return acc;
    }

    std::vector<double> grad_v(double t, std::span<const double> x) const {
        Mat Om = omega_at_time(t);
        std::vector<double> out(n_, 0.0);
        for (std::size_t a = 0; a < n_; ++a)
            for (std::size_t b = 0; b < n_; ++b) out[a] += 0.5 * x[b] * Om(b, a);
        return out;
    }

    std::vector<double> grad_x(double t, std::span<const double> x,
                               std::span<const double> xdot) const {
        Mat Om = omega_at_time(t);
        Mat B = 0.5 * (Om * A_at(t) - A_at(t).transposed() * Om);
        auto C = Om.apply(j_at(t));
        std::vector<double> out(n_, 0.0);
        for (std::size_t a = 0; a < n_; ++a) {
            for (std::size_t b = 0; b < n_; ++b) out[a] += 0.5 * Om(a, b) * xdot[b] - B(a, b) * x[b];
            out[a] -= C[a];
        }
        return out;
    }

private:
    Mat omega_from_gamma(const Mat& Gamma) const {
        Mat Lambda = inverse(Gamma);
        Mat Om = Lambda.transposed() * seed_.omega0 * Lambda;
        // enforce exact antisymmetry against roundoff
        for (std::size_t a = 0; a < n_; ++a)
            for (std::size_t b = a; b < n_; ++b) {
                double v = 0.5 * (Om(a, b) - Om(b, a));
                Om(a, b) = v;
                Om(b, a) = -v;
            }
        return Om;
    }

    void tabulate(double t, const Mat& Gamma) {
        gamma_.push_back(Gamma);
        Mat Om = omega_from_gamma(Gamma);
        omega_.push_back(Om);
        Mat A = A_at(t);
        bmat_.push_back(0.5 * (Om * A - A.transposed() * Om));
        cvec_.push_back(Om.apply(j_at(t)));
    }

    void integrate_gamma(double t0, double t1, Mat& Gamma) const {
        if (t0 == t1) return;
        int steps = static_cast<int>(std::ceil(std::fabs(t1 - t0) / set_.dt));
        double h = (t1 - t0) / steps;
        double t = t0;
        auto deriv = [&](double tt, const Mat& G) { return A_at(tt) * G; };
        for (int k = 0; k < steps; ++k) {
            Mat k1 = deriv(t, Gamma);
            Mat k2 = deriv(t + 0.5 * h, Gamma + (0.5 * h) * k1);
            Mat k3 = deriv(t + 0.5 * h, Gamma + (0.5 * h) * k2);
            Mat k4 = deriv(t + h, Gamma + h * k3);
            Gamma = Gamma + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            t += h;
        }
        for (double v : Gamma.data())
            if (!std::isfinite(v)) throw integration_error("fundamental solution blow-up");
    }

    std::size_t n_;
    SymplecticSeed seed_;
    FlowSettings set_;
    std::vector<double> times_;
    std::vector<Program> aprog_, jprog_;
    std::vector<Mat> gamma_, omega_, bmat_;
    std::vector<std::vector<double>> cvec_;
};

inline QuadraticAction quadratic_action(const LinearSystem& lin, const SymplecticSeed& seed,
                                        std::vector<double> grid, FlowSettings settings = {}) {
    return QuadraticAction(lin, seed, std::move(grid), settings);
}

}  // namespace helm
