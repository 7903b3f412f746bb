#pragma once

// Second-order inverse problem: multiplier conditions, ansatz search,
// Lagrangian reconstruction by homotopy, Euler-Lagrange expressions, and the
// one-dimensional transport solver.
//
// Naming of conditions follows the report schema:
//   sym6     symmetry of the multiplier
//   grad6    velocity-gradient consistency of the multiplier
//   sym11    vanishing symmetric part of the momentum bracket (transport law)
//   vel13    velocity independence of the antisymmetric part
//   jacobi14 cyclic closure of the antisymmetric part
//   alg19    algebraic compatibility with the B matrix
//   det      nonsingularity on samples

#include <functional>
#include <optional>
#include <variant>

#include "calculus.hpp"
#include "eval.hpp"
#include "linalg.hpp"
#include "parser.hpp"

namespace helm {

// ---------------------------------------------------------------- systems

/// n second-order equations solved for accelerations: q''^i = f^i(t, q, q').
struct SecondOrderSystem {
    SymbolEnv env;
    std::vector<Expr> forces;

    SecondOrderSystem(SymbolEnv e, std::vector<Expr> f) : env(std::move(e)), forces(std::move(f)) {
        if (forces.size() != env.dim()) throw error("force count does not match coordinate count");
        for (const auto& fe : forces) {
            for (const auto& s : free_symbols(fe)) {
                auto k = env.classify(s);
                if (k == SymbolEnv::SymKind::unknown || k == SymbolEnv::SymKind::accel)
                    throw error("force depends on invalid symbol '" + s + "'");
            }
        }
    }

    std::size_t dim() const { return env.dim(); }
};

/// Square symbolic matrix h_ij(t, q, q').  Nonsingularity is checked
/// numerically, not assumed.
struct MultiplierCandidate {
    ExprMat entries;

    std::size_t dim() const { return entries.size(); }
};

// ---------------------------------------------------------------- operators

/// Total-derivative operator along the dynamics:
/// D e = de/dt + q'^j de/dq^j + f^j de/dq'^j.
inline Expr d_hat(const SecondOrderSystem& sys, const Expr& e) {
    std::vector<Expr> parts = {diff_raw(e, "t")};
    for (std::size_t j = 0; j < sys.dim(); ++j) {
        parts.push_back(mul(sym(sys.env.velocity(j)), diff_raw(e, sys.env.coordinate(j))));
        parts.push_back(mul(sys.forces[j], diff_raw(e, sys.env.velocity(j))));
    }
    return simplify(sum_of(std::move(parts)));
}

/// F^i_j = df^i/dq'^j
inline ExprMat velocity_jacobian(const SecondOrderSystem& sys) {
    std::size_t n = sys.dim();
    ExprMat F = expr_mat(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) F[i][j] = diff(sys.forces[i], sys.env.velocity(j));
    return F;
}

/// B^i_j = (1/2) F^i_m F^m_j - D F^i_j + 2 df^i/dq^j
inline ExprMat b_matrix(const SecondOrderSystem& sys) {
    std::size_t n = sys.dim();
    ExprMat F = velocity_jacobian(sys);
    ExprMat B = expr_mat(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            std::vector<Expr> parts;
            for (std::size_t m = 0; m < n; ++m)
                parts.push_back(mul(num(0.5), mul(F[i][m], F[m][j])));
            parts.push_back(neg(d_hat(sys, F[i][j])));
            parts.push_back(mul(num(2.0), diff(sys.forces[i], sys.env.coordinate(j))));
            B[i][j] = expand(sum_of(std::move(parts)));
        }
    }
    return B;
}

/// A_ik = (1/2)(h_ij F^j_k - h_kj F^j_i), the antisymmetric bracket part.
inline ExprMat a_matrix(const SecondOrderSystem& sys, const ExprMat& h) {
    std::size_t n = sys.dim();
    ExprMat F = velocity_jacobian(sys);
    ExprMat A = expr_mat(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < n; ++k) {
            std::vector<Expr> parts;
            for (std::size_t j = 0; j < n; ++j) {
                parts.push_back(mul(num(0.5), mul(h[i][j], F[j][k])));
                parts.push_back(mul(num(-0.5), mul(h[k][j], F[j][i])));
            }
            A[i][k] = expand(sum_of(std::move(parts)));
        }
    }
    return A;
}

// ---------------------------------------------------------------- condition report

struct ConditionResult {
    std::string id;
    bool pass = false;
    double value = 0.0;  // max |residual|; for "det" the minimum |det h| over samples
    std::map<std::string, double> witness;
};

struct ConditionReport {
    std::vector<ConditionResult> conditions;

    bool all_pass() const {
        for (const auto& c : conditions)
            if (!c.pass) return false;
        return true;
    }
    const ConditionResult& find(std::string_view id) const {
        for (const auto& c : conditions)
            if (c.id == id) return c;
        throw error("no condition '" + std::string(id) + "' in report");
    }
};

struct CheckOptions {
    int samples = 64;
    double tol = 1e-8;
    std::uint64_t seed = 42;
    SampleBox box{};
};

namespace detail {

struct SamplePlan {
    std::vector<std::string> layout;  // t, q..., dq...
    std::vector<std::vector<double>> points;
};

/// Draw `count` points on the box where all programs evaluate; throws if the
/// common domain appears empty.
inline SamplePlan draw_samples(const SecondOrderSystem& sys, const std::vector<Program>& progs,
                               const CheckOptions& opt) {
    SamplePlan plan;
    plan.layout.push_back("t");
    for (std::size_t i = 0; i < sys.dim(); ++i) plan.layout.push_back(sys.env.coordinate(i));
    for (std::size_t i = 0; i < sys.dim(); ++i) plan.layout.push_back(sys.env.velocity(i));

    long budget = 10l * opt.samples;
    std::vector<double> pt(plan.layout.size());
    for (std::uint64_t idx = 0; static_cast<int>(plan.points.size()) < opt.samples; ++idx) {
        if (budget-- <= 0)
            throw expr_domain_error("every sample hit a singularity",
                                    "box [" + std::to_string(opt.box.lo) + ", " +
                                        std::to_string(opt.box.hi) + "]");
        auto rng = point_rng(opt.seed, idx);
        for (auto& v : pt) v = opt.box.draw(rng);
        bool ok = true;
        for (const auto& p : progs) {
            try {
                (void)p.run(pt);
            } catch (const expr_domain_error&) {
                ok = false;
                break;
            }
        }
        if (ok) plan.points.push_back(pt);
    }
    return plan;
}

inline std::map<std::string, double> bindings_at(const SamplePlan& plan, std::size_t k) {
    std::map<std::string, double> b;
    for (std::size_t i = 0; i < plan.layout.size(); ++i) b[plan.layout[i]] = plan.points[k][i];
    return b;
}

}  // namespace detail

/// Evaluate the five multiplier conditions plus nonsingularity at seeded
/// random points.  A condition passes iff its max residual stays below tol;
/// `det` passes iff |det h| stays above tol.
inline ConditionReport check_multiplier(const SecondOrderSystem& sys, const MultiplierCandidate& mc,
                                        const CheckOptions& opt = {}) {
    std::size_t n = sys.dim();
    if (mc.dim() != n) throw error("multiplier dimension does not match system");
    for (const auto& row : mc.entries)
        if (row.size() != n) throw error("multiplier matrix is not square");

    const ExprMat& h = mc.entries;
    ExprMat F = velocity_jacobian(sys);
    ExprMat A = a_matrix(sys, h);
    ExprMat B = b_matrix(sys);

    struct Piece {
        std::string id;
        Expr residual;
    };
    std::vector<Piece> pieces;

    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            pieces.push_back({"sym6", simplify(sub(h[i][j], h[j][i]))});

    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = i + 1; k < n; ++k)
            for (std::size_t j = 0; j < n; ++j)
                pieces.push_back({"grad6", simplify(sub(diff(h[i][j], sys.env.velocity(k)),
                                                        diff(h[k][j], sys.env.velocity(i))))});

    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = i; k < n; ++k) {
            std::vector<Expr> parts = {d_hat(sys, h[i][k])};
            for (std::size_t j = 0; j < n; ++j) {
                parts.push_back(mul(num(0.5), mul(h[i][j], F[j][k])));
                parts.push_back(mul(num(0.5), mul(h[k][j], F[j][i])));
            }
            pieces.push_back({"sym11", expand(sum_of(std::move(parts)))});
        }
    }

    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = i + 1; k < n; ++k)
            for (std::size_t l = 0; l < n; ++l) {
                Expr r = sub(sub(diff(h[k][l], sys.env.coordinate(i)),
                                 diff(h[i][l], sys.env.coordinate(k))),
                             diff(A[i][k], sys.env.velocity(l)));
                pieces.push_back({"vel13", expand(r)});
            }

    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = i + 1; k < n; ++k)
            for (std::size_t l = k + 1; l < n; ++l) {
                Expr r = add(add(diff(A[i][k], sys.env.coordinate(l)),
                                 diff(A[k][l], sys.env.coordinate(i))),
                             diff(A[l][i], sys.env.coordinate(k)));
                pieces.push_back({"jacobi14", expand(r)});
            }

    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = i + 1; k < n; ++k) {
            std::vector<Expr> parts;
            for (std::size_t j = 0; j < n; ++j) {
                parts.push_back(mul(h[i][j], B[j][k]));
                parts.push_back(neg(mul(h[k][j], B[j][i])));
            }
            pieces.push_back({"alg19", expand(sum_of(std::move(parts)))});
        }

    // compile
    std::vector<std::string> layout = {"t"};
    for (std::size_t i = 0; i < n; ++i) layout.push_back(sys.env.coordinate(i));
    for (std::size_t i = 0; i < n; ++i) layout.push_back(sys.env.velocity(i));
    std::vector<Program> progs;
    for (const auto& p : pieces) progs.emplace_back(p.residual, layout, sys.env);
    std::vector<Program> hprogs;
    for (const auto& row : h)
        for (const auto& e : row) hprogs.emplace_back(e, layout, sys.env);

    std::vector<Program> all = progs;
    for (const auto& p : hprogs) all.push_back(p);
    detail::SamplePlan plan = detail::draw_samples(sys, all, opt);

    const char* order[] = {"sym6", "grad6", "sym11", "vel13", "jacobi14", "alg19"};
    ConditionReport report;
    for (const char* id : order) {
        ConditionResult res;
        res.id = id;
        res.value = 0.0;
        std::size_t witness_k = 0;
        for (std::size_t k = 0; k < plan.points.size(); ++k) {
            for (std::size_t pi = 0; pi < pieces.size(); ++pi) {
                if (pieces[pi].id != id) continue;
                double v = std::fabs(progs[pi].run(plan.points[k]));
                if (v > res.value) {
                    res.value = v;
                    witness_k = k;
                }
            }
        }
        res.pass = res.value < opt.tol;
        if (!plan.points.empty()) res.witness = detail::bindings_at(plan, witness_k);
        report.conditions.push_back(std::move(res));
    }

    // nonsingularity: minimum |det h| over samples
    ConditionResult dres;
    dres.id = "det";
    dres.value = std::numeric_limits<double>::infinity();
    std::size_t witness_k = 0;
    for (std::size_t k = 0; k < plan.points.size(); ++k) {
        Mat hm(n, n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) hm(i, j) = hprogs[i * n + j].run(plan.points[k]);
        double d = std::fabs(det(hm));
        if (d < dres.value) {
            dres.value = d;
            witness_k = k;
        }
    }
    dres.pass = dres.value > opt.tol;
    if (!plan.points.empty()) dres.witness = detail::bindings_at(plan, witness_k);
    report.conditions.push_back(std::move(dres));
    return report;
}

// ---------------------------------------------------------------- multiplier search

enum class Ansatz { constant, scaled_time, diagonal_functions };

inline const char* ansatz_name(Ansatz a) {
    switch (a) {
        case Ansatz::constant: return "constant";
        case Ansatz::scaled_time: return "scaled_time";
        case Ansatz::diagonal_functions: return "diagonal_functions";
    }
    return "?";
}

inline std::optional<Ansatz> ansatz_from_name(std::string_view s) {
    if (s == "constant") return Ansatz::constant;
    if (s == "scaled_time") return Ansatz::scaled_time;
    if (s == "diagonal_functions") return Ansatz::diagonal_functions;
    return std::nullopt;
}

struct ForcedEntry {
    std::string condition;  // "alg19" or "sym11"
    std::size_t i = 0, j = 0;  // 0-based entry indices
};

/// Ordered record of how the conditions killed the ansatz, ending in a
/// vanishing determinant.
struct Obstruction {
    std::vector<ForcedEntry> chain;

    std::string describe() const {
        std::string s;
        for (const auto& f : chain)
            s += f.condition + " -> h" + std::to_string(f.i + 1) + std::to_string(f.j + 1) + " = 0; ";
        s += "det h = 0";
        return s;
    }
};

struct MultiplierSearch {
    std::optional<MultiplierCandidate> multiplier;
    std::optional<Obstruction> obstruction;
    std::vector<Mat> basis;        // solution space of the constant part, full
    std::vector<Mat> basis_alg19;  // solution space of the algebraic condition alone
    Expr time_factor = num(1.0);
    std::string note;

    bool found() const { return multiplier.has_value(); }
};

namespace detail {

struct SymPattern {
    std::size_t n;
    std::vector<std::pair<std::size_t, std::size_t>> entries;  // i <= j

    explicit SymPattern(std::size_t dim) : n(dim) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i; j < n; ++j) entries.emplace_back(i, j);
    }
    std::size_t size() const { return entries.size(); }

    Mat to_matrix(const std::vector<double>& coeffs) const {
        Mat m(n, n);
        for (std::size_t u = 0; u < entries.size(); ++u) {
            auto [i, j] = entries[u];
            m(i, j) = coeffs[u];
            m(j, i) = coeffs[u];
        }
        return m;
    }
    std::vector<double> from_matrix(const Mat& m) const {
        std::vector<double> v(entries.size());
        for (std::size_t u = 0; u < entries.size(); ++u) v[u] = m(entries[u].first, entries[u].second);
        return v;
    }
};

// rows of the algebraic condition h B - (h B)^T = 0 at a numeric B
inline void append_alg19_rows(std::vector<std::vector<double>>& rows, const SymPattern& pat,
                              const Mat& B) {
    std::size_t n = pat.n;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = i + 1; k < n; ++k) {
            std::vector<double> row(pat.size(), 0.0);
            for (std::size_t u = 0; u < pat.size(); ++u) {
                auto [a, b] = pat.entries[u];
                double c = 0.0;
                // (E_u B)_{ik} - (E_u B)_{ki} with E_u the unit symmetric matrix
                if (i == a) c += B(b, k);
                if (i == b && a != b) c += B(a, k);
                if (k == a) c -= B(b, i);
                if (k == b && a != b) c -= B(a, i);
                row[u] = c;
            }
            rows.push_back(std::move(row));
        }
    }
}

// rows of sym(h F) - lambda h = 0 for constant numeric F
inline void append_sym11_rows(std::vector<std::vector<double>>& rows, const SymPattern& pat,
                              const Mat& F, double lambda) {
    std::size_t n = pat.n;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = i; k < n; ++k) {
            std::vector<double> row(pat.size(), 0.0);
            for (std::size_t u = 0; u < pat.size(); ++u) {
                auto [a, b] = pat.entries[u];
                double c = 0.0;
                // (1/2)((E_u F)_{ik} + (E_u F)_{ki})
                if (i == a) c += 0.5 * F(b, k);
                if (i == b && a != b) c += 0.5 * F(a, k);
                if (k == a) c += 0.5 * F(b, i);
                if (k == b && a != b) c += 0.5 * F(a, i);
                if (i == a && k == b) c -= lambda;
                if (i == b && k == a && a != b) c -= lambda;
                row[u] = c;
            }
            rows.push_back(std::move(row));
        }
    }
}

inline Mat rows_to_mat(const std::vector<std::vector<double>>& rows, std::size_t cols) {
    Mat m(rows.size(), cols);
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < cols; ++j) m(i, j) = rows[i][j];
    return m;
}

inline std::vector<std::size_t> forced_entries(const std::vector<std::vector<double>>& basis,
                                               std::size_t dim, double tol = 1e-7) {
    std::vector<std::size_t> forced;
    for (std::size_t e = 0; e < dim; ++e) {
        double m = 0.0;
        for (const auto& v : basis) m = std::max(m, std::fabs(v[e]));
        if (m < tol) forced.push_back(e);
    }
    return forced;
}

inline std::vector<std::vector<double>> orthonormalize(std::vector<std::vector<double>> vs) {
    std::vector<std::vector<double>> out;
    for (auto& v : vs) {
        for (const auto& u : out) {
            double d = 0.0;
            for (std::size_t i = 0; i < v.size(); ++i) d += u[i] * v[i];
            for (std::size_t i = 0; i < v.size(); ++i) v[i] -= d * u[i];
        }
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm > 1e-12) {
            for (double& x : v) x /= norm;
            out.push_back(std::move(v));
        }
    }
    return out;
}

/// Representative of the solution space: the projection of the identity, or
/// the best-determinant seeded combination when that projection is singular.
/// Returns nullopt when the whole space is singular.
inline std::optional<std::vector<double>> pick_representative(
    const std::vector<std::vector<double>>& basis, const SymPattern& pat, std::uint64_t seed,
    double det_tol = 1e-6) {
    if (basis.empty()) return std::nullopt;
    auto ortho = orthonormalize(basis);
    std::vector<double> ivec = pat.from_matrix(Mat::identity(pat.n));
    std::vector<double> proj(ivec.size(), 0.0);
    for (const auto& u : ortho) {
        double d = 0.0;
        for (std::size_t i = 0; i < ivec.size(); ++i) d += u[i] * ivec[i];
        for (std::size_t i = 0; i < ivec.size(); ++i) proj[i] += d * u[i];
    }
    if (std::fabs(det(pat.to_matrix(proj))) > det_tol) return proj;

    std::vector<double> best;
    double best_det = det_tol;
    for (int attempt = 0; attempt < 64; ++attempt) {
        auto rng = point_rng(seed, attempt);
        std::uniform_real_distribution<double> dist(-1.0, 1.0);
        std::vector<double> v(ivec.size(), 0.0);
        for (const auto& u : ortho) {
            double c = dist(rng);
            for (std::size_t i = 0; i < v.size(); ++i) v[i] += c * u[i];
        }
        double d = std::fabs(det(pat.to_matrix(v)));
        if (d > best_det) {
            best_det = d;
            best = v;
        }
    }
    if (best.empty()) return std::nullopt;
    return best;
}

inline bool expr_constant(const Expr& e, const SymbolEnv& env) {
    for (const auto& s : free_symbols(e))
        if (env.classify(s) != SymbolEnv::SymKind::parameter) return false;
    return true;
}

inline bool expr_time_only(const Expr& e, const SymbolEnv& env) {
    for (const auto& s : free_symbols(e)) {
        auto k = env.classify(s);
        if (k != SymbolEnv::SymKind::parameter && k != SymbolEnv::SymKind::time) return false;
    }
    return true;
}

inline bool expr_is_zero(const Expr& e, const SymbolEnv& env) {
    Expr s = simplify(e);
    if (s.is_zero()) return true;
    if (expr_constant(s, env)) return std::fabs(eval(s, env, {})) < 1e-14;
    try {
        return equiv_zero(s, env);
    } catch (const resample_exhausted_error&) {
        return false;
    }
}

/// Numeric samples of a symbolic matrix over (t, q, dq); a single evaluation
/// when the matrix is parameter-constant.
inline std::vector<Mat> sample_matrix(const SecondOrderSystem& sys, const ExprMat& M,
                                      const CheckOptions& opt, int points) {
    std::size_t n = M.size();
    bool constant = true;
    for (const auto& row : M)
        for (const auto& e : row) constant = constant && expr_constant(e, sys.env);

    std::vector<std::string> layout = {"t"};
    for (std::size_t i = 0; i < sys.dim(); ++i) layout.push_back(sys.env.coordinate(i));
    for (std::size_t i = 0; i < sys.dim(); ++i) layout.push_back(sys.env.velocity(i));
    std::vector<Program> progs;
    for (const auto& row : M)
        for (const auto& e : row) progs.emplace_back(e, layout, sys.env);

    CheckOptions sopt = opt;
    sopt.samples = constant ? 1 : points;
    SamplePlan plan = draw_samples(sys, progs, sopt);
    std::vector<Mat> out;
    for (const auto& pt : plan.points) {
        Mat m(n, n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) m(i, j) = progs[i * n + j].run(pt);
        out.push_back(std::move(m));
    }
    return out;
}

}  // namespace detail

/// Search an ansatz class for an integrating multiplier.  When the conditions
/// successively force entries to vanish, the result carries the obstruction
/// chain instead of a candidate.
inline MultiplierSearch search_multiplier(const SecondOrderSystem& sys, Ansatz ansatz,
                                          const CheckOptions& opt = {}) {
    using namespace detail;
    std::size_t n = sys.dim();
    SymPattern pat(n);
    ExprMat F = velocity_jacobian(sys);
    ExprMat B = b_matrix(sys);
    MultiplierSearch result;

    auto entry_name = [&](std::size_t u) { return pat.entries[u]; };

    if (ansatz == Ansatz::constant || ansatz == Ansatz::scaled_time) {
        bool f_const = true;
        for (const auto& row : F)
            for (const auto& e : row) f_const = f_const && expr_constant(e, sys.env);

        // scalar time-dependent Jacobian: F = a(t) * I
        bool scalar_time = true;
        for (std::size_t i = 0; i < n && scalar_time; ++i)
            for (std::size_t j = 0; j < n && scalar_time; ++j) {
                if (i == j) continue;
                if (!expr_is_zero(F[i][j], sys.env)) scalar_time = false;
            }
        if (scalar_time)
            for (std::size_t i = 1; i < n && scalar_time; ++i)
                if (!expr_is_zero(sub(F[i][i], F[0][0]), sys.env)) scalar_time = false;
        Expr alpha = simplify(F.empty() ? num(0.0) : F[0][0]);
        if (scalar_time && !expr_time_only(alpha, sys.env)) scalar_time = false;

        if (ansatz == Ansatz::constant && !f_const)
            throw unsupported_ansatz_error(
                "constant ansatz requires a constant velocity Jacobian df/dq'");
        if (ansatz == Ansatz::scaled_time && !scalar_time && !f_const)
            throw unsupported_ansatz_error(
                "scaled_time ansatz requires df/dq' constant or a(t) * identity");

        // stage 1: algebraic condition rows
        std::vector<std::vector<double>> rows;
        for (const auto& Bs : sample_matrix(sys, B, opt, 5)) append_alg19_rows(rows, pat, Bs);
        auto ns19 = nullspace(rows_to_mat(rows, pat.size()));
        for (const auto& v : ns19) result.basis_alg19.push_back(pat.to_matrix(v));
        std::vector<std::size_t> forced19 = forced_entries(ns19, pat.size());
        Obstruction chain;
        for (auto u : forced19) {
            auto [i, j] = entry_name(u);
            chain.chain.push_back({"alg19", i, j});
        }

        // stage 2: transport condition rows
        Expr time_factor = num(1.0);
        std::string note;
        if (ansatz == Ansatz::scaled_time && scalar_time) {
            auto integral = antiderivative(alpha, "t");
            if (!integral)
                throw unsupported_ansatz_error("no closed form for the time factor: a(t) = " +
                                               to_string(alpha));
            time_factor = simplify(exp_(neg(*integral)));
            note = "time factor solves c' + a*c = 0 with a = " + to_string(alpha) +
                   "; c = " + to_string(time_factor);
        } else {
            Mat Fm(n, n);
            std::vector<Mat> fs = sample_matrix(sys, F, opt, 1);
            Fm = fs.front();
            double lambda = 0.0;
            if (ansatz == Ansatz::scaled_time) {
                for (std::size_t i = 0; i < n; ++i) lambda += Fm(i, i);
                lambda /= static_cast<double>(n);
                if (lambda != 0.0) {
                    time_factor = simplify(exp_(mul(num(-lambda), sym("t"))));
                    note = "time factor c = " + to_string(time_factor);
                }
            }
            append_sym11_rows(rows, pat, Fm, ansatz == Ansatz::scaled_time ? lambda : 0.0);
        }
        auto ns = nullspace(rows_to_mat(rows, pat.size()));
        for (auto u : forced_entries(ns, pat.size())) {
            if (std::find(forced19.begin(), forced19.end(), u) != forced19.end()) continue;
            auto [i, j] = entry_name(u);
            chain.chain.push_back({"sym11", i, j});
        }

        for (const auto& v : ns) result.basis.push_back(pat.to_matrix(v));
        result.time_factor = time_factor;
        result.note = note;

        auto rep = pick_representative(ns, pat, opt.seed);
        if (!rep) {
            result.obstruction = std::move(chain);
            return result;
        }
        Mat h0 = pat.to_matrix(*rep);
        // normalize so the largest entry is 1
        double scale = h0.max_abs();
        ExprMat hx = expr_mat(n, n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                hx[i][j] = simplify(mul(num(h0(i, j) / scale), time_factor));
        result.multiplier = MultiplierCandidate{std::move(hx)};
        return result;
    }

    // diagonal_functions: pointwise algebraic analysis over the full symmetric
    // pattern first, then the transport condition on the diagonal entries.
    Obstruction chain;
    std::vector<Mat> Bs = sample_matrix(sys, B, opt, 5);
    std::vector<bool> forced_all(pat.size(), true);
    for (const auto& Bp : Bs) {
        std::vector<std::vector<double>> rows;
        append_alg19_rows(rows, pat, Bp);
        auto ns = nullspace(rows_to_mat(rows, pat.size()));
        auto forced = forced_entries(ns, pat.size());
        std::vector<bool> here(pat.size(), false);
        for (auto u : forced) here[u] = true;
        for (std::size_t u = 0; u < pat.size(); ++u) forced_all[u] = forced_all[u] && here[u];
    }
    std::vector<bool> diag_alive(n, true);
    for (std::size_t u = 0; u < pat.size(); ++u) {
        if (!forced_all[u]) continue;
        auto [i, j] = entry_name(u);
        chain.chain.push_back({"alg19", i, j});
        if (i == j) diag_alive[i] = false;
    }

    // transport condition, off-diagonal part: pointwise rows over the
    // surviving diagonal unknowns
    std::vector<Mat> Fs = sample_matrix(sys, F, opt, 5);
    std::vector<bool> forced_diag(n, true);
    for (const auto& Fp : Fs) {
        std::vector<std::vector<double>> rows;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = i + 1; k < n; ++k) {
                std::vector<double> row(n, 0.0);
                row[i] = 0.5 * Fp(i, k);
                row[k] = 0.5 * Fp(k, i);
                rows.push_back(std::move(row));
            }
        auto ns = nullspace(rows_to_mat(rows, n));
        auto forced = forced_entries(ns, n);
        std::vector<bool> here(n, false);
        for (auto u : forced) here[u] = true;
        for (std::size_t i = 0; i < n; ++i) forced_diag[i] = forced_diag[i] && here[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (forced_diag[i] && diag_alive[i]) {
            chain.chain.push_back({"sym11", i, i});
            diag_alive[i] = false;
        }
    }

    bool singular = false;
    for (std::size_t i = 0; i < n; ++i) singular = singular || !diag_alive[i];
    if (singular) {
        result.obstruction = std::move(chain);
        return result;
    }

    // diagonal transport: D h_i + h_i F^i_i = 0 with h_i = c_i(t)
    ExprMat hx = expr_mat(n, n);
    std::string note;
    for (std::size_t i = 0; i < n; ++i) {
        Expr a = simplify(F[i][i]);
        if (!detail::expr_time_only(a, sys.env))
            throw unsupported_ansatz_error(
                "diagonal ansatz requires velocity-free diagonal of df/dq'");
        auto integral = antiderivative(a, "t");
        if (!integral)
            throw unsupported_ansatz_error("no closed form for the diagonal time factor");
        hx[i][i] = simplify(exp_(neg(*integral)));
        if (i == 0) {
            result.time_factor = hx[0][0];
            note = "diagonal entries c_i solve c' + F^i_i * c = 0";
        }
    }
    result.note = note;
    result.multiplier = MultiplierCandidate{std::move(hx)};
    return result;
}

// ---------------------------------------------------------------- reconstruction

struct BuildOptions {
    int trials = 64;
    double tol = 1e-8;
    std::uint64_t seed = 42;
    SampleBox box{};
    std::optional<std::vector<double>> base_velocity;  // homotopy base point
};

namespace detail {

/// True when some multiplier entry fails to evaluate at zero velocity.
inline bool singular_at_rest(const SecondOrderSystem& sys, const ExprMat& h,
                             const BuildOptions& opt) {
    std::vector<std::string> layout = {"t"};
    for (std::size_t i = 0; i < sys.dim(); ++i) layout.push_back(sys.env.coordinate(i));
    for (std::size_t i = 0; i < sys.dim(); ++i) layout.push_back(sys.env.velocity(i));
    std::vector<Program> progs;
    for (const auto& row : h)
        for (const auto& e : row) progs.emplace_back(e, layout, sys.env);
    for (int k = 0; k < 8; ++k) {
        auto rng = point_rng(opt.seed, 1000 + k);
        std::vector<double> pt(layout.size(), 0.0);
        pt[0] = opt.box.draw(rng);
        for (std::size_t i = 0; i < sys.dim(); ++i) pt[1 + i] = opt.box.draw(rng);
        for (const auto& p : progs) {
            try {
                (void)p.run(pt);
            } catch (const expr_domain_error&) {
                return true;
            }
        }
    }
    return false;
}

inline std::vector<double> base_velocity(const SecondOrderSystem& sys, const ExprMat& h,
                                         const BuildOptions& opt) {
    if (opt.base_velocity) {
        if (opt.base_velocity->size() != sys.dim()) throw error("base velocity has wrong dimension");
        return *opt.base_velocity;
    }
    if (singular_at_rest(sys, h, opt)) return std::vector<double>(sys.dim(), 1.0);
    return std::vector<double>(sys.dim(), 0.0);
}

}  // namespace detail

/// Velocity part K with Hessian equal to h, built by iterated closed-form
/// integration from the base velocity.  Nullopt when an integrand falls
/// outside the symbolic patterns (numeric fallback takes over).
inline std::optional<Expr> build_K_symbolic(const SecondOrderSystem& sys, const ExprMat& h,
                                            const std::vector<double>& v0) {
    std::size_t n = sys.dim();
    const std::string s = "_s";
    std::vector<Expr> G(n, num(0.0));
    for (std::size_t j = 0; j < n; ++j) {
        std::vector<Expr> parts;
        for (std::size_t i = 0; i < n; ++i) {
            std::map<std::string, Expr> m;
            m[sys.env.velocity(i)] = sym(s);
            for (std::size_t k = i + 1; k < n; ++k) m[sys.env.velocity(k)] = num(v0[k]);
            Expr integrand = subst(h[i][j], m);
            auto seg = integrate(integrand, s, num(v0[i]), sym(sys.env.velocity(i)));
            if (!seg) return std::nullopt;
            parts.push_back(*seg);
        }
        G[j] = simplify(sum_of(std::move(parts)));
    }
    std::vector<Expr> parts;
    for (std::size_t j = 0; j < n; ++j) {
        std::map<std::string, Expr> m;
        m[sys.env.velocity(j)] = sym(s);
        for (std::size_t k = j + 1; k < n; ++k) m[sys.env.velocity(k)] = num(v0[k]);
        Expr integrand = subst(G[j], m);
        auto seg = integrate(integrand, s, num(v0[j]), sym(sys.env.velocity(j)));
        if (!seg) return std::nullopt;
        parts.push_back(*seg);
    }
    return simplify(sum_of(std::move(parts)));
}

/// build K and verify its velocity Hessian reproduces h.
inline Expr build_K(const SecondOrderSystem& sys, const MultiplierCandidate& mc,
                    const BuildOptions& opt = {}) {
    auto v0 = detail::base_velocity(sys, mc.entries, opt);
    auto K = build_K_symbolic(sys, mc.entries, v0);
    if (!K) throw no_closed_form_error("no closed-form velocity part for this multiplier");
    EquivOptions eopt{opt.trials, opt.tol, opt.seed, opt.box};
    for (std::size_t i = 0; i < sys.dim(); ++i) {
        for (std::size_t j = i; j < sys.dim(); ++j) {
            Expr hess = diff(diff(*K, sys.env.velocity(i)), sys.env.velocity(j));
            std::map<std::string, double> witness;
            if (!equiv_random(hess, mc.entries[i][j], sys.env, eopt, &witness))
                throw verification_error("velocity Hessian of K does not match the multiplier",
                                         0.0, witness);
        }
    }
    return *K;
}

/// L_ik = curl of dK/dq' plus the antisymmetric bracket, velocity-free by the
/// conditions; verified then evaluated at the base velocity.
inline ExprMat build_L_ik(const SecondOrderSystem& sys, const MultiplierCandidate& mc,
                          const Expr& K, const BuildOptions& opt = {}) {
    std::size_t n = sys.dim();
    ExprMat A = a_matrix(sys, mc.entries);
    ExprMat L = expr_mat(n, n);
    EquivOptions eopt{opt.trials, opt.tol, opt.seed, opt.box};
    auto v0 = detail::base_velocity(sys, mc.entries, opt);
    std::map<std::string, Expr> at_base;
    for (std::size_t i = 0; i < n; ++i) at_base[sys.env.velocity(i)] = num(v0[i]);

    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < n; ++k) {
            if (i == k) continue;
            Expr curl = sub(diff(diff(K, sys.env.velocity(i)), sys.env.coordinate(k)),
                            diff(diff(K, sys.env.velocity(k)), sys.env.coordinate(i)));
            Expr full = expand(add(curl, A[i][k]));
            for (std::size_t l = 0; l < n; ++l) {
                std::map<std::string, double> witness;
                Expr dv = diff(full, sys.env.velocity(l));
                if (!equiv_zero(dv, sys.env, eopt, &witness))
                    throw verification_error("L_ik depends on the velocities", 0.0, witness);
            }
            L[i][k] = subst(full, at_base);
        }
    }
    return L;
}

/// l_i from the antisymmetric part by the weighted radial homotopy, gauge
/// term zero.
inline std::vector<Expr> build_l(const SecondOrderSystem& sys, const ExprMat& L_ik,
                                 const BuildOptions& opt = {}) {
    std::size_t n = sys.dim();
    const std::string a = "_a";
    std::map<std::string, Expr> scale;
    for (std::size_t i = 0; i < n; ++i)
        scale[sys.env.coordinate(i)] = mul(sym(a), sym(sys.env.coordinate(i)));

    std::vector<Expr> l(n, num(0.0));
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<Expr> parts;
        for (std::size_t k = 0; k < n; ++k) {
            if (L_ik[k][i].is_zero()) continue;
            parts.push_back(mul(sym(a), mul(sym(sys.env.coordinate(k)), subst(L_ik[k][i], scale))));
        }
        if (parts.empty()) continue;
        auto seg = integrate(sum_of(std::move(parts)), a, num(0.0), num(1.0));
        if (!seg) throw no_closed_form_error("no closed form for l_i");
        l[i] = *seg;
    }

    // verify dl_k/dq_i - dl_i/dq_k = L_ik
    EquivOptions eopt{opt.trials, opt.tol, opt.seed, opt.box};
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k) {
            if (i == k) continue;
            Expr curl = sub(diff(l[k], sys.env.coordinate(i)), diff(l[i], sys.env.coordinate(k)));
            std::map<std::string, double> witness;
            if (!equiv_random(curl, L_ik[i][k], sys.env, eopt, &witness))
                throw verification_error("l_i does not reproduce L_ik", 0.0, witness);
        }
    return l;
}

namespace detail {

inline std::vector<Expr> m_vector(const SecondOrderSystem& sys, const MultiplierCandidate& mc,
                                  const Expr& K, const ExprMat& L_ik, const std::vector<Expr>& l) {
    std::size_t n = sys.dim();
    std::vector<Expr> m(n, num(0.0));
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<Expr> parts;
        for (std::size_t j = 0; j < n; ++j) parts.push_back(mul(mc.entries[i][j], sys.forces[j]));
        parts.push_back(neg(diff(K, sys.env.coordinate(i))));
        parts.push_back(diff(diff(K, sys.env.velocity(i)), "t"));
        for (std::size_t j = 0; j < n; ++j) {
            parts.push_back(
                mul(sym(sys.env.velocity(j)), diff(diff(K, sys.env.velocity(i)), sys.env.coordinate(j))));
            parts.push_back(neg(mul(sym(sys.env.velocity(j)), L_ik[i][j])));
        }
        parts.push_back(diff(l[i], "t"));
        m[i] = expand(sum_of(std::move(parts)));
    }
    return m;
}

}  // namespace detail

/// Potential-like part: gradient homotopy of the velocity-free vector m,
/// gauge function zero.
inline Expr build_l0(const SecondOrderSystem& sys, const MultiplierCandidate& mc, const Expr& K,
                     const ExprMat& L_ik, const std::vector<Expr>& l, const BuildOptions& opt = {}) {
    std::size_t n = sys.dim();
    std::vector<Expr> m = detail::m_vector(sys, mc, K, L_ik, l);
    EquivOptions eopt{opt.trials, opt.tol, opt.seed, opt.box};

    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < n; ++k) {
            std::map<std::string, double> witness;
            if (!equiv_zero(diff(m[i], sys.env.velocity(k)), sys.env, eopt, &witness))
                throw verification_error("m_i depends on the velocities", 0.0, witness);
        }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = i + 1; k < n; ++k) {
            Expr curl = sub(diff(m[i], sys.env.coordinate(k)), diff(m[k], sys.env.coordinate(i)));
            std::map<std::string, double> witness;
            if (!equiv_zero(curl, sys.env, eopt, &witness))
                throw verification_error("m is not a gradient", 0.0, witness);
        }

    auto v0 = detail::base_velocity(sys, mc.entries, opt);
    std::map<std::string, Expr> at_base;
    for (std::size_t i = 0; i < n; ++i) at_base[sys.env.velocity(i)] = num(v0[i]);

    const std::string a = "_a";
    std::map<std::string, Expr> scale;
    for (std::size_t i = 0; i < n; ++i)
        scale[sys.env.coordinate(i)] = mul(sym(a), sym(sys.env.coordinate(i)));

    std::vector<Expr> parts;
    for (std::size_t k = 0; k < n; ++k) {
        Expr mk = subst(m[k], at_base);
        if (mk.is_zero()) continue;
        parts.push_back(mul(sym(sys.env.coordinate(k)), subst(mk, scale)));
    }
    Expr l0 = num(0.0);
    if (!parts.empty()) {
        auto seg = integrate(sum_of(std::move(parts)), a, num(0.0), num(1.0));
        if (!seg) throw no_closed_form_error("no closed form for l_0");
        l0 = *seg;
    }

    for (std::size_t i = 0; i < n; ++i) {
        std::map<std::string, double> witness;
        Expr grad = diff(l0, sys.env.coordinate(i));
        Expr mi = subst(m[i], at_base);
        if (!equiv_random(grad, mi, sys.env, eopt, &witness))
            throw verification_error("gradient of l_0 does not match m", 0.0, witness);
    }
    return l0;
}

/// Euler-Lagrange expressions of L in (t, q, q', q''), accelerations spelled
/// dd<name>.
inline std::vector<Expr> euler_lagrange(const Expr& L, const SymbolEnv& env) {
    std::size_t n = env.dim();
    std::vector<Expr> out(n, num(0.0));
    for (std::size_t i = 0; i < n; ++i) {
        Expr dLdv = diff(L, env.velocity(i));
        std::vector<Expr> parts = {diff(L, env.coordinate(i)), neg(diff(dLdv, "t"))};
        for (std::size_t j = 0; j < n; ++j) {
            parts.push_back(neg(mul(sym(env.velocity(j)), diff(dLdv, env.coordinate(j)))));
            parts.push_back(neg(mul(sym(env.accel(j)), diff(dLdv, env.velocity(j)))));
        }
        out[i] = simplify(sum_of(std::move(parts)));
    }
    return out;
}

// ---------------------------------------------------------------- assembled Lagrangian

struct LagrangianSO {
    Expr K;
    std::vector<Expr> l;
    Expr l0;
    Expr L;  // K + l_i dq^i + l_0
    bool numeric = false;

    // numeric-fallback callables (set when `numeric`)
    std::function<double(double, std::span<const double>, std::span<const double>)> value;
    std::function<double(double, std::span<const double>, std::span<const double>, std::size_t)>
        grad_q;
    std::function<double(double, std::span<const double>, std::span<const double>, std::size_t)>
        grad_v;
};

namespace detail {

/// Quadrature-backed Lagrangian for multipliers whose homotopy integrals have
/// no closed form.  Integrands stay symbolic; only the homotopy parameters
/// are integrated numerically (32-node Gauss-Legendre per axis).
struct NumericLagrangian {
    std::size_t n;
    std::vector<double> v0;
    SymbolEnv env;
    // layouts: full = (t, q, dq); conf = (t, q)
    std::vector<Program> h, dh_dq, hf;       // n*n, n*n*n, n
    std::vector<Program> A_at_base;          // n*n at dq = v0
    std::vector<Program> dA_dt_at_base;      // n*n
    std::vector<Program> dhf_dt_at_base;     // n

    static std::vector<std::string> full_layout(const SymbolEnv& env) {
        std::vector<std::string> lay = {"t"};
        for (std::size_t i = 0; i < env.dim(); ++i) lay.push_back(env.coordinate(i));
        for (std::size_t i = 0; i < env.dim(); ++i) lay.push_back(env.velocity(i));
        return lay;
    }

    NumericLagrangian(const SecondOrderSystem& sys, const MultiplierCandidate& mc,
                      std::vector<double> base)
        : n(sys.dim()), v0(std::move(base)), env(sys.env) {
        auto lay = full_layout(env);
        std::map<std::string, Expr> at_base;
        for (std::size_t i = 0; i < n; ++i) at_base[env.velocity(i)] = num(v0[i]);
        ExprMat Am = a_matrix(sys, mc.entries);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                h.emplace_back(mc.entries[i][j], lay, env);
                for (std::size_t m = 0; m < n; ++m)
                    dh_dq.emplace_back(diff(mc.entries[i][j], env.coordinate(m)), lay, env);
                Expr Ab = subst(Am[i][j], at_base);
                A_at_base.emplace_back(Ab, lay, env);
                dA_dt_at_base.emplace_back(diff(Ab, "t"), lay, env);
            }
            std::vector<Expr> parts;
            for (std::size_t j = 0; j < n; ++j) parts.push_back(mul(mc.entries[i][j], sys.forces[j]));
            Expr hfi = subst(simplify(sum_of(std::move(parts))), at_base);
            hf.emplace_back(hfi, lay, env);
            dhf_dt_at_base.emplace_back(diff(hfi, "t"), lay, env);
        }
    }

    std::vector<double> point(double t, std::span<const double> q, std::span<const double> dq) const {
        std::vector<double> pt(1 + 2 * n);
        pt[0] = t;
        for (std::size_t i = 0; i < n; ++i) pt[1 + i] = q[i];
        for (std::size_t i = 0; i < n; ++i) pt[1 + n + i] = dq[i];
        return pt;
    }

    double K_value(double t, std::span<const double> q, std::span<const double> dq) const {
        const auto& g = GaussLegendre01::get();
        std::vector<double> w(n);
        double acc = 0.0;
        std::vector<double> pt = point(t, q, dq);
        for (int ia = 0; ia < 32; ++ia) {
            double a = g.x[ia];
            for (int ib = 0; ib < 32; ++ib) {
                double b = g.x[ib];
                for (std::size_t m = 0; m < n; ++m)
                    pt[1 + n + m] = v0[m] + a * b * (dq[m] - v0[m]);
                double cell = 0.0;
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < n; ++j)
                        cell += (dq[i] - v0[i]) * (dq[j] - v0[j]) * h[i * n + j].run(pt);
                acc += g.w[ia] * g.w[ib] * a * cell;
            }
        }
        return acc;
    }

    // dK/ddq_m = single homotopy of h along the shifted ray
    double G_value(double t, std::span<const double> q, std::span<const double> dq,
                   std::size_t m) const {
        const auto& g = GaussLegendre01::get();
        std::vector<double> pt = point(t, q, dq);
        double acc = 0.0;
        for (int ib = 0; ib < 32; ++ib) {
            double b = g.x[ib];
            for (std::size_t k = 0; k < n; ++k) pt[1 + n + k] = v0[k] + b * (dq[k] - v0[k]);
            double cell = 0.0;
            for (std::size_t i = 0; i < n; ++i) cell += (dq[i] - v0[i]) * h[i * n + m].run(pt);
            acc += g.w[ib] * cell;
        }
        return acc;
    }

    double dK_dq(double t, std::span<const double> q, std::span<const double> dq,
                 std::size_t m) const {
        const auto& g = GaussLegendre01::get();
        std::vector<double> pt = point(t, q, dq);
        double acc = 0.0;
        for (int ia = 0; ia < 32; ++ia) {
            double a = g.x[ia];
            for (int ib = 0; ib < 32; ++ib) {
                double b = g.x[ib];
                for (std::size_t k = 0; k < n; ++k)
                    pt[1 + n + k] = v0[k] + a * b * (dq[k] - v0[k]);
                double cell = 0.0;
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < n; ++j)
                        cell += (dq[i] - v0[i]) * (dq[j] - v0[j]) *
                                dh_dq[(i * n + j) * n + m].run(pt);
                acc += g.w[ia] * g.w[ib] * a * cell;
            }
        }
        return acc;
    }

    double l_value(double t, std::span<const double> q, std::size_t i, bool dt = false) const {
        const auto& g = GaussLegendre01::get();
        std::vector<double> sq(n);
        std::vector<double> rest(n, 0.0);
        double acc = 0.0;
        for (int ia = 0; ia < 32; ++ia) {
            double a = g.x[ia];
            for (std::size_t m = 0; m < n; ++m) sq[m] = a * q[m];
            std::vector<double> pt = point(t, sq, rest);
            for (std::size_t m = 0; m < n; ++m) pt[1 + n + m] = v0[m];
            double cell = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                const auto& prog = dt ? dA_dt_at_base[k * n + i] : A_at_base[k * n + i];
                cell += q[k] * prog.run(pt);
            }
            acc += g.w[ia] * a * cell;
        }
        return acc;
    }

    double m_value(double t, std::span<const double> q, std::size_t i) const {
        std::vector<double> rest(n, 0.0);
        std::vector<double> pt = point(t, q, rest);
        for (std::size_t m = 0; m < n; ++m) pt[1 + n + m] = v0[m];
        double acc = hf[i].run(pt);
        for (std::size_t j = 0; j < n; ++j) acc -= v0[j] * A_at_base[i * n + j].run(pt);
        acc += l_value(t, q, i, /*dt=*/true);
        return acc;
    }

    double l0_value(double t, std::span<const double> q) const {
        const auto& g = GaussLegendre01::get();
        std::vector<double> sq(n);
        double acc = 0.0;
        for (int ia = 0; ia < 32; ++ia) {
            double a = g.x[ia];
            for (std::size_t m = 0; m < n; ++m) sq[m] = a * q[m];
            double cell = 0.0;
            for (std::size_t k = 0; k < n; ++k) cell += q[k] * m_value(t, sq, k);
            acc += g.w[ia] * cell;
        }
        return acc;
    }

    double L_value(double t, std::span<const double> q, std::span<const double> dq) const {
        double acc = K_value(t, q, dq) + l0_value(t, q);
        for (std::size_t i = 0; i < n; ++i) acc += l_value(t, q, i) * dq[i];
        return acc;
    }

    double dL_dv(double t, std::span<const double> q, std::span<const double> dq,
                 std::size_t i) const {
        return G_value(t, q, dq, i) + l_value(t, q, i);
    }

    double dL_dq(double t, std::span<const double> q, std::span<const double> dq,
                 std::size_t m) const {
        double acc = dK_dq(t, q, dq, m);
        // l_i by central difference (smooth quadrature values)
        double hstep = 1e-5;
        std::vector<double> qp(q.begin(), q.end()), qm(q.begin(), q.end());
        qp[m] += hstep;
        qm[m] -= hstep;
        for (std::size_t i = 0; i < n; ++i)
            acc += dq[i] * (l_value(t, qp, i) - l_value(t, qm, i)) / (2 * hstep);
        acc += m_value(t, q, m);  // gradient of l_0
        return acc;
    }
};

}  // namespace detail

/// Full reconstruction: K, l_i, l_0 assembled into L, with the
/// Euler-Lagrange postcondition verified against -h (q'' - f).
inline LagrangianSO build_lagrangian(const SecondOrderSystem& sys, const MultiplierCandidate& mc,
                                     const BuildOptions& opt = {}) {
    std::size_t n = sys.dim();
    auto v0 = detail::base_velocity(sys, mc.entries, opt);

    // quadrature fallback; certified downstream through the discrete action
    auto numeric_route = [&]() {
        auto impl = std::make_shared<detail::NumericLagrangian>(sys, mc, v0);
        LagrangianSO out;
        out.numeric = true;
        out.K = num(0.0);
        out.l.assign(n, num(0.0));
        out.l0 = num(0.0);
        out.L = num(0.0);
        out.value = [impl](double t, std::span<const double> q, std::span<const double> dq) {
            return impl->L_value(t, q, dq);
        };
        out.grad_q = [impl](double t, std::span<const double> q, std::span<const double> dq,
                            std::size_t i) { return impl->dL_dq(t, q, dq, i); };
        out.grad_v = [impl](double t, std::span<const double> q, std::span<const double> dq,
                            std::size_t i) { return impl->dL_dv(t, q, dq, i); };
        return out;
    };

    auto K_sym = build_K_symbolic(sys, mc.entries, v0);
    if (!K_sym) return numeric_route();

    try {
        EquivOptions eopt{opt.trials, opt.tol, opt.seed, opt.box};
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i; j < n; ++j) {
                Expr hess = diff(diff(*K_sym, sys.env.velocity(i)), sys.env.velocity(j));
                std::map<std::string, double> witness;
                if (!equiv_random(hess, mc.entries[i][j], sys.env, eopt, &witness))
                    throw verification_error("velocity Hessian of K does not match the multiplier",
                                             0.0, witness);
            }

        LagrangianSO out;
        out.K = *K_sym;
        ExprMat L_ik = build_L_ik(sys, mc, out.K, opt);
        out.l = build_l(sys, L_ik, opt);
        out.l0 = build_l0(sys, mc, out.K, L_ik, out.l, opt);

        std::vector<Expr> terms = {out.K, out.l0};
        for (std::size_t i = 0; i < n; ++i)
            terms.push_back(mul(out.l[i], sym(sys.env.velocity(i))));
        out.L = simplify(sum_of(std::move(terms)));

        // EL(L) + h (q'' - f) must vanish identically, accelerations sampled free
        std::vector<Expr> el = euler_lagrange(out.L, sys.env);
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<Expr> parts = {el[i]};
            for (std::size_t j = 0; j < n; ++j)
                parts.push_back(mul(mc.entries[i][j], sub(sym(sys.env.accel(j)), sys.forces[j])));
            std::map<std::string, double> witness;
            if (!equiv_zero(simplify(sum_of(std::move(parts))), sys.env, eopt, &witness))
                throw verification_error("Euler-Lagrange expressions do not match -h(q''-f)", 0.0,
                                         witness);
        }
        return out;
    } catch (const no_closed_form_error&) {
        return numeric_route();
    }
}

// ---------------------------------------------------------------- 1-D transport solver

/// Numeric multiplier field h(t, q, q') for one-dimensional systems, built by
/// integrating the characteristics of the transport equation backward to the
/// initial surface.
class Multiplier1D {
public:
    double step() const { return dt_; }

    Multiplier1D(const SecondOrderSystem& sys, const Expr& h0, double dt = 1e-3)
        : dt_(dt),
          f_(sys.forces[0], layout(sys), sys.env),
          fd_(diff(sys.forces[0], sys.env.velocity(0)), layout(sys), sys.env),
          h0_(h0, {sys.env.coordinate(0), sys.env.velocity(0)}, sys.env) {
        if (sys.dim() != 1) throw error("transport solver is one-dimensional");
    }

    double operator()(double t, double q, double dq) const {
        // backward characteristic from (t, q, dq) to time 0; the accumulated
        // integral of df/dq' along it fixes the amplitude
        double state[3] = {q, dq, 0.0};
        int steps = static_cast<int>(std::ceil(std::fabs(t) / dt_));
        if (steps > 0) {
            double h = -t / steps;
            double tau = t;
            try {
                for (int k = 0; k < steps; ++k) {
                    rk4_step(tau, state, h);
                    tau += h;
                    if (!std::isfinite(state[0]) || !std::isfinite(state[1]))
                        throw integration_error("characteristic blow-up");
                }
            } catch (const expr_domain_error& e) {
                throw integration_error(std::string("characteristic left the domain: ") + e.what());
            }
        }
        double args[2] = {state[0], state[1]};
        return h0_.run(args) * std::exp(state[2]);
    }

private:
    static std::vector<std::string> layout(const SecondOrderSystem& sys) {
        return {"t", sys.env.coordinate(0), sys.env.velocity(0)};
    }

    void deriv(double tau, const double* s, double* out) const {
        double args[3] = {tau, s[0], s[1]};
        out[0] = s[1];
        out[1] = f_.run(args);
        out[2] = fd_.run(args);
    }

    void rk4_step(double tau, double* s, double h) const {
        double k1[3], k2[3], k3[3], k4[3], tmp[3];
        deriv(tau, s, k1);
        for (int i = 0; i < 3; ++i) tmp[i] = s[i] + 0.5 * h * k1[i];
        deriv(tau + 0.5 * h, tmp, k2);
        for (int i = 0; i < 3; ++i) tmp[i] = s[i] + 0.5 * h * k2[i];
        deriv(tau + 0.5 * h, tmp, k3);
        for (int i = 0; i < 3; ++i) tmp[i] = s[i] + h * k3[i];
        deriv(tau + h, tmp, k4);
        for (int i = 0; i < 3; ++i) s[i] += h / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
    }

    double dt_;
    Program f_, fd_;
    Program h0_;
};

inline Multiplier1D solve_1d_multiplier(const SecondOrderSystem& sys, const Expr& h0,
                                        double dt = 1e-3) {
    return Multiplier1D(sys, h0, dt);
}

/// Finite-difference residual of the transport equation over seeded samples;
/// O(step) by construction of the field.
inline double transport_residual_1d(const SecondOrderSystem& sys, const Multiplier1D& field,
                                    int samples = 16, double t_max = 1.0, double fd_step = 1e-4,
                                    std::uint64_t seed = 42, SampleBox box = {}) {
    Program f(sys.forces[0], {"t", sys.env.coordinate(0), sys.env.velocity(0)}, sys.env);
    double worst = 0.0;
    for (int k = 0; k < samples; ++k) {
        auto rng = point_rng(seed, k);
        std::uniform_real_distribution<double> tdist(0.1, t_max);
        double t = tdist(rng), q = box.draw(rng), dq = box.draw(rng);
        double d = fd_step;
        double dhdt = (field(t + d, q, dq) - field(t - d, q, dq)) / (2 * d);
        double dhdq = (field(t, q + d, dq) - field(t, q - d, dq)) / (2 * d);
        double fp[3] = {t, q, dq + d};
        double fm[3] = {t, q, dq - d};
        double dfh = (f.run(fp) * field(t, q, dq + d) - f.run(fm) * field(t, q, dq - d)) / (2 * d);
        worst = std::max(worst, std::fabs(dhdt + dq * dhdq + dfh));
    }
    return worst;
}

/// The five conditions specialized to a 1-D numeric field: symmetry and the
/// purely multi-dimensional conditions are identically zero; the transport
/// equation is the only live residual; `det` samples |h|.
inline ConditionReport check_field_1d(const SecondOrderSystem& sys, const Multiplier1D& field,
                                      const CheckOptions& opt = {}, double t_max = 1.0) {
    ConditionReport rep;
    for (const char* id : {"sym6", "grad6", "vel13", "jacobi14", "alg19"})
        rep.conditions.push_back({id, true, 0.0, {}});
    double r = transport_residual_1d(sys, field, opt.samples, t_max, 1e-4, opt.seed, opt.box);
    // the residual is first order in the characteristic step
    ConditionResult trans{"sym11", r < std::max(opt.tol, 100 * field.step()), r, {}};
    double min_h = std::numeric_limits<double>::infinity();
    for (int k = 0; k < opt.samples; ++k) {
        auto rng = point_rng(opt.seed, 5000 + k);
        std::uniform_real_distribution<double> tdist(0.0, t_max);
        min_h = std::min(min_h, std::fabs(field(tdist(rng), opt.box.draw(rng), opt.box.draw(rng))));
    }
    rep.conditions.insert(rep.conditions.begin() + 2, trans);
    rep.conditions.push_back({"det", min_h > opt.tol, min_h, {}});
    return rep;
}

}  // namespace helm
