#pragma once

// Symbolic differentiation, distribution of products over sums, polynomial
// collection, and a small pattern-based antiderivative engine.
//
// The antiderivative covers what the reconstruction formulas actually
// produce: power terms, exponentials linear in the variable, logarithms and
// arctangents of quadratics, and rational terms with a single quadratic
// denominator.  Anything else reports failure and callers fall back to
// quadrature.

#include <optional>

#include "eval.hpp"
#include "expr.hpp"

namespace helm {

// ---------------------------------------------------------------- diff

inline Expr diff_raw(const Expr& e, const std::string& s);

namespace detail {

inline Expr diff_call(const Expr& e, const std::string& s) {
    const Expr& u = e.arg();
    Expr du = diff_raw(u, s);
    if (du.is_zero()) return num(0.0);
    switch (e.fn()) {
        case Fn::exp: return mul(exp_(u), du);
        case Fn::ln: return div(du, u);
        case Fn::sin: return mul(cos_(u), du);
        case Fn::cos: return neg(mul(sin_(u), du));
        case Fn::tan: return div(du, pow_(cos_(u), Rational{2}));
        case Fn::arctan: return div(du, add(num(1.0), pow_(u, Rational{2})));
        case Fn::sqrt: return div(du, mul(num(2.0), sqrt_(u)));
        case Fn::abs: return div(mul(u, du), abs_(u));  // sign(u)*du away from 0
    }
    return num(0.0);
}

}  // namespace detail

inline Expr diff_raw(const Expr& e, const std::string& s) {
    switch (e.kind()) {
        case ExprKind::number:
            return num(0.0);
        case ExprKind::symbol:
            return e.name() == s ? num(1.0) : num(0.0);
        case ExprKind::call:
            return detail::diff_call(e, s);
        case ExprKind::power: {
            Rational r = e.exponent();
            Expr du = diff_raw(e.base(), s);
            if (du.is_zero()) return num(0.0);
            Rational rm1 = r - Rational{1};
            return mul(num(r.value()), mul(pow_(e.base(), rm1), du));
        }
        case ExprKind::sum: {
            std::vector<Expr> parts;
            for (const auto& c : e.children()) parts.push_back(diff_raw(c, s));
            return sum_of(std::move(parts));
        }
        case ExprKind::product: {
            // sum over children of (dc * rest)
            std::vector<Expr> parts;
            const auto& kids = e.children();
            for (std::size_t i = 0; i < kids.size(); ++i) {
                Expr dc = diff_raw(kids[i], s);
                if (dc.is_zero()) continue;
                std::vector<Expr> fs;
                fs.reserve(kids.size());
                fs.push_back(std::move(dc));
                for (std::size_t j = 0; j < kids.size(); ++j)
                    if (j != i) fs.push_back(kids[j]);
                parts.push_back(product_of(std::move(fs)));
            }
            return sum_of(std::move(parts));
        }
    }
    return num(0.0);
}

/// Exact symbolic partial derivative, simplified.
inline Expr diff(const Expr& e, const std::string& s) { return simplify(diff_raw(e, s)); }

inline Expr diff(const Expr& e, const std::string& s, int order) {
    Expr r = e;
    for (int i = 0; i < order; ++i) r = diff(r, s);
    return r;
}

// ---------------------------------------------------------------- expand

namespace detail {

inline Expr expand_node(const Expr& e);

inline std::vector<Expr> as_terms(const Expr& e) {
    if (e.kind() == ExprKind::sum) return e.children();
    return {e};
}

inline Expr expand_product(const std::vector<Expr>& factors) {
    std::vector<Expr> acc = {num(1.0)};
    for (const auto& f : factors) {
        std::vector<Expr> terms = as_terms(f);
        std::vector<Expr> next;
        next.reserve(acc.size() * terms.size());
        for (const auto& a : acc)
            for (const auto& t : terms) next.push_back(mul(a, t));
        acc = std::move(next);
    }
    return sum_of(std::move(acc));
}

inline Expr expand_node(const Expr& e) {
    switch (e.kind()) {
        case ExprKind::number:
        case ExprKind::symbol:
            return e;
        case ExprKind::call:
            return call(e.fn(), expand_node(e.arg()));
        case ExprKind::power: {
            Expr b = expand_node(e.base());
            Rational r = e.exponent();
            if (b.kind() == ExprKind::sum && r.is_integer() && r.num > 1 && r.num <= 6) {
                std::vector<Expr> reps(static_cast<std::size_t>(r.num), b);
                return expand_product(reps);
            }
            return pow_(std::move(b), r);
        }
        case ExprKind::sum: {
            std::vector<Expr> kids;
            for (const auto& c : e.children()) kids.push_back(expand_node(c));
            return sum_of(std::move(kids));
        }
        case ExprKind::product: {
            std::vector<Expr> kids;
            for (const auto& c : e.children()) kids.push_back(expand_node(c));
            return expand_product(kids);
        }
    }
    return e;
}

}  // namespace detail

/// Distribute products over sums and expand small integer powers of sums,
/// then simplify.  Used where symbolic cancellation matters.
inline Expr expand(const Expr& e) {
    Expr cur = simplify(e);
    for (int i = 0; i < 6; ++i) {
        Expr next = simplify(detail::expand_node(cur));
        if (next == cur) return next;
        cur = next;
    }
    return cur;
}

// ---------------------------------------------------------------- polynomial collection

/// Split a term into (s-free coefficient, exponent of s).  Fails if s appears
/// in a non-power position (inside a call, a sum base, ...).
inline std::optional<std::pair<Expr, Rational>> split_power_of(const Expr& term, const std::string& s) {
    std::vector<Expr> factors =
        term.kind() == ExprKind::product ? term.children() : std::vector<Expr>{term};
    Rational deg{0};
    std::vector<Expr> coeff;
    for (const auto& f : factors) {
        if (!depends_on(f, s)) {
            coeff.push_back(f);
        } else if (f.is_symbol(s)) {
            deg = deg + Rational{1};
        } else if (f.kind() == ExprKind::power && f.base().is_symbol(s)) {
            deg = deg + f.exponent();
        } else {
            return std::nullopt;
        }
    }
    return std::make_pair(simplify(product_of(std::move(coeff))), deg);
}

/// Coefficients (degree ascending) of e as a polynomial in s, after
/// expansion; nullopt if e is not polynomial in s.
inline std::optional<std::vector<Expr>> polynomial_in(const Expr& e, const std::string& s) {
    Expr x = expand(e);
    std::map<long long, std::vector<Expr>> buckets;
    long long maxdeg = 0;
    for (const auto& t : detail::as_terms(x)) {
        auto sp = split_power_of(t, s);
        if (!sp || !sp->second.is_integer() || sp->second.num < 0) return std::nullopt;
        buckets[sp->second.num].push_back(sp->first);
        maxdeg = std::max(maxdeg, sp->second.num);
    }
    std::vector<Expr> coeffs(static_cast<std::size_t>(maxdeg) + 1, num(0.0));
    for (auto& [deg, parts] : buckets) coeffs[static_cast<std::size_t>(deg)] = simplify(sum_of(std::move(parts)));
    return coeffs;
}

// ---------------------------------------------------------------- antiderivative

namespace detail {

// Decompose `arg` as A*s^2 + C with both coefficients s-free; returns {A, C}.
inline std::optional<std::pair<Expr, Expr>> quadratic_in(const Expr& arg, const std::string& s) {
    auto poly = polynomial_in(arg, s);
    if (!poly || poly->size() != 3) return std::nullopt;
    if (!(*poly)[1].is_zero()) return std::nullopt;  // only pure A*s^2 + C handled
    if ((*poly)[2].is_zero()) return std::nullopt;
    return std::make_pair((*poly)[2], (*poly)[0]);
}

// antiderivative of 1/(A*s^2 + C): arctan(s*sqrt(A/C))/sqrt(A*C)
inline Expr atan_core(const Expr& A, const Expr& C, const std::string& s) {
    Expr ratio = sqrt_(div(A, C));
    return div(arctan_(mul(sym(s), ratio)), sqrt_(mul(A, C)));
}

inline std::optional<Expr> antiderivative_term(const Expr& term, const std::string& s);

// c * f(arg) where f in {exp, ln, arctan}; c and the arg coefficients s-free
inline std::optional<Expr> antiderivative_call_term(const Expr& coeff, const Expr& callee,
                                                    const std::string& s) {
    const Expr& arg = callee.arg();
    switch (callee.fn()) {
        case Fn::exp: {
            auto poly = polynomial_in(arg, s);
            if (!poly || poly->size() != 2 || (*poly)[1].is_zero()) return std::nullopt;
            // int c*e^(M s + B) ds = c/M * e^(M s + B)
            return simplify(mul(div(coeff, (*poly)[1]), callee));
        }
        case Fn::ln: {
            // ln|Q| integrates like ln(Q); unwrap the abs for the match
            const Expr& inner =
                (arg.kind() == ExprKind::call && arg.fn() == Fn::abs) ? arg.arg() : arg;
            auto q = quadratic_in(inner, s);
            if (!q) return std::nullopt;
            auto [A, C] = *q;
            // int ln(A s^2 + C) ds = s ln(.) - 2 s + 2 C * atan_core
            Expr r = add(sub(mul(sym(s), callee), mul(num(2.0), sym(s))),
                         mul(num(2.0), mul(C, atan_core(A, C, s))));
            return simplify(mul(coeff, r));
        }
        case Fn::arctan: {
            auto poly = polynomial_in(arg, s);
            if (!poly || poly->size() != 2 || !(*poly)[0].is_zero()) return std::nullopt;
            Expr M = (*poly)[1];
            // int arctan(M s) ds = s arctan(M s) - ln(1 + M^2 s^2)/(2M)
            Expr lnpart = ln_(add(num(1.0), mul(pow_(M, Rational{2}), pow_(sym(s), Rational{2}))));
            return simplify(mul(coeff, sub(mul(sym(s), callee), div(lnpart, mul(num(2.0), M)))));
        }
        default:
            return std::nullopt;
    }
}

// rational term: (s-free c) * P(s) / (A s^2 + C)
inline std::optional<Expr> antiderivative_rational(const Expr& coeff, const Expr& numer_poly,
                                                   const Expr& denom, const std::string& s) {
    auto q = quadratic_in(denom, s);
    if (!q) return std::nullopt;
    auto [A, C] = *q;
    auto npoly = polynomial_in(numer_poly, s);
    if (!npoly) return std::nullopt;

    // polynomial long division by A s^2 + C
    std::vector<Expr> n = *npoly;
    std::vector<Expr> quotient;
    while (n.size() > 2) {
        std::size_t d = n.size() - 1;
        Expr lead = simplify(div(n.back(), A));
        if (quotient.size() < d - 1) quotient.resize(d - 1, num(0.0));
        quotient[d - 2] = lead;
        n.pop_back();
        std::size_t low = d - 2;
        n[low] = simplify(sub(n[low], mul(lead, C)));
    }
    Expr b = n.empty() ? num(0.0) : n[0];
    Expr a = n.size() > 1 ? n[1] : num(0.0);

    std::vector<Expr> parts;
    for (std::size_t k = 0; k < quotient.size(); ++k) {
        if (quotient[k].is_zero()) continue;
        parts.push_back(div(mul(quotient[k], pow_(sym(s), Rational{static_cast<long long>(k + 1)})),
                            num(static_cast<double>(k + 1))));
    }
    if (!a.is_zero())
        parts.push_back(mul(div(a, mul(num(2.0), A)), ln_(abs_(denom))));
    if (!b.is_zero())
        parts.push_back(mul(b, atan_core(A, C, s)));
    return simplify(mul(coeff, sum_of(std::move(parts))));
}

inline std::optional<Expr> antiderivative_term(const Expr& term, const std::string& s) {
    if (!depends_on(term, s)) return simplify(mul(term, sym(s)));

    // split factors into: s-free coefficient, powers of s, and the rest
    std::vector<Expr> factors =
        term.kind() == ExprKind::product ? term.children() : std::vector<Expr>{term};
    std::vector<Expr> coeff_fs;
    Rational sdeg{0};
    std::vector<Expr> dep;  // s-dependent non-power factors
    std::vector<Expr> denom_fs;
    for (const auto& f : factors) {
        if (!depends_on(f, s)) {
            coeff_fs.push_back(f);
        } else if (f.is_symbol(s)) {
            sdeg = sdeg + Rational{1};
        } else if (f.kind() == ExprKind::power && f.base().is_symbol(s)) {
            sdeg = sdeg + f.exponent();
        } else if (f.kind() == ExprKind::power && f.exponent() == Rational{-1}) {
            denom_fs.push_back(f.base());
        } else {
            dep.push_back(f);
        }
    }
    Expr coeff = simplify(product_of(std::move(coeff_fs)));

    if (!denom_fs.empty()) {
        if (denom_fs.size() != 1 || !dep.empty()) return std::nullopt;
        if (!sdeg.is_integer() || sdeg.num < 0) return std::nullopt;
        return antiderivative_rational(coeff, pow_(sym(s), sdeg), denom_fs[0], s);
    }

    if (dep.empty()) {
        // c * s^r
        if (sdeg == Rational{-1}) return simplify(mul(coeff, ln_(abs_(sym(s)))));
        Rational rp1 = sdeg + Rational{1};
        return simplify(div(mul(coeff, pow_(sym(s), rp1)), num(rp1.value())));
    }

    if (dep.size() == 1 && dep[0].kind() == ExprKind::call && sdeg == Rational{0})
        return antiderivative_call_term(coeff, dep[0], s);

    return std::nullopt;
}

}  // namespace detail

/// Symbolic antiderivative with respect to s, or nullopt when the integrand
/// falls outside the supported patterns.
inline std::optional<Expr> antiderivative(const Expr& e, const std::string& s) {
    Expr x = expand(e);
    std::vector<Expr> parts;
    for (const auto& t : detail::as_terms(x)) {
        auto a = detail::antiderivative_term(t, s);
        if (!a) return std::nullopt;
        parts.push_back(*a);
    }
    return simplify(sum_of(std::move(parts)));
}

/// Definite integral over s in [lo, hi]; nullopt if no closed form.
inline std::optional<Expr> integrate(const Expr& e, const std::string& s, const Expr& lo,
                                     const Expr& hi) {
    auto F = antiderivative(e, s);
    if (!F) return std::nullopt;
    Expr at_hi = subst(*F, {{s, hi}});
    Expr at_lo = subst(*F, {{s, lo}});
    return simplify(sub(at_hi, at_lo));
}

// ---------------------------------------------------------------- quadrature

/// 32-point Gauss-Legendre nodes/weights on [0,1].
struct GaussLegendre01 {
    static const GaussLegendre01& get() {
        static GaussLegendre01 g;
        return g;
    }
    std::vector<double> x, w;

private:
    GaussLegendre01() {
        // nodes of P_32 on [-1,1] by Newton iteration, then mapped to [0,1]
        constexpr int n = 32;
        x.resize(n);
        w.resize(n);
        for (int i = 0; i < n / 2; ++i) {
            double t = std::cos(M_PI * (i + 0.75) / (n + 0.5));
            double p0, p1, dp;
            for (int it = 0; it < 100; ++it) {
                p0 = 1.0;
                p1 = t;
                for (int k = 2; k <= n; ++k) {
                    double p2 = ((2.0 * k - 1.0) * t * p1 - (k - 1.0) * p0) / k;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n * (t * p1 - p0) / (t * t - 1.0);
                double dt = p1 / dp;
                t -= dt;
                if (std::fabs(dt) < 1e-15) break;
            }
            double weight = 2.0 / ((1.0 - t * t) * dp * dp);
            x[i] = 0.5 * (1.0 - t);
            x[n - 1 - i] = 0.5 * (1.0 + t);
            w[i] = 0.5 * weight;
            w[n - 1 - i] = 0.5 * weight;
        }
    }
};

}  // namespace helm
