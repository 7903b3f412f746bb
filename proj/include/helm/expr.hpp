#pragma once

// Symbolic expression trees: immutable, shareable, canonicalized by simplify().
//
// Node kinds are kept minimal: numbers, symbols, function calls, powers with
// rational constant exponents, n-ary products and n-ary sums.  Subtraction,
// negation and division are rewritten at construction time:
//   a - b  ->  a + (-1)*b
//   -a     ->  (-1)*a
//   a / b  ->  a * b^-1

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <numeric>
#include <set>
#include <charconv>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace helm {

// ---------------------------------------------------------------- errors

struct error : std::runtime_error {
    explicit error(const std::string& what) : std::runtime_error(what) {}
};

struct parse_error : error {
    std::size_t offset;
    parse_error(const std::string& what, std::size_t off)
        : error(what + " (at offset " + std::to_string(off) + ")"), offset(off) {}
};

struct unknown_symbol_error : parse_error {
    std::string symbol;
    unknown_symbol_error(const std::string& name, std::size_t off)
        : parse_error("unknown symbol '" + name + "'", off), symbol(name) {}
};

struct unbound_symbol_error : error {
    std::string symbol;
    explicit unbound_symbol_error(const std::string& name)
        : error("unbound symbol '" + name + "'"), symbol(name) {}
};

struct expr_domain_error : error {
    std::string subexpression;
    expr_domain_error(const std::string& what, std::string subexpr)
        : error(what + " in '" + subexpr + "'"), subexpression(std::move(subexpr)) {}
};

struct schema_error : error {
    explicit schema_error(const std::string& what) : error(what) {}
};

struct integration_error : error {
    explicit integration_error(const std::string& what) : error(what) {}
};

struct unsupported_ansatz_error : error {
    explicit unsupported_ansatz_error(const std::string& what) : error(what) {}
};

struct no_closed_form_error : error {
    explicit no_closed_form_error(const std::string& what) : error(what) {}
};

struct verification_error : error {
    double residual;
    std::map<std::string, double> witness;
    verification_error(const std::string& what, double res,
                       std::map<std::string, double> wit = {})
        : error(what + " (residual " + std::to_string(res) + ")"),
          residual(res), witness(std::move(wit)) {}
};

struct resample_exhausted_error : error {
    explicit resample_exhausted_error(const std::string& what) : error(what) {}
};

// ---------------------------------------------------------------- rational exponents

struct Rational {
    long long num = 0;
    long long den = 1;

    Rational() = default;
    Rational(long long n) : num(n), den(1) {}
    Rational(long long n, long long d) : num(n), den(d) { normalize(); }

    void normalize() {
        if (den == 0) throw error("rational exponent with zero denominator");
        if (den < 0) { num = -num; den = -den; }
        long long g = std::gcd(num < 0 ? -num : num, den);
        if (g > 1) { num /= g; den /= g; }
        if (num == 0) den = 1;
    }
    bool is_integer() const { return den == 1; }
    double value() const { return static_cast<double>(num) / static_cast<double>(den); }

    friend Rational operator+(Rational a, Rational b) { return {a.num * b.den + b.num * a.den, a.den * b.den}; }
    friend Rational operator-(Rational a, Rational b) { return {a.num * b.den - b.num * a.den, a.den * b.den}; }
    friend Rational operator*(Rational a, Rational b) { return {a.num * b.num, a.den * b.den}; }
    friend bool operator==(Rational a, Rational b) { return a.num == b.num && a.den == b.den; }
    friend bool operator!=(Rational a, Rational b) { return !(a == b); }
};

inline int compare(Rational a, Rational b) {
    long long l = a.num * b.den, r = b.num * a.den;
    return l < r ? -1 : (l > r ? 1 : 0);
}

// ---------------------------------------------------------------- node

enum class ExprKind : std::uint8_t { number, symbol, call, power, product, sum };

enum class Fn : std::uint8_t { exp, ln, sin, cos, tan, arctan, sqrt, abs };

inline const char* fn_name(Fn f) {
    switch (f) {
        case Fn::exp: return "exp";
        case Fn::ln: return "ln";
        case Fn::sin: return "sin";
        case Fn::cos: return "cos";
        case Fn::tan: return "tan";
        case Fn::arctan: return "arctan";
        case Fn::sqrt: return "sqrt";
        case Fn::abs: return "abs";
    }
    return "?";
}

class Expr;
namespace detail {
struct Node {
    ExprKind kind;
    double value = 0.0;          // number
    std::string name;            // symbol
    Fn fn = Fn::exp;             // call
    Rational exponent;           // power
    std::vector<Expr> children;  // call: {arg}; power: {base}; product/sum: operands
};
}  // namespace detail

/// Immutable handle to an expression tree.  Cheap to copy, safe to share
/// across threads; every operation builds new nodes.
class Expr {
public:
    Expr() = default;  // empty handle; only valid after assignment

    ExprKind kind() const { return node_->kind; }
    bool valid() const { return node_ != nullptr; }

    double number() const { return node_->value; }
    const std::string& name() const { return node_->name; }
    Fn fn() const { return node_->fn; }
    Rational exponent() const { return node_->exponent; }
    const std::vector<Expr>& children() const { return node_->children; }
    const Expr& base() const { return node_->children.front(); }
    const Expr& arg() const { return node_->children.front(); }

    bool is_number() const { return node_->kind == ExprKind::number; }
    bool is_number(double v) const { return is_number() && node_->value == v; }
    bool is_zero() const { return is_number(0.0); }
    bool is_one() const { return is_number(1.0); }
    bool is_symbol(std::string_view s) const { return node_->kind == ExprKind::symbol && node_->name == s; }

    static Expr make(detail::Node n) {
        Expr e;
        e.node_ = std::make_shared<const detail::Node>(std::move(n));
        return e;
    }

private:
    std::shared_ptr<const detail::Node> node_;
};

// ---------------------------------------------------------------- constructors

inline Expr num(double v) {
    if (!std::isfinite(v)) throw error("non-finite numeric literal");
    detail::Node n;
    n.kind = ExprKind::number;
    n.value = v;
    return Expr::make(std::move(n));
}

inline Expr sym(std::string name) {
    detail::Node n;
    n.kind = ExprKind::symbol;
    n.name = std::move(name);
    return Expr::make(std::move(n));
}

inline Expr call(Fn f, Expr a) {
    detail::Node n;
    n.kind = ExprKind::call;
    n.fn = f;
    n.children = {std::move(a)};
    return Expr::make(std::move(n));
}

inline Expr exp_(Expr a) { return call(Fn::exp, std::move(a)); }
inline Expr ln_(Expr a) { return call(Fn::ln, std::move(a)); }
inline Expr sin_(Expr a) { return call(Fn::sin, std::move(a)); }
inline Expr cos_(Expr a) { return call(Fn::cos, std::move(a)); }
inline Expr tan_(Expr a) { return call(Fn::tan, std::move(a)); }
inline Expr arctan_(Expr a) { return call(Fn::arctan, std::move(a)); }
inline Expr sqrt_(Expr a) { return call(Fn::sqrt, std::move(a)); }
inline Expr abs_(Expr a) { return call(Fn::abs, std::move(a)); }

inline Expr pow_(Expr base, Rational r) {
    if (r == Rational{1}) return base;
    if (r == Rational{0}) return num(1.0);
    detail::Node n;
    n.kind = ExprKind::power;
    n.exponent = r;
    n.children = {std::move(base)};
    return Expr::make(std::move(n));
}

inline Expr sum_of(std::vector<Expr> terms) {
    if (terms.empty()) return num(0.0);
    if (terms.size() == 1) return terms.front();
    detail::Node n;
    n.kind = ExprKind::sum;
    n.children = std::move(terms);
    return Expr::make(std::move(n));
}

inline Expr product_of(std::vector<Expr> factors) {
    if (factors.empty()) return num(1.0);
    if (factors.size() == 1) return factors.front();
    detail::Node n;
    n.kind = ExprKind::product;
    n.children = std::move(factors);
    return Expr::make(std::move(n));
}

inline Expr add(Expr a, Expr b) { return sum_of({std::move(a), std::move(b)}); }
inline Expr mul(Expr a, Expr b) { return product_of({std::move(a), std::move(b)}); }
inline Expr neg(Expr a) {
    if (a.is_number()) return num(-a.number());
    return mul(num(-1.0), std::move(a));
}
inline Expr sub(Expr a, Expr b) { return add(std::move(a), neg(std::move(b))); }
inline Expr div(Expr a, Expr b) {
    if (b.is_number() && b.number() != 0.0) return mul(std::move(a), num(1.0 / b.number()));
    return mul(std::move(a), pow_(std::move(b), Rational{-1}));
}

// ---------------------------------------------------------------- ordering / equality

inline int compare(const Expr& a, const Expr& b);

inline int compare_children(const std::vector<Expr>& a, const std::vector<Expr>& b) {
    std::size_t n = std::min(a.size(), b.size());
    for (std::size_t i = 0; i < n; ++i)
        if (int c = compare(a[i], b[i])) return c;
    return a.size() < b.size() ? -1 : (a.size() > b.size() ? 1 : 0);
}

inline int compare(const Expr& a, const Expr& b) {
    auto rank = [](ExprKind k) {
        switch (k) {
            case ExprKind::number: return 0;
            case ExprKind::symbol: return 1;
            case ExprKind::call: return 2;
            case ExprKind::power: return 3;
            case ExprKind::product: return 4;
            case ExprKind::sum: return 5;
        }
        return 6;
    };
    if (rank(a.kind()) != rank(b.kind())) return rank(a.kind()) < rank(b.kind()) ? -1 : 1;
    switch (a.kind()) {
        case ExprKind::number: {
            double x = a.number(), y = b.number();
            return x < y ? -1 : (x > y ? 1 : 0);
        }
        case ExprKind::symbol:
            return a.name().compare(b.name()) < 0 ? -1 : (a.name() == b.name() ? 0 : 1);
        case ExprKind::call:
            if (a.fn() != b.fn()) return static_cast<int>(a.fn()) < static_cast<int>(b.fn()) ? -1 : 1;
            return compare(a.arg(), b.arg());
        case ExprKind::power:
            if (int c = compare(a.base(), b.base())) return c;
            return compare(a.exponent(), b.exponent());
        case ExprKind::product:
        case ExprKind::sum:
            return compare_children(a.children(), b.children());
    }
    return 0;
}

inline bool operator==(const Expr& a, const Expr& b) { return compare(a, b) == 0; }
inline bool operator!=(const Expr& a, const Expr& b) { return compare(a, b) != 0; }
inline bool expr_less(const Expr& a, const Expr& b) { return compare(a, b) < 0; }

// ---------------------------------------------------------------- simplification

namespace detail {

inline bool fold_call(Fn f, double x, double& out) {
    switch (f) {
        case Fn::exp: out = std::exp(x); break;
        case Fn::ln:
            if (x <= 0.0) return false;
            out = std::log(x);
            break;
        case Fn::sin: out = std::sin(x); break;
        case Fn::cos: out = std::cos(x); break;
        case Fn::tan: out = std::tan(x); break;
        case Fn::arctan: out = std::atan(x); break;
        case Fn::sqrt:
            if (x < 0.0) return false;
            out = std::sqrt(x);
            break;
        case Fn::abs: out = std::fabs(x); break;
    }
    return std::isfinite(out);
}

// exact power of a double by a small integer exponent
inline bool fold_int_pow(double base, long long e, double& out) {
    if (e > 64 || e < -64) return false;
    if (base == 0.0) {
        if (e < 0) return false;  // division by zero surfaces at eval
        out = (e == 0) ? 1.0 : 0.0;
        return true;
    }
    bool invert = e < 0;
    unsigned long long k = static_cast<unsigned long long>(invert ? -e : e);
    double acc = 1.0, b = base;
    while (k) {
        if (k & 1ull) acc *= b;
        b *= b;
        k >>= 1;
    }
    if (invert) acc = 1.0 / acc;
    out = acc;
    return std::isfinite(out);
}

inline bool fold_pow(double base, Rational r, double& out) {
    if (r.is_integer()) return fold_int_pow(base, r.num, out);
    if (base < 0.0) return false;
    if (base == 0.0) {
        if (r.num < 0) return false;
        out = r.num == 0 ? 1.0 : 0.0;
        return true;
    }
    out = std::pow(base, r.value());
    return std::isfinite(out);
}

struct TermParts {
    double coeff = 1.0;
    std::vector<Expr> sig;  // canonical non-numeric factors
};

inline TermParts term_parts(const Expr& t) {
    TermParts p;
    if (t.kind() == ExprKind::product) {
        for (const auto& c : t.children()) {
            if (c.is_number())
                p.coeff *= c.number();
            else
                p.sig.push_back(c);
        }
    } else if (t.is_number()) {
        p.coeff = t.number();
    } else {
        p.sig.push_back(t);
    }
    return p;
}

inline Expr simplify_pass(const Expr& e);

inline Expr rebuild_term(double coeff, std::vector<Expr> sig) {
    if (coeff == 0.0) return num(0.0);
    if (sig.empty()) return num(coeff);
    if (coeff == 1.0) return sig.size() == 1 ? sig.front() : product_of(std::move(sig));
    std::vector<Expr> fs;
    fs.reserve(sig.size() + 1);
    fs.push_back(num(coeff));
    for (auto& s : sig) fs.push_back(std::move(s));
    return product_of(std::move(fs));
}

inline Expr simplify_sum(std::vector<Expr> kids) {
    std::vector<Expr> flat;
    for (auto& k : kids) {
        if (k.kind() == ExprKind::sum)
            for (const auto& c : k.children()) flat.push_back(c);
        else
            flat.push_back(std::move(k));
    }
    double constant = 0.0;
    struct Key {
        std::vector<Expr> sig;
        bool operator<(const Key& o) const { return compare_children(sig, o.sig) < 0; }
    };
    std::map<Key, double> terms;
    for (auto& t : flat) {
        TermParts p = term_parts(t);
        if (p.sig.empty())
            constant += p.coeff;
        else
            terms[Key{std::move(p.sig)}] += p.coeff;
    }
    std::vector<Expr> out;
    for (auto& [key, coeff] : terms) {
        if (coeff == 0.0) continue;
        out.push_back(rebuild_term(coeff, key.sig));
    }
    if (constant != 0.0 || out.empty()) out.push_back(num(constant));
    std::sort(out.begin(), out.end(), expr_less);
    return sum_of(std::move(out));
}

inline Expr simplify_product(std::vector<Expr> kids) {
    std::vector<Expr> flat;
    for (auto& k : kids) {
        if (k.kind() == ExprKind::product)
            for (const auto& c : k.children()) flat.push_back(c);
        else
            flat.push_back(std::move(k));
    }
    double coeff = 1.0;
    struct Key {
        Expr base;
        bool operator<(const Key& o) const { return expr_less(base, o.base); }
    };
    std::map<Key, Rational> powers;
    for (auto& f : flat) {
        if (f.is_number()) {
            coeff *= f.number();
        } else if (f.kind() == ExprKind::power) {
            powers[Key{f.base()}] = powers.count(Key{f.base()}) ? powers[Key{f.base()}] + f.exponent() : f.exponent();
        } else {
            powers[Key{f}] = powers.count(Key{f}) ? powers[Key{f}] + Rational{1} : Rational{1};
        }
    }
    if (coeff == 0.0) return num(0.0);
    std::vector<Expr> out;
    for (auto& [key, r] : powers) {
        if (r == Rational{0}) continue;
        if (key.base.is_number()) {
            double v;
            if (fold_pow(key.base.number(), r, v)) {
                coeff *= v;
                continue;
            }
        }
        out.push_back(pow_(key.base, r));
    }
    if (out.empty()) return num(coeff);
    // a bare numeric multiple of a sum distributes into the terms
    if (out.size() == 1 && out[0].kind() == ExprKind::sum && coeff != 1.0) {
        std::vector<Expr> terms;
        for (const auto& t : out[0].children()) terms.push_back(mul(num(coeff), t));
        return simplify_sum(std::move(terms));
    }
    if (coeff != 1.0) out.push_back(num(coeff));
    std::sort(out.begin(), out.end(), expr_less);
    return product_of(std::move(out));
}

inline Expr simplify_pass(const Expr& e) {
    switch (e.kind()) {
        case ExprKind::number:
        case ExprKind::symbol:
            return e;
        case ExprKind::call: {
            Expr a = simplify_pass(e.arg());
            if (a.is_number()) {
                double v;
                if (fold_call(e.fn(), a.number(), v)) return num(v);
            }
            return call(e.fn(), std::move(a));
        }
        case ExprKind::power: {
            Expr b = simplify_pass(e.base());
            Rational r = e.exponent();
            if (r == Rational{0}) return num(1.0);
            if (r == Rational{1}) return b;
            if (b.is_number()) {
                double v;
                if (fold_pow(b.number(), r, v)) return num(v);
            }
            if (b.kind() == ExprKind::power && r.is_integer())
                return simplify_pass(pow_(b.base(), b.exponent() * r));
            if (b.kind() == ExprKind::product && r.is_integer()) {
                std::vector<Expr> fs;
                for (const auto& c : b.children()) fs.push_back(pow_(c, r));
                return simplify_pass(product_of(std::move(fs)));
            }
            return pow_(std::move(b), r);
        }
        case ExprKind::sum: {
            std::vector<Expr> kids;
            kids.reserve(e.children().size());
            for (const auto& c : e.children()) kids.push_back(simplify_pass(c));
            return simplify_sum(std::move(kids));
        }
        case ExprKind::product: {
            std::vector<Expr> kids;
            kids.reserve(e.children().size());
            for (const auto& c : e.children()) kids.push_back(simplify_pass(c));
            return simplify_product(std::move(kids));
        }
    }
    return e;
}

}  // namespace detail

/// Canonical form: constant folding, +/* flattening, like-term and like-base
/// collection, x^1 -> x, 0 and 1 absorption.  Idempotent.
inline Expr simplify(const Expr& e) {
    Expr cur = e;
    for (int i = 0; i < 8; ++i) {
        Expr next = detail::simplify_pass(cur);
        if (next == cur) return next;
        cur = next;
    }
    return cur;
}

// ---------------------------------------------------------------- traversal helpers

inline void collect_symbols(const Expr& e, std::set<std::string>& out) {
    switch (e.kind()) {
        case ExprKind::number: return;
        case ExprKind::symbol: out.insert(e.name()); return;
        default:
            for (const auto& c : e.children()) collect_symbols(c, out);
    }
}

inline std::set<std::string> free_symbols(const Expr& e) {
    std::set<std::string> s;
    collect_symbols(e, s);
    return s;
}

inline bool depends_on(const Expr& e, std::string_view name) {
    switch (e.kind()) {
        case ExprKind::number: return false;
        case ExprKind::symbol: return e.name() == name;
        default:
            for (const auto& c : e.children())
                if (depends_on(c, name)) return true;
            return false;
    }
}

namespace detail {
inline Expr subst_raw(const Expr& e, const std::map<std::string, Expr>& m) {
    switch (e.kind()) {
        case ExprKind::number: return e;
        case ExprKind::symbol: {
            auto it = m.find(e.name());
            return it == m.end() ? e : it->second;
        }
        case ExprKind::call: return call(e.fn(), subst_raw(e.arg(), m));
        case ExprKind::power: return pow_(subst_raw(e.base(), m), e.exponent());
        default: {
            std::vector<Expr> kids;
            kids.reserve(e.children().size());
            for (const auto& c : e.children()) kids.push_back(subst_raw(c, m));
            return e.kind() == ExprKind::sum ? sum_of(std::move(kids)) : product_of(std::move(kids));
        }
    }
}
}  // namespace detail

/// Substitute symbols and return the simplified result.
inline Expr subst(const Expr& e, const std::map<std::string, Expr>& m) {
    return simplify(detail::subst_raw(e, m));
}

// ---------------------------------------------------------------- printing

namespace detail {

inline std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::string print_expr(const Expr& e);

inline std::string print_factor(const Expr& e) {
    // parenthesize anything looser than '*'
    if (e.kind() == ExprKind::sum || (e.is_number() && e.number() < 0))
        return "(" + print_expr(e) + ")";
    return print_expr(e);
}

inline std::string print_power_base(const Expr& e) {
    switch (e.kind()) {
        case ExprKind::sum:
        case ExprKind::product:
        case ExprKind::power:
            return "(" + print_expr(e) + ")";
        case ExprKind::number:
            if (e.number() < 0) return "(" + print_expr(e) + ")";
            return print_expr(e);
        default:
            return print_expr(e);
    }
}

inline std::string print_exponent(Rational r) {
    if (r.is_integer()) {
        if (r.num < 0) return "(" + std::to_string(r.num) + ")";
        return std::to_string(r.num);
    }
    return "(" + std::to_string(r.num) + "/" + std::to_string(r.den) + ")";
}

inline std::string print_product(const Expr& e) {
    double coeff = 1.0;
    std::vector<Expr> numer, denom;
    for (const auto& f : e.children()) {
        if (f.is_number()) {
            coeff *= f.number();
        } else if (f.kind() == ExprKind::power && compare(f.exponent(), Rational{0}) < 0) {
            Rational r = f.exponent();
            r.num = -r.num;
            denom.push_back(pow_(f.base(), r));
        } else {
            numer.push_back(f);
        }
    }
    std::string head;
    bool negative = coeff < 0;
    double mag = negative ? -coeff : coeff;
    std::string out = negative ? "-" : "";
    std::vector<std::string> parts;
    if (mag != 1.0 || numer.empty()) parts.push_back(format_double(mag));
    for (const auto& f : numer) {
        if (f.kind() == ExprKind::power)
            parts.push_back(print_power_base(f.base()) + "^" + print_exponent(f.exponent()));
        else
            parts.push_back(print_factor(f));
    }
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (i) out += "*";
        out += parts[i];
    }
    if (!denom.empty()) {
        std::string d;
        for (std::size_t i = 0; i < denom.size(); ++i) {
            if (i) d += "*";
            const auto& f = denom[i];
            if (f.kind() == ExprKind::power)
                d += print_power_base(f.base()) + "^" + print_exponent(f.exponent());
            else
                d += print_factor(f);
        }
        if (denom.size() > 1) d = "(" + d + ")";
        else if (denom.size() == 1 && denom[0].kind() != ExprKind::power &&
                 (denom[0].kind() == ExprKind::sum || denom[0].kind() == ExprKind::product))
            d = "(" + d + ")";
        out += "/" + d;
    }
    return out;
}

inline std::string print_expr(const Expr& e) {
    switch (e.kind()) {
        case ExprKind::number:
            return format_double(e.number());
        case ExprKind::symbol:
            return e.name();
        case ExprKind::call:
            return std::string(fn_name(e.fn())) + "(" + print_expr(e.arg()) + ")";
        case ExprKind::power: {
            Rational r = e.exponent();
            if (compare(r, Rational{0}) < 0) {
                Rational p = r;
                p.num = -p.num;
                return "1/" + print_power_base(e.base()) + "^" + print_exponent(p);
            }
            return print_power_base(e.base()) + "^" + print_exponent(r);
        }
        case ExprKind::product:
            return print_product(e);
        case ExprKind::sum: {
            std::string out;
            bool first = true;
            for (const auto& t : e.children()) {
                TermParts p = term_parts(t);
                bool negative = p.coeff < 0;
                Expr mag = negative ? rebuild_term(-p.coeff, p.sig) : t;
                std::string s = (mag.kind() == ExprKind::product) ? print_product(mag) : print_expr(mag);
                if (first) {
                    out += negative ? "-" + s : s;
                    first = false;
                } else {
                    out += negative ? " - " + s : " + " + s;
                }
            }
            return out;
        }
    }
    return "?";
}

}  // namespace detail

inline std::string to_string(const Expr& e) { return detail::print_expr(e); }

// ---------------------------------------------------------------- symbol environment

/// Declares the symbol universe of a problem: time `t`, ordered coordinates,
/// their velocities `d<name>` and accelerations `dd<name>`, and bound numeric
/// parameters.
class SymbolEnv {
public:
    enum class SymKind { time, coordinate, velocity, accel, parameter, unknown };

    SymbolEnv() = default;
    SymbolEnv(std::vector<std::string> coords, std::map<std::string, double> params = {})
        : coords_(std::move(coords)), params_(std::move(params)) {
        validate();
    }

    const std::vector<std::string>& coordinates() const { return coords_; }
    const std::map<std::string, double>& parameters() const { return params_; }
    std::size_t dim() const { return coords_.size(); }

    const std::string& coordinate(std::size_t i) const { return coords_[i]; }
    std::string velocity(std::size_t i) const { return "d" + coords_[i]; }
    std::string accel(std::size_t i) const { return "dd" + coords_[i]; }

    SymKind classify(std::string_view s, std::size_t* index = nullptr) const {
        if (s == "t") return SymKind::time;
        for (std::size_t i = 0; i < coords_.size(); ++i) {
            if (s == coords_[i]) {
                if (index) *index = i;
                return SymKind::coordinate;
            }
        }
        if (s.size() > 1 && s[0] == 'd') {
            std::string_view rest = s.substr(1);
            for (std::size_t i = 0; i < coords_.size(); ++i) {
                if (rest == coords_[i]) {
                    if (index) *index = i;
                    return SymKind::velocity;
                }
            }
            if (rest.size() > 1 && rest[0] == 'd') {
                std::string_view rest2 = rest.substr(1);
                for (std::size_t i = 0; i < coords_.size(); ++i) {
                    if (rest2 == coords_[i]) {
                        if (index) *index = i;
                        return SymKind::accel;
                    }
                }
            }
        }
        if (params_.count(std::string(s))) return SymKind::parameter;
        return SymKind::unknown;
    }

    bool knows(std::string_view s) const { return classify(s) != SymKind::unknown; }

    /// Every free symbol of `e` must resolve in this environment.
    void validate_expr(const Expr& e) const {
        for (const auto& s : free_symbols(e))
            if (!knows(s)) throw unbound_symbol_error(s);
    }

    SymbolEnv with_parameter(const std::string& name, double value) const {
        SymbolEnv copy = *this;
        copy.params_[name] = value;
        copy.validate();
        return copy;
    }

private:
    void validate() const {
        static const std::set<std::string> reserved = {"t",   "exp",    "ln",   "sin", "cos",
                                                       "tan", "arctan", "sqrt", "abs"};
        std::set<std::string> seen;
        for (const auto& c : coords_) {
            if (c.empty()) throw error("empty coordinate name");
            if (reserved.count(c)) throw error("coordinate name '" + c + "' is reserved");
            if (!seen.insert(c).second) throw error("duplicate coordinate '" + c + "'");
            if (params_.count(c)) throw error("coordinate '" + c + "' collides with a parameter");
        }
        // keep d<name> unambiguous
        for (const auto& c : coords_) {
            for (const auto& other : coords_) {
                if (c == "d" + other)
                    throw error("coordinate '" + c + "' shadows the velocity of '" + other + "'");
            }
        }
        for (const auto& [p, v] : params_) {
            (void)v;
            if (reserved.count(p)) throw error("parameter name '" + p + "' is reserved");
            for (const auto& c : coords_) {
                if (p == "d" + c || p == "dd" + c)
                    throw error("parameter '" + p + "' collides with a derivative symbol");
            }
        }
    }

    std::vector<std::string> coords_;
    std::map<std::string, double> params_;
};

}  // namespace helm
