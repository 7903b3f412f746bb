#pragma once

// Numeric evaluation.  Two paths:
//  - eval(): straightforward tree walk against a name->value binding map.
//  - Program: expression flattened to a postfix op list over a fixed symbol
//    layout, for hot loops (integrators, sampled condition checks).
//
// Division by zero, ln of a non-positive value, sqrt of a negative value and
// fractional powers of negative bases are domain errors, never NaN.  Any
// non-finite intermediate is reported as a domain error as well.

#include <random>
#include <span>

#include "expr.hpp"

namespace helm {

namespace detail {

inline double checked_pow(double x, Rational r, const Expr& where) {
    if (r.is_integer()) {
        if (x == 0.0 && r.num < 0) throw expr_domain_error("division by zero", to_string(where));
        double out;
        if (fold_int_pow(x, r.num, out)) return out;
        out = std::pow(x, static_cast<double>(r.num));
        if (!std::isfinite(out)) throw expr_domain_error("overflow", to_string(where));
        return out;
    }
    if (x < 0.0) throw expr_domain_error("fractional power of negative base", to_string(where));
    if (x == 0.0) {
        if (r.num < 0) throw expr_domain_error("division by zero", to_string(where));
        return r.num == 0 ? 1.0 : 0.0;
    }
    double out = std::pow(x, r.value());
    if (!std::isfinite(out)) throw expr_domain_error("overflow", to_string(where));
    return out;
}

inline double checked_call(Fn f, double x, const Expr& where) {
    double out;
    switch (f) {
        case Fn::ln:
            if (x <= 0.0) throw expr_domain_error("ln of non-positive value", to_string(where));
            out = std::log(x);
            break;
        case Fn::sqrt:
            if (x < 0.0) throw expr_domain_error("sqrt of negative value", to_string(where));
            out = std::sqrt(x);
            break;
        case Fn::exp: out = std::exp(x); break;
        case Fn::sin: out = std::sin(x); break;
        case Fn::cos: out = std::cos(x); break;
        case Fn::tan: out = std::tan(x); break;
        case Fn::arctan: out = std::atan(x); break;
        case Fn::abs: out = std::fabs(x); break;
        default: out = 0.0; break;
    }
    if (!std::isfinite(out)) throw expr_domain_error("overflow", to_string(where));
    return out;
}

}  // namespace detail

/// Tree-walk evaluation; bindings must cover every free symbol.
inline double eval(const Expr& e, const std::map<std::string, double>& bindings) {
    switch (e.kind()) {
        case ExprKind::number:
            return e.number();
        case ExprKind::symbol: {
            auto it = bindings.find(e.name());
            if (it == bindings.end()) throw unbound_symbol_error(e.name());
            return it->second;
        }
        case ExprKind::call:
            return detail::checked_call(e.fn(), eval(e.arg(), bindings), e);
        case ExprKind::power:
            return detail::checked_pow(eval(e.base(), bindings), e.exponent(), e);
        case ExprKind::sum: {
            double acc = 0.0;
            for (const auto& c : e.children()) acc += eval(c, bindings);
            if (!std::isfinite(acc)) throw expr_domain_error("overflow", to_string(e));
            return acc;
        }
        case ExprKind::product: {
            double acc = 1.0;
            for (const auto& c : e.children()) acc *= eval(c, bindings);
            if (!std::isfinite(acc)) throw expr_domain_error("overflow", to_string(e));
            return acc;
        }
    }
    throw error("invalid expression");
}

/// Convenience overload merging the environment's bound parameters.
inline double eval(const Expr& e, const SymbolEnv& env, std::map<std::string, double> bindings) {
    for (const auto& [k, v] : env.parameters()) bindings.emplace(k, v);
    return eval(e, bindings);
}

// ---------------------------------------------------------------- compiled programs

/// Postfix program over a fixed symbol layout.  Running it is pure; a Program
/// may be shared across threads.
class Program {
public:
    Program() = default;

    /// `layout` maps slot index -> symbol name.  Symbols not in the layout are
    /// resolved as environment parameters and embedded as constants.
    Program(const Expr& e, const std::vector<std::string>& layout, const SymbolEnv& env = {}) {
        std::map<std::string, int> slots;
        for (std::size_t i = 0; i < layout.size(); ++i) slots[layout[i]] = static_cast<int>(i);
        compile(e, slots, env);
    }

    double run(std::span<const double> args) const {
        // scratch lives on the caller's stack; deep expressions fall back to
        // the heap so concurrent runs stay independent
        double local[64];
        std::vector<double> heap;
        double* sp = local;
        if (depth_ > 64) {
            heap.resize(static_cast<std::size_t>(depth_));
            sp = heap.data();
        }
        std::size_t top = 0;
        for (const auto& op : ops_) {
            switch (op.code) {
                case OpCode::push_const:
                    sp[top++] = op.value;
                    break;
                case OpCode::push_slot:
                    sp[top++] = args[op.slot];
                    break;
                case OpCode::add_n: {
                    double acc = 0.0;
                    for (int i = 0; i < op.slot; ++i) acc += sp[--top];
                    sp[top++] = acc;
                    break;
                }
                case OpCode::mul_n: {
                    double acc = 1.0;
                    for (int i = 0; i < op.slot; ++i) acc *= sp[--top];
                    sp[top++] = acc;
                    break;
                }
                case OpCode::power:
                    sp[top - 1] = detail::checked_pow(sp[top - 1], op.exponent, origin_);
                    break;
                case OpCode::fncall:
                    sp[top - 1] = detail::checked_call(op.fn, sp[top - 1], origin_);
                    break;
            }
        }
        double v = sp[top - 1];
        if (!std::isfinite(v)) throw expr_domain_error("overflow", to_string(origin_));
        return v;
    }

private:
    enum class OpCode : std::uint8_t { push_const, push_slot, add_n, mul_n, power, fncall };
    struct Op {
        OpCode code;
        double value = 0.0;
        int slot = 0;
        Rational exponent;
        Fn fn = Fn::exp;
    };

    void compile(const Expr& e, const std::map<std::string, int>& slots, const SymbolEnv& env) {
        origin_ = e;
        emit(e, slots, env);
    }

    void emit(const Expr& e, const std::map<std::string, int>& slots, const SymbolEnv& env) {
        switch (e.kind()) {
            case ExprKind::number:
                ops_.push_back({OpCode::push_const, e.number(), 0, {}, Fn::exp});
                grow(1);
                return;
            case ExprKind::symbol: {
                auto it = slots.find(e.name());
                if (it != slots.end()) {
                    ops_.push_back({OpCode::push_slot, 0.0, it->second, {}, Fn::exp});
                    grow(1);
                    return;
                }
                auto pit = env.parameters().find(e.name());
                if (pit == env.parameters().end()) throw unbound_symbol_error(e.name());
                ops_.push_back({OpCode::push_const, pit->second, 0, {}, Fn::exp});
                grow(1);
                return;
            }
            case ExprKind::call:
                emit(e.arg(), slots, env);
                ops_.push_back({OpCode::fncall, 0.0, 0, {}, e.fn()});
                return;
            case ExprKind::power:
                emit(e.base(), slots, env);
                ops_.push_back({OpCode::power, 0.0, 0, e.exponent(), Fn::exp});
                return;
            case ExprKind::sum:
            case ExprKind::product: {
                for (const auto& c : e.children()) emit(c, slots, env);
                int n = static_cast<int>(e.children().size());
                ops_.push_back({e.kind() == ExprKind::sum ? OpCode::add_n : OpCode::mul_n, 0.0, n, {}, Fn::exp});
                grow(1 - n);
                return;
            }
        }
    }

    void grow(int delta) {
        cur_ += delta;
        if (cur_ > depth_) depth_ = cur_;
    }

    std::vector<Op> ops_;
    Expr origin_;
    int depth_ = 0;
    int cur_ = 0;
};

// ---------------------------------------------------------------- random sampling

/// Uniform draw from [-hi,-lo] U [lo,hi]: a band that keeps magnitudes away
/// from the coordinate origin where several multipliers are singular.
struct SampleBox {
    double lo = 0.1;
    double hi = 2.0;

    double draw(std::mt19937_64& rng) const {
        std::uniform_real_distribution<double> mag(lo, hi);
        double v = mag(rng);
        return (rng() & 1ull) ? v : -v;
    }
};

/// Deterministic per-point generator: the same (seed, index) pair always
/// yields the same stream regardless of evaluation order.
inline std::mt19937_64 point_rng(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t mixed = seed ^ (0x9e3779b97f4a7c15ull * (index + 1));
    mixed ^= mixed >> 33;
    mixed *= 0xff51afd7ed558ccdull;
    mixed ^= mixed >> 33;
    return std::mt19937_64(mixed);
}

struct EquivOptions {
    int trials = 64;
    double tol = 1e-9;
    std::uint64_t seed = 0;
    SampleBox box{};
};

/// Probabilistic expression equality: true iff |a-b| < tol at `trials` points
/// drawn from the box (parameters take their bound values; every other free
/// symbol is sampled).  Points where either side raises a domain error are
/// resampled, up to 10x trials.
inline bool equiv_random(const Expr& a, const Expr& b, const SymbolEnv& env,
                         const EquivOptions& opt = {},
                         std::map<std::string, double>* witness = nullptr) {
    if (opt.trials < 1) throw error("equiv_random requires trials >= 1");
    std::set<std::string> syms = free_symbols(a);
    collect_symbols(b, syms);
    std::vector<std::string> layout;
    for (const auto& s : syms)
        if (!env.parameters().count(s)) layout.push_back(s);
    Program pa(a, layout, env), pb(b, layout, env);

    std::vector<double> point(layout.size());
    int accepted = 0;
    long budget = 10l * opt.trials;
    for (std::uint64_t idx = 0; accepted < opt.trials; ++idx) {
        if (budget-- <= 0)
            throw resample_exhausted_error("no evaluable points found on the sampling box");
        auto rng = point_rng(opt.seed, idx);
        for (auto& v : point) v = opt.box.draw(rng);
        double va, vb;
        try {
            va = pa.run(point);
            vb = pb.run(point);
        } catch (const expr_domain_error&) {
            continue;
        }
        ++accepted;
        if (std::fabs(va - vb) >= opt.tol) {
            if (witness) {
                witness->clear();
                for (std::size_t i = 0; i < layout.size(); ++i) (*witness)[layout[i]] = point[i];
            }
            return false;
        }
    }
    return true;
}

inline bool equiv_zero(const Expr& a, const SymbolEnv& env, const EquivOptions& opt = {},
                       std::map<std::string, double>* witness = nullptr) {
    return equiv_random(a, num(0.0), env, opt, witness);
}

// ---------------------------------------------------------------- argument scaling

enum class ArgGroup { coordinates, velocities };

/// Replace every symbol of the group by factor*symbol.
inline Expr scale_args(const Expr& e, ArgGroup group, const Expr& factor, const SymbolEnv& env) {
    std::map<std::string, Expr> m;
    auto fsyms = free_symbols(factor);
    for (std::size_t i = 0; i < env.dim(); ++i) {
        std::string name = group == ArgGroup::coordinates ? env.coordinate(i) : env.velocity(i);
        if (fsyms.count(name))
            throw error("scale factor depends on scaled symbol '" + name + "'");
        m.emplace(name, mul(factor, sym(name)));
    }
    return subst(e, m);
}

}  // namespace helm
