#pragma once

// Recursive-descent parser for the expression grammar:
//
//   expr   := term (('+'|'-') term)*
//   term   := factor (('*'|'/') factor)*
//   factor := ('-')? base ('^' signed-rational)?
//   base   := number | ident | func '(' expr ')' | '(' expr ')'
//
// '^' binds tighter than unary minus; '*','/','+','-' associate left.
// Exponents are signed integer or rational constants, e.g. 2, -3, 0.5, (1/2),
// (-2/3).  Velocities are spelled d<coordinate>, accelerations dd<coordinate>,
// and `t` is reserved for time.

#include <cctype>
#include <cstdlib>
#include <optional>

#include "expr.hpp"

namespace helm {

namespace detail {

class Parser {
public:
    Parser(std::string_view text, const SymbolEnv& env) : text_(text), env_(env) {}

    Expr run() {
        skip_ws();
        Expr e = parse_expr();
        skip_ws();
        if (pos_ != text_.size()) throw parse_error("unexpected trailing input", pos_);
        return e;
    }

private:
    std::string_view text_;
    const SymbolEnv& env_;
    std::size_t pos_ = 0;

    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }
    bool eof() const { return pos_ >= text_.size(); }
    char peek() const { return text_[pos_]; }
    bool accept(char c) {
        if (!eof() && text_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }
    void expect(char c) {
        if (!accept(c)) throw parse_error(std::string("expected '") + c + "'", pos_);
    }

    Expr parse_expr() {
        Expr e = parse_term();
        for (;;) {
            skip_ws();
            if (accept('+')) {
                skip_ws();
                e = add(std::move(e), parse_term());
            } else if (accept('-')) {
                skip_ws();
                e = sub(std::move(e), parse_term());
            } else {
                return e;
            }
        }
    }

    Expr parse_term() {
        Expr e = parse_factor();
        for (;;) {
            skip_ws();
            if (accept('*')) {
                skip_ws();
                e = mul(std::move(e), parse_factor());
            } else if (accept('/')) {
                skip_ws();
                e = div(std::move(e), parse_factor());
            } else {
                return e;
            }
        }
    }

    Expr parse_factor() {
        skip_ws();
        bool negated = accept('-');
        if (negated) skip_ws();
        if (eof()) throw parse_error("expected operand", pos_);
        Expr b = parse_base();
        skip_ws();
        if (accept('^')) {
            skip_ws();
            Rational r = parse_signed_rational();
            b = pow_(std::move(b), r);
        }
        return negated ? neg(std::move(b)) : std::move(b);
    }

    Expr parse_base() {
        if (eof()) throw parse_error("expected operand", pos_);
        char c = peek();
        if (std::isdigit(static_cast<unsigned char>(c))) return num(parse_number());
        if (c == '(') {
            ++pos_;
            Expr e = parse_expr();
            skip_ws();
            expect(')');
            return e;
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t start = pos_;
            std::string id = parse_ident();
            if (auto f = lookup_fn(id)) {
                skip_ws();
                if (!accept('(')) throw parse_error("expected '(' after function '" + id + "'", pos_);
                Expr a = parse_expr();
                skip_ws();
                expect(')');
                return call(*f, std::move(a));
            }
            if (!env_.knows(id)) throw unknown_symbol_error(id, start);
            return sym(id);
        }
        throw parse_error("unexpected character", pos_);
    }

    static std::optional<Fn> lookup_fn(const std::string& id) {
        if (id == "exp") return Fn::exp;
        if (id == "ln") return Fn::ln;
        if (id == "sin") return Fn::sin;
        if (id == "cos") return Fn::cos;
        if (id == "tan") return Fn::tan;
        if (id == "arctan") return Fn::arctan;
        if (id == "sqrt") return Fn::sqrt;
        if (id == "abs") return Fn::abs;
        return std::nullopt;
    }

    std::string parse_ident() {
        std::size_t start = pos_;
        while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_')) ++pos_;
        return std::string(text_.substr(start, pos_ - start));
    }

    double parse_number() {
        std::size_t start = pos_;
        while (!eof() && std::isdigit(static_cast<unsigned char>(peek()))) ++pos_;
        if (!eof() && peek() == '.') {
            ++pos_;
            while (!eof() && std::isdigit(static_cast<unsigned char>(peek()))) ++pos_;
        }
        if (!eof() && (peek() == 'e' || peek() == 'E')) {
            std::size_t mark = pos_;
            ++pos_;
            if (!eof() && (peek() == '+' || peek() == '-')) ++pos_;
            if (eof() || !std::isdigit(static_cast<unsigned char>(peek())))
                pos_ = mark;  // not an exponent part after all
            else
                while (!eof() && std::isdigit(static_cast<unsigned char>(peek()))) ++pos_;
        }
        std::string s(text_.substr(start, pos_ - start));
        double v{};
        auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc() || res.ptr != s.data() + s.size())
            throw parse_error("malformed number literal", start);
        return v;
    }

    long long parse_int() {
        std::size_t start = pos_;
        bool negative = accept('-');
        if (eof() || !std::isdigit(static_cast<unsigned char>(peek())))
            throw parse_error("expected integer", pos_);
        long long v = 0;
        while (!eof() && std::isdigit(static_cast<unsigned char>(peek()))) {
            v = v * 10 + (peek() - '0');
            if (v > (1ll << 40)) throw parse_error("integer too large", start);
            ++pos_;
        }
        return negative ? -v : v;
    }

    // integer, decimal with exact rational value, or (p/q)
    Rational parse_signed_rational() {
        bool negative = accept('-');
        skip_ws();
        if (accept('(')) {
            skip_ws();
            long long p = parse_int();
            skip_ws();
            expect('/');
            skip_ws();
            long long q = parse_int();
            skip_ws();
            expect(')');
            Rational r{p, q};
            if (negative) r.num = -r.num;
            return r;
        }
        if (eof() || !std::isdigit(static_cast<unsigned char>(peek())))
            throw parse_error("expected exponent", pos_);
        std::size_t start = pos_;
        long long ip = 0;
        while (!eof() && std::isdigit(static_cast<unsigned char>(peek()))) {
            ip = ip * 10 + (peek() - '0');
            if (ip > (1ll << 40)) throw parse_error("exponent too large", start);
            ++pos_;
        }
        long long n = ip, d = 1;
        if (!eof() && peek() == '.') {
            ++pos_;
            while (!eof() && std::isdigit(static_cast<unsigned char>(peek()))) {
                if (d > (1ll << 40)) throw parse_error("exponent has too many digits", start);
                n = n * 10 + (peek() - '0');
                d *= 10;
                ++pos_;
            }
        }
        Rational r{negative ? -n : n, d};
        return r;
    }
};

}  // namespace detail

/// Parse `text` against `env` and return the canonical (simplified) tree.
inline Expr parse(std::string_view text, const SymbolEnv& env) {
    detail::Parser p(text, env);
    return simplify(p.run());
}

}  // namespace helm
