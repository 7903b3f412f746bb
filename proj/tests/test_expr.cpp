#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <helm/eval.hpp>
#include <helm/expr.hpp>
#include <helm/parser.hpp>

using namespace helm;

namespace {

SymbolEnv env_xy() { return SymbolEnv({"x", "y"}, {{"alpha", 0.5}, {"beta", 0.25}}); }

// the regression corpus of expression strings exercised by round-trip and
// derivative properties
const std::vector<std::string>& corpus() {
    static const std::vector<std::string> c = {
        "x",
        "dx^2/2",
        "exp(-2*alpha*t)",
        "dx^2 + dy^2",
        "(dx+dy)^2",
        "sin(t)^2 + cos(t)^2",
        "2*dx/(dx^2+dy^2)",
        "arctan(dx/dy)",
        "sqrt(x^2 + 1)",
        "ln(dx^2 + dy^2)",
        "x*y - beta*(dx*y - dy*x)/2",
        "1/x",
        "t^3 - 2*t + 0.5",
        "abs(x)",
        "x^(1/2)",
        "tan(x/2)",
    };
    return c;
}

}  // namespace

TEST_CASE("parse builds expected trees") {
    auto env = env_xy();

    // multiplication chains collapse to a canonical n-ary product
    Expr e = parse("exp(-2*alpha*t)", env);
    Expr expected = simplify(exp_(mul(mul(num(-2), sym("alpha")), sym("t"))));
    CHECK(e == expected);

    Expr q = parse("dx^2/2", env);
    CHECK(q == simplify(div(pow_(sym("dx"), Rational{2}), num(2))));

    // velocities and accelerations resolve against declared coordinates
    CHECK_NOTHROW(parse("ddx + dx + x", env));
}

TEST_CASE("parse reports syntax errors with byte offsets") {
    auto env = env_xy();
    try {
        parse("x+", env);
        FAIL("expected parse_error");
    } catch (const parse_error& pe) {
        CHECK(pe.offset == 2);
    }
    try {
        parse("x + qq", env);
        FAIL("expected unknown_symbol_error");
    } catch (const unknown_symbol_error& ue) {
        CHECK(ue.symbol == "qq");
        CHECK(ue.offset == 4);
    }
    CHECK_THROWS_AS(parse("sin x", env), parse_error);
    CHECK_THROWS_AS(parse("(x", env), parse_error);
    CHECK_THROWS_AS(parse("x^y", env), parse_error);  // exponents are constants
}

TEST_CASE("simplify is idempotent on the corpus") {
    auto env = env_xy();
    for (const auto& s : corpus()) {
        Expr e = parse(s, env);
        CHECK(simplify(e) == e);
    }
    // also on deliberately un-canonical trees
    Expr raw = add(mul(num(2), sym("x")), add(mul(sym("x"), num(3)), num(0)));
    Expr s1 = simplify(raw);
    CHECK(simplify(s1) == s1);
    CHECK(s1 == mul(num(5), sym("x")));
}

TEST_CASE("print/parse round-trip reproduces the canonical tree") {
    auto env = env_xy();
    for (const auto& s : corpus()) {
        Expr e = parse(s, env);
        Expr back = parse(to_string(e), env);
        CHECK(back == e);
    }
}

TEST_CASE("eval") {
    auto env = env_xy();
    Expr e = parse("dx^2 + dy^2", env);
    CHECK(eval(e, {{"dx", 3.0}, {"dy", 4.0}}) == 25.0);

    CHECK_THROWS_AS(eval(parse("1/dx", env), {{"dx", 0.0}}), expr_domain_error);
    CHECK_THROWS_AS(eval(parse("ln(x)", env), {{"x", -1.0}}), expr_domain_error);
    CHECK_THROWS_AS(eval(parse("sqrt(x)", env), {{"x", -2.0}}), expr_domain_error);

    Expr d = parse("exp(-2*alpha*t)", env);
    CHECK(eval(d, env, {{"t", 1.0}}) == doctest::Approx(0.367879441).epsilon(1e-9));

    CHECK_THROWS_AS(eval(parse("x + y", env), {{"x", 1.0}}), unbound_symbol_error);
}

TEST_CASE("eval is deterministic") {
    auto env = env_xy();
    Expr e = parse("sin(x)*exp(y) + sqrt(x^2+1)/tan(y)", env);
    double a = eval(e, {{"x", 0.7}, {"y", 1.3}});
    double b = eval(e, {{"x", 0.7}, {"y", 1.3}});
    CHECK(a == b);

    Program p(e, {"x", "y"});
    double vals[2] = {0.7, 1.3};
    CHECK(p.run(vals) == a);
}

TEST_CASE("equiv_random") {
    auto env = env_xy();
    CHECK(equiv_random(parse("(dx+dy)^2", env), parse("dx^2 + 2*dx*dy + dy^2", env), env));
    CHECK(equiv_random(parse("sin(t)^2 + cos(t)^2", env), num(1.0), env));
    CHECK_FALSE(equiv_random(parse("dx", env), parse("dy", env), env));
}

TEST_CASE("equiv_random is symmetric on corpus pairs") {
    auto env = env_xy();
    const auto& c = corpus();
    for (std::size_t i = 0; i + 1 < c.size(); i += 2) {
        Expr a = parse(c[i], env), b = parse(c[i + 1], env);
        CHECK(equiv_random(a, b, env) == equiv_random(b, a, env));
    }
}

TEST_CASE("equiv_random resamples domain errors and reports empty domains") {
    auto env = env_xy();
    // sqrt(x) errors on half the box; resampling must still find points
    CHECK(equiv_random(parse("sqrt(x)^2", env), parse("x", env), env));
    // ln(-1 - x^2) is nowhere evaluable
    Expr bad = parse("ln(-1 - x^2)", env);
    CHECK_THROWS_AS(equiv_random(bad, bad, env), resample_exhausted_error);
}

TEST_CASE("scale_args") {
    auto env = env_xy();
    SymbolEnv envb({"x", "y"}, {{"b", 0.0}, {"s", 0.0}});

    Expr e = scale_args(parse("dx*dy", envb), ArgGroup::velocities, sym("b"), envb);
    CHECK(e == simplify(mul(mul(pow_(sym("b"), Rational{2}), sym("dx")), sym("dy"))));

    Expr v = scale_args(parse("x^2", envb), ArgGroup::coordinates, sym("s"), envb);
    CHECK(v == simplify(mul(pow_(sym("s"), Rational{2}), pow_(sym("x"), Rational{2}))));

    // hand-simplified target checked by random equivalence
    SymbolEnv envc({"x", "y"}, {{"b", 1.5}});
    Expr g = scale_args(parse("2*dx/(dx^2+dy^2)", envc), ArgGroup::velocities, sym("b"), envc);
    CHECK(equiv_random(g, parse("2*dx/(b*(dx^2+dy^2))", envc), envc));

    CHECK_THROWS_AS(scale_args(parse("dx", envb), ArgGroup::velocities, sym("dx"), envb), error);
}

TEST_CASE("symbol environment invariants") {
    CHECK_THROWS_AS(SymbolEnv({"x", "x"}), error);
    CHECK_THROWS_AS(SymbolEnv({"t"}), error);
    CHECK_THROWS_AS(SymbolEnv({"x", "dx"}), error);  // dx shadows the velocity of x
    CHECK_THROWS_AS(SymbolEnv({"x"}, {{"x", 1.0}}), error);
    CHECK_THROWS_AS(SymbolEnv({"x"}, {{"dx", 1.0}}), error);
    CHECK_THROWS_AS(SymbolEnv({"sin"}), error);

    SymbolEnv env({"q"}, {{"omega", 2.0}});
    CHECK(env.classify("t") == SymbolEnv::SymKind::time);
    CHECK(env.classify("q") == SymbolEnv::SymKind::coordinate);
    CHECK(env.classify("dq") == SymbolEnv::SymKind::velocity);
    CHECK(env.classify("ddq") == SymbolEnv::SymKind::accel);
    CHECK(env.classify("omega") == SymbolEnv::SymKind::parameter);
    CHECK(env.classify("zz") == SymbolEnv::SymKind::unknown);

    CHECK_THROWS_AS(env.validate_expr(sym("zz")), unbound_symbol_error);
}

TEST_CASE("numbers print with round-trip precision") {
    auto env = env_xy();
    Expr e = num(0.1234567890123456789);
    Expr back = parse(to_string(e), env);
    CHECK(back.number() == e.number());
}
