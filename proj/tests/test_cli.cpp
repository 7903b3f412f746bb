#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <helm/cli.hpp>

#include <sstream>

using namespace helm;

namespace {
const std::string corpus = HELM_CORPUS_DIR;

CliOptions quiet() {
    CliOptions o;
    return o;
}
}  // namespace

TEST_CASE("io: system files round-trip through the schema") {
    auto sf = load_system_file(corpus + "/dissipative2d.json");
    REQUIRE(sf.kind == SystemFile::Kind::second_order);
    CHECK(sf.second->dim() == 2);
    CHECK(sf.second->env.parameters().at("alpha") == 0.3);

    auto lin = load_system_file(corpus + "/oscillator_linear.json");
    REQUIRE(lin.kind == SystemFile::Kind::linear_first_order);
    CHECK(lin.linear->dim() == 2);

    auto fo = load_system_file(corpus + "/pendulum_first_order.json");
    REQUIRE(fo.kind == SystemFile::Kind::first_order);
    CHECK(fo.first->dim() == 2);
}

TEST_CASE("io: schema violations raise schema_error") {
    CHECK_THROWS_AS(load_system_file(corpus + "/malformed.json"), schema_error);
    CHECK_THROWS_AS(load_system(Json{{"kind", "unknown"}, {"coordinates", {"x"}}}), schema_error);
    CHECK_THROWS_AS(load_system(Json{{"kind", "second_order"},
                                     {"coordinates", {"x"}},
                                     {"forces", {{"x", "x + zz"}}}}),
                    schema_error);
    // matrix files must be square and of the right dimension
    SymbolEnv env({"x", "y"});
    CHECK_THROWS_AS(load_multiplier(Json{{"entries", {{"1", "0"}}}}, env), schema_error);
    CHECK_THROWS_AS(load_seed(Json{{"omega0", {{0, 1}, {-1, 0}, {0, 0}}}}, 2), schema_error);
    CHECK_THROWS_AS(load_seed(Json{{"omega0", {{0, 1}, {1, 0}}}}, 2), schema_error);
}

TEST_CASE("cmd_check exit codes") {
    std::ostringstream sink;
    CHECK(cmd_check(corpus + "/magnetic.json", corpus + "/magnetic_multiplier.json", quiet(),
                    sink) == 0);
    CHECK(cmd_check(corpus + "/douglas.json", corpus + "/identity_multiplier.json", quiet(),
                    sink) == 1);
    CHECK(cmd_check(corpus + "/malformed.json", corpus + "/identity_multiplier.json", quiet(),
                    sink) == 2);
    CHECK(cmd_check(corpus + "/does_not_exist.json", "", quiet(), sink) == 2);
}

TEST_CASE("cmd_check reports the failing condition") {
    std::ostringstream out;
    CliOptions opt;
    cmd_check(corpus + "/douglas.json", corpus + "/identity_multiplier.json", opt, out);
    auto j = Json::parse(out.str());
    bool found = false;
    for (const auto& c : j.at("conditions"))
        if (c.at("id") == "sym11") {
            found = true;
            CHECK_FALSE(c.at("pass").get<bool>());
            CHECK(c.at("max_residual").get<double>() == doctest::Approx(0.5));
        }
    CHECK(found);
}

TEST_CASE("cmd_build: obstruction exits 3 with the forcing chain") {
    for (const char* ansatz : {"constant", "scaled_time", "diagonal_functions"}) {
        std::ostringstream out;
        int code = cmd_build(corpus + "/douglas.json", "", ansatz, quiet(), out);
        CHECK(code == 3);
        CHECK(out.str().find("alg19 -> h12 = 0; sym11 -> h11 = 0; det h = 0") !=
              std::string::npos);
    }
}

TEST_CASE("cmd_build: dissipative scaled_time writes a certified Lagrangian") {
    std::ostringstream out;
    int code = cmd_build(corpus + "/dissipative2d.json", "", "scaled_time", quiet(), out);
    CHECK(code == 0);
    auto j = Json::parse(out.str());
    CHECK(j.at("kind") == "lagrangian");
    CHECK(j.at("note").get<std::string>().find("c' + a*c = 0") != std::string::npos);
    CHECK(j.at("certify").at("max_residual").get<double>() < 1e-4);
    // the emitted Lagrangian parses back under the declared environment
    auto sf = load_system_file(corpus + "/dissipative2d.json");
    Expr L = parse(j.at("L").get<std::string>(), sf.second->env);
    CHECK(equiv_random(L, parse("exp(-alpha*t)*((dx^2+dy^2)/2 + (x^2+y^2)/2)", sf.second->env),
                       sf.second->env));
}

TEST_CASE("cmd_build: magnetic system with the given multiplier") {
    std::ostringstream out;
    int code = cmd_build(corpus + "/magnetic.json", corpus + "/magnetic_multiplier.json", "",
                         quiet(), out);
    CHECK(code == 0);
    auto j = Json::parse(out.str());
    CHECK(j.at("certify").at("max_residual").get<double>() < 1e-4);
}

TEST_CASE("cmd_first_order: linear fast path emits the tabulated action") {
    std::ostringstream out;
    int code = cmd_first_order(corpus + "/oscillator_linear.json", "", 1.0, 50, quiet(), out);
    CHECK(code == 0);
    auto j = Json::parse(out.str());
    CHECK(j.at("kind") == "quadratic_action");
    const auto& rows = j.at("grid");
    CHECK(rows.size() == 51);
    // Omega stays at the seed; B = -I
    for (const auto& row : rows) {
        CHECK(std::fabs(row.at("Omega")[0][1].get<double>() - 1.0) < 1e-8);
        CHECK(std::fabs(row.at("B")[0][0].get<double>() + 1.0) < 1e-8);
        CHECK(std::fabs(row.at("C")[0].get<double>()) < 1e-12);
    }
}

TEST_CASE("cmd_first_order: --grid 0 is a schema error") {
    std::ostringstream out;
    CHECK(cmd_first_order(corpus + "/oscillator_linear.json", "", 1.0, 0, quiet(), out) == 2);
}

TEST_CASE("cmd_build rejects first-order systems") {
    std::ostringstream out;
    CHECK(cmd_build(corpus + "/oscillator_linear.json", "", "constant", quiet(), out) == 2);
}

TEST_CASE("cmd_build: oscillator constant ansatz emits the canonical Lagrangian") {
    std::ostringstream out;
    REQUIRE(cmd_build(corpus + "/oscillator.json", "", "constant", quiet(), out) == 0);
    auto j = Json::parse(out.str());
    auto sf = load_system_file(corpus + "/oscillator.json");
    Expr L = parse(j.at("L").get<std::string>(), sf.second->env);
    CHECK(L == simplify(parse("dq^2/2 - q^2/2", sf.second->env)));
}

TEST_CASE("cmd_verify round-trips a built Lagrangian") {
    std::string tmp = "/tmp/helm_test_lagrangian.json";
    CliOptions opt;
    opt.out = tmp;
    std::ostringstream sink;
    REQUIRE(cmd_build(corpus + "/dissipative2d.json", "", "scaled_time", opt, sink) == 0);
    CHECK(cmd_verify(corpus + "/dissipative2d.json", tmp, quiet(), sink) == 0);
}

TEST_CASE("cmd_verify round-trips a quadratic action") {
    std::string tmp = "/tmp/helm_test_quadratic.json";
    CliOptions opt;
    opt.out = tmp;
    std::ostringstream sink;
    REQUIRE(cmd_first_order(corpus + "/oscillator_linear.json", "", 1.0, 20, opt, sink) == 0);
    CHECK(cmd_verify(corpus + "/oscillator_linear.json", tmp, quiet(), sink) == 0);
}

TEST_CASE("cmd_verify round-trips a flow action") {
    std::string tmp = "/tmp/helm_test_flow_action.json";
    CliOptions opt;
    opt.out = tmp;
    opt.samples = 4;
    std::ostringstream sink;
    REQUIRE(cmd_first_order(corpus + "/pendulum_first_order.json", "", 0.4, 40, opt, sink) == 0);
    CliOptions vopt;
    vopt.samples = 4;
    CHECK(cmd_verify(corpus + "/pendulum_first_order.json", tmp, vopt, sink) == 0);
}

TEST_CASE("cmd_build: quadrature fallback is flagged and certified") {
    std::ostringstream out;
    REQUIRE(cmd_build(corpus + "/free_particle.json", corpus + "/exotic_multiplier.json", "",
                      quiet(), out) == 0);
    auto j = Json::parse(out.str());
    CHECK(j.at("numeric_fallback").get<bool>());
    CHECK_FALSE(j.contains("L"));
    CHECK(j.at("certify").at("max_residual").get<double>() < 1e-4);
}

TEST_CASE("reports are byte-identical across runs with the same seed") {
    std::ostringstream a, b;
    CliOptions opt;
    cmd_check(corpus + "/magnetic.json", corpus + "/magnetic_multiplier.json", opt, a);
    cmd_check(corpus + "/magnetic.json", corpus + "/magnetic_multiplier.json", opt, b);
    CHECK(a.str() == b.str());
    REQUIRE_FALSE(a.str().empty());

    std::ostringstream c, d;
    cmd_build(corpus + "/dissipative2d.json", "", "scaled_time", opt, c);
    cmd_build(corpus + "/dissipative2d.json", "", "scaled_time", opt, d);
    CHECK(c.str() == d.str());
}

TEST_CASE("corpus runner asserts every bundled exit code") {
    std::ostringstream out;
    int code = cmd_corpus(corpus, quiet(), out);
    INFO(out.str());
    CHECK(code == 0);
    CHECK(out.str().find("FAIL") == std::string::npos);
}
