#pragma once

// JSON interchange.  Expression values are strings in the expression grammar;
// matrices are row-major arrays.  Reports are serialized with a fixed key
// order so identical runs produce byte-identical files.

#include <fstream>
#include <json.hpp>

#include "first_order.hpp"
#include "second_order.hpp"
#include "verify.hpp"

namespace helm {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------- helpers

inline Json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw schema_error("cannot open '" + path + "'");
    Json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw schema_error("malformed JSON in '" + path + "': " + e.what());
    }
    return j;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw error("cannot write '" + path + "'");
    out << content;
}

namespace detail {

inline const Json& require(const Json& j, const char* key) {
    if (!j.contains(key)) throw schema_error(std::string("missing field '") + key + "'");
    return j.at(key);
}

inline std::string require_string(const Json& j, const char* key) {
    const Json& v = require(j, key);
    if (!v.is_string()) throw schema_error(std::string("field '") + key + "' must be a string");
    return v.get<std::string>();
}

inline Expr parse_field(const std::string& text, const SymbolEnv& env, const std::string& where) {
    try {
        return parse(text, env);
    } catch (const parse_error& e) {
        throw schema_error(where + ": " + e.what());
    }
}

}  // namespace detail

// ---------------------------------------------------------------- system files

struct SystemFile {
    enum class Kind { second_order, first_order, linear_first_order };
    Kind kind;
    std::optional<SecondOrderSystem> second;
    std::optional<FirstOrderSystem> first;
    std::optional<LinearSystem> linear;

    const SymbolEnv& env() const {
        switch (kind) {
            case Kind::second_order: return second->env;
            case Kind::first_order: return first->env;
            case Kind::linear_first_order: return linear->env;
        }
        throw error("invalid system file");
    }
};

inline SymbolEnv load_env(const Json& j) {
    const Json& coords = detail::require(j, "coordinates");
    if (!coords.is_array() || coords.empty())
        throw schema_error("'coordinates' must be a non-empty array");
    std::vector<std::string> names;
    for (const auto& c : coords) {
        if (!c.is_string()) throw schema_error("coordinate names must be strings");
        names.push_back(c.get<std::string>());
    }
    std::map<std::string, double> params;
    if (j.contains("parameters")) {
        const Json& p = j.at("parameters");
        if (!p.is_object()) throw schema_error("'parameters' must be an object");
        for (auto it = p.begin(); it != p.end(); ++it) {
            if (!it.value().is_number()) throw schema_error("parameter values must be numbers");
            params[it.key()] = it.value().get<double>();
        }
    }
    try {
        return SymbolEnv(names, params);
    } catch (const error& e) {
        throw schema_error(e.what());
    }
}

inline SystemFile load_system(const Json& j) {
    std::string kind = detail::require_string(j, "kind");
    SymbolEnv env = load_env(j);
    SystemFile out;
    try {
        if (kind == "second_order") {
            out.kind = SystemFile::Kind::second_order;
            const Json& forces = detail::require(j, "forces");
            std::vector<Expr> f;
            for (const auto& c : env.coordinates()) {
                if (!forces.contains(c)) throw schema_error("missing force for '" + c + "'");
                f.push_back(detail::parse_field(forces.at(c).get<std::string>(), env, "forces." + c));
            }
            out.second.emplace(env, std::move(f));
        } else if (kind == "first_order") {
            out.kind = SystemFile::Kind::first_order;
            const Json& field = detail::require(j, "velocity_field");
            std::vector<Expr> f;
            for (const auto& c : env.coordinates()) {
                if (!field.contains(c))
                    throw schema_error("missing velocity field for '" + c + "'");
                f.push_back(
                    detail::parse_field(field.at(c).get<std::string>(), env, "velocity_field." + c));
            }
            out.first.emplace(env, std::move(f));
        } else if (kind == "linear_first_order") {
            out.kind = SystemFile::Kind::linear_first_order;
            const Json& A = detail::require(j, "A");
            std::size_t n = env.dim();
            if (!A.is_array() || A.size() != n) throw schema_error("'A' must be an NxN array");
            ExprMat a = expr_mat(n, n);
            for (std::size_t r = 0; r < n; ++r) {
                if (!A[r].is_array() || A[r].size() != n)
                    throw schema_error("'A' must be an NxN array");
                for (std::size_t c = 0; c < n; ++c)
                    a[r][c] = detail::parse_field(A[r][c].get<std::string>(), env, "A");
            }
            std::vector<Expr> rhs(n, num(0.0));
            if (j.contains("j")) {
                const Json& jj = j.at("j");
                if (!jj.is_array() || jj.size() != n) throw schema_error("'j' must have N entries");
                for (std::size_t r = 0; r < n; ++r)
                    rhs[r] = detail::parse_field(jj[r].get<std::string>(), env, "j");
            }
            out.linear.emplace(env, std::move(a), std::move(rhs));
        } else {
            throw schema_error("unknown system kind '" + kind + "'");
        }
    } catch (const schema_error&) {
        throw;
    } catch (const error& e) {
        throw schema_error(e.what());
    }
    return out;
}

inline SystemFile load_system_file(const std::string& path) {
    return load_system(read_json_file(path));
}

// ---------------------------------------------------------------- multipliers and seeds

inline MultiplierCandidate load_multiplier(const Json& j, const SymbolEnv& env) {
    const Json& entries = detail::require(j, "entries");
    std::size_t n = env.dim();
    if (!entries.is_array() || entries.size() != n)
        throw schema_error("'entries' must be an NxN array matching the system dimension");
    ExprMat h = expr_mat(n, n);
    for (std::size_t r = 0; r < n; ++r) {
        if (!entries[r].is_array() || entries[r].size() != n)
            throw schema_error("'entries' must be square");
        for (std::size_t c = 0; c < n; ++c)
            h[r][c] = detail::parse_field(entries[r][c].get<std::string>(), env, "entries");
    }
    return {h};
}

inline MultiplierCandidate load_multiplier_file(const std::string& path, const SymbolEnv& env) {
    return load_multiplier(read_json_file(path), env);
}

inline SymplecticSeed load_seed(const Json& j, std::size_t dim) {
    const Json& m = detail::require(j, "omega0");
    if (!m.is_array() || m.size() != dim) throw schema_error("'omega0' must be an NxN number array");
    Mat om(dim, dim);
    for (std::size_t r = 0; r < dim; ++r) {
        if (!m[r].is_array() || m[r].size() != dim) throw schema_error("'omega0' must be square");
        for (std::size_t c = 0; c < dim; ++c) {
            if (!m[r][c].is_number()) throw schema_error("'omega0' entries must be numbers");
            om(r, c) = m[r][c].get<double>();
        }
    }
    try {
        return SymplecticSeed(om);
    } catch (const error& e) {
        throw schema_error(e.what());
    }
}

inline SymplecticSeed load_seed_file(const std::string& path, std::size_t dim) {
    return load_seed(read_json_file(path), dim);
}

// ---------------------------------------------------------------- reports

inline Json condition_report_to_json(const ConditionReport& rep) {
    Json arr = Json::array();
    for (const auto& c : rep.conditions) {
        Json w = Json::object();
        for (const auto& [k, v] : c.witness) w[k] = v;
        arr.push_back(Json{{"id", c.id}, {"pass", c.pass}, {"max_residual", c.value}, {"witness", w}});
    }
    return arr;
}

inline Json certify_to_json(const VerificationReport& rep) {
    Json j{{"max_residual", rep.max_residual},
           {"order_estimate", rep.order ? Json(*rep.order) : Json(nullptr)}};
    j["match_residual"] = rep.match_residual;
    j["helmholtz_asymmetry"] = rep.helmholtz;
    return j;
}

inline Json matrix_to_json(const Mat& m) {
    Json rows = Json::array();
    for (std::size_t r = 0; r < m.rows(); ++r) {
        Json row = Json::array();
        for (std::size_t c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(row);
    }
    return rows;
}

inline Json expr_matrix_to_json(const ExprMat& m) {
    Json rows = Json::array();
    for (const auto& r : m) {
        Json row = Json::array();
        for (const auto& e : r) row.push_back(to_string(e));
        rows.push_back(row);
    }
    return rows;
}

inline Json lagrangian_to_json(const LagrangianSO& lag, const MultiplierCandidate& mc,
                               const SecondOrderSystem& sys) {
    Json j;
    j["kind"] = "lagrangian";
    Json coords = Json::array();
    for (const auto& c : sys.env.coordinates()) coords.push_back(c);
    j["coordinates"] = coords;
    Json params = Json::object();
    for (const auto& [k, v] : sys.env.parameters()) params[k] = v;
    j["parameters"] = params;
    j["multiplier"] = expr_matrix_to_json(mc.entries);
    j["numeric_fallback"] = lag.numeric;
    if (!lag.numeric) {
        j["K"] = to_string(lag.K);
        Json l = Json::array();
        for (const auto& e : lag.l) l.push_back(to_string(e));
        j["l"] = l;
        j["l0"] = to_string(lag.l0);
        j["L"] = to_string(lag.L);
    }
    return j;
}

/// {t, Omega, B, C} rows, row-major matrices
inline Json quadratic_action_to_json(const QuadraticAction& qa) {
    Json rows = Json::array();
    for (std::size_t k = 0; k < qa.grid().size(); ++k) {
        Json c = Json::array();
        for (double v : qa.c_table()[k]) c.push_back(v);
        rows.push_back(Json{{"t", qa.grid()[k]},
                            {"Omega", matrix_to_json(qa.omega_table()[k])},
                            {"B", matrix_to_json(qa.b_table()[k])},
                            {"C", c}});
    }
    return rows;
}

}  // namespace helm
