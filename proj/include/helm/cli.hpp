#pragma once

// Subcommand drivers.  Exit codes: 0 all checks pass, 1 a condition or the
// certification fails, 2 schema or parse error, 3 no multiplier in the
// requested ansatz class (obstruction), 4 integration failure.

#include <iostream>
#include <sstream>

#include "io.hpp"

namespace helm {

struct CliOptions {
    int samples = 64;
    double tol = 1e-8;
    std::uint64_t seed = 42;
    double dt = 1e-3;
    std::string out;  // empty: print to the log stream

    // certification thresholds (discrete action, grid 0.01 over [0,1])
    double certify_tol = 1e-4;
    double certify_match_tol = 1e-2;
};

namespace cli_detail {

inline void emit(const Json& j, const CliOptions& opt, std::ostream& log) {
    std::string text = j.dump(2);
    text.push_back('\n');
    if (!opt.out.empty())
        write_text_file(opt.out, text);
    else
        log << text;
}

inline CheckOptions check_options(const CliOptions& opt) {
    CheckOptions c;
    c.samples = opt.samples;
    c.tol = opt.tol;
    c.seed = opt.seed;
    return c;
}

inline BuildOptions build_options(const CliOptions& opt) {
    BuildOptions b;
    b.trials = opt.samples;
    b.tol = opt.tol;
    b.seed = opt.seed;
    return b;
}

inline CertifyOptions certify_options(const CliOptions& opt) {
    CertifyOptions c;
    c.seed = opt.seed;
    c.flow_dt = opt.dt;
    return c;
}

inline bool certify_passes(const VerificationReport& rep, const CliOptions& opt) {
    return rep.max_residual < opt.certify_tol && rep.match_residual < opt.certify_match_tol;
}

/// flow-pipeline report for first-order and reduced systems
inline int run_first_order_flow(const FirstOrderSystem& sys, const SymplecticSeed& seed,
                                double horizon, const CliOptions& opt, Json& out_json) {
    auto fm = std::make_shared<FlowMap>(sys, FlowSettings{opt.dt});
    FirstOrderActionOptions aopt;
    aopt.flow = FlowSettings{opt.dt};
    aopt.horizon = horizon;
    FirstOrderAction action(fm, seed, aopt);

    FirstOrderCheckOptions copt;
    copt.samples = std::min(opt.samples, 16);  // flow checks cost a ray cache per sample
    copt.tol = std::max(opt.tol, 1e-5);        // finite-difference floor
    copt.seed = opt.seed;
    copt.horizon = horizon;
    ConditionReport rep = check_first_order_conditions(action.probe(), copt);

    CertifyOptions certopt = certify_options(opt);
    certopt.horizon = horizon;
    certopt.trajectories = 1;
    certopt.grid_dt = 0.01;
    VerificationReport cert = certify(subject_of(action), certopt);

    out_json["kind"] = "flow_action";
    out_json["omega0"] = matrix_to_json(seed.omega0);
    out_json["dt"] = opt.dt;
    out_json["horizon"] = horizon;
    Json samples = Json::array();
    for (int k = 0; k < 4; ++k) {
        auto rng = point_rng(opt.seed, 900 + k);
        std::uniform_real_distribution<double> tdist(0.0, horizon);
        double t = tdist(rng);
        std::vector<double> x(sys.dim());
        SampleBox box;
        for (auto& v : x) v = box.draw(rng);
        auto pe = action.at(t, x);
        Json jx = Json::array(), jJ = Json::array();
        for (double v : x) jx.push_back(v);
        for (double v : pe.J) jJ.push_back(v);
        samples.push_back(Json{{"t", t},
                               {"x", jx},
                               {"Omega", matrix_to_json(pe.omega)},
                               {"J", jJ},
                               {"H", pe.H}});
    }
    out_json["samples"] = samples;
    out_json["conditions"] = condition_report_to_json(rep);
    out_json["certify"] = certify_to_json(cert);
    return rep.all_pass() && certify_passes(cert, opt) ? 0 : 1;
}

}  // namespace cli_detail

// ---------------------------------------------------------------- check

inline int cmd_check(const std::string& system_path, const std::string& multiplier_path,
                     const CliOptions& opt, std::ostream& log) {
    try {
        SystemFile sf = load_system_file(system_path);
        Json out;
        int code = 0;
        if (sf.kind == SystemFile::Kind::second_order) {
            if (multiplier_path.empty())
                throw schema_error("second-order check needs a multiplier file");
            MultiplierCandidate mc = load_multiplier_file(multiplier_path, sf.second->env);
            ConditionReport rep =
                check_multiplier(*sf.second, mc, cli_detail::check_options(opt));
            out["conditions"] = condition_report_to_json(rep);
            code = rep.all_pass() ? 0 : 1;
        } else {
            FirstOrderSystem fos = sf.kind == SystemFile::Kind::first_order
                                       ? *sf.first
                                       : sf.linear->to_system();
            SymplecticSeed seed = multiplier_path.empty()
                                      ? SymplecticSeed::canonical(fos.dim())
                                      : load_seed_file(multiplier_path, fos.dim());
            auto fm = std::make_shared<FlowMap>(fos, FlowSettings{opt.dt});
            FirstOrderAction action(fm, seed);
            FirstOrderCheckOptions copt;
            copt.samples = std::min(opt.samples, 16);
            copt.tol = std::max(opt.tol, 1e-5);
            copt.seed = opt.seed;
            ConditionReport rep = check_first_order_conditions(action.probe(), copt);
            out["conditions"] = condition_report_to_json(rep);
            code = rep.all_pass() ? 0 : 1;
        }
        cli_detail::emit(out, opt, log);
        return code;
    } catch (const schema_error& e) {
        log << "schema error: " << e.what() << "\n";
        return 2;
    } catch (const parse_error& e) {
        log << "parse error: " << e.what() << "\n";
        return 2;
    } catch (const integration_error& e) {
        log << "integration error: " << e.what() << "\n";
        return 4;
    } catch (const error& e) {
        log << "error: " << e.what() << "\n";
        return 1;
    }
}

// ---------------------------------------------------------------- build

inline int cmd_build(const std::string& system_path, const std::string& multiplier_path,
                     const std::string& ansatz_name, const CliOptions& opt, std::ostream& log) {
    try {
        SystemFile sf = load_system_file(system_path);
        if (sf.kind != SystemFile::Kind::second_order)
            throw schema_error("build works on second-order systems");
        const SecondOrderSystem& sys = *sf.second;

        MultiplierCandidate mc{expr_mat(sys.dim(), sys.dim())};
        std::string note;
        if (!multiplier_path.empty()) {
            mc = load_multiplier_file(multiplier_path, sys.env);
        } else {
            auto ans = ansatz_from_name(ansatz_name);
            if (!ans) throw schema_error("unknown ansatz '" + ansatz_name + "'");
            MultiplierSearch found;
            try {
                found = search_multiplier(sys, *ans, cli_detail::check_options(opt));
            } catch (const unsupported_ansatz_error& e) {
                log << "unsupported ansatz: " << e.what() << "\n";
                return 2;
            }
            if (!found.found()) {
                Json out;
                out["kind"] = "obstruction";
                out["ansatz"] = ansatz_name;
                out["chain"] = found.obstruction->describe();
                Json chain = Json::array();
                for (const auto& f : found.obstruction->chain)
                    chain.push_back(Json{{"condition", f.condition},
                                         {"entry", "h" + std::to_string(f.i + 1) +
                                                       std::to_string(f.j + 1)}});
                chain.push_back(Json{{"condition", "det"}, {"entry", "det h"}});
                out["forced"] = chain;
                cli_detail::emit(out, opt, log);
                log << "no multiplier in ansatz class: " << found.obstruction->describe() << "\n";
                return 3;
            }
            mc = *found.multiplier;
            note = found.note;
        }

        ConditionReport rep = check_multiplier(sys, mc, cli_detail::check_options(opt));
        if (!rep.all_pass()) {
            Json out;
            out["conditions"] = condition_report_to_json(rep);
            cli_detail::emit(out, opt, log);
            return 1;
        }

        LagrangianSO lag = build_lagrangian(sys, mc, cli_detail::build_options(opt));
        VerificationReport cert =
            certify(subject_of(lag, sys, mc, opt.dt), cli_detail::certify_options(opt));
        if (!cli_detail::certify_passes(cert, opt)) {
            Json out;
            out["conditions"] = condition_report_to_json(rep);
            out["certify"] = certify_to_json(cert);
            cli_detail::emit(out, opt, log);
            log << "certification failed; refusing to write the Lagrangian\n";
            return 1;
        }

        Json out = lagrangian_to_json(lag, mc, sys);
        if (!note.empty()) out["note"] = note;
        out["conditions"] = condition_report_to_json(rep);
        out["certify"] = certify_to_json(cert);
        cli_detail::emit(out, opt, log);
        return 0;
    } catch (const schema_error& e) {
        log << "schema error: " << e.what() << "\n";
        return 2;
    } catch (const parse_error& e) {
        log << "parse error: " << e.what() << "\n";
        return 2;
    } catch (const verification_error& e) {
        log << "verification error: " << e.what() << "\n";
        return 1;
    } catch (const integration_error& e) {
        log << "integration error: " << e.what() << "\n";
        return 4;
    } catch (const error& e) {
        log << "error: " << e.what() << "\n";
        return 1;
    }
}

// ---------------------------------------------------------------- first-order

inline int cmd_first_order(const std::string& system_path, const std::string& omega0_path,
                           double horizon, int grid, const CliOptions& opt, std::ostream& log) {
    try {
        if (grid < 1) throw schema_error("--grid must be at least 1");
        if (horizon <= 0.0) throw schema_error("--t must be positive");
        SystemFile sf = load_system_file(system_path);

        if (sf.kind == SystemFile::Kind::linear_first_order) {
            const LinearSystem& lin = *sf.linear;
            SymplecticSeed seed = omega0_path.empty() ? SymplecticSeed::canonical(lin.dim())
                                                      : load_seed_file(omega0_path, lin.dim());
            std::vector<double> times;
            for (int i = 0; i <= grid; ++i) times.push_back(horizon * i / grid);
            QuadraticAction qa = quadratic_action(lin, seed, times, FlowSettings{opt.dt});
            CertifyOptions certopt = cli_detail::certify_options(opt);
            certopt.horizon = horizon;
            VerificationReport cert = certify(subject_of(qa, lin, opt.dt), certopt);

            Json out;
            out["kind"] = "quadratic_action";
            out["omega0"] = matrix_to_json(seed.omega0);
            out["grid"] = quadratic_action_to_json(qa);
            out["certify"] = certify_to_json(cert);
            cli_detail::emit(out, opt, log);
            return cli_detail::certify_passes(cert, opt) ? 0 : 1;
        }

        FirstOrderSystem fos = sf.kind == SystemFile::Kind::first_order
                                   ? *sf.first
                                   : reduce_to_first_order(*sf.second);
        SymplecticSeed seed = omega0_path.empty() ? SymplecticSeed::canonical(fos.dim())
                                                  : load_seed_file(omega0_path, fos.dim());
        Json out;
        int code = cli_detail::run_first_order_flow(fos, seed, horizon, opt, out);
        cli_detail::emit(out, opt, log);
        return code;
    } catch (const schema_error& e) {
        log << "schema error: " << e.what() << "\n";
        return 2;
    } catch (const parse_error& e) {
        log << "parse error: " << e.what() << "\n";
        return 2;
    } catch (const integration_error& e) {
        log << "integration error: " << e.what() << "\n";
        return 4;
    } catch (const error& e) {
        log << "error: " << e.what() << "\n";
        return 1;
    }
}

// ---------------------------------------------------------------- verify

inline int cmd_verify(const std::string& system_path, const std::string& action_path,
                      const CliOptions& opt, std::ostream& log) {
    try {
        SystemFile sf = load_system_file(system_path);
        Json action = read_json_file(action_path);
        std::string kind = detail::require_string(action, "kind");
        Json out;
        VerificationReport cert;

        if (kind == "lagrangian") {
            if (sf.kind != SystemFile::Kind::second_order)
                throw schema_error("lagrangian actions verify against second-order systems");
            const SecondOrderSystem& sys = *sf.second;
            if (action.value("numeric_fallback", false))
                throw schema_error("quadrature-backed Lagrangian files cannot be re-verified");
            MultiplierCandidate mc =
                load_multiplier(Json{{"entries", detail::require(action, "multiplier")}}, sys.env);
            LagrangianSO lag;
            SymbolEnv env = sys.env;
            lag.K = detail::parse_field(detail::require_string(action, "K"), env, "K");
            const Json& l = detail::require(action, "l");
            for (const auto& s : l) lag.l.push_back(detail::parse_field(s.get<std::string>(), env, "l"));
            lag.l0 = detail::parse_field(detail::require_string(action, "l0"), env, "l0");
            lag.L = detail::parse_field(detail::require_string(action, "L"), env, "L");
            cert = certify(subject_of(lag, sys, mc, opt.dt), cli_detail::certify_options(opt));
        } else if (kind == "quadratic_action") {
            if (sf.kind != SystemFile::Kind::linear_first_order)
                throw schema_error("quadratic actions verify against linear systems");
            const LinearSystem& lin = *sf.linear;
            SymplecticSeed seed = load_seed(action, lin.dim());
            const Json& grid = detail::require(action, "grid");
            std::vector<double> times;
            for (const auto& row : grid) times.push_back(detail::require(row, "t").get<double>());
            QuadraticAction qa = quadratic_action(lin, seed, times, FlowSettings{opt.dt});
            // regression: stored tables must match the reconstruction
            double worst = 0.0;
            for (std::size_t k = 0; k < times.size(); ++k) {
                const Json& om = grid[k].at("Omega");
                for (std::size_t r = 0; r < lin.dim(); ++r)
                    for (std::size_t c = 0; c < lin.dim(); ++c)
                        worst = std::max(worst, std::fabs(om[r][c].get<double>() -
                                                          qa.omega_table()[k](r, c)));
            }
            out["table_mismatch"] = worst;
            if (worst > 1e-8) {
                out["certify"] = nullptr;
                cli_detail::emit(out, opt, log);
                return 1;
            }
            CertifyOptions certopt = cli_detail::certify_options(opt);
            certopt.horizon = times.back();
            cert = certify(subject_of(qa, lin, opt.dt), certopt);
        } else if (kind == "flow_action") {
            FirstOrderSystem fos = sf.kind == SystemFile::Kind::first_order
                                       ? *sf.first
                                       : (sf.kind == SystemFile::Kind::second_order
                                              ? reduce_to_first_order(*sf.second)
                                              : sf.linear->to_system());
            SymplecticSeed seed = load_seed(action, fos.dim());
            double horizon = detail::require(action, "horizon").get<double>();
            CliOptions ropt = opt;
            ropt.dt = detail::require(action, "dt").get<double>();
            Json rebuilt;
            int code = cli_detail::run_first_order_flow(fos, seed, horizon, ropt, rebuilt);
            // regression: sampled table must reproduce
            double worst = 0.0;
            const Json& stored = detail::require(action, "samples");
            const Json& fresh = rebuilt.at("samples");
            for (std::size_t k = 0; k < stored.size() && k < fresh.size(); ++k)
                worst = std::max(worst, std::fabs(stored[k].at("H").get<double>() -
                                                  fresh[k].at("H").get<double>()));
            rebuilt["table_mismatch"] = worst;
            cli_detail::emit(rebuilt, opt, log);
            return worst > 1e-8 ? 1 : code;
        } else {
            throw schema_error("unknown action kind '" + kind + "'");
        }

        out["certify"] = certify_to_json(cert);
        cli_detail::emit(out, opt, log);
        return cli_detail::certify_passes(cert, opt) ? 0 : 1;
    } catch (const schema_error& e) {
        log << "schema error: " << e.what() << "\n";
        return 2;
    } catch (const parse_error& e) {
        log << "parse error: " << e.what() << "\n";
        return 2;
    } catch (const integration_error& e) {
        log << "integration error: " << e.what() << "\n";
        return 4;
    } catch (const error& e) {
        log << "error: " << e.what() << "\n";
        return 1;
    }
}

// ---------------------------------------------------------------- corpus

/// Run every bundled example per the manifest and compare exit codes.
inline int cmd_corpus(const std::string& dir, const CliOptions& base, std::ostream& log) {
    try {
        Json manifest = read_json_file(dir + "/manifest.json");
        int failures = 0;
        for (const auto& entry : manifest) {
            std::string name = detail::require_string(entry, "name");
            std::string command = detail::require_string(entry, "command");
            int expect = detail::require(entry, "expect").get<int>();

            CliOptions opt = base;
            opt.out.clear();
            if (entry.contains("samples")) opt.samples = entry.at("samples").get<int>();
            std::ostringstream sink;

            auto path = [&](const char* key) {
                return entry.contains(key) ? dir + "/" + entry.at(key).get<std::string>()
                                           : std::string();
            };

            int code = -1;
            try {
                if (command == "check")
                    code = cmd_check(path("system"), path("multiplier"), opt, sink);
                else if (command == "build")
                    code = cmd_build(path("system"), path("multiplier"),
                                     entry.value("ansatz", std::string()), opt, sink);
                else if (command == "first-order")
                    code = cmd_first_order(path("system"), path("omega0"), entry.value("t", 1.0),
                                           entry.value("grid", 100), opt, sink);
                else if (command == "verify")
                    code = cmd_verify(path("system"), path("action"), opt, sink);
                else
                    throw schema_error("unknown corpus command '" + command + "'");
            } catch (const std::exception& e) {
                sink << "unexpected failure: " << e.what() << "\n";
                code = -1;
            }

            bool ok = code == expect;
            failures += ok ? 0 : 1;
            log << (ok ? "PASS " : "FAIL ") << name << " (exit " << code << ", expected " << expect
                << ")\n";
        }
        return failures == 0 ? 0 : 1;
    } catch (const schema_error& e) {
        log << "schema error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace helm
