// Command-line front end: decide whether an ODE system admits a variational
// multiplier, reconstruct the action when one exists, and certify every
// constructed action against the dynamics.

#include <CLI11.hpp>
#include <helm/cli.hpp>

int main(int argc, char** argv) {
    CLI::App app{"integrating-multiplier toolkit for the inverse variational problem"};
    app.require_subcommand(1);

    helm::CliOptions opt;
    app.add_option("--samples", opt.samples, "sample points per condition check");
    app.add_option("--tol", opt.tol, "residual tolerance for condition checks");
    app.add_option("--seed", opt.seed, "random seed");
    app.add_option("--dt", opt.dt, "integrator step");
    app.add_option("--out", opt.out, "write the report/result to this file");

    std::string system_path, multiplier_path, ansatz, omega0_path, action_path, corpus_dir = "corpus";
    double horizon = 1.0;
    int grid = 100;

    auto* check = app.add_subcommand("check", "evaluate the multiplier conditions");
    check->add_option("system", system_path, "system JSON file")->required();
    check->add_option("multiplier", multiplier_path,
                      "multiplier JSON file (seed file for first-order systems)");

    auto* build = app.add_subcommand("build", "reconstruct a Lagrangian for a second-order system");
    build->add_option("system", system_path, "system JSON file")->required();
    build->add_option("multiplier", multiplier_path, "multiplier JSON file");
    build->add_option("--ansatz", ansatz, "search ansatz: constant, scaled_time, diagonal_functions");

    auto* first = app.add_subcommand("first-order", "build the first-order action");
    first->add_option("system", system_path, "system JSON file")->required();
    first->add_option("--omega0", omega0_path, "seed matrix JSON file");
    first->add_option("--t", horizon, "time horizon");
    first->add_option("--grid", grid, "grid intervals for tabulated output");

    auto* verify = app.add_subcommand("verify", "re-certify a stored action against its system");
    verify->add_option("system", system_path, "system JSON file")->required();
    verify->add_option("action", action_path, "action JSON file")->required();

    auto* corpus = app.add_subcommand("corpus", "run all bundled examples");
    corpus->add_option("--dir", corpus_dir, "corpus directory");

    CLI11_PARSE(app, argc, argv);

    if (check->parsed()) return helm::cmd_check(system_path, multiplier_path, opt, std::cout);
    if (build->parsed()) {
        if (multiplier_path.empty() && ansatz.empty()) {
            std::cout << "build needs a multiplier file or --ansatz\n";
            return 2;
        }
        return helm::cmd_build(system_path, multiplier_path, ansatz, opt, std::cout);
    }
    if (first->parsed())
        return helm::cmd_first_order(system_path, omega0_path, horizon, grid, opt, std::cout);
    if (verify->parsed()) return helm::cmd_verify(system_path, action_path, opt, std::cout);
    if (corpus->parsed()) return helm::cmd_corpus(corpus_dir, opt, std::cout);
    return 2;
}
