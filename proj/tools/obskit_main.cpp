#include <cstdlib>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "obskit/errors.hpp"
#include "obskit/oracles.hpp"
#include "obskit/recipe.hpp"
#include "obskit/report.hpp"
#include "obskit/runner.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

int cmd_run(const std::string& recipe_path, std::uint64_t seed, const std::string& out_dir,
            unsigned threads) {
    obskit::Recipe recipe;
    try {
        recipe = obskit::load_recipe_file(recipe_path);
    } catch (const obskit::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }
    try {
        obskit::RunOptions options;
        options.seed = seed;
        options.out_dir = out_dir;
        options.threads = threads;
        const auto report = obskit::run(recipe, options);
        std::cout << report.to_json();
        std::cout << "wrote " << out_dir << "/report.json\n";
        return kExitOk;
    } catch (const obskit::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}

int cmd_report(const std::string& dir_a, const std::string& dir_b) {
    const auto rendered = dir_b.empty() ? obskit::render_report(dir_a)
                                        : obskit::render_compare(dir_a, dir_b);
    std::cout << rendered.text;
    return kExitOk;
}

int cmd_oracle_check(std::size_t cases, std::uint64_t seed) {
    bool ok = true;
    const auto fisher = obskit::oracle::check_fisher_equivalence(cases, seed, 1e-8);
    std::cout << (fisher.pass ? "[PASS]" : "[FAIL]") << " inverse-Fisher equivalence: "
              << fisher.cases << " configurations, max abs error " << fisher.max_abs_error
              << " (tolerance 1e-8)\n";
    ok = ok && fisher.pass;
    const auto agree = obskit::oracle::check_selection_agreement(cases, seed + 1);
    std::cout << (agree.pass ? "[PASS]" : "[FAIL]") << " selection agreement: " << agree.matches
              << "/" << agree.cases << " instances match the exhaustive search\n";
    ok = ok && agree.pass;
    return ok ? kExitOk : kExitRuntime;
}

int cmd_validate(const std::string& recipe_path) {
    try {
        const auto recipe = obskit::load_recipe_file(recipe_path);
        std::cout << "ok: " << recipe.name << "\n";
        return kExitOk;
    } catch (const obskit::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"second-order pruning and compound compression toolkit"};
    app.require_subcommand(1);

    std::string recipe_path;
    std::string out_dir = "obskit-run";
    std::uint64_t seed = 0;
    unsigned threads = 0;

    auto* run = app.add_subcommand("run", "execute a compression recipe");
    run->add_option("--recipe", recipe_path, "recipe file")->required();
    run->add_option("--seed", seed, "run seed");
    run->add_option("--out", out_dir, "output directory");
    run->add_option("--threads", threads, "worker threads (default: OBSKIT_THREADS or 1)");

    std::string report_a, report_b;
    auto* report = app.add_subcommand("report", "summarize one run or compare two");
    report->add_option("dir", report_a, "run directory")->required();
    report->add_option("dir_b", report_b, "second run directory (compare mode)");

    std::size_t cases = 50;
    std::uint64_t oracle_seed = 12345;
    auto* oracle = app.add_subcommand("oracle-check", "verify against brute-force references");
    oracle->add_option("--cases", cases, "random configurations per check");
    oracle->add_option("--seed", oracle_seed, "generator seed");

    auto* validate = app.add_subcommand("validate-recipe", "parse and validate a recipe file");
    validate->add_option("--recipe", recipe_path, "recipe file")->required();

    CLI11_PARSE(app, argc, argv);

    if (run->parsed()) return cmd_run(recipe_path, seed, out_dir, threads);
    if (report->parsed()) return cmd_report(report_a, report_b);
    if (oracle->parsed()) return cmd_oracle_check(cases, oracle_seed);
    if (validate->parsed()) return cmd_validate(recipe_path);
    return kExitValidation;
}
