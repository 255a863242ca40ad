#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "tbm/runner.hpp"

namespace {

struct Args {
    std::string config;
    std::string out = "out";
    std::optional<std::uint64_t> seed;
    std::string format = "both";
};

int run(const std::string& sub, const Args& a) {
    try {
        auto fmt = tbm::parse_format(a.format);
        std::filesystem::path cfg_path(a.config);
        tbm::json cfg = tbm::load_config(cfg_path);
        tbm::Report r = tbm::run_subcommand(sub, cfg, cfg_path.parent_path(), a.seed);
        tbm::write_report(r, a.out, fmt);
        for (const auto& c : r.checks)
            std::cout << (c.pass ? "PASS " : "FAIL ") << c.name << "  computed=" << c.computed.dump()
                      << " expected=" << c.expected.dump() << " tol=" << c.tolerance << "\n";
        std::cout << (r.all_pass() ? "all checks passed" : "some checks failed") << " (" << r.seconds << " s)\n";
        return r.all_pass() ? 0 : 1;
    } catch (const tbm::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return tbm::exit_code_for(e);
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"twisted crossed products, bulk-edge pairings and Levinson checks"};
    app.set_version_flag("--version", std::string(tbm::version));
    app.require_subcommand(1);
    Args a;
    std::string chosen;
    for (const char* name : {"levinson", "bulk-edge", "algebra-check", "pairing"}) {
        auto* sc = app.add_subcommand(name);
        sc->add_option("--config", a.config, "JSON config file")->required();
        sc->add_option("--out", a.out, "output directory")->capture_default_str();
        sc->add_option("--seed", a.seed, "RNG seed (overrides the config)");
        sc->add_option("--format", a.format, "json, csv or both")->check(CLI::IsMember({"json", "csv", "both"}))->capture_default_str();
        sc->callback([&chosen, name] { chosen = name; });
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    return run(chosen, a);
}
