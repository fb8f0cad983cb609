#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>

#include "servnet/report.hpp"
#include "servnet/scenario.hpp"
#include "servnet/sim.hpp"
#include "servnet/suites.hpp"

namespace fs = std::filesystem;
using namespace servnet;

namespace {

constexpr int kPass = 0;
constexpr int kFail = 1;
constexpr int kUsage = 2;

fs::path default_out_dir() {
    if (const char* env = std::getenv("SERVNET_OUT_DIR"); env && *env) return env;
    return "servnet-out";
}

void write_file(const fs::path& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << body;
}

int cmd_run(const std::string& file, std::optional<std::uint64_t> seed, const fs::path& out_dir) {
    std::ifstream in(file, std::ios::binary);
    if (!in) {
        std::cerr << "error: cannot open " << file << "\n";
        return kUsage;
    }
    std::stringstream text;
    text << in.rdbuf();
    std::unique_ptr<Sim> sim;
    try {
        ScenarioScript script = parse_scenario(text.str());
        if (seed) script.seed = *seed;
        sim = std::make_unique<Sim>(std::move(script));
    } catch (const ScenarioError& e) {
        std::cerr << file << ": " << e.what() << "\n";
        return kUsage;
    }
    sim->run();
    const RunReport report = make_report(sim->log());
    fs::create_directories(out_dir);
    write_file(out_dir / "events.jsonl", sim->log().to_jsonl());
    write_file(out_dir / "snapshot.csv", sim->snapshot_csv());
    const std::string rendered = report.render();
    write_file(out_dir / "report.txt", rendered);
    std::cout << rendered;
    return report.passed() ? kPass : kFail;
}

int cmd_attack_suite(const fs::path& out_dir, Mutations mutations) {
    AttackSuite suite(mutations);
    suite.run();
    fs::create_directories(out_dir);
    std::ostringstream summary;
    for (const auto& r : suite.results()) {
        const fs::path dir = out_dir / r.name;
        fs::create_directories(dir);
        write_file(dir / "events.jsonl", r.events_jsonl);
        write_file(dir / "snapshot.csv", r.snapshot_csv);
        write_file(dir / "report.txt", r.report.render());
        summary << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.claim << "\n";
    }
    summary << "\nattack suite: " << (suite.all_passed() ? "PASS" : "FAIL") << "\n";
    write_file(out_dir / "summary.txt", summary.str());
    std::cout << summary.str();
    return suite.all_passed() ? kPass : kFail;
}

int cmd_fairness(std::uint64_t m1, std::uint64_t t2, std::uint64_t m2, std::optional<std::uint64_t> t_max) {
    FairnessReport r;
    try {
        r = fairness_report(m1, t2, m2, t_max);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    }
    std::cout << render(r);
    bool deltas_zero = true;
    for (const auto& s : r.samples) deltas_zero = deltas_zero && s.delta == 0;
    return r.agree() && deltas_zero ? kPass : kFail;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"servnet: reputation network simulator"};
    app.require_subcommand(1);

    std::string file;
    std::optional<std::uint64_t> seed;
    std::string out;
    auto* run = app.add_subcommand("run", "Run a scenario file");
    run->add_option("file", file, "Scenario JSON file")->required();
    run->add_option("--seed", seed, "Override the scenario seed");
    run->add_option("--out", out, "Output directory (default $SERVNET_OUT_DIR or ./servnet-out)");

    bool no_nonce = false;
    bool no_transcript = false;
    auto* attack = app.add_subcommand("attack-suite", "Run the built-in attack scenarios");
    attack->add_option("--out", out, "Output directory (default $SERVNET_OUT_DIR or ./servnet-out)");
    attack->add_flag("--disable-nonce-cache", no_nonce, "Mutation: accept replayed nonces");
    attack->add_flag("--disable-transcript-check", no_transcript, "Mutation: skip the final hash comparison");

    std::uint64_t m1 = 0;
    std::uint64_t t2 = 0;
    std::uint64_t m2 = 0;
    std::optional<std::uint64_t> t_max;
    auto* fair = app.add_subcommand("fairness", "Compare two periodic peers");
    fair->add_option("--m1", m1, "Negative period of peer 1")->required();
    fair->add_option("--t2", t2, "Transactions of peer 2")->required();
    fair->add_option("--m2", m2, "Negative period of peer 2")->required();
    fair->add_option("--t-max", t_max, "Upper end of the printed range");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kPass : kUsage;
    }

    const fs::path out_dir = out.empty() ? default_out_dir() : fs::path(out);
    try {
        if (*run) return cmd_run(file, seed, out_dir);
        if (*attack) return cmd_attack_suite(out_dir, Mutations{no_nonce, no_transcript});
        if (*fair) return cmd_fairness(m1, t2, m2, t_max);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    }
    return kUsage;
}
