// rbmlab: command-line driver for the band-matrix experiments.
//
//   rbmlab verify
//   rbmlab decay --config configs/decay.json --workers 4 --out results/decay.csv
//   rbmlab decay --set q=0.1 --set 'widths=[2,4]'
//   rbmlab sample --blocks 4 --width 2 --seed 3 --out h.txt

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rbm/band_model.hpp"
#include "rbm/harness/config.hpp"
#include "rbm/harness/experiments.hpp"

namespace {

namespace h = rbm::harness;

constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

struct Overrides {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::size_t> workers;
    std::optional<std::string> format;
    std::vector<std::string> sets;
};

h::Json load_document(const std::string& path) {
    if (path.empty()) return h::Json::object();
    std::ifstream in(path);
    if (!in) throw h::IoError("cannot read config file " + path);
    try {
        return h::Json::parse(in);
    } catch (const h::Json::parse_error& e) {
        throw h::ConfigError("<document>", std::string("malformed JSON: ") + e.what());
    }
}

h::ExperimentConfig build_config(const std::string& experiment, const Overrides& o) {
    h::Json doc = load_document(o.config_path);
    if (!doc.is_object()) throw h::ConfigError("<document>", "expected a JSON object");
    if (doc.contains("experiment") && doc["experiment"] != experiment) {
        throw h::ConfigError("experiment", "config file is for '" + doc["experiment"].dump() + "', not " + experiment);
    }
    doc["experiment"] = experiment;
    for (const auto& kv : o.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0) throw h::ConfigError(kv, "--set expects key=value");
        const std::string key = kv.substr(0, eq);
        const std::string value = kv.substr(eq + 1);
        try {
            doc[key] = h::Json::parse(value);
        } catch (const h::Json::parse_error&) {
            doc[key] = value;
        }
    }
    if (o.seed) doc["seed"] = *o.seed;
    if (o.out) doc["out"] = *o.out;
    if (o.workers) doc["workers"] = *o.workers;
    if (o.format) doc["format"] = *o.format;
    return h::parse_config(doc);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Random band matrix experiments"};
    app.require_subcommand(1);
    Overrides o;

    for (const auto& name : h::experiment_names()) {
        auto* sub = app.add_subcommand(name, "run the " + name + " experiment");
        sub->add_option("--config", o.config_path, "JSON config file")->check(CLI::ExistingFile);
        sub->add_option("--seed", o.seed, "master seed");
        sub->add_option("--out", o.out, "output path (primary table)");
        sub->add_option("--workers", o.workers, "worker threads");
        sub->add_option("--format", o.format, "csv or json");
        sub->add_option("--set", o.sets, "override a config key, key=value (value parsed as JSON when possible)");
    }

    int n_blocks = 4, width = 2;
    double energy = 0.3;
    std::uint64_t seed = 1;
    std::string out;
    auto* sample = app.add_subcommand("sample", "write one sampled Hamiltonian as a dense text matrix");
    sample->add_option("--blocks", n_blocks, "N")->check(CLI::PositiveNumber);
    sample->add_option("--width", width, "W")->check(CLI::PositiveNumber);
    sample->add_option("--energy", energy, "E");
    sample->add_option("--seed", seed, "seed");
    sample->add_option("--out", out, "output file (stdout when empty)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (sample->parsed()) {
            const auto ham = rbm::sample_hamiltonian(rbm::BandEnsemble::wegner_orbital(n_blocks, width, energy), seed);
            const auto dense = rbm::assemble_dense(ham);
            if (out.empty()) {
                rbm::write_dense_text(std::cout, dense);
            } else {
                std::ofstream f(out);
                if (!f) throw h::IoError("cannot write " + out);
                rbm::write_dense_text(f, dense);
            }
            return 0;
        }
        const std::string experiment = app.get_subcommands().front()->get_name();
        const auto cfg = build_config(experiment, o);
        return h::run(cfg, std::cout) == 0 ? 0 : kExitCheckFailed;
    } catch (const h::ConfigError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const rbm::ContractError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}
