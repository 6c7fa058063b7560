#pragma once

// Experiment configuration: a flat JSON object with typed values.
//
//   {"experiment": "decay", "seed": 7, "widths": [2, 4, 8], "q": 0.2}
//
// Missing keys take defaults; unknown keys and type mismatches are errors.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rbm/band_model.hpp"
#include "rbm/distributions.hpp"
#include "rbm/estimators.hpp"

namespace rbm::harness {

using Json = nlohmann::json;

/// Invalid configuration or command line; the message names the field.
class ConfigError : public std::invalid_argument {
public:
    ConfigError(const std::string& field, const std::string& what)
        : std::invalid_argument("config field '" + field + "': " + what), field_(field) {}
    [[nodiscard]] const std::string& field() const { return field_; }

private:
    std::string field_;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Experiment { verify, decay, localize, wegner, lyapunov, fluctuate, mregular };
enum class OutputFormat { csv, json };

inline const std::vector<std::string>& experiment_names() {
    static const std::vector<std::string> names{"verify", "decay", "localize", "wegner", "lyapunov", "fluctuate", "mregular"};
    return names;
}

inline std::string to_string(Experiment e) { return experiment_names()[static_cast<std::size_t>(e)]; }
inline std::string to_string(OutputFormat f) { return f == OutputFormat::csv ? "csv" : "json"; }

inline Experiment parse_experiment(const std::string& s) {
    const auto& names = experiment_names();
    for (std::size_t k = 0; k < names.size(); ++k) {
        if (names[k] == s) return static_cast<Experiment>(k);
    }
    throw ConfigError("experiment", "unknown experiment '" + s + "'");
}

inline OutputFormat parse_format(const std::string& s) {
    if (s == "csv") return OutputFormat::csv;
    if (s == "json") return OutputFormat::json;
    throw ConfigError("format", "expected csv or json, got '" + s + "'");
}

struct ExperimentConfig {
    Experiment experiment = Experiment::verify;
    std::uint64_t seed = 1;
    std::size_t workers = 1;
    std::string out;  // empty: <experiment>.<format> in the working directory
    OutputFormat format = OutputFormat::csv;

    // ensemble
    std::string ensemble = "wegner_orbital";  // or "uniform": every entry of sqrt(W) H from `law`
    std::string law = "gaussian";             // gaussian | heavy_tail | tabulated
    double alpha = 6.0;
    double m_bound = 0.0;                     // 0: computed from the law
    std::string law_file;
    std::vector<int> widths{1, 2, 4, 8};
    std::vector<int> lengths{1, 2, 8, 32};
    double energy = 0.3;
    double energy_window = kDefaultEnergyWindow;

    // estimators
    std::size_t samples = 0;  // 0: experiment default
    std::size_t instances = 200;
    double tolerance = 1e-8;
    double q = 0.2;
    std::vector<int> length_multipliers{5, 10, 15, 20, 25, 30, 35, 40, 45, 50};
    int dimension = 1024;
    double noise_floor = kProfileNoiseFloor;
    int blocks = 4;  // N for the Wegner tail
    int block_i = 2;
    int block_j = 2;
    std::vector<double> lambdas{1.0, 10.0, 100.0, 1000.0, 10000.0};
    std::size_t steps = 10000;
    int reorth_period = kDefaultReorthPeriod;
    std::vector<double> deltas{0.1, 0.2};
    std::vector<double> t_values{0.25, 0.5};
    double epsilon = 0.1;
    std::vector<int> sizes{16, 64, 256};
    std::string fill = "all";  // symmetric | general | score | all
    std::size_t matrix_samples = 200;

    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;

    [[nodiscard]] std::size_t sample_count() const {
        if (samples != 0) return samples;
        switch (experiment) {
            case Experiment::localize: return 50;
            case Experiment::fluctuate: return 1000;
            case Experiment::mregular: return 100000;
            default: return 2000;
        }
    }

    [[nodiscard]] std::string output_path() const {
        return out.empty() ? to_string(experiment) + "." + to_string(format) : out;
    }

    [[nodiscard]] MRegularLaw build_law() const {
        MRegularLaw l;
        if (law == "gaussian") {
            l = MRegularLaw::gaussian(1.0);
        } else if (law == "heavy_tail") {
            l = MRegularLaw::heavy_tail(alpha);
        } else if (law == "tabulated") {
            l = MRegularLaw::load_tabulated(law_file);
        } else {
            throw ConfigError("law", "expected gaussian, heavy_tail or tabulated");
        }
        return m_bound > 0.0 ? l.with_m_bound(m_bound) : l;
    }

    /// Ensemble at (N, W).
    [[nodiscard]] BandEnsemble ensemble_at(int n, int w) const {
        BandEnsemble e = ensemble == "uniform" ? BandEnsemble::uniform_law(n, w, build_law(), energy)
                                               : BandEnsemble::wegner_orbital(n, w, energy);
        e.energy_window = energy_window;
        return e;
    }

    [[nodiscard]] std::vector<MatrixFill> fills() const {
        if (fill == "symmetric") return {MatrixFill::symmetric};
        if (fill == "general") return {MatrixFill::general};
        if (fill == "score") return {MatrixFill::score};
        return {MatrixFill::symmetric, MatrixFill::general, MatrixFill::score};
    }

    void validate() const;
};

namespace detail {

template <typename T>
void read_value(const Json& j, const std::string& name, T& out);

inline const char* json_type(const Json& j) { return j.type_name(); }

template <typename T>
void read_number(const Json& j, const std::string& name, T& out) {
    if constexpr (std::is_floating_point_v<T>) {
        if (!j.is_number()) throw ConfigError(name, std::string("expected number, got ") + json_type(j));
        out = j.get<T>();
    } else if constexpr (std::is_unsigned_v<T>) {
        if (!j.is_number_integer()) throw ConfigError(name, std::string("expected integer, got ") + json_type(j));
        if (j.is_number_integer() && !j.is_number_unsigned() && j.get<long long>() < 0) {
            throw ConfigError(name, "must be nonnegative");
        }
        out = j.get<T>();
    } else {
        if (!j.is_number_integer()) throw ConfigError(name, std::string("expected integer, got ") + json_type(j));
        out = j.get<T>();
    }
}

template <typename T>
void read_value(const Json& j, const std::string& name, T& out) {
    if constexpr (std::is_same_v<T, std::string>) {
        if (!j.is_string()) throw ConfigError(name, std::string("expected string, got ") + json_type(j));
        out = j.get<std::string>();
    } else if constexpr (std::is_same_v<T, Experiment>) {
        std::string s;
        read_value(j, name, s);
        out = parse_experiment(s);
    } else if constexpr (std::is_same_v<T, OutputFormat>) {
        std::string s;
        read_value(j, name, s);
        out = parse_format(s);
    } else if constexpr (std::is_arithmetic_v<T>) {
        read_number(j, name, out);
    } else {
        using E = typename T::value_type;
        if (!j.is_array()) throw ConfigError(name, std::string("expected list, got ") + json_type(j));
        T values;
        for (const auto& item : j) {
            E v{};
            read_number(item, name, v);
            values.push_back(v);
        }
        out = std::move(values);
    }
}

template <typename T>
Json write_value(const T& v) {
    if constexpr (std::is_same_v<T, Experiment> || std::is_same_v<T, OutputFormat>) {
        return to_string(v);
    } else {
        return v;
    }
}

/// Calls fn(name, member) for every field, in a fixed order.
template <typename Config, typename Fn>
void for_each_field(Config& c, Fn&& fn) {
    fn("experiment", c.experiment);
    fn("seed", c.seed);
    fn("workers", c.workers);
    fn("out", c.out);
    fn("format", c.format);
    fn("ensemble", c.ensemble);
    fn("law", c.law);
    fn("alpha", c.alpha);
    fn("m_bound", c.m_bound);
    fn("law_file", c.law_file);
    fn("widths", c.widths);
    fn("lengths", c.lengths);
    fn("energy", c.energy);
    fn("energy_window", c.energy_window);
    fn("samples", c.samples);
    fn("instances", c.instances);
    fn("tolerance", c.tolerance);
    fn("q", c.q);
    fn("length_multipliers", c.length_multipliers);
    fn("dimension", c.dimension);
    fn("noise_floor", c.noise_floor);
    fn("blocks", c.blocks);
    fn("block_i", c.block_i);
    fn("block_j", c.block_j);
    fn("lambdas", c.lambdas);
    fn("steps", c.steps);
    fn("reorth_period", c.reorth_period);
    fn("deltas", c.deltas);
    fn("t_values", c.t_values);
    fn("epsilon", c.epsilon);
    fn("sizes", c.sizes);
    fn("fill", c.fill);
    fn("matrix_samples", c.matrix_samples);
}

}  // namespace detail

inline void ExperimentConfig::validate() const {
    auto positive_list = [](const std::vector<int>& xs, const char* name) {
        if (xs.empty()) throw ConfigError(name, "must not be empty");
        for (const int x : xs) {
            if (x < 1) throw ConfigError(name, "entries must be >= 1");
        }
    };
    if (workers < 1) throw ConfigError("workers", "must be >= 1");
    if (ensemble != "wegner_orbital" && ensemble != "uniform") {
        throw ConfigError("ensemble", "expected wegner_orbital or uniform");
    }
    if (law != "gaussian" && law != "heavy_tail" && law != "tabulated") {
        throw ConfigError("law", "expected gaussian, heavy_tail or tabulated");
    }
    if (law == "heavy_tail" && !(alpha > 5.0)) throw ConfigError("alpha", "must exceed 5");
    if (law == "tabulated" && law_file.empty()) throw ConfigError("law_file", "required for a tabulated law");
    if (m_bound < 0.0) throw ConfigError("m_bound", "must be >= 0");
    positive_list(widths, "widths");
    positive_list(lengths, "lengths");
    positive_list(length_multipliers, "length_multipliers");
    positive_list(sizes, "sizes");
    if (!(energy_window > 0.0)) throw ConfigError("energy_window", "must be positive");
    if (!(std::abs(energy) <= energy_window)) throw ConfigError("energy", "|E| must not exceed energy_window");
    if (instances < 1) throw ConfigError("instances", "must be >= 1");
    if (matrix_samples < 1) throw ConfigError("matrix_samples", "must be >= 1");
    if (!(tolerance > 0.0)) throw ConfigError("tolerance", "must be positive");
    if (experiment == Experiment::decay) {
        if (!(q > 0.0 && q <= kMaxFractionalQ)) throw ConfigError("q", "must lie in q ∈ (0, 1/5]");
        if (sample_count() < kDefaultBatches) throw ConfigError("samples", "decay needs at least 20 samples");
    }
    if (dimension < 1 || dimension > kMaxDenseDimension) throw ConfigError("dimension", "must lie in [1, 4096]");
    if (!(noise_floor > 0.0)) throw ConfigError("noise_floor", "must be positive");
    if (blocks < 1) throw ConfigError("blocks", "must be >= 1");
    if (block_i < 1 || block_i > blocks) throw ConfigError("block_i", "must lie in [1, blocks]");
    if (block_j < 1 || block_j > blocks) throw ConfigError("block_j", "must lie in [1, blocks]");
    if (lambdas.empty()) throw ConfigError("lambdas", "must not be empty");
    for (std::size_t k = 0; k < lambdas.size(); ++k) {
        if (!(lambdas[k] > 0.0) || (k > 0 && !(lambdas[k] > lambdas[k - 1]))) {
            throw ConfigError("lambdas", "must be positive and increasing");
        }
    }
    if (experiment == Experiment::lyapunov && steps < kMinLyapunovSteps) throw ConfigError("steps", "must be >= 1000");
    if (reorth_period < 1) throw ConfigError("reorth_period", "must be >= 1");
    for (const double d : deltas) {
        if (!(d >= 0.0 && d < 1.0)) throw ConfigError("deltas", "entries must lie in [0, 1)");
    }
    for (const double t : t_values) {
        if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("t_values", "entries must lie in [0, 1]");
    }
    if (!(epsilon > 0.0)) throw ConfigError("epsilon", "must be positive");
    if (fill != "symmetric" && fill != "general" && fill != "score" && fill != "all") {
        throw ConfigError("fill", "expected symmetric, general, score or all");
    }
}

inline Json to_json(const ExperimentConfig& c) {
    Json j = Json::object();
    detail::for_each_field(c, [&j](const char* name, const auto& v) { j[name] = detail::write_value(v); });
    return j;
}

/// Defaults filled, every value validated.
inline ExperimentConfig parse_config(const Json& doc) {
    if (!doc.is_object()) throw ConfigError("<document>", "expected a JSON object");
    ExperimentConfig c;
    for (const auto& [key, value] : doc.items()) {
        bool known = false;
        detail::for_each_field(c, [&](const char* name, auto& member) {
            if (key == name) {
                detail::read_value(value, key, member);
                known = true;
            }
        });
        if (!known) throw ConfigError(key, "unknown key");
    }
    c.validate();
    return c;
}

inline ExperimentConfig parse_config(const std::string& text) {
    Json doc;
    try {
        doc = Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw ConfigError("<document>", std::string("malformed JSON: ") + e.what());
    }
    return parse_config(doc);
}

inline ExperimentConfig parse_config(const char* text) { return parse_config(std::string(text)); }

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

/// Config identity: FNV-1a over the canonical JSON, ignoring where and how
/// results are written.
inline std::uint64_t config_hash(const ExperimentConfig& c) {
    Json j = to_json(c);
    j.erase("out");
    j.erase("format");
    j.erase("workers");
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const unsigned char ch : j.dump()) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace rbm::harness
