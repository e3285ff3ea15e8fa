#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "csds/augment.hpp"
#include "csds/data.hpp"
#include "csds/losses.hpp"
#include "csds/segnet.hpp"
#include "csds/uncertainty.hpp"

namespace csds {

enum class EmaStrategy { Mean, Alternate, BestStudentOnly };

struct EmaConfig {
    float alpha = 0.99f;
    EmaStrategy strategy = EmaStrategy::Mean;

    void validate() const {
        if (alpha < 0.0f || alpha > 1.0f) throw ConfigError("ema.alpha must be in [0,1]");
    }
};

struct AdamWHyper {
    float lr = 1e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 0.05f;
};

struct TrainSchedule {
    int epochs = 80;
    int batch_size = 4;
    float lambda_unsup_base = 1.0f;
    float ramp_frac = 0.2f;  // fraction of epochs over which lambda ramps up

    void validate() const {
        if (epochs < 1) throw ConfigError("schedule.epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("schedule.batch_size must be >= 1");
        if (lambda_unsup_base < 0.0f) throw ConfigError("schedule.lambda_unsup must be >= 0");
        if (ramp_frac < 0.0f || ramp_frac > 1.0f) throw ConfigError("schedule.ramp_frac in [0,1]");
    }
};

struct AugmentConfig {
    ColorJitterRanges jitter;
    float elastic_alpha = 8.0f;
    float elastic_sigma = 16.0f;
    float hist_match_prob = 0.5f;  // per-sample coin: histogram match vs jitter
};

struct DataConfig {
    std::string dir;        // empty -> synthetic
    int resize_to = 64;
    float labeled_ratio = 0.10f;
    int fold = 0;
    int synth_count = 60;
    SynthConfig synth;
};

struct AblationConfig {
    bool enable_color_student = true;
    bool enable_structure_student = true;
    PseudoMode pseudo_mode = PseudoMode::Hard;
};

/// Every knob of a run; read from a sectioned key = value text file.
/// Unknown keys are rejected with their full path.
struct RunConfig {
    std::uint64_t seed = 0;
    SegNetConfig segnet;
    UncertaintyConfig uncertainty;
    AugmentConfig augment;
    EmaConfig ema;
    AdamWHyper optimizer;
    TrainSchedule schedule;
    DataConfig data;
    AblationConfig ablation;
    float dice_smooth = 1.0f;

    void validate() const {
        segnet.validate();
        ema.validate();
        schedule.validate();
        if (!ablation.enable_color_student && !ablation.enable_structure_student)
            throw ConfigError("ablation: at least one student must be enabled");
        if (data.fold < 0 || data.fold > 4) throw ConfigError("data.fold must be in [0,4]");
    }
};

namespace detail {

struct ConfigReader {
    std::map<std::string, std::string> kv;  // "section.key" -> value

    static ConfigReader parse(std::istream& is) {
        ConfigReader r;
        std::string line, section;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            auto trim = [](std::string s) {
                auto b = s.find_first_not_of(" \t\r");
                auto e = s.find_last_not_of(" \t\r");
                return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
            };
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']')
                    throw ConfigError("line " + std::to_string(lineno) + ": bad section header");
                section = trim(line.substr(1, line.size() - 2));
                continue;
            }
            auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
            std::string key = trim(line.substr(0, eq));
            std::string val = trim(line.substr(eq + 1));
            std::string full = section.empty() ? key : section + "." + key;
            if (!r.kv.emplace(full, val).second)
                throw ConfigError("duplicate key: " + full);
        }
        return r;
    }

    // each accessor consumes its key; leftovers are unknown keys
    bool take(const std::string& key, std::string& out) {
        auto it = kv.find(key);
        if (it == kv.end()) return false;
        out = it->second;
        kv.erase(it);
        return true;
    }
    template <class T>
    void num(const std::string& key, T& out) {
        std::string v;
        if (!take(key, v)) return;
        std::istringstream ss(v);
        T parsed{};
        if (!(ss >> parsed)) throw ConfigError("key " + key + ": cannot parse '" + v + "'");
        out = parsed;
    }
    void boolean(const std::string& key, bool& out) {
        std::string v;
        if (!take(key, v)) return;
        if (v == "true" || v == "1")
            out = true;
        else if (v == "false" || v == "0")
            out = false;
        else
            throw ConfigError("key " + key + ": expected true/false, got '" + v + "'");
    }
    void reject_unknown() const {
        if (!kv.empty()) throw ConfigError("unknown config key: " + kv.begin()->first);
    }
};

} // namespace detail

inline RunConfig parse_run_config(std::istream& is) {
    auto r = detail::ConfigReader::parse(is);
    RunConfig c;
    std::string s;

    r.num("seed", c.seed);

    r.num("segnet.in_channels", c.segnet.in_channels);
    r.num("segnet.num_classes", c.segnet.num_classes);
    r.num("segnet.base_width", c.segnet.base_width);
    r.num("segnet.depth", c.segnet.depth);

    r.num("uncertainty.tau_color", c.uncertainty.tau_color);
    r.num("uncertainty.tau_structure", c.uncertainty.tau_structure);
    r.num("uncertainty.lambda_color", c.uncertainty.lambda_color);
    r.num("uncertainty.lambda_structure", c.uncertainty.lambda_structure);
    r.num("uncertainty.eps", c.uncertainty.eps);
    if (r.take("uncertainty.smooth_mode", s)) {
        if (s == "gaussian3x3")
            c.uncertainty.smooth_mode = SmoothMode::Gaussian3x3;
        else if (s == "avgpool3x3")
            c.uncertainty.smooth_mode = SmoothMode::AvgPool3x3;
        else
            throw ConfigError("uncertainty.smooth_mode: expected gaussian3x3|avgpool3x3");
    }
    if (r.take("uncertainty.weight_mode", s)) {
        if (s == "direct")
            c.uncertainty.weight_mode = WeightMode::Direct;
        else if (s == "inverse_exp")
            c.uncertainty.weight_mode = WeightMode::InverseExp;
        else
            throw ConfigError("uncertainty.weight_mode: expected direct|inverse_exp");
    }

    r.num("augment.brightness", c.augment.jitter.brightness);
    r.num("augment.contrast_lo", c.augment.jitter.contrast_lo);
    r.num("augment.contrast_hi", c.augment.jitter.contrast_hi);
    r.num("augment.saturation_lo", c.augment.jitter.saturation_lo);
    r.num("augment.saturation_hi", c.augment.jitter.saturation_hi);
    r.num("augment.hue", c.augment.jitter.hue);
    r.num("augment.elastic_alpha", c.augment.elastic_alpha);
    r.num("augment.elastic_sigma", c.augment.elastic_sigma);
    r.num("augment.hist_match_prob", c.augment.hist_match_prob);

    r.num("ema.alpha", c.ema.alpha);
    if (r.take("ema.strategy", s)) {
        if (s == "mean")
            c.ema.strategy = EmaStrategy::Mean;
        else if (s == "alternate")
            c.ema.strategy = EmaStrategy::Alternate;
        else if (s == "best_student_only")
            c.ema.strategy = EmaStrategy::BestStudentOnly;
        else
            throw ConfigError("ema.strategy: expected mean|alternate|best_student_only");
    }

    r.num("optimizer.lr", c.optimizer.lr);
    r.num("optimizer.beta1", c.optimizer.beta1);
    r.num("optimizer.beta2", c.optimizer.beta2);
    r.num("optimizer.eps", c.optimizer.eps);
    r.num("optimizer.weight_decay", c.optimizer.weight_decay);

    r.num("schedule.epochs", c.schedule.epochs);
    r.num("schedule.batch_size", c.schedule.batch_size);
    r.num("schedule.lambda_unsup", c.schedule.lambda_unsup_base);
    r.num("schedule.ramp_frac", c.schedule.ramp_frac);

    if (r.take("data.dir", s)) c.data.dir = s;
    r.num("data.resize_to", c.data.resize_to);
    r.num("data.labeled_ratio", c.data.labeled_ratio);
    r.num("data.fold", c.data.fold);
    r.num("data.synth_count", c.data.synth_count);
    r.num("data.canvas", c.data.synth.canvas);
    r.num("data.gland_count_min", c.data.synth.gland_count_min);
    r.num("data.gland_count_max", c.data.synth.gland_count_max);
    r.num("data.stain_shift", c.data.synth.stain_shift);
    r.num("data.noise_level", c.data.synth.noise_level);

    r.boolean("ablation.enable_color_student", c.ablation.enable_color_student);
    r.boolean("ablation.enable_structure_student", c.ablation.enable_structure_student);
    if (r.take("ablation.pseudo_mode", s)) {
        if (s == "hard")
            c.ablation.pseudo_mode = PseudoMode::Hard;
        else if (s == "soft")
            c.ablation.pseudo_mode = PseudoMode::Soft;
        else
            throw ConfigError("ablation.pseudo_mode: expected hard|soft");
    }
    r.num("dice_smooth", c.dice_smooth);

    r.reject_unknown();
    c.segnet.seed = c.seed;
    c.data.synth.seed = c.seed;
    c.validate();
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file " + path);
    return parse_run_config(is);
}

/// Stable hash of the full configuration (for the run manifest).
inline std::uint64_t config_hash(const RunConfig& c) {
    std::ostringstream ss;
    ss << c.seed << '|' << c.segnet.num_classes << '|' << c.segnet.base_width << '|'
       << c.segnet.depth << '|' << c.uncertainty.tau_color << '|' << c.uncertainty.tau_structure
       << '|' << c.uncertainty.lambda_color << '|' << c.uncertainty.lambda_structure << '|'
       << static_cast<int>(c.uncertainty.weight_mode) << '|' << c.ema.alpha << '|'
       << static_cast<int>(c.ema.strategy) << '|' << c.optimizer.lr << '|'
       << c.optimizer.weight_decay << '|' << c.schedule.epochs << '|' << c.schedule.batch_size
       << '|' << c.schedule.lambda_unsup_base << '|' << c.schedule.ramp_frac << '|' << c.data.dir
       << '|' << c.data.labeled_ratio << '|' << c.data.fold << '|' << c.data.synth_count << '|'
       << c.ablation.enable_color_student << '|' << c.ablation.enable_structure_student << '|'
       << static_cast<int>(c.ablation.pseudo_mode);
    std::uint64_t h = 1469598103934665603ull;
    for (char ch : ss.str()) {
        h ^= static_cast<unsigned char>(ch);
        h *= 1099511628211ull;
    }
    return h;
}

} // namespace csds
