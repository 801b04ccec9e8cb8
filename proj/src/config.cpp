#include "mpda/config.hpp"

#include <fstream>
#include <sstream>

namespace mpda {

Method parse_method(const std::string& s) {
    if (s == "mpda") return Method::mpda;
    if (s == "naive") return Method::naive;
    if (s == "no_fusion") return Method::no_fusion;
    throw std::invalid_argument("unknown method: " + s);
}

std::string to_string(Method m) {
    switch (m) {
        case Method::mpda: return "mpda";
        case Method::naive: return "naive";
        case Method::no_fusion: return "no_fusion";
    }
    return "?";
}

Precision parse_precision(const std::string& s) {
    if (s == "f32") return Precision::f32;
    if (s == "f64") return Precision::f64;
    throw std::invalid_argument("unknown precision: " + s);
}

std::string to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

void TrainConfig::validate() const {
    require(alpha >= 0.0 && alpha <= 1.0, "alpha must be within [0,1]");
    require(beta >= 0.0 && beta <= 1.0, "beta must be within [0,1]");
    require(lr > 0.0, "lr must be positive");
    require(lr_decay > 0.0 && lr_decay <= 1.0, "lr_decay must be in (0,1]");
    require(decay_every >= 1, "decay_every must be >= 1");
    require(epochs >= 1 && batch >= 1, "epochs and batch must be >= 1");
    require(train_scenes >= 1 && eval_scenes >= 1, "scene counts must be >= 1");
}

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

double num(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad numeric value for " + key + ": '" + v + "'");
    }
}

int64_t integer(const std::string& key, const std::string& v) {
    const double d = num(key, v);
    const int64_t i = static_cast<int64_t>(d);
    if (static_cast<double>(i) != d)
        throw std::invalid_argument("config: " + key + " must be an integer, got '" + v + "'");
    return i;
}

}  // namespace

TrainConfig parse_config_text(const std::string& text) {
    TrainConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key.empty() || val.empty())
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": empty key or value");

        if (key == "scenario") cfg.scenario = parse_scenario(val);
        else if (key == "method") cfg.method = parse_method(val);
        else if (key == "alpha") cfg.alpha = num(key, val);
        else if (key == "beta") cfg.beta = num(key, val);
        else if (key == "lr") cfg.lr = num(key, val);
        else if (key == "lr_decay") cfg.lr_decay = num(key, val);
        else if (key == "decay_every") cfg.decay_every = static_cast<int>(integer(key, val));
        else if (key == "epochs") cfg.epochs = static_cast<int>(integer(key, val));
        else if (key == "batch") cfg.batch = static_cast<int>(integer(key, val));
        else if (key == "seed") cfg.seed = static_cast<uint64_t>(integer(key, val));
        else if (key == "train_scenes") cfg.train_scenes = static_cast<int>(integer(key, val));
        else if (key == "eval_scenes") cfg.eval_scenes = static_cast<int>(integer(key, val));
        else if (key == "precision") cfg.precision = parse_precision(val);
        else
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

TrainConfig parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

}  // namespace mpda
