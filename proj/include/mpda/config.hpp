#pragma once

#include <cstdint>
#include <string>

#include "mpda/synth.hpp"

namespace mpda {

enum class Method { mpda, naive, no_fusion };
enum class Precision { f32, f64 };

Method parse_method(const std::string& s);
std::string to_string(Method m);
Precision parse_precision(const std::string& s);
std::string to_string(Precision p);

struct TrainConfig {
    Scenario scenario = Scenario::hetero1;
    Method method = Method::mpda;
    double alpha = 1.0;
    double beta = 0.1;
    double lr = 0.001;
    double lr_decay = 0.1;
    int decay_every = 10;  // epochs
    int epochs = 8;
    int batch = 2;
    uint64_t seed = 42;
    int train_scenes = 48;
    int eval_scenes = 24;
    Precision precision = Precision::f32;

    void validate() const;
};

// Flat `key = value` file, UTF-8, '#' starts a comment; unknown keys are
// errors. Keys: scenario, method, alpha, beta, lr, lr_decay, decay_every,
// epochs, batch, seed, train_scenes, eval_scenes, precision.
TrainConfig parse_config_file(const std::string& path);
TrainConfig parse_config_text(const std::string& text);

}  // namespace mpda
