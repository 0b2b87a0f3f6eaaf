#pragma once

#include <string>

#include "smmix/trainer.hpp"

namespace smmix {

// Flat `key = value` config file covering every TrainConfig field. Lines
// starting with '#' and blank lines are ignored. Unknown keys are errors.
void apply_config_kv(TrainConfig& cfg, const std::string& key, const std::string& value);
void load_train_config(const std::string& path, TrainConfig& cfg);
void save_train_config(const TrainConfig& cfg, const std::string& path);

TrainMixMode parse_mix_mode(const std::string& s);
DeltaMode parse_delta_mode(const std::string& s);

// Log verbosity from the SMMIX_LOG environment variable: 0 quiet (default),
// 1 progress, 2 debug.
int log_verbosity();

}  // namespace smmix
