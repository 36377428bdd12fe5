#pragma once

// TrainConfig <-> TOML. Only the subset the config needs is understood:
// [section] headers, `key = value` with strings, booleans, numbers and flat
// numeric arrays, and `#` comments.

#include <map>
#include <string>

#include "contra/training.hpp"

namespace contra::config {

// Raw values keyed by "section.key" (top-level keys have no prefix).
std::map<std::string, std::string> parse_toml(const std::string& text);

std::string to_toml(const train::TrainConfig& config);

// Starts from `base`; a `preset` key is applied first, every other key then
// overrides field by field. Unknown keys are rejected.
train::TrainConfig from_toml(const std::string& text, train::TrainConfig base = {});

}  // namespace contra::config
