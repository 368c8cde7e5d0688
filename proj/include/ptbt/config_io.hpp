#pragma once

// JSON mapping for configuration structs. Readers reject unknown keys and
// fall back to the struct defaults for missing ones.

#include <initializer_list>
#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

#include "ptbt/model.hpp"

namespace ptbt {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Throws ConfigError naming the first key of `j` not in `allowed`.
void require_known_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                        std::string_view section);

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out, std::string_view section) {
    auto it = j.find(key);
    if (it == j.end()) return;
    try {
        out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string(section) + "." + key + ": " + e.what());
    }
}

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j, std::string_view section = "model");

}  // namespace ptbt
