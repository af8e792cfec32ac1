#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "crynet/errors.hpp"

namespace crynet {

/// Throws ConfigError naming the first key of `j` outside `allowed`.
inline void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                       std::string_view section) {
  if (!j.is_object()) throw ConfigError(std::string(section) + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError("unknown key '" + key + "' in " + std::string(section));
  }
}

}  // namespace crynet
