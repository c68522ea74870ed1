#pragma once

#include "surfprobe/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <initializer_list>
#include <string>
#include <string_view>

namespace surfprobe::detail {

inline void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                                std::string_view where) {
    if (!j.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw ConfigError("unknown key \"" + key + "\" in " + std::string(where));
        }
    }
}

}  // namespace surfprobe::detail
