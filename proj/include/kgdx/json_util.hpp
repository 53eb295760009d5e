#pragma once

#include <json.hpp>  // vendored nlohmann/json

#include <optional>
#include <string>

namespace kgdx {

using Json = nlohmann::json;
using OrderedJson = nlohmann::ordered_json;

template <typename T>
std::optional<T> optional_field(const Json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    return it->template get<T>();
}

} // namespace kgdx
