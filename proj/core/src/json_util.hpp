#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "nestcl/data.hpp"
#include "nestcl/errors.hpp"

namespace nestcl::detail {

inline nlohmann::json features_to_json(const std::vector<FeatureSpec>& features) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& f : features) {
        nlohmann::json item;
        item["name"] = f.name;
        item["kind"] = f.categorical ? "categorical" : "continuous";
        if (f.categorical) item["cardinality"] = f.cardinality;
        arr.push_back(item);
    }
    return arr;
}

template <typename ErrorT>
std::vector<FeatureSpec> features_from_json(const nlohmann::json& arr, const std::string& where) {
    std::vector<FeatureSpec> out;
    for (const auto& item : arr) {
        FeatureSpec spec;
        spec.name = item.at("name").get<std::string>();
        const auto kind = item.at("kind").get<std::string>();
        if (kind == "categorical") {
            spec.categorical = true;
            spec.cardinality = item.at("cardinality").get<std::size_t>();
            if (spec.cardinality == 0)
                throw ErrorT("categorical feature with zero cardinality in " + where);
        } else if (kind == "continuous") {
            spec.categorical = false;
        } else {
            throw ErrorT("unknown feature kind '" + kind + "' in " + where);
        }
        out.push_back(std::move(spec));
    }
    return out;
}

// Rejects keys outside the allowed set (strict config parsing).
template <typename ErrorT>
void require_keys(const nlohmann::json& object, const std::vector<std::string>& allowed,
                  const std::string& where) {
    for (const auto& [key, value] : object.items()) {
        bool ok = false;
        for (const auto& name : allowed) {
            if (key == name) {
                ok = true;
                break;
            }
        }
        if (!ok) throw ErrorT("unknown key '" + key + "' in " + where);
    }
}

} // namespace nestcl::detail
