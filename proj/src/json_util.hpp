// Copyright (C) 2026 The more-rag Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <fstream>
#include <string>

#include "json.hpp"
#include "more/error.hpp"
#include "more/graph.hpp"

namespace more::detail {

using json = nlohmann::json;

inline json tensor_to_json(const nn::Tensor& t) {
    return json{{"shape", t.shape()}, {"data", std::vector<double>(t.data().begin(), t.data().end())}};
}

inline nn::Tensor tensor_from_json(const json& j) {
    return nn::Tensor(j.at("shape").get<nn::Shape>(), j.at("data").get<std::vector<double>>());
}

inline json params_to_json(const std::vector<const nn::Parameter*>& params) {
    json arr = json::array();
    for (const auto* p : params) {
        json entry = tensor_to_json(p->value);
        entry["name"] = p->name;
        arr.push_back(std::move(entry));
    }
    return arr;
}

/// Copies stored values into `params`, matching by name and shape.
inline void params_from_json(const json& arr, const nn::ParameterRefs& params) {
    if (arr.size() != params.size()) {
        throw DataError("checkpoint holds " + std::to_string(arr.size()) + " tensors, expected " +
                        std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& entry = arr[i];
        if (entry.at("name").get<std::string>() != params[i]->name) {
            throw DataError("checkpoint tensor '" + entry.at("name").get<std::string>() + "' where '" +
                            params[i]->name + "' was expected");
        }
        nn::Tensor t = tensor_from_json(entry);
        if (!t.same_shape(params[i]->value)) {
            throw DataError("checkpoint tensor '" + params[i]->name + "' has shape " + nn::shape_string(t.shape()) +
                            ", expected " + nn::shape_string(params[i]->value.shape()));
        }
        params[i]->value = std::move(t);
    }
}

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError(path + ": " + e.what());
    }
}

inline void write_json_file(const json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out << j.dump() << '\n';
}

} // namespace more::detail
