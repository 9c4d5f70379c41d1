#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "finrl/error.hpp"

namespace finrl {

using json = nlohmann::json;

/// One JSON object per non-blank line.
inline std::vector<json> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read " + path.string());
    std::vector<json> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            rows.push_back(json::parse(line));
        } catch (const json::parse_error& e) {
            throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return rows;
}

inline void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    for (const auto& row : rows) out << row.dump() << '\n';
    if (!out) throw Error("failed writing " + path.string());
}

template <typename T>
T required_field(const json& row, const char* key, const std::string& where) {
    if (!row.contains(key)) throw FormatError(where + ": missing field \"" + key + "\"");
    try {
        return row.at(key).get<T>();
    } catch (const json::exception&) {
        throw FormatError(where + ": field \"" + key + "\" has the wrong type");
    }
}

}  // namespace finrl
