#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "eitdiff/core/error.hpp"

namespace eitdiff::io {

static_assert(std::endian::native == std::endian::little,
              "binary formats are little-endian and written without byte swapping");

template <typename T>
void append_raw(std::ofstream& out, std::span<const T> values) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size_bytes()));
    if (!out) throw IoError("write failed");
}

template <typename T>
void write_raw(const std::filesystem::path& path, std::span<const T> values) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    append_raw(out, values);
}

template <typename T>
std::vector<T> read_raw(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw IoError("cannot open " + path.string());
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes % sizeof(T) != 0) throw IoError(path.string() + ": size is not a multiple of the element size");
    std::vector<T> values(bytes / sizeof(T));
    in.seekg(0);
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw IoError("read failed: " + path.string());
    return values;
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& doc) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << doc.dump(2) << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

inline std::vector<float> to_f32(std::span<const double> values) {
    return {values.begin(), values.end()};
}

inline std::vector<double> to_f64(std::span<const float> values) {
    return {values.begin(), values.end()};
}

} // namespace eitdiff::io
