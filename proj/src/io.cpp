/* Copyright 2026 The gzsq-toolkit Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "gzsq/io.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace gzsq::io {

namespace {

std::vector<uint8_t> read_bytes(const std::string &path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw parse_error("cannot open file: " + path);
    f.seekg(0, std::ios::end);
    const std::streamoff size = f.tellg();
    f.seekg(0, std::ios::beg);
    std::vector<uint8_t> bytes(static_cast<size_t>(size));
    if (size > 0)
        f.read(reinterpret_cast<char *>(bytes.data()), size);
    if (!f)
        throw parse_error("short read: " + path);
    return bytes;
}

void write_bytes(const std::string &path, const uint8_t *data, size_t size) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f)
        throw error("cannot open file for writing: " + path);
    f.write(reinterpret_cast<const char *>(data), static_cast<std::streamsize>(size));
    if (!f)
        throw error("short write: " + path);
}

} // namespace

void write_f32_blob(const std::string &path, const std::vector<float> &values) {
    std::vector<uint8_t> bytes(values.size() * 4);
    for (size_t i = 0; i < values.size(); ++i) {
        const uint32_t u = std::bit_cast<uint32_t>(values[i]);
        bytes[4 * i + 0] = static_cast<uint8_t>(u);
        bytes[4 * i + 1] = static_cast<uint8_t>(u >> 8);
        bytes[4 * i + 2] = static_cast<uint8_t>(u >> 16);
        bytes[4 * i + 3] = static_cast<uint8_t>(u >> 24);
    }
    write_bytes(path, bytes.data(), bytes.size());
}

std::vector<float> read_f32_blob(const std::string &path, size_t expected_count) {
    const auto bytes = read_bytes(path);
    if (bytes.size() != expected_count * 4)
        throw parse_error("blob " + path + ": expected " + std::to_string(expected_count * 4) +
                              " bytes, found " + std::to_string(bytes.size()),
                          static_cast<int64_t>(bytes.size()));
    std::vector<float> values(expected_count);
    for (size_t i = 0; i < expected_count; ++i) {
        const uint32_t u = static_cast<uint32_t>(bytes[4 * i]) |
                           (static_cast<uint32_t>(bytes[4 * i + 1]) << 8) |
                           (static_cast<uint32_t>(bytes[4 * i + 2]) << 16) |
                           (static_cast<uint32_t>(bytes[4 * i + 3]) << 24);
        values[i] = std::bit_cast<float>(u);
    }
    return values;
}

void write_i8_blob(const std::string &path, const std::vector<int8_t> &values) {
    write_bytes(path, reinterpret_cast<const uint8_t *>(values.data()), values.size());
}

std::vector<int8_t> read_i8_blob(const std::string &path, size_t expected_count) {
    const auto bytes = read_bytes(path);
    if (bytes.size() != expected_count)
        throw parse_error("blob " + path + ": expected " + std::to_string(expected_count) +
                              " bytes, found " + std::to_string(bytes.size()),
                          static_cast<int64_t>(bytes.size()));
    std::vector<int8_t> values(expected_count);
    std::memcpy(values.data(), bytes.data(), bytes.size());
    return values;
}

void write_text_file(const std::string &path, const std::string &text) {
    write_bytes(path, reinterpret_cast<const uint8_t *>(text.data()), text.size());
}

std::string read_text_file(const std::string &path) {
    const auto bytes = read_bytes(path);
    return std::string(bytes.begin(), bytes.end());
}

nlohmann::ordered_json parse_json_file(const std::string &path) {
    const std::string text = read_text_file(path);
    try {
        return nlohmann::ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error &e) {
        throw parse_error(std::string("malformed JSON in ") + path + ": " + e.what(),
                          static_cast<int64_t>(e.byte));
    }
}

void write_json_file(const std::string &path, const nlohmann::ordered_json &doc) {
    write_text_file(path, doc.dump(2) + "\n");
}

void ensure_dir(const std::string &dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec)
        throw error("cannot create directory " + dir + ": " + ec.message());
}

} // namespace gzsq::io
