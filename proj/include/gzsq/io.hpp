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
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "gzsq/error.hpp"

namespace gzsq::io {

// Raw little-endian blobs. Readers check the element count and throw
// parse_error (naming the file) on truncated or oversized payloads.
void write_f32_blob(const std::string &path, const std::vector<float> &values);
std::vector<float> read_f32_blob(const std::string &path, size_t expected_count);

void write_i8_blob(const std::string &path, const std::vector<int8_t> &values);
std::vector<int8_t> read_i8_blob(const std::string &path, size_t expected_count);

void write_text_file(const std::string &path, const std::string &text);
std::string read_text_file(const std::string &path);

// Parses a JSON document, rephrasing nlohmann's exception as parse_error with
// the byte offset.
nlohmann::ordered_json parse_json_file(const std::string &path);
void write_json_file(const std::string &path, const nlohmann::ordered_json &doc);

void ensure_dir(const std::string &dir);

} // namespace gzsq::io
