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
#include <stdexcept>
#include <string>

namespace gzsq {

// Base class for all toolkit errors. Subclasses map onto the CLI exit codes:
// invalid_argument_error / parse_error / version_error -> data error (2),
// numeric_fault -> numeric fault (3).
class error : public std::runtime_error {
public:
    explicit error(const std::string &msg) : std::runtime_error(msg) {}
};

class invalid_argument_error : public error {
public:
    explicit invalid_argument_error(const std::string &msg) : error(msg) {}
};

// Malformed file contents. byte_offset is -1 when unknown.
class parse_error : public error {
public:
    parse_error(const std::string &msg, int64_t byte_offset = -1)
        : error(byte_offset >= 0 ? msg + " (byte " + std::to_string(byte_offset) + ")" : msg),
          byte_offset_(byte_offset) {}

    int64_t byte_offset() const noexcept { return byte_offset_; }

private:
    int64_t byte_offset_;
};

class version_error : public error {
public:
    explicit version_error(const std::string &msg) : error(msg) {}
};

// Non-finite value produced where the contract requires finite arithmetic.
class numeric_fault : public error {
public:
    explicit numeric_fault(const std::string &msg) : error(msg) {}
};

class unsupported_op : public error {
public:
    explicit unsupported_op(const std::string &msg) : error(msg) {}
};

class empty_observer_error : public error {
public:
    explicit empty_observer_error(const std::string &msg) : error(msg) {}
};

} // namespace gzsq
