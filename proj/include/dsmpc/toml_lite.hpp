/*
 Copyright 2026 The deepsafempc Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

#ifndef DSMPC_TOML_LITE_HPP_
#define DSMPC_TOML_LITE_HPP_

#include <string>
#include <string_view>

#include <json.hpp>

namespace dsmpc {

// Reader for the TOML subset used by run configs: comments, [table] headers
// (one level), bare keys, and values that are basic strings, integers, floats
// (including inf/nan), booleans, or single-line arrays of those.
//
// The result is a JSON object: root keys at top level, one nested object per
// table. Throws Error(ConfigInvalid) with a line number on malformed input
// and on duplicate keys or tables.
nlohmann::json parse_toml(std::string_view text);

/// Writes a JSON object of the same shape back as TOML. Scalars at the root
/// come first, then one table per nested object.
std::string to_toml(const nlohmann::json& doc);

}  // namespace dsmpc

#endif  // DSMPC_TOML_LITE_HPP_
