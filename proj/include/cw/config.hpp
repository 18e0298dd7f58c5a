// Licensed under the Apache License, Version 2.0 (the "License"); you may
// not use this file except in compliance with the License.  You may obtain
// a copy of the License at http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
// WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.  See the
// License for the specific language governing permissions and limitations
// under the License.

// Flat TOML-subset run configuration: [section] headers, `key = value`
// pairs, `#` comments, quoted strings, and nothing else (no arrays, no
// nested tables, no multi-line values).  Keys are stored fully qualified
// ("train.epochs"); command-line overrides use the same spelling.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace cw::config {

class Config {
 public:
  Config() = default;

  // Both fail with file/line context on malformed lines and duplicate keys.
  static Config parse_file(const std::string& path);
  static Config parse_string(const std::string& text,
                             const std::string& origin = "<inline>");

  // "section.key=value"; the key need not exist yet.  Surrounding quotes on
  // the value are stripped so shell quoting works the same as file syntax.
  void apply_override(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const;

  // Lookups take fully qualified keys.  The one-argument forms fail when
  // the key is absent; the two-argument forms fall back instead.  Numeric
  // getters fail on trailing garbage, not just on empty parses.
  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key,
                         const std::string& fallback) const;
  int64_t get_int(const std::string& key) const;
  int64_t get_int(const std::string& key, int64_t fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // Keys under "section." in sorted order, e.g. to reject typos.
  std::vector<std::string> section_keys(const std::string& section) const;

  // Fails if the section holds a key outside `allowed` (bare key names,
  // not qualified).  Sections the config never mentions pass trivially.
  void restrict(const std::string& section,
                const std::vector<std::string>& allowed) const;

  const std::map<std::string, std::string>& entries() const { return map_; }

 private:
  std::map<std::string, std::string> map_;
};

}  // namespace cw::config
