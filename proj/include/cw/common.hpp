// Licensed under the Apache License, Version 2.0 (the "License"); you may
// not use this file except in compliance with the License. You may obtain
// a copy of the License at http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied. See the License for the specific language governing permissions
// and limitations under the License.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>

namespace cw {

// All recoverable failures in the toolkit surface as cw::Error with a
// message that names the operation and the offending value.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {

inline void format_into(std::ostringstream&) {}

template <typename A, typename... Rest>
void format_into(std::ostringstream& os, const A& a, const Rest&... rest) {
  os << a;
  format_into(os, rest...);
}

}  // namespace detail

template <typename... Args>
[[noreturn]] void fail(const Args&... args) {
  std::ostringstream os;
  detail::format_into(os, args...);
  throw Error(os.str());
}

template <typename... Args>
void require(bool cond, const Args&... args) {
  if (!cond) fail(args...);
}

template <typename... Args>
std::string strcat_msg(const Args&... args) {
  std::ostringstream os;
  detail::format_into(os, args...);
  return os.str();
}

// Worker cap for data-parallel loops.  CWGAN_THREADS overrides the hardware
// count; values below 1 are treated as 1.
int worker_count();

// Runs fn(i) for i in [0, n).  Results must be written to per-index slots;
// the reduction order is then independent of the schedule.
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

// parallel_for for bodies that may throw.  Exceptions may not cross worker
// threads, so failures are stashed and the one with the lowest index is
// rethrown (as cw::Error) after the loop drains.
void parallel_try(int64_t n, const std::function<void(int64_t)>& fn);

// Fixed-order pairwise sum: the split point depends only on the index
// range, so the result is independent of how the terms were produced.
double pairwise_sum(const double* terms, size_t n);

}  // namespace cw
