/* Copyright 2026 The pvl Authors
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

#include <stdexcept>
#include <string>

namespace pvl {

enum class ErrorKind {
  kDimension,     // shape or dimension mismatch
  kPrecondition,  // argument outside the documented domain
  kData,          // malformed or truncated file, unknown symbol, bad version
  kMismatch,      // artifacts produced by different models / vocabularies
  kConvergence,   // iterative routine did not converge
  kDegenerate,    // well-formed input with no meaningful answer (zero contrast)
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::kDimension: return "dimension";
    case ErrorKind::kPrecondition: return "precondition";
    case ErrorKind::kData: return "data";
    case ErrorKind::kMismatch: return "mismatch";
    case ErrorKind::kConvergence: return "convergence";
    case ErrorKind::kDegenerate: return "degenerate";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace pvl
