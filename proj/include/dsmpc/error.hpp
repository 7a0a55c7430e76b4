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

#ifndef DSMPC_ERROR_HPP_
#define DSMPC_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace dsmpc {

enum class ErrorCode {
  // numerics
  SingularMatrix,
  NotPositiveDefinite,
  NonFiniteOutput,
  // neural_core
  InvalidArchitecture,
  ShapeMismatch,
  NonFiniteGradient,
  // env
  ActionOutOfBounds,
  // mappo
  LengthMismatch,
  NonFiniteLoss,
  // predictor
  EmptyDataset,
  // qp
  RankDeficientConstraints,
  SingularKKT,
  Infeasible,
  MaxIterations,
  // mpc
  LineSearchFailed,
  QPFailed,
  // harness
  ConfigInvalid,
  IoError,
  MissingCheckpoint,
};

const char* to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace dsmpc

#endif  // DSMPC_ERROR_HPP_
