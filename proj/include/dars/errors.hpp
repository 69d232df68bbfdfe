// Copyright 2026 The darslab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace dars {

/// Root of every error the library throws. The CLI maps these to exit 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* kind() const noexcept { return "Error"; }
};

#define DARS_DEFINE_ERROR(Name)                                      \
  class Name : public Error {                                        \
   public:                                                           \
    using Error::Error;                                              \
    const char* kind() const noexcept override { return #Name; }     \
  }

DARS_DEFINE_ERROR(IoError);
DARS_DEFINE_ERROR(FormatError);
DARS_DEFINE_ERROR(TruncationError);
DARS_DEFINE_ERROR(DimsError);
DARS_DEFINE_ERROR(ValidationError);
DARS_DEFINE_ERROR(ManifestError);
DARS_DEFINE_ERROR(ShapeError);
DARS_DEFINE_ERROR(EmptyDistributionError);
DARS_DEFINE_ERROR(ConsistencyError);
DARS_DEFINE_ERROR(EmptyResultError);
DARS_DEFINE_ERROR(NumericError);
DARS_DEFINE_ERROR(ConfigError);
DARS_DEFINE_ERROR(EmptyDatasetError);

#undef DARS_DEFINE_ERROR

}  // namespace dars
