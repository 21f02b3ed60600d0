/*=========================================================================
 *
 *  Copyright The lesionkit contributors
 *
 *  Licensed under the Apache License, Version 2.0 (the "License");
 *  you may not use this file except in compliance with the License.
 *  You may obtain a copy of the License at
 *
 *         https://www.apache.org/licenses/LICENSE-2.0.txt
 *
 *  Unless required by applicable law or agreed to in writing, software
 *  distributed under the License is distributed on an "AS IS" BASIS,
 *  WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 *  See the License for the specific language governing permissions and
 *  limitations under the License.
 *
 *=========================================================================*/

#pragma once

#include <stdexcept>
#include <string>

namespace lesionkit {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// File could not be opened, read, or written.
class IoError : public Error {
public:
  using Error::Error;
};

/// File contents violate the expected on-disk format.
class FormatError : public Error {
public:
  using Error::Error;
};

/// A precondition on an argument does not hold.
class InvalidArgument : public Error {
public:
  using Error::Error;
};

/// The input is valid but the operation has no meaningful result for it
/// (constant image, empty mask, no overlap).
class DegenerateInput : public Error {
public:
  using Error::Error;
};

} // namespace lesionkit
