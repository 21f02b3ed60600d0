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

#include <compare>
#include <string>
#include <string_view>

namespace lesionkit {

/// MRI sequence label used in file names and manifests.
///
/// The four standard structural sequences have fixed names; any other
/// lowercase token of [a-z0-9_] is accepted as a free-form label.
class SequenceTag {
public:
  enum class Kind { t1n, t1c, t2w, t2f, other };

  /// Throws InvalidArgument for an empty or malformed token.
  static SequenceTag parse(std::string_view token);
  static bool is_valid_token(std::string_view token);

  Kind kind() const noexcept { return kind_; }
  const std::string& str() const noexcept { return token_; }
  bool is_standard() const noexcept { return kind_ != Kind::other; }

  friend bool operator==(const SequenceTag& a, const SequenceTag& b) noexcept { return a.token_ == b.token_; }
  friend std::strong_ordering operator<=>(const SequenceTag& a, const SequenceTag& b) noexcept {
    return a.token_ <=> b.token_;
  }

private:
  SequenceTag(Kind kind, std::string token) : kind_(kind), token_(std::move(token)) {}
  Kind kind_;
  std::string token_;
};

/// Subject identifiers: non-empty, letters, digits and '-'.
bool is_valid_subject_id(std::string_view id);

} // namespace lesionkit
