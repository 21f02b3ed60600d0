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

#include "lesionkit/sequence_tag.hpp"

#include <algorithm>
#include <array>
#include <utility>

#include "lesionkit/error.hpp"

namespace lesionkit {

bool SequenceTag::is_valid_token(std::string_view token) {
  return !token.empty() && std::all_of(token.begin(), token.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
  });
}

SequenceTag SequenceTag::parse(std::string_view token) {
  if (!is_valid_token(token))
    throw InvalidArgument("invalid sequence tag '" + std::string(token) + "': expected a lowercase token of [a-z0-9_]");
  static constexpr std::array<std::pair<std::string_view, Kind>, 4> standard{
      {{"t1n", Kind::t1n}, {"t1c", Kind::t1c}, {"t2w", Kind::t2w}, {"t2f", Kind::t2f}}};
  for (const auto& [name, kind] : standard)
    if (token == name) return SequenceTag(kind, std::string(token));
  return SequenceTag(Kind::other, std::string(token));
}

bool is_valid_subject_id(std::string_view id) {
  return !id.empty() && std::all_of(id.begin(), id.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-';
  });
}

} // namespace lesionkit
