/**
 * Copyright 2026 The pegquant Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace pegq {

/// K evenly sized groups over a (possibly permuted) embedding axis of width d.
///
/// Group g owns the original dimensions perm[g * d/K, (g + 1) * d/K). With the
/// identity permutation this is a contiguous split of [0, d).
class GroupSpec {
 public:
  GroupSpec() = default;
  /// Identity permutation. Throws unless k >= 1 divides d.
  GroupSpec(std::size_t d, std::size_t k);
  /// Throws unless \p perm is a bijection on [0, perm.size()) and k divides its size.
  GroupSpec(std::size_t k, std::vector<std::size_t> perm);

  std::size_t width() const { return perm_.size(); }
  std::size_t groups() const { return k_; }
  std::size_t group_size() const { return k_ == 0 ? 0 : perm_.size() / k_; }

  const std::vector<std::size_t>& perm() const { return perm_; }
  const std::vector<std::size_t>& inv_perm() const { return inv_perm_; }

  std::size_t group_of(std::size_t dim) const { return inv_perm_[dim] / group_size(); }
  std::span<const std::size_t> members(std::size_t g) const {
    return std::span<const std::size_t>(perm_).subspan(g * group_size(), group_size());
  }
  bool is_identity() const;

  friend bool operator==(const GroupSpec&, const GroupSpec&) = default;

 private:
  std::size_t k_ = 0;
  std::vector<std::size_t> perm_;
  std::vector<std::size_t> inv_perm_;
};

}  // namespace pegq
