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

#include "pegq/group_spec.hpp"

#include <numeric>
#include <string>

#include "pegq/error.hpp"

namespace pegq {

GroupSpec::GroupSpec(std::size_t d, std::size_t k) : GroupSpec(k, [d] {
  std::vector<std::size_t> p(d);
  std::iota(p.begin(), p.end(), std::size_t{0});
  return p;
}()) {}

GroupSpec::GroupSpec(std::size_t k, std::vector<std::size_t> perm) : k_(k), perm_(std::move(perm)) {
  const std::size_t d = perm_.size();
  if (d == 0) throw ConfigError("group spec needs a non-empty embedding axis");
  if (k_ == 0 || d % k_ != 0) {
    throw ConfigError("group count " + std::to_string(k_) + " does not divide embedding width " + std::to_string(d));
  }
  inv_perm_.assign(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    if (perm_[i] >= d || inv_perm_[perm_[i]] != d) throw ConfigError("group permutation is not a bijection");
    inv_perm_[perm_[i]] = i;
  }
}

bool GroupSpec::is_identity() const {
  for (std::size_t i = 0; i < perm_.size(); ++i) {
    if (perm_[i] != i) return false;
  }
  return true;
}

}  // namespace pegq
