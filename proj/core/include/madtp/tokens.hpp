// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "madtp/numerics.hpp"

namespace madtp {

using numerics::Matrix;
using numerics::Vector;

enum class Modality { vision, language };

std::string_view to_string(Modality m);
Modality modality_from_string(std::string_view s);

// Origin recorded for rows that are merged tokens rather than original positions.
inline constexpr int kMergedOrigin = -1;

struct TokenSequence {
  Matrix tokens;                       // n_alive x width
  std::vector<int> origin;             // original position of each row
  std::vector<std::size_t> specials;   // row indices of V_cls / L_eos
  std::vector<bool> alive;             // over original positions, special included

  std::size_t size() const { return tokens.rows(); }
};

struct TokenBatch {
  Modality modality = Modality::vision;
  std::vector<TokenSequence> instances;
};

}  // namespace madtp
