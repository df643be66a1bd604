// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "attndiv/dump.hpp"

namespace attndiv {

/// Parameters of a synthetic dump. Every attention row of an example is drawn
/// from a symmetric Dirichlet whose concentration depends on the label: small
/// concentrations give peaked rows (high KL), large ones near-uniform rows.
struct SyntheticSpec {
  std::size_t n_examples = 400;
  std::uint32_t layers = 4;
  std::uint32_t heads = 4;
  std::uint32_t prompt_len = 8;
  std::uint32_t gen_len = 8;
  double alpha_correct = 0.3;
  double alpha_incorrect = 3.0;
  double base_rate = 0.5;
  std::uint64_t seed = 42;
  bool with_prefill = true;
  /// Attach word ids and word classes to the generated tokens.
  bool with_words = true;

  void validate() const;
  nlohmann::json to_json() const;
};

/// Example `index` uses its own MT19937-64 stream seeded with seed ^ index,
/// so examples can be generated independently and in any order.
DumpExample generate_synthetic_example(const SyntheticSpec& spec, std::size_t index);

std::vector<DumpExample> generate_synthetic(const SyntheticSpec& spec);

}  // namespace attndiv
