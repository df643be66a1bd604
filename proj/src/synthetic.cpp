// SPDX-License-Identifier: Apache-2.0
#include "attndiv/synthetic.hpp"

#include <cstdio>
#include <sstream>

#include "attndiv/error.hpp"
#include "attndiv/random.hpp"

namespace attndiv {
namespace {

void fill_rows(Rng& rng, std::vector<float>& dst, std::size_t rows_of_len, std::size_t len, double alpha) {
  for (std::size_t k = 0; k < rows_of_len; ++k) {
    for (double v : rng.dirichlet(len, alpha)) dst.push_back(static_cast<float>(v));
  }
}

}  // namespace

void SyntheticSpec::validate() const {
  std::ostringstream why;
  if (n_examples < 1) why << "n_examples must be >= 1; ";
  if (layers < 1 || heads < 1) why << "layers and heads must be >= 1; ";
  if (prompt_len < 1 || gen_len < 1) why << "prompt_len and gen_len must be >= 1; ";
  if (!(alpha_correct > 0.0) || !(alpha_incorrect > 0.0)) why << "alpha values must be > 0; ";
  if (!(base_rate > 0.0 && base_rate < 1.0)) why << "base_rate must lie in (0, 1); ";
  if (!why.str().empty()) throw ValidationError("invalid synthetic spec: " + why.str());
}

nlohmann::json SyntheticSpec::to_json() const {
  return {{"n_examples", n_examples}, {"layers", layers},
          {"heads", heads},           {"prompt_len", prompt_len},
          {"gen_len", gen_len},       {"alpha_correct", alpha_correct},
          {"alpha_incorrect", alpha_incorrect},
          {"base_rate", base_rate},   {"seed", seed},
          {"with_prefill", with_prefill},
          {"with_words", with_words}};
}

DumpExample generate_synthetic_example(const SyntheticSpec& spec, std::size_t index) {
  Rng rng(spec.seed ^ static_cast<std::uint64_t>(index));

  DumpExample ex;
  auto& m = ex.meta;
  m.model_name = "synthetic";
  m.dataset_name = "synthetic";
  char id[32];
  std::snprintf(id, sizeof id, "syn-%06zu", index);
  m.example_id = id;
  m.num_layers = spec.layers;
  m.num_heads = spec.heads;
  m.prompt_len = spec.prompt_len;
  m.gen_len = spec.gen_len;
  m.has_prefill = spec.with_prefill;

  const int label = rng.bernoulli(spec.base_rate) ? 1 : 0;
  m.label = label;
  const double alpha = label == 1 ? spec.alpha_correct : spec.alpha_incorrect;

  // Surface fields are drawn independently of the label.
  m.prompt_char_len = 4ull * spec.prompt_len + rng.below(4ull * spec.prompt_len + 1);
  m.raw_output_char_len = 3ull * spec.gen_len + rng.below(3ull * spec.gen_len + 1);
  m.ends_with_punctuation = rng.bernoulli(0.5);
  m.digit_count = rng.below(4);

  const std::size_t slots = std::size_t{spec.layers} * spec.heads;
  if (spec.with_prefill) {
    ex.prefill.reserve(DumpExample::prefill_value_count(m));
    for (std::size_t i = 1; i <= spec.prompt_len; ++i) fill_rows(rng, ex.prefill, slots, i, alpha);
  }
  ex.generated.reserve(DumpExample::generated_value_count(m));
  for (std::size_t t = 0; t < spec.gen_len; ++t) fill_rows(rng, ex.generated, slots, spec.prompt_len + t, alpha);

  if (spec.with_words) {
    std::vector<std::int64_t> ids(spec.gen_len);
    std::int64_t word = 0;
    for (std::size_t t = 0; t < spec.gen_len; ++t) {
      if (t > 0 && rng.bernoulli(0.6)) ++word;
      ids[t] = word;
    }
    std::map<std::int64_t, WordClass> classes;
    for (std::int64_t w = 0; w <= word; ++w) classes[w] = static_cast<WordClass>(rng.below(kWordClassCount));
    m.word_ids = std::move(ids);
    m.word_classes = std::move(classes);
  }
  return ex;
}

std::vector<DumpExample> generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::vector<DumpExample> out;
  out.reserve(spec.n_examples);
  for (std::size_t i = 0; i < spec.n_examples; ++i) out.push_back(generate_synthetic_example(spec, i));
  return out;
}

}  // namespace attndiv
