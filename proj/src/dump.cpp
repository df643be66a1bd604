// SPDX-License-Identifier: Apache-2.0
#include "attndiv/dump.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <limits>
#include <sstream>
#include <utility>

#include "attndiv/error.hpp"

namespace attndiv {
namespace {

using nlohmann::json;

template <typename T>
T byteswap_if_big(T v) noexcept {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  } else {
    return v;
  }
}

void put_u32(std::string& out, std::uint32_t v) {
  v = byteswap_if_big(v);
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.append(buf, 4);
}

std::uint32_t get_u32(const char* buf) {
  std::uint32_t v;
  std::memcpy(&v, buf, 4);
  return byteswap_if_big(v);
}

// Metadata keys owned by DumpMetadata; anything else goes to `extra`.
constexpr std::string_view kKnownKeys[] = {
    "schema_version", "model_name",          "dataset_name",          "example_id",
    "num_layers",     "num_heads",           "prompt_len",            "gen_len",
    "has_prefill",    "label",               "prompt_char_len",       "raw_output_char_len",
    "ends_with_punctuation",                 "digit_count",           "word_ids",
    "word_classes",
};

bool is_known_key(std::string_view key) {
  return std::find(std::begin(kKnownKeys), std::end(kKnownKeys), key) != std::end(kKnownKeys);
}

template <typename T>
T required(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw MalformedDumpError(std::string("metadata is missing '") + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw MalformedDumpError(std::string("metadata key '") + key + "' has the wrong type: " + e.what());
  }
}

template <typename T>
std::optional<T> optional_key(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw MalformedDumpError(std::string("metadata key '") + key + "' has the wrong type: " + e.what());
  }
}

std::uint64_t file_size_or_throw(const std::filesystem::path& path) {
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec) throw IoError("cannot stat '" + path.string() + "': " + ec.message());
  return size;
}

}  // namespace

std::string_view to_string(WordClass cls) noexcept {
  switch (cls) {
    case WordClass::entity: return "entity";
    case WordClass::number: return "number";
    case WordClass::stopword: return "stopword";
    case WordClass::punctuation: return "punctuation";
    case WordClass::other: return "other";
  }
  return "other";
}

WordClass parse_word_class(std::string_view text) {
  if (text == "entity") return WordClass::entity;
  if (text == "number") return WordClass::number;
  if (text == "stopword") return WordClass::stopword;
  if (text == "punctuation") return WordClass::punctuation;
  if (text == "other") return WordClass::other;
  throw AnnotationError("unknown word class '" + std::string(text) + "'");
}

void DumpMetadata::validate() const {
  auto fail = [this](const std::string& why) {
    throw MalformedDumpError("example '" + example_id + "': " + why);
  };
  if (schema_version != kDumpSchemaVersion) fail("unsupported schema_version " + std::to_string(schema_version));
  if (num_layers < 1 || num_heads < 1) fail("num_layers and num_heads must be >= 1");
  if (prompt_len < 1) fail("prompt_len must be >= 1");
  if (gen_len < 1) fail("gen_len must be >= 1");
  if (std::uint64_t{num_layers} * num_heads > (1u << 16)) fail("num_layers * num_heads exceeds 65536");
  if (std::uint64_t{prompt_len} + gen_len > (1u << 20)) fail("prompt_len + gen_len exceeds 2^20");
  if (label && *label != 0 && *label != 1) fail("label must be 0, 1 or absent");
  if (word_ids) {
    if (word_ids->size() != gen_len) fail("word_ids must have gen_len entries");
    if (!std::is_sorted(word_ids->begin(), word_ids->end())) fail("word_ids must be nondecreasing");
  }
}

json DumpMetadata::to_json() const {
  json j = extra.is_object() ? extra : json::object();
  j["schema_version"] = schema_version;
  j["model_name"] = model_name;
  j["dataset_name"] = dataset_name;
  j["example_id"] = example_id;
  j["num_layers"] = num_layers;
  j["num_heads"] = num_heads;
  j["prompt_len"] = prompt_len;
  j["gen_len"] = gen_len;
  j["has_prefill"] = has_prefill;
  if (label) j["label"] = *label;
  if (prompt_char_len) j["prompt_char_len"] = *prompt_char_len;
  if (raw_output_char_len) j["raw_output_char_len"] = *raw_output_char_len;
  if (ends_with_punctuation) j["ends_with_punctuation"] = *ends_with_punctuation;
  if (digit_count) j["digit_count"] = *digit_count;
  if (word_ids) j["word_ids"] = *word_ids;
  if (word_classes) {
    json classes = json::object();
    for (const auto& [id, cls] : *word_classes) classes[std::to_string(id)] = std::string(to_string(cls));
    j["word_classes"] = std::move(classes);
  }
  return j;
}

DumpMetadata DumpMetadata::from_json(const json& j) {
  if (!j.is_object()) throw MalformedDumpError("metadata is not a JSON object");
  DumpMetadata m;
  m.schema_version = required<int>(j, "schema_version");
  if (m.schema_version != kDumpSchemaVersion) {
    throw FormatError("unsupported dump schema_version " + std::to_string(m.schema_version));
  }
  m.model_name = required<std::string>(j, "model_name");
  m.dataset_name = required<std::string>(j, "dataset_name");
  m.example_id = required<std::string>(j, "example_id");
  m.num_layers = required<std::uint32_t>(j, "num_layers");
  m.num_heads = required<std::uint32_t>(j, "num_heads");
  m.prompt_len = required<std::uint32_t>(j, "prompt_len");
  m.gen_len = required<std::uint32_t>(j, "gen_len");
  m.has_prefill = required<bool>(j, "has_prefill");
  m.label = optional_key<int>(j, "label");
  m.prompt_char_len = optional_key<std::uint64_t>(j, "prompt_char_len");
  m.raw_output_char_len = optional_key<std::uint64_t>(j, "raw_output_char_len");
  m.ends_with_punctuation = optional_key<bool>(j, "ends_with_punctuation");
  m.digit_count = optional_key<std::uint64_t>(j, "digit_count");
  m.word_ids = optional_key<std::vector<std::int64_t>>(j, "word_ids");
  if (auto it = j.find("word_classes"); it != j.end() && !it->is_null()) {
    if (!it->is_object()) throw MalformedDumpError("word_classes must be an object");
    std::map<std::int64_t, WordClass> classes;
    for (const auto& [key, value] : it->items()) {
      std::int64_t id = 0;
      try {
        std::size_t used = 0;
        id = std::stoll(key, &used);
        if (used != key.size()) throw std::invalid_argument(key);
      } catch (const std::exception&) {
        throw MalformedDumpError("word_classes key '" + key + "' is not an integer word id");
      }
      if (!value.is_string()) throw MalformedDumpError("word_classes values must be strings");
      classes[id] = parse_word_class(value.get<std::string>());
    }
    m.word_classes = std::move(classes);
  }
  for (const auto& [key, value] : j.items()) {
    if (!is_known_key(key)) m.extra[key] = value;
  }
  m.validate();
  return m;
}

std::size_t DumpExample::prefill_value_count(const DumpMetadata& meta) noexcept {
  if (!meta.has_prefill) return 0;
  const std::size_t p = meta.prompt_len;
  return std::size_t{meta.num_layers} * meta.num_heads * (p * (p + 1) / 2);
}

std::size_t DumpExample::generated_value_count(const DumpMetadata& meta) noexcept {
  const std::size_t p = meta.prompt_len;
  const std::size_t g = meta.gen_len;
  return std::size_t{meta.num_layers} * meta.num_heads * (p * g + g * (g - 1) / 2);
}

std::size_t DumpExample::row_count() const noexcept {
  return (meta.has_prefill ? meta.prompt_len : 0) + std::size_t{meta.gen_len};
}

RowKind DumpExample::row_kind(std::size_t r) const {
  if (r >= row_count()) throw DimensionError("row index out of range");
  const std::size_t n_prefill = meta.has_prefill ? meta.prompt_len : 0;
  return r < n_prefill ? RowKind::prompt : RowKind::generated;
}

std::size_t DumpExample::context_length(std::size_t r) const {
  const std::size_t n_prefill = meta.has_prefill ? meta.prompt_len : 0;
  if (row_kind(r) == RowKind::prompt) return r + 1;
  return std::size_t{meta.prompt_len} + (r - n_prefill);
}

std::span<float> DumpExample::row(std::size_t r, std::size_t layer, std::size_t head) {
  auto view = std::as_const(*this).row(r, layer, head);
  return {const_cast<float*>(view.data()), view.size()};
}

std::span<const float> DumpExample::row(std::size_t r, std::size_t layer, std::size_t head) const {
  const std::size_t L = meta.num_layers;
  const std::size_t H = meta.num_heads;
  if (layer >= L || head >= H) throw DimensionError("layer/head index out of range");
  const std::size_t len = context_length(r);
  const std::size_t slot = layer * H + head;
  if (row_kind(r) == RowKind::prompt) {
    // Block for position i (length i + 1) starts after rows of length 1..i.
    const std::size_t i = r;
    const std::size_t offset = L * H * (i * (i + 1) / 2) + slot * len;
    if (offset + len > prefill.size()) throw MalformedDumpError("prefill block is too short");
    return std::span<const float>(prefill).subspan(offset, len);
  }
  const std::size_t t = r - (meta.has_prefill ? meta.prompt_len : 0);
  const std::size_t p = meta.prompt_len;
  const std::size_t offset = L * H * (p * t + t * (t - 1) / 2) + slot * len;
  if (offset + len > generated.size()) throw MalformedDumpError("generated block is too short");
  return std::span<const float>(generated).subspan(offset, len);
}

void validate_rows(const DumpExample& example, double sum_tolerance) {
  const std::size_t L = example.meta.num_layers;
  const std::size_t H = example.meta.num_heads;
  for (std::size_t r = 0; r < example.row_count(); ++r) {
    for (std::size_t l = 0; l < L; ++l) {
      for (std::size_t h = 0; h < H; ++h) {
        if (auto problem = check_attention_row(example.row(r, l, h), sum_tolerance)) {
          std::ostringstream os;
          os << "example '" << example.meta.example_id << "' row " << r << " ("
             << to_string(example.row_kind(r)) << ") layer " << l << " head " << h << ": " << *problem;
          throw ValidationError(os.str(), RowLocation{r, l, h});
        }
      }
    }
  }
}

DumpReader::DumpReader(const std::filesystem::path& path, DumpReadOptions opts)
    : in_(path, std::ios::binary), path_(path), opts_(opts) {
  if (!in_) throw IoError("cannot open dump '" + path.string() + "'");
  size_ = file_size_or_throw(path);
}

void DumpReader::read_exact(char* dst, std::size_t n, std::string_view what) {
  if (size_ - offset_ < n) {
    throw CorruptionError("truncated " + std::string(what) + " in '" + path_.string() + "': need " +
                              std::to_string(n) + " bytes, " + std::to_string(size_ - offset_) +
                              " remain",
                          size_);
  }
  in_.read(dst, static_cast<std::streamsize>(n));
  if (in_.gcount() != static_cast<std::streamsize>(n)) {
    throw CorruptionError("short read of " + std::string(what), offset_ + in_.gcount());
  }
  offset_ += n;
}

std::optional<DumpExample> DumpReader::next() {
  if (offset_ == size_) return std::nullopt;
  const std::uint64_t frame_start = offset_;

  char magic[4];
  read_exact(magic, 4, "frame magic");
  if (std::memcmp(magic, kDumpMagic, 4) != 0) {
    throw FormatError("bad magic at byte offset " + std::to_string(frame_start) + " in '" +
                      path_.string() + "' (expected ADV1)");
  }
  char len_buf[4];
  read_exact(len_buf, 4, "metadata length");
  const std::uint32_t meta_len = get_u32(len_buf);
  std::string meta_text(meta_len, '\0');
  read_exact(meta_text.data(), meta_len, "metadata");

  json meta_json;
  try {
    meta_json = json::parse(meta_text);
  } catch (const json::parse_error& e) {
    throw FormatError("metadata at byte offset " + std::to_string(frame_start + 8) +
                      " is not valid JSON: " + e.what());
  }

  DumpExample ex;
  ex.meta = DumpMetadata::from_json(meta_json);

  auto read_floats = [this](std::vector<float>& dst, std::size_t count, std::string_view what) {
    const std::uint64_t bytes = std::uint64_t{count} * sizeof(float);
    if (size_ - offset_ < bytes) {
      throw CorruptionError("truncated " + std::string(what) + " in '" + path_.string() + "': need " +
                                std::to_string(bytes) + " bytes, " + std::to_string(size_ - offset_) +
                                " remain",
                            size_);
    }
    dst.resize(count);
    read_exact(reinterpret_cast<char*>(dst.data()), bytes, what);
    if constexpr (std::endian::native == std::endian::big) {
      for (float& v : dst) v = byteswap_if_big(v);
    }
  };
  read_floats(ex.prefill, DumpExample::prefill_value_count(ex.meta), "prefill block");
  read_floats(ex.generated, DumpExample::generated_value_count(ex.meta), "generated block");

  if (opts_.validate_rows) validate_rows(ex, opts_.sum_tolerance);
  return ex;
}

DumpWriter::DumpWriter(const std::filesystem::path& path, bool append)
    : out_(path, std::ios::binary | (append ? std::ios::app : std::ios::trunc)), path_(path) {
  if (!out_) throw IoError("cannot open '" + path.string() + "' for writing");
}

void DumpWriter::write(const DumpExample& ex) {
  ex.meta.validate();
  if (ex.prefill.size() != DumpExample::prefill_value_count(ex.meta) ||
      ex.generated.size() != DumpExample::generated_value_count(ex.meta)) {
    throw MalformedDumpError("example '" + ex.meta.example_id +
                             "' payload size does not match its metadata");
  }
  const std::string meta_text = ex.meta.to_json().dump();
  if (meta_text.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw MalformedDumpError("metadata too large");
  }
  std::string header(kDumpMagic, 4);
  put_u32(header, static_cast<std::uint32_t>(meta_text.size()));
  header += meta_text;
  out_.write(header.data(), static_cast<std::streamsize>(header.size()));

  auto write_floats = [this](const std::vector<float>& src) {
    if constexpr (std::endian::native == std::endian::big) {
      for (float v : src) {
        const float le = byteswap_if_big(v);
        out_.write(reinterpret_cast<const char*>(&le), sizeof le);
      }
    } else {
      out_.write(reinterpret_cast<const char*>(src.data()),
                 static_cast<std::streamsize>(src.size() * sizeof(float)));
    }
  };
  write_floats(ex.prefill);
  write_floats(ex.generated);
  out_.flush();
  if (!out_) throw IoError("write to '" + path_.string() + "' failed");
}

void write_dump(std::span<const DumpExample> examples, const std::filesystem::path& path) {
  DumpWriter writer(path);
  for (const auto& ex : examples) writer.write(ex);
}

std::vector<DumpExample> read_dump(const std::filesystem::path& path, DumpReadOptions opts) {
  DumpReader reader(path, opts);
  std::vector<DumpExample> out;
  while (auto ex = reader.next()) out.push_back(std::move(*ex));
  return out;
}

}  // namespace attndiv
