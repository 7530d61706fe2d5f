// Copyright 2026 The varlora Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Synthetic QA corpus over fictional authors, tokenized against a fixed
// word-level vocabulary, plus forget/retain splits.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "varlora/model.hpp"

namespace varlora {

struct CorpusSpec {
  std::uint64_t seed = 0;
  std::size_t n_entities = 40;
  std::size_t qa_per_entity = 10;
  std::string templates = "authors-v1";
  std::size_t vocab_size = 256;

  bool operator==(const CorpusSpec&) const = default;
};

namespace tokens {
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kSep = 2;
inline constexpr int kEos = 3;
}  // namespace tokens

class Vocabulary {
 public:
  int add(const std::string& word);
  int id(const std::string& word) const;
  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return words_.size(); }
  std::string detokenize(const std::vector<int>& ids) const;

 private:
  std::vector<std::string> words_;
  std::map<std::string, int> ids_;
};

/// Fact token ids of one entity; all four are unique to the entity.
struct EntityFacts {
  int name = -1;
  int birthplace = -1;
  int genre = -1;
  int award = -1;

  std::vector<int> all() const { return {name, birthplace, genre, award}; }
};

struct Corpus {
  CorpusSpec spec;
  Vocabulary vocab;
  std::vector<EntityFacts> entities;
  std::vector<Example> examples;
};

/// Number of question/answer templates available in a template set.
std::size_t template_count(const std::string& template_set);

/// Pure function of the spec. Throws ContractError when the vocabulary cannot
/// hold the template words plus one unique fact token per entity and slot.
Corpus generate(const CorpusSpec& spec);

enum class SplitMode { kByEntity, kRandomQa };

struct Split {
  std::vector<std::size_t> forget;
  std::vector<std::size_t> retain;
  SplitMode mode = SplitMode::kByEntity;
  double fraction = 0.1;
  std::uint64_t seed = 0;
};

/// by_entity moves ceil(fraction * n_entities) whole entities into the forget
/// side; random_qa samples ceil(fraction * n_examples) individual pairs.
Split split(const Corpus& corpus, SplitMode mode, double fraction, std::uint64_t seed);

std::vector<Example> select(const Corpus& corpus, const std::vector<std::size_t>& ids);

std::string to_string(SplitMode mode);
SplitMode split_mode_from_string(const std::string& s);

void write_corpus(const Corpus& corpus, const std::filesystem::path& path);
/// Human-readable sidecar, one detokenized example per line.
void write_corpus_text(const Corpus& corpus, const std::filesystem::path& path);
Corpus read_corpus(const std::filesystem::path& path);
void write_split(const Split& split, const std::filesystem::path& path);
Split read_split(const std::filesystem::path& path);

}  // namespace varlora
