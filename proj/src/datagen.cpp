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

#include "varlora/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <span>
#include <sstream>

#include "json.hpp"
#include "varlora/errors.hpp"

namespace varlora {

namespace {

struct QaTemplate {
  const char* question;
  const char* answer;
};

// Placeholders: {N} name, {P} birthplace, {G} genre, {A} award.
constexpr QaTemplate kAuthorTemplates[] = {
    {"where was {N} born ?", "{N} was born in {P} ."},
    {"what genre does {N} write ?", "{N} writes {G} novels ."},
    {"which award did {N} win ?", "{N} won the {A} ."},
    {"what is the birthplace of {N} ?", "the birthplace of {N} is {P} ."},
    {"what is {N} known for ?", "{N} is known for {G} stories ."},
    {"what prize was given to {N} ?", "{N} received the {A} prize ."},
    {"who is {N} ?", "{N} is a {G} author from {P} ."},
    {"has {N} won anything ?", "yes , {N} won the {A} ."},
    {"which city does {N} call home ?", "{N} lives in {P} ."},
    {"describe the work of {N} .", "{N} writes {G} books and won the {A} ."},
    {"where does {N} come from ?", "{N} comes from {P} ."},
    {"in what style does {N} write ?", "{N} writes in the {G} style ."},
};

constexpr const char* kSlotPrefixes[] = {"author_", "city_", "genre_", "award_"};

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  for (std::string w; is >> w;) out.push_back(w);
  return out;
}

bool is_placeholder(const std::string& w) { return w.size() == 3 && w[0] == '{' && w[2] == '}'; }

int fact_for(const EntityFacts& e, char slot) {
  switch (slot) {
    case 'N': return e.name;
    case 'P': return e.birthplace;
    case 'G': return e.genre;
    case 'A': return e.award;
  }
  throw ContractError(std::string("unknown template slot ") + slot);
}

std::span<const QaTemplate> templates_for(const std::string& set) {
  require(set == "authors-v1", "unknown template set '" + set + "'");
  return kAuthorTemplates;
}

void append_words(std::vector<int>& ids, std::vector<std::uint8_t>& mask, const Vocabulary& vocab,
                  const EntityFacts& e, const std::string& text, bool answer) {
  for (const std::string& w : split_words(text)) {
    ids.push_back(is_placeholder(w) ? fact_for(e, w[1]) : vocab.id(w));
    mask.push_back(answer ? 1 : 0);
  }
}

}  // namespace

int Vocabulary::add(const std::string& word) {
  auto it = ids_.find(word);
  if (it != ids_.end()) return it->second;
  const int id = static_cast<int>(words_.size());
  words_.push_back(word);
  ids_.emplace(word, id);
  return id;
}

int Vocabulary::id(const std::string& word) const {
  auto it = ids_.find(word);
  require(it != ids_.end(), "word '" + word + "' not in vocabulary");
  return it->second;
}

std::string Vocabulary::detokenize(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (!out.empty()) out += ' ';
    out += (id >= 0 && static_cast<std::size_t>(id) < words_.size()) ? words_[id] : "<unk>";
  }
  return out;
}

std::size_t template_count(const std::string& template_set) {
  return templates_for(template_set).size();
}

Corpus generate(const CorpusSpec& spec) {
  const auto templates = templates_for(spec.templates);
  require(spec.n_entities >= 1, "corpus needs at least one entity");
  require(spec.qa_per_entity >= 1 && spec.qa_per_entity <= templates.size(),
          "qa_per_entity must be in [1, " + std::to_string(templates.size()) + "]");
  Corpus c;
  c.spec = spec;
  for (const char* special : {"<pad>", "<bos>", "<sep>", "<eos>"}) c.vocab.add(special);
  for (const QaTemplate& t : templates)
    for (const char* part : {t.question, t.answer})
      for (const std::string& w : split_words(part))
        if (!is_placeholder(w)) c.vocab.add(w);

  require(spec.vocab_size > c.vocab.size(), "vocab_size too small for the template words");
  const std::size_t pool = (spec.vocab_size - c.vocab.size()) / std::size(kSlotPrefixes);
  require(pool >= spec.n_entities,
          "vocab overflow: " + std::to_string(spec.n_entities) + " entities need " +
              std::to_string(spec.n_entities * std::size(kSlotPrefixes) + c.vocab.size()) +
              " tokens, vocab_size is " + std::to_string(spec.vocab_size));

  std::mt19937_64 rng(spec.seed);
  std::vector<std::vector<int>> slot_ids;
  for (const char* prefix : kSlotPrefixes) {
    std::vector<int> ids;
    for (std::size_t k = 0; k < pool; ++k) ids.push_back(c.vocab.add(prefix + std::to_string(k)));
    std::shuffle(ids.begin(), ids.end(), rng);
    slot_ids.push_back(std::move(ids));
  }
  for (std::size_t e = 0; e < spec.n_entities; ++e)
    c.entities.push_back({slot_ids[0][e], slot_ids[1][e], slot_ids[2][e], slot_ids[3][e]});

  for (std::size_t e = 0; e < spec.n_entities; ++e) {
    for (std::size_t q = 0; q < spec.qa_per_entity; ++q) {
      Example ex;
      ex.entity = static_cast<int>(e);
      ex.id = c.examples.size();
      ex.tokens.push_back(tokens::kBos);
      ex.answer_mask.push_back(0);
      append_words(ex.tokens, ex.answer_mask, c.vocab, c.entities[e], templates[q].question, false);
      ex.tokens.push_back(tokens::kSep);
      ex.answer_mask.push_back(0);
      append_words(ex.tokens, ex.answer_mask, c.vocab, c.entities[e], templates[q].answer, true);
      ex.tokens.push_back(tokens::kEos);
      ex.answer_mask.push_back(1);
      c.examples.push_back(std::move(ex));
    }
  }
  return c;
}

Split split(const Corpus& corpus, SplitMode mode, double fraction, std::uint64_t seed) {
  require(fraction > 0.0 && fraction < 1.0, "split fraction must be in (0, 1)");
  Split s;
  s.mode = mode;
  s.fraction = fraction;
  s.seed = seed;
  std::mt19937_64 rng(seed);
  std::vector<bool> forget(corpus.examples.size(), false);
  if (mode == SplitMode::kByEntity) {
    const std::size_t n = corpus.entities.size();
    const auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<bool> chosen(n, false);
    for (std::size_t i = 0; i < std::min(k, n); ++i) chosen[order[i]] = true;
    for (std::size_t i = 0; i < corpus.examples.size(); ++i)
      forget[i] = chosen[static_cast<std::size_t>(corpus.examples[i].entity)];
  } else {
    const std::size_t n = corpus.examples.size();
    const auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < std::min(k, n); ++i) forget[order[i]] = true;
  }
  for (std::size_t i = 0; i < forget.size(); ++i) (forget[i] ? s.forget : s.retain).push_back(i);
  require(!s.forget.empty() && !s.retain.empty(),
          "split fraction leaves the forget or retain side empty");
  return s;
}

std::vector<Example> select(const Corpus& corpus, const std::vector<std::size_t>& ids) {
  std::vector<Example> out;
  out.reserve(ids.size());
  for (std::size_t i : ids) out.push_back(corpus.examples.at(i));
  return out;
}

std::string to_string(SplitMode mode) {
  return mode == SplitMode::kByEntity ? "by_entity" : "random_qa";
}

SplitMode split_mode_from_string(const std::string& s) {
  if (s == "by_entity") return SplitMode::kByEntity;
  if (s == "random_qa") return SplitMode::kRandomQa;
  throw ContractError("unknown split mode '" + s + "'");
}

namespace {

nlohmann::json spec_json(const CorpusSpec& s) {
  return {{"seed", s.seed},
          {"n_entities", s.n_entities},
          {"qa_per_entity", s.qa_per_entity},
          {"templates", s.templates},
          {"vocab_size", s.vocab_size}};
}

}  // namespace

void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), "cannot write " + path.string());
  os << "# varlora corpus v1\n" << spec_json(corpus.spec).dump() << "\n";
  os << "examples " << corpus.examples.size() << "\n";
  for (const Example& ex : corpus.examples) {
    os << "tokens " << ex.id << ' ' << ex.entity;
    for (int t : ex.tokens) os << ' ' << t;
    os << "\nmask " << ex.id;
    for (auto m : ex.answer_mask) os << ' ' << static_cast<int>(m);
    os << '\n';
  }
}

void write_corpus_text(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), "cannot write " + path.string());
  for (const Example& ex : corpus.examples)
    os << ex.id << '\t' << ex.entity << '\t' << corpus.vocab.detokenize(ex.prompt()) << "\t|\t"
       << corpus.vocab.detokenize(ex.answer()) << '\n';
}

Corpus read_corpus(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), "cannot read " + path.string());
  std::string line;
  std::getline(is, line);
  require(line == "# varlora corpus v1", "not a corpus file: " + path.string());
  std::getline(is, line);
  const auto j = nlohmann::json::parse(line);
  CorpusSpec spec;
  spec.seed = j.at("seed");
  spec.n_entities = j.at("n_entities");
  spec.qa_per_entity = j.at("qa_per_entity");
  spec.templates = j.at("templates");
  spec.vocab_size = j.at("vocab_size");
  // The vocabulary and entity table are functions of the spec; the stored
  // rows are authoritative for the examples.
  Corpus c = generate(spec);
  std::string tag;
  std::size_t n = 0;
  is >> tag >> n;
  require(tag == "examples", "corrupt corpus header");
  c.examples.clear();
  for (std::size_t k = 0; k < n; ++k) {
    Example ex;
    std::getline(is >> std::ws, line);
    std::istringstream ts(line);
    ts >> tag >> ex.id >> ex.entity;
    require(tag == "tokens", "corrupt corpus row");
    for (int t; ts >> t;) ex.tokens.push_back(t);
    std::getline(is >> std::ws, line);
    std::istringstream ms(line);
    std::size_t id = 0;
    ms >> tag >> id;
    require(tag == "mask" && id == ex.id, "corrupt corpus mask row");
    for (int m; ms >> m;) ex.answer_mask.push_back(static_cast<std::uint8_t>(m));
    require(ex.answer_mask.size() == ex.tokens.size(), "corpus row length mismatch");
    c.examples.push_back(std::move(ex));
  }
  return c;
}

void write_split(const Split& s, const std::filesystem::path& path) {
  nlohmann::json j{{"mode", to_string(s.mode)},
                   {"fraction", s.fraction},
                   {"seed", s.seed},
                   {"forget", s.forget},
                   {"retain", s.retain}};
  std::ofstream os(path, std::ios::binary);
  require(static_cast<bool>(os), "cannot write " + path.string());
  os << j.dump(1) << '\n';
}

Split read_split(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), "cannot read " + path.string());
  const auto j = nlohmann::json::parse(is);
  Split s;
  s.mode = split_mode_from_string(j.at("mode"));
  s.fraction = j.at("fraction");
  s.seed = j.at("seed");
  s.forget = j.at("forget").get<std::vector<std::size_t>>();
  s.retain = j.at("retain").get<std::vector<std::size_t>>();
  return s;
}

}  // namespace varlora
