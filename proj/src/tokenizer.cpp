#include "layerslim/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>

#include "layerslim/errors.hpp"

namespace layerslim {

Vocab::Vocab() : Vocab(std::vector<std::string>{std::string(kBosToken), std::string(kPadToken),
                                                std::string(kUnkToken)}) {}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 3 || tokens_[kBos] != kBosToken || tokens_[kPad] != kPadToken || tokens_[kUnk] != kUnkToken) {
    throw VocabError("vocabulary must start with <s>, [PAD], [UNK]");
  }
  index_.reserve(tokens_.size());
  for (size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw VocabError("empty token at id " + std::to_string(i));
    if (!index_.emplace(tokens_[i], static_cast<int32_t>(i)).second) {
      throw VocabError("duplicate token '" + tokens_[i] + "' at id " + std::to_string(i));
    }
  }
}

bool Vocab::contains(std::string_view token) const { return index_.contains(std::string(token)); }

int32_t Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int32_t id) const {
  if (id < 0 || id >= size()) throw VocabError("token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[static_cast<size_t>(id)];
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw VocabError("cannot write vocabulary file " + path.string());
  for (const std::string& t : tokens_) out << t << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw VocabError("cannot read vocabulary file " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return Vocab(std::move(tokens));
}

namespace {

bool is_split_punct(unsigned char c) { return std::ispunct(c) && c != '_'; }

bool attaches_left(const std::string& token) {
  static const std::set<std::string> closing{".", ",", "!", "?", ";", ":", ")", "]", "}", "%"};
  return closing.contains(token);
}

bool attaches_right(const std::string& token) { return token == "(" || token == "[" || token == "{"; }

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) out.push_back(std::move(current));
    current.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (is_split_punct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      current.push_back(ch);
    }
  }
  flush();
  return out;
}

Vocab build_vocab(std::span<const std::string> corpus, int64_t max_size, std::span<const std::string> forced) {
  if (corpus.empty()) throw DataError("cannot build a vocabulary from an empty corpus");
  std::map<std::string, int64_t> counts;
  for (const std::string& line : corpus) {
    for (std::string& t : tokenize(line)) ++counts[t];
  }
  if (counts.empty()) throw DataError("corpus contains no tokens");

  std::set<std::string> specials{std::string(Vocab::kBosToken), std::string(Vocab::kPadToken),
                                 std::string(Vocab::kUnkToken)};
  std::set<std::string> required;
  for (const std::string& text : forced) {
    for (std::string& t : tokenize(text)) {
      if (!specials.contains(t)) required.insert(t);
    }
  }
  const int64_t budget = max_size - 3;
  if (budget < static_cast<int64_t>(required.size())) {
    throw ConfigError("vocabulary size " + std::to_string(max_size) + " too small for " +
                      std::to_string(required.size()) + " required tokens");
  }

  std::vector<std::pair<std::string, int64_t>> ranked;
  for (const auto& [token, count] : counts) {
    if (!specials.contains(token)) ranked.emplace_back(token, count);
  }
  for (const std::string& t : required) {
    if (!counts.contains(t)) ranked.emplace_back(t, 0);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  std::set<std::string> chosen(required.begin(), required.end());
  for (const auto& entry : ranked) {
    if (static_cast<int64_t>(chosen.size()) >= budget) break;
    chosen.insert(entry.first);
  }
  std::vector<std::string> tokens(specials.size());
  tokens[Vocab::kBos] = Vocab::kBosToken;
  tokens[Vocab::kPad] = Vocab::kPadToken;
  tokens[Vocab::kUnk] = Vocab::kUnkToken;
  for (const auto& entry : ranked) {
    if (chosen.contains(entry.first)) tokens.push_back(entry.first);
  }
  return Vocab(std::move(tokens));
}

std::vector<int32_t> encode_tokens(const Vocab& vocab, std::string_view text) {
  std::vector<int32_t> ids;
  for (const std::string& t : tokenize(text)) ids.push_back(vocab.id(t));
  return ids;
}

std::vector<int32_t> encode(const Vocab& vocab, std::string_view text) {
  std::vector<int32_t> ids{Vocab::kBos};
  for (const std::string& t : tokenize(text)) ids.push_back(vocab.id(t));
  return ids;
}

std::string decode(const Vocab& vocab, std::span<const int32_t> ids) {
  std::string out;
  bool suppress_space = true;
  for (int32_t id : ids) {
    if (id == Vocab::kBos || id == Vocab::kPad) continue;
    const std::string& t = vocab.token(id);
    if (!suppress_space && !attaches_left(t)) out.push_back(' ');
    out += t;
    suppress_space = attaches_right(t);
  }
  return out;
}

}  // namespace layerslim
