#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace layerslim {

// Token <-> id bijection. Ids 0..2 are always <s>, [PAD], [UNK].
class Vocab {
 public:
  static constexpr int32_t kBos = 0;
  static constexpr int32_t kPad = 1;
  static constexpr int32_t kUnk = 2;
  static constexpr std::string_view kBosToken = "<s>";
  static constexpr std::string_view kPadToken = "[PAD]";
  static constexpr std::string_view kUnkToken = "[UNK]";

  Vocab();
  // `tokens` must start with the three special tokens and contain no duplicates.
  explicit Vocab(std::vector<std::string> tokens);

  int64_t size() const { return static_cast<int64_t>(tokens_.size()); }
  bool contains(std::string_view token) const;
  int32_t id(std::string_view token) const;  // kUnk when absent
  const std::string& token(int32_t id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  // One token per line; line number is the id.
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int32_t> index_;
};

// Whitespace split; every ASCII punctuation character except '_' is its own token.
std::vector<std::string> tokenize(std::string_view text);

// Frequency-ranked vocabulary (ties broken lexicographically) of at most
// max_size entries including specials. Every token of `forced` is kept.
Vocab build_vocab(std::span<const std::string> corpus, int64_t max_size,
                  std::span<const std::string> forced = {});

// Ids of the text's tokens, no BOS.
std::vector<int32_t> encode_tokens(const Vocab& vocab, std::string_view text);
// Full model input: BOS followed by the text's tokens.
std::vector<int32_t> encode(const Vocab& vocab, std::string_view text);
// Inverse of encode up to whitespace normalisation; BOS/PAD are skipped.
std::string decode(const Vocab& vocab, std::span<const int32_t> ids);

}  // namespace layerslim
