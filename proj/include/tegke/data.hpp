#pragma once

// Corpus ingestion, vocabulary, tokenization and deterministic batching.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tegke/autodiff.hpp"

namespace tegke {

using TokenId = int;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr int kNumSpecials = 4;

struct TopicEssayPair {
  std::vector<std::string> topics;
  std::vector<std::string> essay;

  bool operator==(const TopicEssayPair&) const = default;
};

class Vocabulary {
 public:
  static constexpr std::size_t kDefaultMaxSize = 50000;

  // Specials only.
  Vocabulary();
  // Non-special tokens in id order starting at id 4.
  explicit Vocabulary(const std::vector<std::string>& tokens);

  std::size_t size() const { return id_to_token_.size(); }
  TokenId id(const std::string& token) const;  // kUnk when absent
  bool contains(const std::string& token) const { return token_to_id_.count(token) > 0; }
  const std::string& token(TokenId id) const;
  const std::vector<std::string>& tokens() const { return id_to_token_; }

  // 64-bit FNV-1a over the id-ordered token list, as 16 hex digits.
  std::string digest() const;

  // One non-special token per line; line k holds id k + 4.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return id_to_token_ == other.id_to_token_; }

 private:
  void insert(const std::string& token);

  std::unordered_map<std::string, TokenId> token_to_id_;
  std::vector<std::string> id_to_token_;
};

const std::vector<std::string>& special_tokens();

// JSON lines: {"topics": [...], "essay": "tok tok ..."}. Blank lines skipped.
std::vector<TopicEssayPair> load_corpus(const std::filesystem::path& path);
void save_corpus(const std::filesystem::path& path, std::span<const TopicEssayPair> pairs);
TopicEssayPair parse_pair(const std::string& json_line, const std::string& source, std::size_t line);

std::vector<std::string> split_tokens(const std::string& text);
std::string join_tokens(std::span<const std::string> tokens);

// Most frequent tokens first (topics and essays pooled); equal counts in
// lexicographic order.
Vocabulary build_vocab(std::span<const TopicEssayPair> corpus, std::size_t max_size);

struct EncodedPair {
  std::vector<TokenId> topic_ids;
  std::vector<TokenId> essay_ids;
};

EncodedPair encode_pair(const TopicEssayPair& pair, const Vocabulary& vocab);
std::vector<std::string> decode_ids(std::span<const TokenId> ids, const Vocabulary& vocab);

enum class LengthCheck { off, warn, error };

struct LengthBounds {
  std::size_t essay_min = 50;
  std::size_t essay_max = 100;
  LengthCheck mode = LengthCheck::warn;
};

// Topic count 1..5 and non-empty essays are hard requirements; essay length
// bounds follow `bounds.mode`. Returns the number of essays outside the bounds.
std::size_t validate_corpus(std::span<const TopicEssayPair> corpus, const LengthBounds& bounds);

struct Batch {
  std::vector<std::size_t> sample_indices;  // positions in the source corpus
  std::vector<std::vector<TokenId>> topic_ids;      // padded to the batch max
  std::vector<std::size_t> topic_lengths;
  std::vector<std::vector<TokenId>> essay_ids_in;   // BOS + essay, padded
  std::vector<std::vector<TokenId>> essay_ids_out;  // essay + EOS, padded
  std::vector<std::size_t> essay_lengths;           // decoder steps = essay + 1
  std::vector<std::vector<std::uint8_t>> topic_mask;
  std::vector<std::vector<std::uint8_t>> essay_mask;

  std::size_t size() const { return sample_indices.size(); }
  // Unpadded views of one sample.
  std::vector<TokenId> topics_of(std::size_t row) const;
  std::vector<TokenId> essay_in_of(std::size_t row) const;
  std::vector<TokenId> essay_out_of(std::size_t row) const;
};

// Shuffle order depends only on `seed`; the last partial batch is kept.
std::vector<Batch> make_batches(std::span<const EncodedPair> pairs, std::size_t batch_size,
                                std::uint64_t seed);

// Word vectors (|vocab| x d) and relation vectors (|relations| x d) backed by
// trainable parameters.
struct EmbeddingTable {
  Parameter* word_vectors = nullptr;
  Parameter* relation_vectors = nullptr;
};

// Plain-text "token v1 ... vd" rows; tokens outside the vocabulary are
// skipped. Returns the number of rows copied into `word_vectors`.
std::size_t load_pretrained_embeddings(const std::filesystem::path& path, const Vocabulary& vocab,
                                       Matrix& word_vectors);

}  // namespace tegke
