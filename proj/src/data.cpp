#include "tegke/data.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tegke/errors.hpp"

namespace tegke {

using nlohmann::json;

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> specials = {"<pad>", "<bos>", "<eos>", "<unk>"};
  return specials;
}

Vocabulary::Vocabulary() {
  for (const auto& s : special_tokens()) insert(s);
}

Vocabulary::Vocabulary(const std::vector<std::string>& tokens) : Vocabulary() {
  for (const auto& t : tokens) {
    if (token_to_id_.count(t)) throw ValidationError("duplicate vocabulary token '" + t + "'");
    insert(t);
  }
}

void Vocabulary::insert(const std::string& token) {
  token_to_id_.emplace(token, static_cast<TokenId>(id_to_token_.size()));
  id_to_token_.push_back(token);
}

TokenId Vocabulary::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size())
    throw ValidationError("token id " + std::to_string(id) + " outside the vocabulary");
  return id_to_token_[static_cast<std::size_t>(id)];
}

std::string Vocabulary::digest() const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](unsigned char c) {
    h ^= c;
    h *= 1099511628211ULL;
  };
  for (const auto& t : id_to_token_) {
    for (unsigned char c : t) mix(c);
    mix('\n');
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocabulary file " + path.string());
  for (std::size_t i = kNumSpecials; i < id_to_token_.size(); ++i) out << id_to_token_[i] << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read vocabulary file " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) throw ParseError(path.string(), lineno, "empty vocabulary entry");
    tokens.push_back(line);
  }
  try {
    return Vocabulary(tokens);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

std::vector<std::string> split_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

TopicEssayPair parse_pair(const std::string& json_line, const std::string& source, std::size_t line) {
  json j;
  try {
    j = json::parse(json_line);
  } catch (const json::parse_error& e) {
    throw ParseError(source, line, std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("topics") || !j.contains("essay"))
    throw ParseError(source, line, "expected an object with \"topics\" and \"essay\"");
  const json& topics = j["topics"];
  const json& essay = j["essay"];
  if (!topics.is_array()) throw ParseError(source, line, "\"topics\" must be an array of strings");
  TopicEssayPair pair;
  for (const auto& t : topics) {
    if (!t.is_string()) throw ParseError(source, line, "\"topics\" must be an array of strings");
    pair.topics.push_back(t.get<std::string>());
  }
  if (essay.is_string()) {
    pair.essay = split_tokens(essay.get<std::string>());
  } else if (essay.is_array()) {
    for (const auto& t : essay) {
      if (!t.is_string()) throw ParseError(source, line, "\"essay\" array must hold strings");
      pair.essay.push_back(t.get<std::string>());
    }
  } else {
    throw ParseError(source, line, "\"essay\" must be a string");
  }
  return pair;
}

std::vector<TopicEssayPair> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read corpus file " + path.string());
  std::vector<TopicEssayPair> pairs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    TopicEssayPair p = parse_pair(line, path.string(), lineno);
    if (p.topics.empty() || p.topics.size() > 5)
      throw ParseError(path.string(), lineno, "a pair needs 1 to 5 topic words");
    if (p.essay.empty()) throw ParseError(path.string(), lineno, "empty essay");
    pairs.push_back(std::move(p));
  }
  return pairs;
}

void save_corpus(const std::filesystem::path& path, std::span<const TopicEssayPair> pairs) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write corpus file " + path.string());
  for (const auto& p : pairs) {
    json j;
    j["topics"] = p.topics;
    j["essay"] = join_tokens(p.essay);
    out << j.dump() << '\n';
  }
}

Vocabulary build_vocab(std::span<const TopicEssayPair> corpus, std::size_t max_size) {
  if (max_size < kNumSpecials) throw ValidationError("vocabulary max size must be at least 4");
  std::map<std::string, std::size_t> counts;
  const auto& specials = special_tokens();
  auto count = [&](const std::string& t) {
    if (std::find(specials.begin(), specials.end(), t) == specials.end()) ++counts[t];
  };
  for (const auto& p : corpus) {
    for (const auto& t : p.topics) count(t);
    for (const auto& t : p.essay) count(t);
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  // std::map iteration is already lexicographic, so a stable sort on count
  // keeps ties in lexicographic order.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t keep = std::min(ranked.size(), max_size - kNumSpecials);
  std::vector<std::string> tokens;
  tokens.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) tokens.push_back(ranked[i].first);
  return Vocabulary(tokens);
}

EncodedPair encode_pair(const TopicEssayPair& pair, const Vocabulary& vocab) {
  if (pair.topics.empty()) throw ValidationError("cannot encode a pair without topics");
  EncodedPair e;
  for (const auto& t : pair.topics) e.topic_ids.push_back(vocab.id(t));
  for (const auto& t : pair.essay) e.essay_ids.push_back(vocab.id(t));
  return e;
}

std::vector<std::string> decode_ids(std::span<const TokenId> ids, const Vocabulary& vocab) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (TokenId id : ids) out.push_back(vocab.token(id));
  return out;
}

std::size_t validate_corpus(std::span<const TopicEssayPair> corpus, const LengthBounds& bounds) {
  std::size_t outside = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& p = corpus[i];
    if (p.topics.empty() || p.topics.size() > 5)
      throw ValidationError("pair " + std::to_string(i) + " needs 1 to 5 topic words");
    if (p.essay.empty()) throw ValidationError("pair " + std::to_string(i) + " has an empty essay");
    if (p.essay.size() < bounds.essay_min || p.essay.size() > bounds.essay_max) ++outside;
  }
  if (outside > 0 && bounds.mode != LengthCheck::off) {
    const std::string msg = std::to_string(outside) + " of " + std::to_string(corpus.size()) +
                            " essays fall outside the length band [" +
                            std::to_string(bounds.essay_min) + ", " +
                            std::to_string(bounds.essay_max) + "]";
    if (bounds.mode == LengthCheck::error) throw ValidationError(msg);
    std::cerr << "warning: " << msg << '\n';
  }
  return outside;
}

std::vector<TokenId> Batch::topics_of(std::size_t row) const {
  const auto& ids = topic_ids[row];
  return {ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(topic_lengths[row])};
}

std::vector<TokenId> Batch::essay_in_of(std::size_t row) const {
  const auto& ids = essay_ids_in[row];
  return {ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(essay_lengths[row])};
}

std::vector<TokenId> Batch::essay_out_of(std::size_t row) const {
  const auto& ids = essay_ids_out[row];
  return {ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(essay_lengths[row])};
}

std::vector<Batch> make_batches(std::span<const EncodedPair> pairs, std::size_t batch_size,
                                std::uint64_t seed) {
  if (batch_size == 0) throw ValidationError("batch size must be at least 1");
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    Batch b;
    std::size_t max_topics = 0, max_steps = 0;
    for (std::size_t k = start; k < end; ++k) {
      max_topics = std::max(max_topics, pairs[order[k]].topic_ids.size());
      max_steps = std::max(max_steps, pairs[order[k]].essay_ids.size() + 1);
    }
    for (std::size_t k = start; k < end; ++k) {
      const EncodedPair& p = pairs[order[k]];
      b.sample_indices.push_back(order[k]);

      std::vector<TokenId> topics(max_topics, kPad);
      std::vector<std::uint8_t> tmask(max_topics, 0);
      std::copy(p.topic_ids.begin(), p.topic_ids.end(), topics.begin());
      std::fill_n(tmask.begin(), p.topic_ids.size(), 1);

      const std::size_t steps = p.essay_ids.size() + 1;
      std::vector<TokenId> in(max_steps, kPad), out(max_steps, kPad);
      std::vector<std::uint8_t> emask(max_steps, 0);
      in[0] = kBos;
      std::copy(p.essay_ids.begin(), p.essay_ids.end(), in.begin() + 1);
      std::copy(p.essay_ids.begin(), p.essay_ids.end(), out.begin());
      out[steps - 1] = kEos;
      std::fill_n(emask.begin(), steps, 1);

      b.topic_ids.push_back(std::move(topics));
      b.topic_lengths.push_back(p.topic_ids.size());
      b.topic_mask.push_back(std::move(tmask));
      b.essay_ids_in.push_back(std::move(in));
      b.essay_ids_out.push_back(std::move(out));
      b.essay_lengths.push_back(steps);
      b.essay_mask.push_back(std::move(emask));
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

std::size_t load_pretrained_embeddings(const std::filesystem::path& path, const Vocabulary& vocab,
                                       Matrix& word_vectors) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read embedding file " + path.string());
  std::string line;
  std::size_t lineno = 0, copied = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string token;
    if (!(ss >> token)) continue;
    std::vector<double> values;
    double v;
    while (ss >> v) values.push_back(v);
    if (!ss.eof()) throw ParseError(path.string(), lineno, "non-numeric embedding component");
    if (static_cast<Eigen::Index>(values.size()) != word_vectors.cols())
      throw ParseError(path.string(), lineno,
                       "expected " + std::to_string(word_vectors.cols()) + " components, found " +
                           std::to_string(values.size()));
    if (!vocab.contains(token)) continue;
    const TokenId id = vocab.id(token);
    for (std::size_t k = 0; k < values.size(); ++k)
      word_vectors(id, static_cast<Eigen::Index>(k)) = values[k];
    ++copied;
  }
  return copied;
}

}  // namespace tegke
