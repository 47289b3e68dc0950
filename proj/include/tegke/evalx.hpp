#pragma once

// Automatic essay metrics: sentence BLEU, Dist-n and Novelty against
// topic-similar training essays. All scores are on a 0-100 scale.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace tegke {

using Tokens = std::vector<std::string>;

// Mean over samples of sentence BLEU: clipped n-gram precision for orders
// 1..max_n, add-one smoothing for orders >= 2, geometric mean, brevity
// penalty. An empty candidate scores 0.
double bleu(std::span<const Tokens> candidates, std::span<const Tokens> references, int max_n = 4);
double sentence_bleu(const Tokens& candidate, const Tokens& reference, int max_n = 4);

// Distinct n-grams over total n-grams across all candidates; 0 when there are
// no n-grams at all.
double dist_n(std::span<const Tokens> candidates, int n);

// TF-IDF index over the topic words of the training set.
class NoveltyIndex {
 public:
  NoveltyIndex(std::vector<Tokens> topics, std::vector<Tokens> essays);

  std::size_t size() const { return essays_.size(); }
  // Indices of the k most topic-similar training samples, best first, ties
  // broken by lower index.
  std::vector<std::size_t> retrieve(const Tokens& topics, std::size_t k) const;
  const Tokens& essay(std::size_t i) const { return essays_.at(i); }
  double cosine(const Tokens& topics, std::size_t i) const;

 private:
  std::vector<std::pair<std::string, double>> weigh(const Tokens& topics) const;

  std::vector<Tokens> topics_;
  std::vector<Tokens> essays_;
  std::vector<std::vector<std::pair<std::string, double>>> vectors_;  // sorted by term
  std::vector<std::pair<std::string, double>> idf_;                   // sorted by term
};

// |distinct bigrams(c) & bigrams(r)| / max(1, |distinct bigrams(c)|)
double bigram_overlap(const Tokens& candidate, const Tokens& reference);

// 100 * (1 - max overlap with the k retrieved essays).
double novelty(const Tokens& candidate, const Tokens& topics, const NoveltyIndex& index, std::size_t k = 10);

struct MetricReport {
  double bleu = 0.0;
  double dist1 = 0.0;
  double dist2 = 0.0;
  double novelty = 0.0;
  std::size_t sample_count = 0;

  bool operator==(const MetricReport&) const = default;
};

struct EvalSample {
  Tokens topics;
  Tokens candidate;
  Tokens reference;
};

MetricReport evaluate_samples(std::span<const EvalSample> samples, const NoveltyIndex& index, std::size_t k = 10);

nlohmann::json report_to_json(const MetricReport& report);
MetricReport report_from_json(const nlohmann::json& j);

}  // namespace tegke
