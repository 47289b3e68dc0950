#include "tegke/evalx.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "tegke/errors.hpp"

namespace tegke {
namespace {

using Gram = std::vector<std::string>;

std::map<Gram, int> count_ngrams(const Tokens& tokens, int n) {
  std::map<Gram, int> counts;
  const auto len = static_cast<int>(tokens.size());
  for (int i = 0; i + n <= len; ++i) ++counts[Gram(tokens.begin() + i, tokens.begin() + i + n)];
  return counts;
}

std::set<std::pair<std::string, std::string>> bigram_set(const Tokens& tokens) {
  std::set<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i) out.emplace(tokens[i], tokens[i + 1]);
  return out;
}

double lookup(const std::vector<std::pair<std::string, double>>& sorted, const std::string& term, double fallback) {
  auto it = std::lower_bound(sorted.begin(), sorted.end(), term,
                             [](const auto& entry, const std::string& t) { return entry.first < t; });
  return it != sorted.end() && it->first == term ? it->second : fallback;
}

double norm_of(const std::vector<std::pair<std::string, double>>& v) {
  double sq = 0.0;
  for (const auto& [t, w] : v) sq += w * w;
  return std::sqrt(sq);
}

}  // namespace

double sentence_bleu(const Tokens& candidate, const Tokens& reference, int max_n) {
  if (max_n < 1) throw ValidationError("BLEU order must be at least 1");
  if (candidate.empty()) return 0.0;
  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    const auto cand = count_ngrams(candidate, n);
    const auto ref = count_ngrams(reference, n);
    double clipped = 0.0, total = 0.0;
    for (const auto& [gram, c] : cand) {
      total += c;
      auto it = ref.find(gram);
      if (it != ref.end()) clipped += std::min(c, it->second);
    }
    if (n >= 2) {
      clipped += 1.0;
      total += 1.0;
    }
    if (clipped == 0.0) return 0.0;
    log_sum += std::log(clipped / total);
  }
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(reference.size());
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return 100.0 * bp * std::exp(log_sum / max_n);
}

double bleu(std::span<const Tokens> candidates, std::span<const Tokens> references, int max_n) {
  if (candidates.size() != references.size())
    throw ValidationError("BLEU needs one reference per candidate");
  if (candidates.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) total += sentence_bleu(candidates[i], references[i], max_n);
  return total / static_cast<double>(candidates.size());
}

double dist_n(std::span<const Tokens> candidates, int n) {
  if (n < 1) throw ValidationError("Dist-n order must be at least 1");
  std::set<Gram> distinct;
  std::size_t total = 0;
  for (const auto& c : candidates) {
    for (const auto& [gram, count] : count_ngrams(c, n)) {
      distinct.insert(gram);
      total += static_cast<std::size_t>(count);
    }
  }
  return total == 0 ? 0.0 : 100.0 * static_cast<double>(distinct.size()) / static_cast<double>(total);
}

NoveltyIndex::NoveltyIndex(std::vector<Tokens> topics, std::vector<Tokens> essays)
    : topics_(std::move(topics)), essays_(std::move(essays)) {
  if (topics_.empty()) throw ValidationError("novelty index needs at least one training sample");
  if (topics_.size() != essays_.size()) throw ValidationError("novelty index topics and essays differ in count");
  std::map<std::string, int> df;
  for (const auto& t : topics_)
    for (const auto& term : std::set<std::string>(t.begin(), t.end())) ++df[term];
  const double n = static_cast<double>(topics_.size());
  for (const auto& [term, d] : df) idf_.emplace_back(term, std::log((1.0 + n) / (1.0 + d)) + 1.0);
  for (const auto& t : topics_) vectors_.push_back(weigh(t));
}

std::vector<std::pair<std::string, double>> NoveltyIndex::weigh(const Tokens& topics) const {
  std::map<std::string, int> tf;
  for (const auto& term : topics) ++tf[term];
  const double unseen = std::log(1.0 + static_cast<double>(topics_.size())) + 1.0;
  std::vector<std::pair<std::string, double>> v;
  for (const auto& [term, count] : tf) v.emplace_back(term, count * lookup(idf_, term, unseen));
  return v;
}

double NoveltyIndex::cosine(const Tokens& topics, std::size_t i) const {
  const auto q = weigh(topics);
  const auto& d = vectors_.at(i);
  const double denom = norm_of(q) * norm_of(d);
  if (denom == 0.0) return 0.0;
  double dot = 0.0;
  for (const auto& [term, w] : q) dot += w * lookup(d, term, 0.0);
  return dot / denom;
}

std::vector<std::size_t> NoveltyIndex::retrieve(const Tokens& topics, std::size_t k) const {
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t i = 0; i < topics_.size(); ++i) scored.emplace_back(cosine(topics, i), i);
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < std::min(k, scored.size()); ++i) out.push_back(scored[i].second);
  return out;
}

double bigram_overlap(const Tokens& candidate, const Tokens& reference) {
  const auto c = bigram_set(candidate);
  const auto r = bigram_set(reference);
  std::size_t shared = 0;
  for (const auto& g : c) shared += r.count(g);
  return static_cast<double>(shared) / static_cast<double>(std::max<std::size_t>(1, c.size()));
}

double novelty(const Tokens& candidate, const Tokens& topics, const NoveltyIndex& index, std::size_t k) {
  if (k == 0) throw ValidationError("novelty retrieval size must be positive");
  double best = 0.0;
  for (std::size_t i : index.retrieve(topics, k)) best = std::max(best, bigram_overlap(candidate, index.essay(i)));
  return 100.0 * (1.0 - best);
}

MetricReport evaluate_samples(std::span<const EvalSample> samples, const NoveltyIndex& index, std::size_t k) {
  MetricReport r;
  r.sample_count = samples.size();
  if (samples.empty()) return r;
  std::vector<Tokens> cands, refs;
  double nov = 0.0;
  for (const auto& s : samples) {
    cands.push_back(s.candidate);
    refs.push_back(s.reference);
    nov += novelty(s.candidate, s.topics, index, k);
  }
  r.bleu = bleu(cands, refs);
  r.dist1 = dist_n(cands, 1);
  r.dist2 = dist_n(cands, 2);
  r.novelty = nov / static_cast<double>(samples.size());
  return r;
}

nlohmann::json report_to_json(const MetricReport& r) {
  return {{"bleu", r.bleu}, {"dist1", r.dist1}, {"dist2", r.dist2}, {"novelty", r.novelty},
          {"sample_count", r.sample_count}};
}

MetricReport report_from_json(const nlohmann::json& j) {
  MetricReport r;
  r.bleu = j.at("bleu").get<double>();
  r.dist1 = j.at("dist1").get<double>();
  r.dist2 = j.at("dist2").get<double>();
  r.novelty = j.at("novelty").get<double>();
  r.sample_count = j.at("sample_count").get<std::size_t>();
  return r;
}

}  // namespace tegke
