#include "tegke/kgraph.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "tegke/errors.hpp"

namespace tegke {

using nlohmann::json;

TripleStore::TripleStore(std::vector<Triple> triples) {
  std::map<std::tuple<std::string, std::string, std::string>, double> unique;
  for (auto& t : triples) {
    if (!(t.weight >= 0.0) || !std::isfinite(t.weight))
      throw ValidationError("triple weight must be a finite non-negative number");
    auto key = std::make_tuple(t.head, t.relation, t.tail);
    auto [it, inserted] = unique.emplace(std::move(key), t.weight);
    if (!inserted) it->second = std::max(it->second, t.weight);
  }
  triples_.reserve(unique.size());
  for (auto& [key, w] : unique)
    triples_.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), w});
  for (std::size_t i = 0; i < triples_.size(); ++i) {
    by_head_[triples_[i].head].push_back(i);
    by_tail_[triples_[i].tail].push_back(i);
  }
}

std::span<const std::size_t> TripleStore::outgoing(const std::string& token) const {
  auto it = by_head_.find(token);
  if (it == by_head_.end()) return {};
  return it->second;
}

std::span<const std::size_t> TripleStore::incoming(const std::string& token) const {
  auto it = by_tail_.find(token);
  if (it == by_tail_.end()) return {};
  return it->second;
}

bool TripleStore::has_node(const std::string& token) const {
  return by_head_.count(token) > 0 || by_tail_.count(token) > 0;
}

TripleStore load_triples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read triples file " + path.string());
  std::vector<Triple> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 3 && fields.size() != 4)
      throw ParseError(path.string(), lineno, "expected head<TAB>relation<TAB>tail[<TAB>weight]");
    for (std::size_t k = 0; k < 3; ++k)
      if (fields[k].empty()) throw ParseError(path.string(), lineno, "empty triple field");
    Triple t{fields[0], fields[1], fields[2], 1.0};
    if (fields.size() == 4) {
      const std::string& w = fields[3];
      auto [ptr, ec] = std::from_chars(w.data(), w.data() + w.size(), t.weight);
      if (ec != std::errc() || ptr != w.data() + w.size() || !std::isfinite(t.weight) || t.weight < 0)
        throw ParseError(path.string(), lineno, "weight must be a non-negative number, got '" + w + "'");
    }
    rows.push_back(std::move(t));
  }
  return TripleStore(std::move(rows));
}

void TopicGraph::check() const {
  const int n = static_cast<int>(nodes.size());
  const int r = static_cast<int>(relations.size());
  if (relations.size() % 2 != 0) throw ValidationError("graph relation list must pair originals with reversals");
  if (edges.size() % 2 != 0) throw ValidationError("graph edge list must pair originals with reversals");
  for (const auto& e : edges)
    if (e.head < 0 || e.head >= n || e.tail < 0 || e.tail >= n || e.relation < 0 || e.relation >= r)
      throw ValidationError("graph edge refers to a missing node or relation");
  const std::size_t k = original_relation_count();
  for (std::size_t i = 0; i < k; ++i)
    if (relations[k + i] != reversed_relation_name(relations[i]))
      throw ValidationError("relation " + std::to_string(k + i) + " is not the reversal of " +
                            std::to_string(i));
  const std::size_t m = original_edge_count();
  for (std::size_t i = 0; i < m; ++i) {
    const GraphEdge& a = edges[i];
    const GraphEdge& b = edges[m + i];
    if (is_reversed(a.relation) || b.head != a.tail || b.tail != a.head ||
        b.relation != a.relation + static_cast<int>(k))
      throw ValidationError("edge " + std::to_string(m + i) + " is not the reversal of edge " +
                            std::to_string(i));
  }
  for (int t : topic_indices)
    if (t < 0 || t >= n || nodes[static_cast<std::size_t>(t)].hop != 0)
      throw ValidationError("topic index must point at a hop-0 node");
}

TopicGraph extract_topic_graph(const TripleStore& store, std::span<const std::string> topics,
                               int hops_max, int per_hop) {
  if (topics.empty()) throw ValidationError("topic graph needs at least one topic");
  if (hops_max < 0) throw ValidationError("hops_max must be non-negative");
  if (per_hop < 1) throw ValidationError("per_hop must be at least 1");

  TopicGraph g;
  std::unordered_map<std::string, int> index;
  auto add_node = [&](const std::string& token, int hop) {
    index.emplace(token, static_cast<int>(g.nodes.size()));
    g.nodes.push_back({token, hop});
  };
  for (const auto& t : topics) {
    if (index.count(t)) continue;
    g.topic_indices.push_back(static_cast<int>(g.nodes.size()));
    add_node(t, 0);
  }

  std::vector<std::string> frontier;
  for (int i : g.topic_indices) frontier.push_back(g.nodes[static_cast<std::size_t>(i)].token);

  for (int hop = 1; hop <= hops_max && !frontier.empty(); ++hop) {
    std::map<std::string, double> best;  // candidate -> strongest link to the frontier
    auto offer = [&](const std::string& token, double w) {
      if (index.count(token)) return;
      auto [it, inserted] = best.emplace(token, w);
      if (!inserted) it->second = std::max(it->second, w);
    };
    for (const auto& u : frontier) {
      for (std::size_t i : store.outgoing(u)) offer(store.triples()[i].tail, store.triples()[i].weight);
      for (std::size_t i : store.incoming(u)) offer(store.triples()[i].head, store.triples()[i].weight);
    }
    std::vector<std::pair<std::string, double>> ranked(best.begin(), best.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    if (ranked.size() > static_cast<std::size_t>(per_hop)) ranked.resize(static_cast<std::size_t>(per_hop));
    frontier.clear();
    for (const auto& [token, w] : ranked) {
      add_node(token, hop);
      frontier.push_back(token);
    }
  }

  std::vector<std::size_t> kept;
  std::set<std::string> relation_names;
  for (std::size_t i = 0; i < store.triples().size(); ++i) {
    const Triple& t = store.triples()[i];
    if (index.count(t.head) && index.count(t.tail)) {
      kept.push_back(i);
      relation_names.insert(t.relation);
    }
  }
  g.relations.assign(relation_names.begin(), relation_names.end());
  const int k = static_cast<int>(g.relations.size());
  for (int i = 0; i < k; ++i) g.relations.push_back(reversed_relation_name(g.relations[static_cast<std::size_t>(i)]));
  std::unordered_map<std::string, int> rel_index;
  for (int i = 0; i < k; ++i) rel_index.emplace(g.relations[static_cast<std::size_t>(i)], i);

  for (std::size_t i : kept) {
    const Triple& t = store.triples()[i];
    g.edges.push_back({index.at(t.head), rel_index.at(t.relation), index.at(t.tail)});
  }
  const std::size_t m = g.edges.size();
  for (std::size_t i = 0; i < m; ++i) {
    const GraphEdge e = g.edges[i];
    g.edges.push_back({e.tail, e.relation + k, e.head});
  }
  return g;
}

std::string graph_to_json(const TopicGraph& graph) {
  json j;
  j["version"] = kGraphFormatVersion;
  j["nodes"] = json::array();
  for (const auto& n : graph.nodes) j["nodes"].push_back({{"token", n.token}, {"hop", n.hop}});
  j["relations"] = graph.relations;
  j["edges"] = json::array();
  for (const auto& e : graph.edges) j["edges"].push_back({e.head, e.relation, e.tail});
  j["topic_indices"] = graph.topic_indices;
  return j.dump();
}

TopicGraph graph_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("graph file is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("version"))
    throw ValidationError("graph file has no version field");
  const int version = j["version"].get<int>();
  if (version != kGraphFormatVersion)
    throw ValidationError("graph file version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kGraphFormatVersion) + ")");
  TopicGraph g;
  try {
    for (const auto& n : j.at("nodes")) g.nodes.push_back({n.at("token").get<std::string>(), n.at("hop").get<int>()});
    g.relations = j.at("relations").get<std::vector<std::string>>();
    for (const auto& e : j.at("edges")) {
      if (!e.is_array() || e.size() != 3) throw ValidationError("graph edge must be [head, relation, tail]");
      g.edges.push_back({e[0].get<int>(), e[1].get<int>(), e[2].get<int>()});
    }
    g.topic_indices = j.at("topic_indices").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed graph file: ") + e.what());
  }
  g.check();
  return g;
}

void save_graph(const std::filesystem::path& path, const TopicGraph& graph) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write graph file " + path.string());
  out << graph_to_json(graph) << '\n';
}

TopicGraph load_graph(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read graph file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return graph_from_json(ss.str());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

std::filesystem::path graph_cache_path(const std::filesystem::path& dir, std::size_t index) {
  char name[32];
  std::snprintf(name, sizeof name, "graph_%06zu.json", index);
  return dir / name;
}

}  // namespace tegke
