#pragma once

// Commonsense triple store and per-sample multi-hop topic graphs.

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <tuple>
#include <vector>

namespace tegke {

struct Triple {
  std::string head;
  std::string relation;
  std::string tail;
  double weight = 1.0;

  bool operator==(const Triple&) const = default;
};

// Immutable after construction. Triples are kept sorted by (head, relation,
// tail); duplicates collapse to the maximum weight.
class TripleStore {
 public:
  TripleStore() = default;
  explicit TripleStore(std::vector<Triple> triples);

  std::size_t size() const { return triples_.size(); }
  const std::vector<Triple>& triples() const { return triples_; }
  // Indices into triples() touching `token` as head / as tail.
  std::span<const std::size_t> outgoing(const std::string& token) const;
  std::span<const std::size_t> incoming(const std::string& token) const;
  bool has_node(const std::string& token) const;

 private:
  std::vector<Triple> triples_;
  std::map<std::string, std::vector<std::size_t>> by_head_;
  std::map<std::string, std::vector<std::size_t>> by_tail_;
};

// TSV rows "head\trelation\ttail[\tweight]"; weight defaults to 1.0.
TripleStore load_triples(const std::filesystem::path& path);

struct GraphNode {
  std::string token;
  int hop = 0;

  bool operator==(const GraphNode&) const = default;
};

struct GraphEdge {
  int head = 0;
  int relation = 0;
  int tail = 0;

  bool operator==(const GraphEdge&) const = default;
  auto operator<=>(const GraphEdge&) const = default;
};

// Relations [0, K) are originals and relation K + i reverses relation i.
// Edges [0, E) are originals and edge E + i reverses edge i.
struct TopicGraph {
  std::vector<GraphNode> nodes;
  std::vector<std::string> relations;
  std::vector<GraphEdge> edges;
  std::vector<int> topic_indices;

  std::size_t original_relation_count() const { return relations.size() / 2; }
  std::size_t original_edge_count() const { return edges.size() / 2; }
  bool is_reversed(int relation) const {
    return static_cast<std::size_t>(relation) >= original_relation_count();
  }

  // Throws ValidationError when indices dangle or the reversal layout is broken.
  void check() const;

  bool operator==(const TopicGraph&) const = default;
};

inline std::string reversed_relation_name(const std::string& relation) { return relation + "_r"; }

// Breadth-first expansion from the topic words over the undirected triple
// graph. At hop h the unseen neighbours of hop h-1 nodes are ranked by the
// largest weight of a triple linking them to hop h-1 (descending, then
// lexicographic) and cut to `per_hop`. Every store triple between two kept
// nodes becomes an edge, and each edge gains its reversed twin.
TopicGraph extract_topic_graph(const TripleStore& store, std::span<const std::string> topics,
                               int hops_max, int per_hop);

inline constexpr int kGraphFormatVersion = 1;

std::string graph_to_json(const TopicGraph& graph);
TopicGraph graph_from_json(const std::string& text);
void save_graph(const std::filesystem::path& path, const TopicGraph& graph);
TopicGraph load_graph(const std::filesystem::path& path);

// Cache file name used for corpus sample `index` inside a graph directory.
std::filesystem::path graph_cache_path(const std::filesystem::path& dir, std::size_t index);

}  // namespace tegke
