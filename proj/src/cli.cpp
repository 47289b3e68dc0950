#include "tegke/cli.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tegke/errors.hpp"
#include "tegke/evalx.hpp"
#include "tegke/trainer.hpp"

namespace tegke::cli {
namespace {

using nlohmann::json;

std::vector<std::string> split_topics(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (ch == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (ch != ' ' && ch != '\t') {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  if (out.empty() || out.size() > 5) throw ValidationError("--topics needs 1 to 5 comma-separated words");
  return out;
}

std::string flag_name(const char* field) {
  std::string s = std::string("--") + field;
  for (char& c : s)
    if (c == '_') c = '-';
  return s;
}

template <class T>
T parse_number(const std::string& flag, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw ValidationError(flag + ": '" + text + "' is not a valid number");
  return value;
}

// One string-valued option per config field; applied only when given.
class ConfigFlags {
 public:
  void attach(CLI::App& app) {
    TrainConfig dummy;
    TrainConfig::visit(dummy, [&](const char* name, auto&) {
      app.add_option(flag_name(name), values_[name], std::string("override config field ") + name);
    });
    app_ = &app;
  }

  void apply(TrainConfig& config) const {
    TrainConfig::visit(config, [&](const char* name, auto& field) {
      const std::string flag = flag_name(name);
      if (app_->count(flag) == 0) return;
      const std::string& text = values_.at(name);
      using T = std::decay_t<decltype(field)>;
      if constexpr (std::is_same_v<T, std::string>)
        field = text;
      else
        field = parse_number<T>(flag, text);
    });
  }

 private:
  CLI::App* app_ = nullptr;
  std::map<std::string, std::string> values_;
};

TrainConfig base_config(const std::string& config_path) {
  if (!config_path.empty()) return load_config(config_path);
  if (const char* env = std::getenv("TEGKE_CONFIG"); env != nullptr && *env != '\0') return load_config(env);
  return {};
}

std::ofstream open_out(const std::string& path) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  auto out = open_out(path);
  out << text;
}

// Graph for a topic list: an explicit graph file, else extraction from the
// triple store, else topic nodes alone.
class GraphSource {
 public:
  GraphSource(const std::string& triples, int hops, int per_hop) : hops_(hops), per_hop_(per_hop) {
    if (!triples.empty()) store_ = load_triples(triples);
  }
  TopicGraph operator()(std::span<const std::string> topics) const {
    if (store_) return extract_topic_graph(*store_, topics, hops_, per_hop_);
    return isolated_graph(topics);
  }

 private:
  std::optional<TripleStore> store_;
  int hops_;
  int per_hop_;
};

std::vector<TokenId> topic_ids(std::span<const std::string> topics, const Vocabulary& vocab) {
  std::vector<TokenId> ids;
  for (const auto& t : topics) ids.push_back(vocab.id(t));
  return ids;
}

json essay_json(std::span<const std::string> topics, const std::vector<std::string>& essay) {
  return {{"topics", std::vector<std::string>(topics.begin(), topics.end())}, {"essay", join_tokens(essay)}};
}

struct Loaded {
  Checkpoint checkpoint;
  std::unique_ptr<TegkeModel> model;
};

Loaded load_model(const std::string& path) {
  Loaded l;
  l.checkpoint = load_checkpoint(path);
  l.model = model_from_checkpoint(l.checkpoint);
  return l;
}

// ---- build-vocab ---------------------------------------------------------

struct VocabArgs {
  std::string config, corpus, out;
  int max_size = 0;
};

int build_vocab_cmd(const VocabArgs& a, CLI::App& app) {
  TrainConfig c = base_config(a.config);
  if (app.count("--corpus")) c.corpus = a.corpus;
  if (app.count("--max-size")) c.vocab_max = a.max_size;
  if (c.corpus.empty()) throw ValidationError("build-vocab needs --corpus");
  const auto pairs = load_corpus(c.corpus);
  const Vocabulary vocab = build_vocab(pairs, static_cast<std::size_t>(c.vocab_max));
  vocab.save(a.out);
  std::cerr << "vocabulary: " << vocab.size() << " tokens, digest " << vocab.digest() << "\n";
  return kExitOk;
}

// ---- build-graph ---------------------------------------------------------

struct GraphArgs {
  std::string config, triples, corpus, out_dir;
  int hops = 0, per_hop = 0;
};

int build_graph_cmd(const GraphArgs& a, CLI::App& app) {
  TrainConfig c = base_config(a.config);
  if (app.count("--triples")) c.triples = a.triples;
  if (app.count("--corpus")) c.corpus = a.corpus;
  if (app.count("--hops")) c.hops_max = a.hops;
  if (app.count("--per-hop")) c.per_hop = a.per_hop;
  if (c.triples.empty() || c.corpus.empty()) throw ValidationError("build-graph needs --triples and --corpus");
  const TripleStore store = load_triples(c.triples);
  const auto pairs = load_corpus(c.corpus);
  std::filesystem::create_directories(a.out_dir);
  for (std::size_t i = 0; i < pairs.size(); ++i)
    save_graph(graph_cache_path(a.out_dir, i), extract_topic_graph(store, pairs[i].topics, c.hops_max, c.per_hop));
  std::cerr << "wrote " << pairs.size() << " graphs to " << a.out_dir << "\n";
  return kExitOk;
}

// ---- train ---------------------------------------------------------------

struct TrainArgs {
  std::string config, stage = "all", checkpoint_dir, log;
  bool resume = false;
  ConfigFlags overrides;
};

int train_cmd(TrainArgs& a) {
  const std::filesystem::path dir(a.checkpoint_dir);
  const std::filesystem::path latest = dir / "latest.ckpt";
  const bool resume = a.resume || a.stage == "2";

  std::unique_ptr<TegkeModel> model;
  std::optional<Checkpoint> start;
  TrainConfig config;
  if (resume) {
    if (!std::filesystem::exists(latest))
      throw ValidationError("nothing to resume: " + latest.string() + " does not exist");
    start = load_checkpoint(latest);
    config = start->config;
    if (!a.config.empty()) config = load_config(a.config);
    a.overrides.apply(config);
    Checkpoint merged = *start;
    merged.config = config;
    model = model_from_checkpoint(merged);
  } else {
    config = base_config(a.config);
    a.overrides.apply(config);
    config.validate();
  }

  Vocabulary vocab;
  if (model) {
    vocab = model->vocab();
  } else if (!config.vocab.empty()) {
    vocab = Vocabulary::load(config.vocab);
  } else {
    if (config.corpus.empty()) throw ValidationError("no corpus configured");
    vocab = build_vocab(load_corpus(config.corpus), static_cast<std::size_t>(config.vocab_max));
  }
  const TrainingData data = load_training_data(config, vocab);
  if (!model) model = build_model(config, vocab, RelationVocabulary::from_graphs(data.graphs));

  Trainer trainer(*model, data);
  if (start) trainer.restore(*start);

  std::filesystem::create_directories(dir);
  const std::filesystem::path log_path = a.log.empty() ? dir / "train_log.jsonl" : std::filesystem::path(a.log);
  std::ofstream log(log_path, resume ? std::ios::app : std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write training log " + log_path.string());
  TrainOptions options;
  options.checkpoint_dir = dir;
  options.on_step = [&](const StepLog& s) {
    log << step_log_json(s).dump() << "\n";
    log.flush();
  };

  if (a.stage == "1" || a.stage == "all") trainer.train_stage1(options);
  if (a.stage == "2" || a.stage == "all") trainer.train_stage2(options);
  if (!std::filesystem::exists(latest)) save_checkpoint(latest, trainer.checkpoint());
  std::cerr << "training finished at stage " << trainer.stage() << " step " << trainer.step() << "\n";
  return kExitOk;
}

// ---- generate ------------------------------------------------------------

struct GenerateArgs {
  std::string checkpoint, topics, mode = "greedy", out, triples, graph;
  int max_len = 0;
  std::uint64_t seed = 1;
};

int generate_cmd(const GenerateArgs& a) {
  const Loaded l = load_model(a.checkpoint);
  const TrainConfig& c = l.model->config();
  const auto topics = split_topics(a.topics);
  TopicGraph graph;
  if (!a.graph.empty()) {
    graph = load_graph(a.graph);
  } else {
    graph = GraphSource(a.triples.empty() ? c.triples : a.triples, c.hops_max, c.per_hop)(topics);
  }
  const int max_len = a.max_len > 0 ? a.max_len : c.max_len;
  const DecoderTrace trace =
      l.model->generate(topic_ids(topics, l.model->vocab()), graph, parse_decode_mode(a.mode), max_len, a.seed);
  write_text(a.out, essay_json(topics, essay_tokens(trace, l.model->vocab())).dump() + "\n");
  return kExitOk;
}

// ---- evaluate ------------------------------------------------------------

struct EvaluateArgs {
  std::string checkpoint, generated, test, train_ref, report, triples, mode = "greedy";
  int max_len = 0;
  std::uint64_t seed = 1;
  std::size_t k = 10;
};

std::vector<std::vector<std::string>> read_generated(const std::string& path) {
  std::vector<std::vector<std::string>> out;
  for (const auto& p : load_corpus(path)) out.push_back(p.essay);
  return out;
}

int evaluate_cmd(const EvaluateArgs& a) {
  if (a.checkpoint.empty() == a.generated.empty())
    throw ValidationError("evaluate needs exactly one of --checkpoint or --generated");
  const auto test = load_corpus(a.test);
  const auto train = load_corpus(a.train_ref);
  std::vector<Tokens> train_topics, train_essays;
  for (const auto& p : train) {
    train_topics.push_back(p.topics);
    train_essays.push_back(p.essay);
  }
  const NoveltyIndex index(std::move(train_topics), std::move(train_essays));

  std::vector<EvalSample> samples;
  if (!a.generated.empty()) {
    const auto generated = read_generated(a.generated);
    if (generated.size() != test.size())
      throw ValidationError("generated file has " + std::to_string(generated.size()) + " essays for " +
                            std::to_string(test.size()) + " test pairs");
    for (std::size_t i = 0; i < test.size(); ++i) samples.push_back({test[i].topics, generated[i], test[i].essay});
  } else {
    const Loaded l = load_model(a.checkpoint);
    const TrainConfig& c = l.model->config();
    const GraphSource graphs(a.triples.empty() ? c.triples : a.triples, c.hops_max, c.per_hop);
    const int max_len = a.max_len > 0 ? a.max_len : c.max_len;
    const DecodeMode mode = parse_decode_mode(a.mode);
    for (std::size_t i = 0; i < test.size(); ++i) {
      const DecoderTrace trace = l.model->generate(topic_ids(test[i].topics, l.model->vocab()),
                                                   graphs(test[i].topics), mode, max_len, derive_seed(a.seed, i));
      samples.push_back({test[i].topics, essay_tokens(trace, l.model->vocab()), test[i].essay});
    }
  }
  const MetricReport report = evaluate_samples(samples, index, a.k);
  write_text(a.report, report_to_json(report).dump(2) + "\n");
  return kExitOk;
}

// ---- dump-attention ------------------------------------------------------

struct AttentionArgs {
  std::string checkpoint, topics, graph, out, triples;
  int max_len = 0;
  std::uint64_t seed = 1;
};

int dump_attention_cmd(const AttentionArgs& a) {
  const Loaded l = load_model(a.checkpoint);
  const TrainConfig& c = l.model->config();
  const auto topics = split_topics(a.topics);
  const TopicGraph graph = !a.graph.empty()
                               ? load_graph(a.graph)
                               : GraphSource(a.triples.empty() ? c.triples : a.triples, c.hops_max, c.per_hop)(topics);
  const int max_len = a.max_len > 0 ? a.max_len : c.max_len;
  const DecoderTrace trace =
      l.model->generate(topic_ids(topics, l.model->vocab()), graph, DecodeMode::greedy, max_len, a.seed);
  write_text(a.out, export_attention(trace, graph, l.model->vocab(), topics).dump(2) + "\n");
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Topic-to-essay generation with commonsense knowledge graphs", "tegke"};
  app.require_subcommand(1);

  VocabArgs vocab_args;
  auto* vocab_cmd = app.add_subcommand("build-vocab", "Build a vocabulary from a corpus");
  vocab_cmd->add_option("--config", vocab_args.config, "Config file");
  vocab_cmd->add_option("--corpus", vocab_args.corpus, "Training corpus (JSON lines)");
  vocab_cmd->add_option("--out", vocab_args.out, "Vocabulary file to write")->required();
  vocab_cmd->add_option("--max-size", vocab_args.max_size, "Vocabulary size including specials");

  GraphArgs graph_args;
  auto* graph_cmd = app.add_subcommand("build-graph", "Extract and cache one topic graph per corpus pair");
  graph_cmd->add_option("--config", graph_args.config, "Config file");
  graph_cmd->add_option("--triples", graph_args.triples, "Commonsense triples (TSV)");
  graph_cmd->add_option("--corpus", graph_args.corpus, "Corpus (JSON lines)");
  graph_cmd->add_option("--hops", graph_args.hops, "Maximum hops from the topics");
  graph_cmd->add_option("--per-hop", graph_args.per_hop, "Node budget per hop");
  graph_cmd->add_option("--out-dir", graph_args.out_dir, "Directory for graph files")->required();

  TrainArgs train_args;
  auto* train_cmd_app = app.add_subcommand("train", "Run training stage 1, 2 or both");
  train_cmd_app->add_option("--config", train_args.config, "Config file (default: $TEGKE_CONFIG)");
  train_cmd_app->add_option("--stage", train_args.stage, "1, 2 or all")
      ->check(CLI::IsMember({"1", "2", "all"}));
  train_cmd_app->add_option("--checkpoint-dir", train_args.checkpoint_dir, "Checkpoint directory")->required();
  train_cmd_app->add_flag("--resume", train_args.resume, "Continue from <checkpoint-dir>/latest.ckpt");
  train_cmd_app->add_option("--log", train_args.log, "Training log (default: <checkpoint-dir>/train_log.jsonl)");
  train_args.overrides.attach(*train_cmd_app);

  GenerateArgs gen_args;
  auto* gen_cmd = app.add_subcommand("generate", "Generate one essay for a topic set");
  gen_cmd->add_option("--checkpoint", gen_args.checkpoint, "Checkpoint file")->required();
  gen_cmd->add_option("--topics", gen_args.topics, "Comma-separated topic words")->required();
  gen_cmd->add_option("--mode", gen_args.mode, "greedy or sample")->check(CLI::IsMember({"greedy", "sample"}));
  gen_cmd->add_option("--max-len", gen_args.max_len, "Maximum essay length (default: config max_len)");
  gen_cmd->add_option("--seed", gen_args.seed, "Random seed");
  gen_cmd->add_option("--out", gen_args.out, "Output JSON lines file (default: stdout)");
  gen_cmd->add_option("--triples", gen_args.triples, "Triples for on-the-fly graph extraction");
  gen_cmd->add_option("--graph", gen_args.graph, "Precomputed graph file");

  EvaluateArgs eval_args;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score generated essays against a test set");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint to generate with");
  eval_cmd->add_option("--generated", eval_args.generated, "Pre-generated essays aligned with --test");
  eval_cmd->add_option("--test", eval_args.test, "Test corpus (JSON lines)")->required();
  eval_cmd->add_option("--train-ref", eval_args.train_ref, "Training corpus for novelty retrieval")->required();
  eval_cmd->add_option("--report", eval_args.report, "Report file (default: stdout)");
  eval_cmd->add_option("--triples", eval_args.triples, "Triples for graph extraction");
  eval_cmd->add_option("--mode", eval_args.mode, "greedy or sample")->check(CLI::IsMember({"greedy", "sample"}));
  eval_cmd->add_option("--max-len", eval_args.max_len, "Maximum essay length");
  eval_cmd->add_option("--seed", eval_args.seed, "Random seed");
  eval_cmd->add_option("--k", eval_args.k, "Training essays retrieved for novelty");

  AttentionArgs att_args;
  auto* att_cmd = app.add_subcommand("dump-attention", "Write decoder attention weights as JSON");
  att_cmd->add_option("--checkpoint", att_args.checkpoint, "Checkpoint file")->required();
  att_cmd->add_option("--topics", att_args.topics, "Comma-separated topic words")->required();
  att_cmd->add_option("--graph", att_args.graph, "Precomputed graph file");
  att_cmd->add_option("--triples", att_args.triples, "Triples for on-the-fly graph extraction");
  att_cmd->add_option("--max-len", att_args.max_len, "Maximum essay length");
  att_cmd->add_option("--seed", att_args.seed, "Random seed");
  att_cmd->add_option("--out", att_args.out, "Output file (default: stdout)");

  std::vector<char*> argv;
  std::vector<std::string> storage(args);
  for (auto& s : storage) argv.push_back(s.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*vocab_cmd) return build_vocab_cmd(vocab_args, *vocab_cmd);
    if (*graph_cmd) return build_graph_cmd(graph_args, *graph_cmd);
    if (*train_cmd_app) return train_cmd(train_args);
    if (*gen_cmd) return generate_cmd(gen_args);
    if (*eval_cmd) return evaluate_cmd(eval_args);
    if (*att_cmd) return dump_attention_cmd(att_args);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitValidation;
}

int run(int argc, char** argv) { return run(std::vector<std::string>(argv, argv + argc)); }

}  // namespace tegke::cli
