#include "harness.hpp"

#include <algorithm>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "tegke/cli.hpp"
#include "tempdir.hpp"

namespace tegke::testing {

std::unique_ptr<ToySetup> toy_setup(std::size_t n, std::uint64_t corpus_seed, const TrainConfig& config) {
  auto s = std::make_unique<ToySetup>();
  s->config = config;
  const ToyCorpus corpus = toy_corpus(n, corpus_seed);
  s->vocab = build_vocab(corpus.pairs, static_cast<std::size_t>(config.vocab_max));
  const TripleStore store(corpus.triples);
  std::vector<TopicGraph> graphs;
  for (const auto& p : corpus.pairs)
    graphs.push_back(extract_topic_graph(store, p.topics, config.hops_max, config.per_hop));
  s->relations = RelationVocabulary::from_graphs(graphs);
  s->data = make_training_data(corpus.pairs, std::move(graphs), s->vocab);
  return s;
}

namespace {

// Relative error over the concatenation of several parameters' gradients.
double group_error(const std::vector<Parameter*>& params, const std::function<double()>& loss,
                   const std::function<void()>& backprop) {
  for (Parameter* p : params) p->zero_grad();
  backprop();
  std::vector<Matrix> analytic;
  for (Parameter* p : params) analytic.push_back(p->grad);
  double diff = 0.0, a_norm = 0.0, n_norm = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& x = params[k]->value;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double keep = x.data()[i];
      x.data()[i] = keep + 1e-5;
      const double up = loss();
      x.data()[i] = keep - 1e-5;
      const double down = loss();
      x.data()[i] = keep;
      const double num = (up - down) / 2e-5;
      const double an = analytic[k].data()[i];
      diff += (an - num) * (an - num);
      a_norm += an * an;
      n_norm += num * num;
    }
  }
  return std::sqrt(diff) / std::max({std::sqrt(a_norm), std::sqrt(n_norm), 1e-8});
}

}  // namespace

GradientErrors full_model_gradient_errors(std::uint64_t seed) {
  TrainConfig cfg = micro_config();
  cfg.seed = seed;
  const auto setup = toy_setup(2, seed, cfg);
  TegkeModel model(cfg, setup->vocab, setup->relations);
  std::mt19937_64 rng(seed);
  // Move away from the symmetric initialisation so every path carries signal.
  for (Parameter* p : model.params().all()) p->value += random_matrix(p->value.rows(), p->value.cols(), rng, 0.3);

  const EncodedPair& e = setup->data.encoded[0];
  const TopicGraph& graph = setup->data.graphs[0];
  std::vector<TokenId> in{kBos}, out(e.essay_ids);
  in.insert(in.end(), e.essay_ids.begin(), e.essay_ids.end());
  out.push_back(kEos);
  const RowVector eps1 = standard_normal(cfg.d_z, rng), eps2 = standard_normal(cfg.d_z, rng);
  const Matrix real = one_hot_rows(out, static_cast<Eigen::Index>(setup->vocab.size()));
  const double alpha = std::uniform_real_distribution<double>(0.0, 1.0)(rng);

  auto forward = [&](ad::Tape& t) { return model.forward_teacher(t, e.topic_ids, in, out, graph, eps1, eps2); };
  auto value_of = [&](auto pick) {
    return [&, pick] {
      ad::Tape t;
      t.set_no_grad(true);
      return pick(t).scalar();
    };
  };
  auto backprop_of = [&](auto pick) {
    return [&, pick] {
      ad::Tape t;
      t.backward(pick(t));
    };
  };

  auto params = [&](std::initializer_list<ParamGroup> groups) {
    std::vector<Parameter*> out_params;
    for (ParamGroup g : groups)
      for (Parameter* p : model.params().group(g)) out_params.push_back(p);
    return out_params;
  };

  GradientErrors err;
  auto rec = [&](ad::Tape& t) { return forward(t).l_rec; };
  err.l_rec = group_error(params({ParamGroup::main}), value_of(rec), backprop_of(rec));

  auto trans = [&](ad::Tape& t) { return forward(t).l_trans; };
  err.l_trans = group_error(params({ParamGroup::student}), value_of(trans), backprop_of(trans));

  // Generated rows fixed at their current values while the critic varies.
  Matrix generated;
  {
    ad::Tape t;
    t.set_no_grad(true);
    generated = forward(t).decoded.prob_rows.value();
  }
  auto critic = [&](ad::Tape& t) {
    return critic_loss(t, model.critic(), e.topic_ids, real, generated, alpha, cfg.lambda_gp).loss;
  };
  err.l_d = group_error(params({ParamGroup::critic}), value_of(critic), backprop_of(critic));

  auto adv = [&](ad::Tape& t) {
    t.freeze(ParamGroup::critic);
    TrainingForward f = forward(t);
    return generator_adv_loss(model.critic().score(t, e.topic_ids, f.decoded.prob_rows), ad::neg(f.l_rec), cfg.beta);
  };
  err.l_adv = group_error(params({ParamGroup::main}), value_of(adv), backprop_of(adv));
  return err;
}

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "tegke");
  return cli::run(args);
}

PipelineResult run_pipeline(const std::filesystem::path& dir, const TrainConfig& config, std::size_t pairs,
                            std::uint64_t corpus_seed) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const ToyCorpus corpus = toy_corpus(pairs, corpus_seed);
  const fs::path corpus_path = dir / "corpus.jsonl", triples_path = dir / "triples.tsv";
  save_corpus(corpus_path, corpus.pairs);
  {
    std::ofstream t(triples_path);
    for (const auto& tr : corpus.triples) t << tr.head << '\t' << tr.relation << '\t' << tr.tail << '\t' << tr.weight << '\n';
  }
  TrainConfig c = config;
  c.corpus = corpus_path.string();
  c.triples = triples_path.string();
  c.vocab = (dir / "vocab.txt").string();
  c.graph_dir = (dir / "graphs").string();
  {
    std::ofstream cfg(dir / "config.json");
    cfg << config_to_json(c).dump(2) << '\n';
  }
  const std::string cfg = (dir / "config.json").string();
  const std::string ckdir = (dir / "checkpoints").string();
  const std::string topics = corpus.pairs[0].topics[0] + "," + corpus.pairs[0].topics[1];

  const std::vector<std::pair<std::string, std::vector<std::string>>> steps = {
      {"build-vocab", {"build-vocab", "--config", cfg, "--out", c.vocab}},
      {"build-graph", {"build-graph", "--config", cfg, "--out-dir", c.graph_dir}},
      {"train", {"train", "--config", cfg, "--stage", "all", "--checkpoint-dir", ckdir}},
      {"generate", {"generate", "--checkpoint", ckdir + "/latest.ckpt", "--topics", topics, "--seed", "5", "--out",
                    (dir / "essay.jsonl").string()}},
      {"dump-attention", {"dump-attention", "--checkpoint", ckdir + "/latest.ckpt", "--topics", topics, "--out",
                          (dir / "attention.json").string()}},
      {"evaluate", {"evaluate", "--checkpoint", ckdir + "/latest.ckpt", "--test", c.corpus, "--train-ref", c.corpus,
                    "--report", (dir / "report.json").string()}},
  };
  PipelineResult result;
  for (const auto& [name, args] : steps) {
    if (run_cli(args) != cli::kExitOk) {
      result.failed_command = name;
      return result;
    }
  }
  result.ok = true;
  result.outputs["vocab"] = read_file(c.vocab);
  result.outputs["essay"] = read_file(dir / "essay.jsonl");
  result.outputs["attention"] = read_file(dir / "attention.json");
  result.outputs["report"] = read_file(dir / "report.json");
  result.outputs["log"] = read_file(fs::path(ckdir) / "train_log.jsonl");
  result.outputs["checkpoint"] = read_file(fs::path(ckdir) / "latest.ckpt");
  result.outputs["graph0"] = read_file(graph_cache_path(c.graph_dir, 0));
  return result;
}

}  // namespace tegke::testing
