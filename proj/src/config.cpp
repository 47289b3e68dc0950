#include "tegke/config.hpp"

#include <fstream>
#include <set>

#include "tegke/errors.hpp"

namespace tegke {

using nlohmann::json;

void TrainConfig::validate() const {
  auto positive = [](const char* name, double v) {
    if (!(v > 0)) throw ValidationError(std::string("config field '") + name + "' must be positive");
  };
  positive("d_emb", d_emb);
  positive("d_enc", d_enc);
  positive("d_dec", d_dec);
  positive("d_z", d_z);
  positive("d_g", d_g);
  positive("critic_emb", critic_emb);
  positive("critic_filters", critic_filters);
  positive("vocab_max", vocab_max);
  positive("batch", batch);
  positive("hops_max", hops_max);
  positive("per_hop", per_hop);
  positive("max_len", max_len);
  positive("lambda_gp", lambda_gp);
  positive("lr_stage1", lr_stage1);
  positive("lr_stage2", lr_stage2);
  positive("lr_critic", lr_critic);
  positive("n_critic", n_critic);
  if (gcn_layers < 0) throw ValidationError("config field 'gcn_layers' must be non-negative");
  if (beta < 0) throw ValidationError("config field 'beta' must be non-negative");
  if (epochs_stage1 < 0 || epochs_stage2 < 0) throw ValidationError("epoch counts must be non-negative");
  if (clip_norm < 0) throw ValidationError("config field 'clip_norm' must be non-negative");
  if (checkpoint_every < 0) throw ValidationError("config field 'checkpoint_every' must be non-negative");
  if (vocab_max < kNumSpecials) throw ValidationError("vocab_max must leave room for the 4 special tokens");
  if (d_enc % 2 != 0) throw ValidationError("d_enc must be even (two recurrent directions)");
  if (d_enc + d_z != d_dec)
    throw ValidationError("d_enc + d_z must equal d_dec (initial decoder state is [x_enc; z1])");
  if (d_g != d_emb)
    throw ValidationError("d_g must equal d_emb (the output gate blends graph states with word embeddings)");
  if (length_check != "off" && length_check != "warn" && length_check != "error")
    throw ValidationError("length_check must be one of off, warn, error");
  if (essay_len_min < 0 || essay_len_max < essay_len_min)
    throw ValidationError("essay length band is empty");
}

LengthBounds TrainConfig::length_bounds() const {
  LengthBounds b;
  b.essay_min = static_cast<std::size_t>(essay_len_min);
  b.essay_max = static_cast<std::size_t>(essay_len_max);
  b.mode = length_check == "off" ? LengthCheck::off
           : length_check == "error" ? LengthCheck::error
                                     : LengthCheck::warn;
  return b;
}

json config_to_json(const TrainConfig& config) {
  json j = json::object();
  TrainConfig::visit(config, [&j](const char* name, const auto& field) { j[name] = field; });
  return j;
}

TrainConfig config_from_json(const json& j, TrainConfig base) {
  if (!j.is_object()) throw ValidationError("config must be a flat JSON object");
  std::set<std::string> known;
  TrainConfig::visit(base, [&](const char* name, auto& field) {
    known.insert(name);
    if (!j.contains(name)) return;
    try {
      field = j.at(name).get<std::decay_t<decltype(field)>>();
    } catch (const json::exception& e) {
      throw ValidationError(std::string("config field '") + name + "' has the wrong type: " + e.what());
    }
  });
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ValidationError("unknown config field '" + key + "'");
  return base;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": invalid JSON: " + e.what());
  }
  return config_from_json(j);
}

}  // namespace tegke
