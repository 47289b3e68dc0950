#include "tegke/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "tegke/errors.hpp"

namespace tegke {
namespace {

constexpr char kMagic[8] = {'T', 'E', 'G', 'K', 'E', 'C', 'K', '\0'};

template <class T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T read_pod(std::istream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v))
    throw ValidationError("checkpoint " + path.string() + " is truncated");
  return v;
}

std::string digest_of(const std::vector<std::string>& tokens) {
  if (tokens.size() < static_cast<std::size_t>(kNumSpecials))
    throw ValidationError("checkpoint vocabulary lacks the special tokens");
  return Vocabulary(std::vector<std::string>(tokens.begin() + kNumSpecials, tokens.end())).digest();
}

}  // namespace

bool bitwise_equal(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return a.size() == 0 ||
         std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
}

bool Checkpoint::operator==(const Checkpoint& other) const {
  if (!(config == other.config && vocab_tokens == other.vocab_tokens && vocab_digest == other.vocab_digest &&
        relations == other.relations && stage == other.stage && step == other.step &&
        stage_complete == other.stage_complete && optimizer_steps == other.optimizer_steps &&
        arrays.size() == other.arrays.size()))
    return false;
  for (const auto& [name, m] : arrays) {
    auto it = other.arrays.find(name);
    if (it == other.arrays.end() || !bitwise_equal(m, it->second)) return false;
  }
  return true;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  nlohmann::json header;
  header["config"] = config_to_json(c.config);
  header["vocab"] = c.vocab_tokens;
  header["vocab_digest"] = c.vocab_digest;
  header["relations"] = c.relations;
  header["stage"] = c.stage;
  header["step"] = c.step;
  header["stage_complete"] = c.stage_complete;
  header["optimizer_steps"] = c.optimizer_steps;
  nlohmann::json index = nlohmann::json::array();
  std::int64_t offset = 0;
  for (const auto& [name, m] : c.arrays) {
    index.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"offset", offset}});
    offset += m.size();
  }
  header["arrays"] = index;
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + tmp.string());
    out.write(kMagic, sizeof kMagic);
    write_pod(out, kCheckpointVersion);
    write_pod(out, static_cast<std::uint64_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, m] : c.arrays)
      out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!out) throw std::runtime_error("failed while writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<std::string>& expected_digest) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw ValidationError(path.string() + " is not a checkpoint file");
  const auto version = read_pod<std::uint32_t>(in, path);
  if (version != kCheckpointVersion)
    throw ValidationError("checkpoint version " + std::to_string(version) + " is not supported");
  const auto header_size = read_pod<std::uint64_t>(in, path);
  std::string text(header_size, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(header_size)))
    throw ValidationError("checkpoint " + path.string() + " is truncated");

  Checkpoint c;
  try {
    const auto header = nlohmann::json::parse(text);
    c.config = config_from_json(header.at("config"));
    c.vocab_tokens = header.at("vocab").get<std::vector<std::string>>();
    c.vocab_digest = header.at("vocab_digest").get<std::string>();
    c.relations = header.at("relations").get<std::vector<std::string>>();
    c.stage = header.at("stage").get<int>();
    c.step = header.at("step").get<std::int64_t>();
    c.stage_complete = header.at("stage_complete").get<bool>();
    c.optimizer_steps = header.at("optimizer_steps").get<std::map<std::string, std::int64_t>>();
    for (const auto& entry : header.at("arrays")) {
      const auto rows = entry.at("rows").get<Eigen::Index>();
      const auto cols = entry.at("cols").get<Eigen::Index>();
      if (rows < 0 || cols < 0) throw ValidationError("negative array shape in checkpoint");
      Matrix m(rows, cols);
      if (!in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double))))
        throw ValidationError("checkpoint " + path.string() + " is truncated");
      c.arrays.emplace(entry.at("name").get<std::string>(), std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed checkpoint header in " + path.string() + ": " + e.what());
  }

  if (digest_of(c.vocab_tokens) != c.vocab_digest)
    throw ValidationError("checkpoint " + path.string() + ": vocabulary digest does not match its vocabulary");
  if (expected_digest && *expected_digest != c.vocab_digest)
    throw ValidationError("checkpoint " + path.string() + " was trained with vocabulary " + c.vocab_digest +
                          ", expected " + *expected_digest);
  return c;
}

}  // namespace tegke
