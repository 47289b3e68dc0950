#pragma once

// Single-file snapshot of a model and its training progress: a JSON header
// followed by the raw bytes of every named array.
//
// Layout: "TEGKECK\0" | u32 version | u64 header bytes | header | doubles.
// The header lists each array's name, shape and offset (in doubles) into the
// data block, in the order they are written.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tegke/config.hpp"
#include "tegke/data.hpp"

namespace tegke {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  TrainConfig config;
  std::vector<std::string> vocab_tokens;  // full id order, specials included
  std::string vocab_digest;
  std::vector<std::string> relations;     // without the reserved unknown entry
  int stage = 0;                          // 0 = initialisation, 1 or 2
  std::int64_t step = 0;                  // steps taken within `stage`
  bool stage_complete = false;
  std::map<std::string, std::int64_t> optimizer_steps;
  std::map<std::string, Matrix> arrays;   // parameters and optimizer moments

  bool operator==(const Checkpoint& other) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);

// Fails when the file is malformed, when the stored digest does not match the
// stored vocabulary, or when `expected_digest` is given and differs.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::optional<std::string>& expected_digest = std::nullopt);

// Bit-level equality, so NaN payloads and signed zeros count as data.
bool bitwise_equal(const Matrix& a, const Matrix& b);

}  // namespace tegke
