#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace fkb {

using Rng = std::mt19937_64;

// Purpose tags keep independent streams apart even when the numeric keys
// coincide (e.g. round 3 of sampling vs. client 3 of training).
enum class StreamTag : std::uint32_t {
  Data = 0x44415441,
  Split = 0x53504c54,
  Partition = 0x50415254,
  Init = 0x494e4954,
  Sampling = 0x53414d50,
  Client = 0x434c4e54,
  GradCheck = 0x47524144,
};

// Deterministic generator keyed by (seed, tag, keys...). Streams with
// different keys are statistically independent for practical purposes.
inline Rng make_stream(std::uint64_t seed, StreamTag tag,
                       std::initializer_list<std::uint64_t> keys = {}) {
  std::vector<std::uint32_t> material;
  material.reserve(3 + 2 * keys.size());
  material.push_back(static_cast<std::uint32_t>(seed));
  material.push_back(static_cast<std::uint32_t>(seed >> 32));
  material.push_back(static_cast<std::uint32_t>(tag));
  for (std::uint64_t k : keys) {
    material.push_back(static_cast<std::uint32_t>(k));
    material.push_back(static_cast<std::uint32_t>(k >> 32));
  }
  std::seed_seq seq(material.begin(), material.end());
  return Rng(seq);
}

}  // namespace fkb
