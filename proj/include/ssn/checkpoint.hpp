// Versioned binary container for a training state:
//   "SSNC" | u32 version | blob config | blob state | u32 count | count x tensor
// blob = u32 length + UTF-8 `key = value` text; tensor = u32 name length, name,
// u32 rank, rank x u32 dims, little-endian f32 values. Integers are little-endian.
#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssn/train.hpp"

namespace ssn::checkpoint {

inline constexpr char kMagic[4] = {'S', 'S', 'N', 'C'};
inline constexpr std::uint32_t kVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Bytes = std::vector<std::uint8_t>;

/// Parameters and optimizer moments are stored as f32; loading widens them, so
/// serialize(deserialize(b)) == b for any b produced here.
Bytes serialize(const train::TrainState& state);
train::TrainState deserialize(const Bytes& bytes);

void save(const train::TrainState& state, const std::string& path);
train::TrainState load(const std::string& path);

/// Rounds every parameter and optimizer moment to f32 in place, which is the
/// state a save/load round trip yields.
void round_to_storage(train::TrainState& state);

}  // namespace ssn::checkpoint
