#pragma once
// Binary checkpoint container: a JSON header (configs, sizes, tensor table)
// followed by raw little-endian doubles. Save -> load round-trips bitwise.

#include <string>

#include "acre/train.hpp"

namespace acre::checkpoint {

inline constexpr char kMagic[8] = {'A', 'C', 'R', 'E', 'C', 'K', 'P', '1'};

void save(const train::Checkpoint& ck, const std::string& path);
train::Checkpoint load(const std::string& path);

}  // namespace acre::checkpoint
