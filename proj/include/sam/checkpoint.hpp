#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "sam/params.hpp"

namespace sam::ckpt {

// On-disk parameter container: magic + version, a small key/value manifest
// describing the producing run (network spec name, seed, ...), then the named
// tensors with shapes and raw little-endian float32 values. Round-trips are
// bit exact.
struct Checkpoint {
  std::map<std::string, std::string> meta;
  ParamStore params;
};

void save(const std::string& path, const ParamStore& params,
          const std::map<std::string, std::string>& meta);

Checkpoint load(const std::string& path);

}  // namespace sam::ckpt
