#pragma once

#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "sam/error.hpp"

namespace sam {

using Shape = std::vector<int>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// Plain value tensor, no graph attached. The autodiff tape has its own node
// storage; this type is what parameter stores, datasets, and checkpoints use.
template <class S>
struct TensorT {
  Shape shape;
  std::vector<S> v;

  TensorT() = default;
  explicit TensorT(Shape sh) : shape(std::move(sh)), v(numel(shape), S(0)) {}
  TensorT(Shape sh, std::vector<S> vals) : shape(std::move(sh)), v(std::move(vals)) {
    if (v.size() != numel(shape))
      throw ShapeError("tensor value count " + std::to_string(v.size()) +
                       " does not match shape " + shape_str(shape));
  }

  std::size_t size() const { return v.size(); }

  template <class T>
  TensorT<T> cast() const {
    TensorT<T> out;
    out.shape = shape;
    out.v.assign(v.begin(), v.end());
    return out;
  }
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

// FNV-1a over the raw little-endian bytes of the values. Used for the
// theta-immutability and determinism checks.
template <class S>
std::uint64_t tensor_checksum(const TensorT<S>& t, std::uint64_t h = 0xcbf29ce484222325ull) {
  const unsigned char* p = reinterpret_cast<const unsigned char*>(t.v.data());
  std::size_t n = t.v.size() * sizeof(S);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace sam
