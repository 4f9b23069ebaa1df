#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace sovs {

// Label id reserved for unannotated pixels. Label id 0 is always background.
inline constexpr std::uint16_t kIgnoreId = 255;
inline constexpr std::uint16_t kBackgroundId = 0;

// Thrown for invalid user-facing configuration (bad config file, infeasible
// split, malformed class lists). The CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dense H x W plane of per-pixel values (labels, confidences, masks).
template <typename T>
struct Plane {
  int h = 0;
  int w = 0;
  std::vector<T> v;

  Plane() = default;
  Plane(int h_, int w_, T fill = T{}) : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, fill) {}

  T& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
  const T& at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
  std::size_t size() const { return v.size(); }
  bool same_shape(const Plane& o) const { return h == o.h && w == o.w; }
};

using LabelMap = Plane<std::uint16_t>;
using ConfMap = Plane<float>;
using ByteMask = Plane<std::uint8_t>;

// Dense H x W x C field, channel-last. Used for images (c=3), per-pixel
// class scores/probabilities (c=N) and image embeddings (c=D).
template <typename T>
struct Tensor3T {
  int h = 0;
  int w = 0;
  int c = 0;
  std::vector<T> v;

  Tensor3T() = default;
  Tensor3T(int h_, int w_, int c_, T fill = T{})
      : h(h_), w(w_), c(c_), v(static_cast<std::size_t>(h_) * w_ * c_, fill) {}

  T& at(int y, int x, int k) { return v[(static_cast<std::size_t>(y) * w + x) * c + k]; }
  const T& at(int y, int x, int k) const { return v[(static_cast<std::size_t>(y) * w + x) * c + k]; }
  T* pixel(int y, int x) { return v.data() + (static_cast<std::size_t>(y) * w + x) * c; }
  const T* pixel(int y, int x) const { return v.data() + (static_cast<std::size_t>(y) * w + x) * c; }
  bool same_shape(const Tensor3T& o) const { return h == o.h && w == o.w && c == o.c; }
};

using Tensor3 = Tensor3T<float>;
using Image = Tensor3;    // c == 3, values in [0,1]
using ProbMap = Tensor3;  // c == number of classes, rows sum to 1
using EmbeddingField = Tensor3;  // c == embedding dimension

// FNV-1a 64-bit, used for content addressing and config hashing.
inline std::uint64_t fnv1a64(const void* data, std::size_t n, std::uint64_t seed = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::string hex64(std::uint64_t x);

// Deterministic float -> text used by every CSV/report writer. %.10g keeps
// enough digits that rewriting the same run is byte-identical.
std::string fmt_g(double x);

}  // namespace sovs
