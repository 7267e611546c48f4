#pragma once

#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

namespace hdrobust {

// splitmix64 step; used to derive independent streams from a single 64-bit seed.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic sub-seed for stream `stream` of generator `seed`.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t s = seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
  return splitmix64(s);
}

inline std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream = 0) {
  return std::mt19937_64(derive_seed(seed, stream));
}

// Fisher-Yates shuffle of 0..n-1 driven by the given seed.
inline std::vector<int> shuffled_indices(int n, std::uint64_t seed) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 eng = make_engine(seed);
  for (int i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<int> pick(0, i);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(eng))]);
  }
  return idx;
}

// Seeded shuffle cut into near-equal contiguous slices; sizes differ by at most
// one and the union is exactly 0..n-1.
inline std::vector<std::vector<int>> split_indices(int n, int parts, std::uint64_t seed) {
  const auto order = shuffled_indices(n, seed);
  std::vector<std::vector<int>> out(static_cast<std::size_t>(parts));
  const int base = n / parts;
  const int extra = n % parts;
  std::size_t pos = 0;
  for (int b = 0; b < parts; ++b) {
    const int size = base + (b < extra ? 1 : 0);
    out[static_cast<std::size_t>(b)].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                                            order.begin() + static_cast<std::ptrdiff_t>(pos + static_cast<std::size_t>(size)));
    pos += static_cast<std::size_t>(size);
  }
  return out;
}

}  // namespace hdrobust
