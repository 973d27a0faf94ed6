#pragma once

// Seed derivation for reproducible, isolated random streams.
//
// Every stream in a simulation is keyed by a tuple such as
// (master_seed, replication, policy, purpose). The tuple is folded into a
// 64-bit seed with the splitmix64 finalizer and used to seed a std::mt19937_64.

#include "impatient/types.hpp"

#include <cstdint>
#include <random>
#include <string_view>

namespace impatient {

using Rng = std::mt19937_64;

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fold(std::uint64_t acc, std::uint64_t key) {
  return splitmix64(acc ^ splitmix64(key + 0x632be59bd9b4e019ULL));
}

}  // namespace detail

/// FNV-1a, used to turn policy names and stream purposes into keys.
constexpr std::uint64_t hash_name(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename... Keys>
constexpr std::uint64_t derive_seed(std::uint64_t master, Keys... keys) {
  std::uint64_t acc = detail::splitmix64(master);
  ((acc = detail::fold(acc, static_cast<std::uint64_t>(keys))), ...);
  return acc;
}

template <typename... Keys>
Rng make_rng(std::uint64_t master, Keys... keys) {
  return Rng(derive_seed(master, keys...));
}

/// Fills `out` with iid standard normals.
template <typename Derived>
void fill_standard_normal(Eigen::MatrixBase<Derived>& out, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.derived().data()[i] = n01(rng);
}

}  // namespace impatient
