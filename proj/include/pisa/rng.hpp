#ifndef PISA_RNG_HPP_
#define PISA_RNG_HPP_

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace pisa {

using Rng = std::mt19937_64;

//! Independent generator for the stream identified by (seed, tags...). Two calls with the
//! same arguments yield identical sequences regardless of what else has been drawn.
inline Rng MakeStream(std::uint64_t seed, std::initializer_list<std::uint64_t> tags = {}) {
  std::vector<std::uint32_t> words;
  words.reserve(2 * (tags.size() + 1));
  auto push = [&words](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v & 0xffffffffu));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  for (auto t : tags) push(t);
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

}  // namespace pisa

#endif  // PISA_RNG_HPP_
