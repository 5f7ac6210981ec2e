// Splitting a dataset into disjoint client shards.

#ifndef PISA_PARTITION_HPP_
#define PISA_PARTITION_HPP_

#include <cstdint>
#include <vector>

#include "pisa/problem.hpp"

namespace pisa {

//! Disjoint shards covering every sample once, with aggregation weights
//! alpha_i = |D_i| / |D|.
struct Partition {
  std::vector<IndexList> shards;
  std::vector<double> alpha;

  std::size_t num_clients() const noexcept { return shards.size(); }

  //! Builds a partition from shards and derives alpha from their sizes.
  static Partition FromShards(std::vector<IndexList> shards, std::size_t total);

  //! Throws unless the shards are nonempty, disjoint and cover [0, total).
  void Validate(std::size_t total) const;
};

Partition PartitionIid(const Dataset& data, std::size_t clients, std::uint64_t seed);

//! Each client receives `labels_per_client` consecutive classes of a seeded class
//! permutation, starting at floor(i * K / m). Samples of a class shared by several clients are
//! split evenly (sizes differ by at most one).
Partition PartitionLabelSkew(const Dataset& data, std::size_t clients,
                             std::size_t labels_per_client, std::uint64_t seed);

//! Shard sizes follow a geometric progression whose largest/smallest ratio is `ratio`.
Partition PartitionQuantitySkew(const Dataset& data, std::size_t clients, double ratio,
                                std::uint64_t seed);

//! Shard sizes for PartitionQuantitySkew, smallest first.
std::vector<std::size_t> GeometricShardSizes(std::size_t total, std::size_t clients, double ratio);

}  // namespace pisa

#endif  // PISA_PARTITION_HPP_
