#include "pisa/partition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "pisa/rng.hpp"

namespace pisa {
namespace {

IndexList ShuffledIndices(std::size_t n, Rng& rng) {
  IndexList order(n);
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::vector<IndexList> SplitBySizes(const IndexList& order, const std::vector<std::size_t>& sizes) {
  std::vector<IndexList> shards;
  shards.reserve(sizes.size());
  auto it = order.begin();
  for (auto s : sizes) {
    shards.emplace_back(it, it + static_cast<std::ptrdiff_t>(s));
    it += static_cast<std::ptrdiff_t>(s);
  }
  return shards;
}

std::vector<std::size_t> EvenSizes(std::size_t total, std::size_t parts) {
  std::vector<std::size_t> sizes(parts, total / parts);
  for (std::size_t i = 0; i < total % parts; ++i) ++sizes[i];
  return sizes;
}

void CheckClients(const Dataset& data, std::size_t clients) {
  if (clients < 1) {
    throw Error("at least one client is required");
  }
  if (clients > data.size()) {
    throw Error("more clients than samples");
  }
}

}  // namespace

Partition Partition::FromShards(std::vector<IndexList> shards, std::size_t total) {
  Partition p;
  p.shards = std::move(shards);
  p.alpha.reserve(p.shards.size());
  for (const auto& s : p.shards) {
    p.alpha.push_back(static_cast<double>(s.size()) / static_cast<double>(total));
  }
  p.Validate(total);
  return p;
}

void Partition::Validate(std::size_t total) const {
  if (shards.empty() || shards.size() != alpha.size()) {
    throw Error("partition has no shards or mismatched weights");
  }
  std::vector<char> seen(total, 0);
  std::size_t covered = 0;
  for (const auto& s : shards) {
    if (s.empty()) {
      throw Error("partition has an empty shard");
    }
    for (auto i : s) {
      if (i >= total || seen[i]) {
        throw Error("partition shards overlap or leave the index range");
      }
      seen[i] = 1;
      ++covered;
    }
  }
  if (covered != total) {
    throw Error("partition does not cover every sample");
  }
}

Partition PartitionIid(const Dataset& data, std::size_t clients, std::uint64_t seed) {
  CheckClients(data, clients);
  auto rng = MakeStream(seed, {0x4949});
  const auto order = ShuffledIndices(data.size(), rng);
  return Partition::FromShards(SplitBySizes(order, EvenSizes(data.size(), clients)), data.size());
}

Partition PartitionLabelSkew(const Dataset& data, std::size_t clients,
                             std::size_t labels_per_client, std::uint64_t seed) {
  if (!data.is_classification()) {
    throw Error("labels required");
  }
  CheckClients(data, clients);
  const auto k = static_cast<std::size_t>(data.num_classes);
  if (labels_per_client < 1 || labels_per_client > k) {
    throw Error("labels per client must lie in [1, K]");
  }
  if (clients * labels_per_client < k) {
    throw Error("clients * labels per client must cover every class");
  }
  auto rng = MakeStream(seed, {0x4c4b});
  std::vector<std::size_t> classes(k);
  std::iota(classes.begin(), classes.end(), std::size_t{0});
  std::shuffle(classes.begin(), classes.end(), rng);

  // Holders of each class, in client order.
  std::vector<std::vector<std::size_t>> holders(k);
  for (std::size_t i = 0; i < clients; ++i) {
    const std::size_t start = i * k / clients;
    for (std::size_t j = 0; j < labels_per_client; ++j) {
      holders[classes[(start + j) % k]].push_back(i);
    }
  }

  std::vector<IndexList> by_class(k);
  for (Index s = 0; s < data.size(); ++s) {
    by_class[static_cast<std::size_t>(data.labels[s])].push_back(s);
  }
  std::vector<IndexList> shards(clients);
  for (std::size_t c = 0; c < k; ++c) {
    auto& samples = by_class[c];
    std::shuffle(samples.begin(), samples.end(), rng);
    const auto sizes = EvenSizes(samples.size(), holders[c].size());
    auto pieces = SplitBySizes(samples, sizes);
    for (std::size_t h = 0; h < holders[c].size(); ++h) {
      auto& dst = shards[holders[c][h]];
      dst.insert(dst.end(), pieces[h].begin(), pieces[h].end());
    }
  }
  for (auto& s : shards) std::sort(s.begin(), s.end());
  return Partition::FromShards(std::move(shards), data.size());
}

std::vector<std::size_t> GeometricShardSizes(std::size_t total, std::size_t clients, double ratio) {
  if (!(ratio >= 1.0)) {
    throw Error("size ratio must be at least 1");
  }
  if (clients < 1) {
    throw Error("at least one client is required");
  }
  if (clients == 1) return {total};
  const double step = std::pow(ratio, 1.0 / static_cast<double>(clients - 1));
  double weight_sum = 0.0;
  for (std::size_t i = 0; i < clients; ++i) weight_sum += std::pow(step, static_cast<double>(i));
  const double base = static_cast<double>(total) / weight_sum;
  std::vector<std::size_t> sizes(clients);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < clients; ++i) {
    sizes[i] =
        static_cast<std::size_t>(std::llround(base * std::pow(step, static_cast<double>(i))));
    assigned += sizes[i];
  }
  // Rounding residue goes to the largest shard.
  const auto diff = static_cast<long long>(total) - static_cast<long long>(assigned);
  const auto last = static_cast<long long>(sizes.back()) + diff;
  if (last < 0) {
    throw Error("ratio too extreme");
  }
  sizes.back() = static_cast<std::size_t>(last);
  if (sizes.front() == 0) {
    throw Error("ratio too extreme");
  }
  return sizes;
}

Partition PartitionQuantitySkew(const Dataset& data, std::size_t clients, double ratio,
                                std::uint64_t seed) {
  CheckClients(data, clients);
  const auto sizes = GeometricShardSizes(data.size(), clients, ratio);
  auto rng = MakeStream(seed, {0x5153});
  const auto order = ShuffledIndices(data.size(), rng);
  return Partition::FromShards(SplitBySizes(order, sizes), data.size());
}

}  // namespace pisa
