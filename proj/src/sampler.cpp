#include "bifusion/sampler.hpp"

#include <algorithm>

namespace bifusion {

std::vector<std::int64_t> window_frames(std::int64_t seq_len, std::int64_t start, std::int64_t t) {
  std::vector<std::int64_t> out;
  out.reserve(static_cast<std::size_t>(t));
  if (seq_len >= t) {
    for (std::int64_t i = 0; i < t; ++i) out.push_back(start + i);
  } else {
    for (std::int64_t i = 0; i < t; ++i) out.push_back((start + i) % seq_len);
  }
  return out;
}

std::vector<BatchItem> sample_batch(const DatasetIndex& index,
                                    const std::vector<std::int64_t>& train_ids,
                                    const BatchSpec& spec, Rng& rng) {
  if (spec.p < 2 || spec.k < 2)
    throw SamplingError("batch spec needs P >= 2 and K >= 2 for triplet mining");
  if (static_cast<std::int64_t>(train_ids.size()) < spec.p)
    throw SamplingError("need at least " + std::to_string(spec.p) + " identities, have " +
                        std::to_string(train_ids.size()));

  // partial Fisher-Yates for P identities without replacement
  std::vector<std::int64_t> pool(train_ids.size());
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = static_cast<std::int64_t>(i);
  std::vector<BatchItem> batch;
  for (std::int64_t pi = 0; pi < spec.p; ++pi) {
    const std::int64_t j = pi + rng.uniform_int(static_cast<std::int64_t>(pool.size()) - pi);
    std::swap(pool[static_cast<std::size_t>(pi)], pool[static_cast<std::size_t>(j)]);
    const std::int64_t label = pool[static_cast<std::size_t>(pi)];
    const std::int64_t identity = train_ids[static_cast<std::size_t>(label)];

    auto seqs = index.of_identity(identity);
    if (seqs.empty())
      throw SamplingError("identity " + std::to_string(identity) + " has no sequences");
    const std::int64_t have = static_cast<std::int64_t>(seqs.size());
    std::vector<std::int64_t> chosen;
    if (have >= spec.k) {
      std::vector<std::int64_t> order(seqs.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);
      for (std::int64_t ki = 0; ki < spec.k; ++ki) {
        const std::int64_t j2 = ki + rng.uniform_int(have - ki);
        std::swap(order[static_cast<std::size_t>(ki)], order[static_cast<std::size_t>(j2)]);
        chosen.push_back(order[static_cast<std::size_t>(ki)]);
      }
    } else {
      for (std::int64_t ki = 0; ki < spec.k; ++ki) chosen.push_back(rng.uniform_int(have));
    }

    for (std::int64_t s : chosen) {
      BatchItem item;
      item.entry = seqs[static_cast<std::size_t>(s)];
      item.label = label;
      const std::int64_t len = item.entry->frames;
      item.start = len > spec.t ? rng.uniform_int(len - spec.t + 1) : rng.uniform_int(len);
      batch.push_back(item);
    }
  }
  return batch;
}

}  // namespace bifusion
