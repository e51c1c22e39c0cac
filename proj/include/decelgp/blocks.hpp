#pragma once

#include <cstddef>
#include <vector>

namespace decelgp {

/// Closed time interval [first, last] of one hyperparameter block.
struct TimeBlock {
  int first = 0;
  int last = 0;

  int length() const { return last - first + 1; }
  bool contains(int t) const { return first <= t && t <= last; }
  friend bool operator==(const TimeBlock&, const TimeBlock&) = default;
};

/// Partition of {0..T} into N consecutive blocks; block m+1 starts one
/// second after block m ends and the final block ends at T.
class BlockScheme {
 public:
  BlockScheme() = default;
  /// Builds from block end times T_1 < ... < T_N; throws ArgumentError if
  /// they are not strictly increasing from >= 0.
  explicit BlockScheme(std::vector<int> end_times);

  std::size_t size() const { return blocks_.size(); }
  int horizon() const { return blocks_.empty() ? -1 : blocks_.back().last; }
  const TimeBlock& operator[](std::size_t m) const { return blocks_[m]; }
  const std::vector<TimeBlock>& blocks() const { return blocks_; }
  std::vector<int> end_times() const;

  /// Index of the block containing t.
  std::size_t block_of(int t) const;

  friend bool operator==(const BlockScheme&, const BlockScheme&) = default;

 private:
  std::vector<TimeBlock> blocks_;
};

/// N = 1 gives [0, T]. Otherwise block ends sit at round(m T / N), so T = 100,
/// N = 10 yields [0,10], [11,20], ..., [91,100]. N = T + 1 gives singletons.
/// Throws ArgumentError unless 1 <= N <= T + 1.
BlockScheme block_scheme(int horizon, int n_blocks);

}  // namespace decelgp
