#pragma once

// Parametric same-different / spatial-relation image generator.
//
// An image is an n x n binary canvas holding k non-overlapping m x m bit
// patterns. Every sample carries both labels:
//   SD: Same iff at least two items are bit-identical.
//   SR: Vertical iff the mean pairwise center-displacement angle is >= 45 deg.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "psvrt/error.hpp"
#include "psvrt/rng.hpp"

namespace psvrt {

enum class Task { SD, SR };
enum class SdLabel : int { Different = 0, Same = 1 };
enum class SrLabel : int { Horizontal = 0, Vertical = 1 };

inline std::string_view to_string(Task t) { return t == Task::SD ? "sd" : "sr"; }

inline Task parse_task(std::string_view s) {
  if (s == "sd" || s == "SD") return Task::SD;
  if (s == "sr" || s == "SR") return Task::SR;
  throw InvalidArgument("unknown task '" + std::string(s) + "' (expected sd or sr)");
}

// Largest number of pairwise-disjoint, axis-aligned m x m squares with
// integer offsets inside an n x n canvas.
inline std::int64_t max_disjoint_squares(int n, int m) {
  const std::int64_t per_side = n / m;
  return per_side * per_side;
}

class ImageParams {
 public:
  ImageParams(int m, int n, int k, std::uint64_t seed = 0) : m_(m), n_(n), k_(k), seed_(seed) {
    if (m < 1) throw InfeasibleParams("item side m must be >= 1");
    if (n < 1) throw InfeasibleParams("image side n must be >= 1");
    if (k < 2) throw InfeasibleParams("item count k must be >= 2");
    if (m > n) throw InfeasibleParams("item side m exceeds image side n");
    if (max_disjoint_squares(n, m) < k) {
      throw InfeasibleParams("cannot fit " + std::to_string(k) + " disjoint " + std::to_string(m) + "x" +
                             std::to_string(m) + " items in a " + std::to_string(n) + "x" + std::to_string(n) +
                             " image");
    }
  }

  int m() const { return m_; }
  int n() const { return n_; }
  int k() const { return k_; }
  std::uint64_t seed() const { return seed_; }

  ImageParams with_seed(std::uint64_t seed) const { return ImageParams(m_, n_, k_, seed); }

  friend bool operator==(const ImageParams&, const ImageParams&) = default;

 private:
  int m_;
  int n_;
  int k_;
  std::uint64_t seed_;
};

class BitPattern {
 public:
  BitPattern(int side, std::vector<std::uint8_t> bits) : side_(side), bits_(std::move(bits)) {
    if (side < 1) throw InvalidArgument("bit pattern side must be >= 1");
    if (bits_.size() != static_cast<std::size_t>(side) * side) throw ShapeError("bit pattern has wrong size");
    bool any = false;
    for (auto b : bits_) {
      if (b > 1) throw InvalidArgument("bit pattern values must be 0 or 1");
      any = any || b == 1;
    }
    if (!any) throw InvalidArgument("bit pattern must contain at least one set bit");
  }

  int side() const { return side_; }
  std::uint8_t at(int row, int col) const { return bits_[static_cast<std::size_t>(row) * side_ + col]; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }
  int popcount() const { return static_cast<int>(std::count(bits_.begin(), bits_.end(), 1)); }

  friend bool operator==(const BitPattern&, const BitPattern&) = default;

 private:
  int side_;
  std::vector<std::uint8_t> bits_;
};

struct Placement {
  int row = 0;
  int col = 0;
  friend bool operator==(const Placement&, const Placement&) = default;
};

inline bool squares_overlap(Placement a, Placement b, int m) {
  return std::abs(a.row - b.row) < m && std::abs(a.col - b.col) < m;
}

struct Center {
  double row = 0;
  double col = 0;
};

inline Center center_of(Placement p, int m) {
  const double half = (m - 1) / 2.0;
  return {p.row + half, p.col + half};
}

struct BinaryImage {
  int side = 0;
  std::vector<std::uint8_t> pixels;

  BinaryImage() = default;
  explicit BinaryImage(int n) : side(n), pixels(static_cast<std::size_t>(n) * n, 0) {}

  std::uint8_t at(int row, int col) const { return pixels[static_cast<std::size_t>(row) * side + col]; }
  std::uint8_t& at(int row, int col) { return pixels[static_cast<std::size_t>(row) * side + col]; }

  friend bool operator==(const BinaryImage&, const BinaryImage&) = default;
};

struct Sample {
  BinaryImage image;
  std::vector<BitPattern> items;
  std::vector<Placement> placements;
  SdLabel sd_label = SdLabel::Different;
  SrLabel sr_label = SrLabel::Horizontal;

  // Binary class index for the given task: Same = 1 for SD, Vertical = 1 for SR.
  int label(Task task) const {
    return task == Task::SD ? static_cast<int>(sd_label) : static_cast<int>(sr_label);
  }
};

inline constexpr int kItemRedrawCap = 10'000;
inline constexpr int kPlacementRedrawCap = 100'000;

// Uniform over the 2^(m*m) - 1 non-blank m x m patterns.
inline BitPattern sample_item(Rng& rng, int m) {
  if (m < 1) throw InvalidArgument("item side m must be >= 1");
  const std::size_t count = static_cast<std::size_t>(m) * m;
  std::vector<std::uint8_t> bits(count);
  for (int attempt = 0; attempt < kItemRedrawCap; ++attempt) {
    bool any = false;
    std::uint64_t word = 0;
    for (std::size_t i = 0; i < count; ++i) {
      if (i % 64 == 0) word = rng.next();
      bits[i] = static_cast<std::uint8_t>((word >> (63 - i % 64)) & 1U);
      any = any || bits[i] != 0;
    }
    if (any) return BitPattern(m, std::move(bits));
  }
  throw InfeasibleParams("generator degenerate: no non-blank item after " + std::to_string(kItemRedrawCap) +
                         " draws");
}

// Number of valid (non-blank) patterns of side m, saturated at UINT64_MAX.
inline std::uint64_t valid_pattern_count(int m) {
  const int cells = m * m;
  if (cells >= 64) return UINT64_MAX;
  return (std::uint64_t{1} << cells) - 1;
}

inline std::vector<BitPattern> sample_distinct_items(Rng& rng, int m, int k) {
  if (k < 0) throw InvalidArgument("item count must be non-negative");
  if (valid_pattern_count(m) < static_cast<std::uint64_t>(k)) {
    throw InfeasibleParams("infeasible distinct set: only " + std::to_string(valid_pattern_count(m)) +
                           " valid patterns of side " + std::to_string(m) + " for " + std::to_string(k) + " items");
  }
  std::vector<BitPattern> items;
  items.reserve(k);
  while (static_cast<int>(items.size()) < k) {
    BitPattern candidate = sample_item(rng, m);
    if (std::find(items.begin(), items.end(), candidate) == items.end()) items.push_back(std::move(candidate));
  }
  return items;
}

namespace detail {

constexpr double kQuarterPi = 0.78539816339744830962;

// Signed distance of the pair angle atan2(|drow|, |dcol|) from 45 degrees, in
// radians. Swapping the arguments negates the result exactly.
inline double angle_offset_from_diagonal(double abs_drow, double abs_dcol) {
  if (abs_drow == abs_dcol) return 0.0;
  if (abs_drow > abs_dcol) return std::atan2(abs_drow, abs_dcol) - kQuarterPi;
  return -(std::atan2(abs_dcol, abs_drow) - kQuarterPi);
}

}  // namespace detail

// Vertical iff the mean over all pairs of atan2(|drow|, |dcol|) is >= 45 deg.
inline SrLabel sr_rule(std::span<const Center> centers) {
  if (centers.size() < 2) throw InvalidArgument("sr_rule needs at least two centers");
  double offset_sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < centers.size(); ++i) {
    for (std::size_t j = i + 1; j < centers.size(); ++j) {
      offset_sum += detail::angle_offset_from_diagonal(std::abs(centers[i].row - centers[j].row),
                                                       std::abs(centers[i].col - centers[j].col));
      ++pairs;
    }
  }
  // Means within rounding of exactly 45 deg count as ties (Vertical).
  const double mean_offset = offset_sum / static_cast<double>(pairs);
  return mean_offset >= -1e-12 ? SrLabel::Vertical : SrLabel::Horizontal;
}

inline SrLabel sr_rule(std::span<const Placement> placements, int m) {
  std::vector<Center> centers;
  centers.reserve(placements.size());
  for (auto p : placements) centers.push_back(center_of(p, m));
  return sr_rule(std::span<const Center>(centers));
}

inline SdLabel sd_rule(std::span<const BitPattern> items) {
  if (items.size() < 2) throw InvalidArgument("sd_rule needs at least two items");
  const int side = items.front().side();
  for (const auto& item : items) {
    if (item.side() != side) throw InvalidArgument("sd_rule: mixed item sizes");
  }
  for (std::size_t i = 0; i < items.size(); ++i) {
    for (std::size_t j = i + 1; j < items.size(); ++j) {
      if (items[i] == items[j]) return SdLabel::Same;
    }
  }
  return SdLabel::Different;
}

// Uniform over in-bounds, pairwise-disjoint configurations by whole-configuration
// rejection; with a target, configurations are also rejected until sr_rule
// matches it.
inline std::vector<Placement> place_items(Rng& rng, const ImageParams& params,
                                          std::optional<SrLabel> target_sr = std::nullopt,
                                          int redraw_cap = kPlacementRedrawCap) {
  const int m = params.m();
  const int k = params.k();
  const auto positions = static_cast<std::uint64_t>(params.n() - m + 1);
  std::vector<Placement> placements(k);
  for (int attempt = 0; attempt < redraw_cap; ++attempt) {
    bool ok = true;
    for (int i = 0; i < k && ok; ++i) {
      placements[i] = {static_cast<int>(rng.below(positions)), static_cast<int>(rng.below(positions))};
      for (int j = 0; j < i; ++j) {
        if (squares_overlap(placements[i], placements[j], m)) {
          ok = false;
          break;
        }
      }
    }
    if (!ok) continue;
    if (target_sr && sr_rule(std::span<const Placement>(placements), m) != *target_sr) continue;
    return placements;
  }
  throw InfeasibleParams("placement timeout after " + std::to_string(redraw_cap) + " redraws for m=" +
                         std::to_string(m) + " n=" + std::to_string(params.n()) + " k=" + std::to_string(k));
}

inline BinaryImage render(std::span<const BitPattern> items, std::span<const Placement> placements, int n) {
  if (items.size() != placements.size()) throw ShapeError("render: item and placement counts differ");
  BinaryImage image(n);
  for (std::size_t i = 0; i < items.size(); ++i) {
    const int m = items[i].side();
    const Placement p = placements[i];
    if (p.row < 0 || p.col < 0 || p.row + m > n || p.col + m > n) {
      throw InvalidArgument("render: placement out of bounds");
    }
    for (int r = 0; r < m; ++r) {
      for (int c = 0; c < m; ++c) {
        if (items[i].at(r, c)) image.at(p.row + r, p.col + c) = 1;
      }
    }
  }
  return image;
}

// Items for a requested SD class. Same: one pattern duplicated into a pair and
// the remaining k - 2 distinct from it and from each other.
inline std::vector<BitPattern> items_for(Rng& rng, const ImageParams& params, SdLabel target) {
  if (target == SdLabel::Different) return sample_distinct_items(rng, params.m(), params.k());
  std::vector<BitPattern> items = sample_distinct_items(rng, params.m(), params.k() - 1);
  items.insert(items.begin() + 1, items.front());
  return items;
}

// One sample whose label for `task` equals `target_label` (Same / Vertical = 1).
// The other task's label is drawn from a fair coin, so the image distribution
// does not depend on which task the sample was generated for.
inline Sample generate_sample(Rng& rng, const ImageParams& params, Task task, int target_label) {
  if (target_label != 0 && target_label != 1) throw InvalidArgument("target label must be 0 or 1");
  SdLabel sd_target;
  SrLabel sr_target;
  if (task == Task::SD) {
    sd_target = static_cast<SdLabel>(target_label);
    sr_target = rng.coin() ? SrLabel::Vertical : SrLabel::Horizontal;
  } else {
    sr_target = static_cast<SrLabel>(target_label);
    sd_target = rng.coin() ? SdLabel::Same : SdLabel::Different;
  }
  Sample s;
  s.items = items_for(rng, params, sd_target);
  s.placements = place_items(rng, params, sr_target);
  s.image = render(s.items, s.placements, params.n());
  s.sd_label = sd_rule(s.items);
  s.sr_label = sr_rule(std::span<const Placement>(s.placements), params.m());
  return s;
}

// Exactly size/2 samples of each class for `task`, in shuffled order.
inline std::vector<Sample> generate_batch(Rng& rng, const ImageParams& params, Task task, int size) {
  if (size <= 0 || size % 2 != 0) throw InvalidArgument("batch size must be positive and even");
  std::vector<int> targets(size, 0);
  std::fill(targets.begin() + size / 2, targets.end(), 1);
  for (int i = size - 1; i > 0; --i) {
    std::swap(targets[i], targets[rng.below(static_cast<std::uint64_t>(i) + 1)]);
  }
  std::vector<Sample> batch;
  batch.reserve(size);
  for (int t : targets) batch.push_back(generate_sample(rng, params, task, t));
  return batch;
}

// Generator for batch `index` of a stream rooted at the params' seed.
inline Rng batch_rng(const ImageParams& params, std::uint64_t stream, std::uint64_t index) {
  return Rng(params.seed(), stream, index);
}

}  // namespace psvrt
