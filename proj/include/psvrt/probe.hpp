#pragma once

// Idealized subtraction-template strategy for the SD task, and the
// combinatorics of item arrangements that such a strategy has to cover.
//
// A subtraction template has a positive and a negative m x m region at a
// fixed offset; its response is the summed absolute difference of the two
// regions and is zero exactly when their contents match. The probe parses the
// image into k disjoint, non-blank m x m windows covering all ink and answers
// Same iff some parse admits a template with zero response between two of its
// windows. Only item-aligned window pairs are compared; comparing arbitrary
// windows would also match blank-padded fragments of different items.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <optional>
#include <string>
#include <vector>

#include "psvrt/error.hpp"
#include "psvrt/generator.hpp"
#include "psvrt/grid.hpp"
#include "psvrt/rng.hpp"
#include "psvrt/trainer.hpp"

namespace psvrt::probe {

struct SubtractionTemplate {
  int drow = 0;
  int dcol = 0;

  // Positive and negative regions never share a pixel.
  bool disjoint(int m) const { return std::abs(drow) >= m || std::abs(dcol) >= m; }
};

// Sum over the m x m region at (row, col) of |I(p) - I(p + offset)|. Both
// regions must lie inside the image.
inline int template_response(const BinaryImage& image, int m, int row, int col, SubtractionTemplate t) {
  int response = 0;
  for (int r = 0; r < m; ++r) {
    for (int c = 0; c < m; ++c) {
      response += std::abs(image.at(row + r, col + c) - image.at(row + t.drow + r, col + t.dcol + c));
    }
  }
  return response;
}

struct ProbeDecision {
  SdLabel label = SdLabel::Different;
  std::optional<Placement> anchor;           // positive region of the firing template
  std::optional<SubtractionTemplate> fired;  // offset to its negative region
};

namespace detail {

class ParseSearch {
 public:
  ParseSearch(const BinaryImage& image, int m, int k) : image_(image), m_(m), k_(k) {
    covered_.assign(image.pixels.size(), 0);
    for (int r = 0; r < image.side; ++r) {
      for (int c = 0; c < image.side; ++c) {
        if (image.at(r, c)) ink_.push_back(r * image.side + c);
      }
    }
  }

  ProbeDecision run() {
    ProbeDecision d;
    if (ink_.empty()) return d;
    if (search(0, 0)) {
      d.label = SdLabel::Same;
      d.anchor = windows_[hit_.first];
      const Placement b = windows_[hit_.second];
      d.fired = SubtractionTemplate{b.row - d.anchor->row, b.col - d.anchor->col};
    }
    return d;
  }

 private:
  bool search(std::size_t first_ink, std::size_t covered_count) {
    if (static_cast<int>(windows_.size()) == k_) return covered_count == ink_.size() && zero_response_pair();
    const std::size_t capacity = static_cast<std::size_t>(k_ - windows_.size()) * m_ * m_;
    if (covered_count + capacity < ink_.size()) return false;
    while (first_ink < ink_.size() && covered_[ink_[first_ink]]) ++first_ink;
    // Every window must hold ink, so running out of ink early is a dead end.
    if (first_ink == ink_.size()) return false;

    const int n = image_.side;
    const int pr = ink_[first_ink] / n, pc = ink_[first_ink] % n;
    for (int r0 = std::max(0, pr - m_ + 1); r0 <= std::min(pr, n - m_); ++r0) {
      for (int c0 = std::max(0, pc - m_ + 1); c0 <= std::min(pc, n - m_); ++c0) {
        const Placement w{r0, c0};
        if (std::any_of(windows_.begin(), windows_.end(), [&](Placement o) { return squares_overlap(o, w, m_); })) {
          continue;
        }
        const std::size_t gained = mark(w, 1);
        windows_.push_back(w);
        if (search(first_ink + 1, covered_count + gained)) return true;
        windows_.pop_back();
        mark(w, 0);
      }
    }
    return false;
  }

  std::size_t mark(Placement w, std::uint8_t value) {
    std::size_t count = 0;
    for (int r = 0; r < m_; ++r) {
      for (int c = 0; c < m_; ++c) {
        const int idx = (w.row + r) * image_.side + w.col + c;
        if (image_.pixels[idx]) {
          covered_[idx] = value;
          ++count;
        }
      }
    }
    return count;
  }

  bool zero_response_pair() {
    for (std::size_t i = 0; i < windows_.size(); ++i) {
      for (std::size_t j = i + 1; j < windows_.size(); ++j) {
        const SubtractionTemplate t{windows_[j].row - windows_[i].row, windows_[j].col - windows_[i].col};
        if (template_response(image_, m_, windows_[i].row, windows_[i].col, t) == 0) {
          hit_ = {i, j};
          return true;
        }
      }
    }
    return false;
  }

  const BinaryImage& image_;
  int m_;
  int k_;
  std::vector<int> ink_;
  std::vector<std::uint8_t> covered_;
  std::vector<Placement> windows_;
  std::pair<std::size_t, std::size_t> hit_{0, 0};
};

}  // namespace detail

inline ProbeDecision probe_decide(const BinaryImage& image, int m, int k) {
  if (m < 1 || m > image.side) throw InvalidArgument("probe: item side must lie in [1, image side]");
  if (k < 2) throw InvalidArgument("probe: item count must be >= 2");
  return detail::ParseSearch(image, m, k).run();
}

inline SdLabel probe_classify(const BinaryImage& image, int m, int k) { return probe_decide(image, m, k).label; }

struct ProbeStats {
  std::int64_t samples = 0;
  std::int64_t same = 0;
  std::int64_t true_same = 0;    // Same predicted Same
  std::int64_t false_same = 0;   // Different predicted Same
  std::int64_t false_diff = 0;   // Same predicted Different

  double accuracy() const {
    return samples ? 1.0 - static_cast<double>(false_same + false_diff) / static_cast<double>(samples) : 0.0;
  }
  double recall_same() const { return same ? static_cast<double>(true_same) / static_cast<double>(same) : 1.0; }
  double false_positive_rate() const {
    const auto different = samples - same;
    return different ? static_cast<double>(false_same) / static_cast<double>(different) : 0.0;
  }
};

inline void tally(ProbeStats& stats, SdLabel truth, SdLabel predicted) {
  ++stats.samples;
  if (truth == SdLabel::Same) {
    ++stats.same;
    if (predicted == SdLabel::Same) ++stats.true_same;
    else ++stats.false_diff;
  } else if (predicted == SdLabel::Same) {
    ++stats.false_same;
  }
}

// Probe accuracy against stored SD labels over balanced generated batches.
inline ProbeStats evaluate_probe(const ImageParams& params, int count, std::uint64_t stream = 0x9b0e) {
  if (count <= 0 || count % 2 != 0) throw InvalidArgument("probe sample count must be positive and even");
  ProbeStats stats;
  constexpr int kChunk = 50;
  for (int done = 0, index = 0; done < count; ++index) {
    const int size = std::min(kChunk, count - done);
    Rng rng = batch_rng(params, stream, static_cast<std::uint64_t>(index));
    for (const auto& s : generate_batch(rng, params, Task::SD, size)) {
      tally(stats, s.sd_label, probe_classify(s.image, params.m(), params.k()));
    }
    done += size;
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Arrangement counting

// Unordered placements of two disjoint m x m squares in n x n:
// (P^2 - O^2) / 2 with P = L^2 positions (L = n - m + 1) and O the ordered
// 1-D pairs within distance m - 1, since overlap needs both axes to collide.
inline std::uint64_t count_pair_arrangements(int n, int m) {
  if (m < 1 || n < 1) throw InvalidArgument("count_arrangements: sides must be positive");
  if (m > n) return 0;
  const std::uint64_t L = static_cast<std::uint64_t>(n - m + 1);
  std::uint64_t close = L;
  for (std::uint64_t d = 1; d < static_cast<std::uint64_t>(m) && d < L; ++d) close += 2 * (L - d);
  const std::uint64_t positions = L * L;
  return (positions * positions - close * close) / 2;
}

namespace detail {

struct Box {
  int r0, r1, c0, c1;  // inclusive; empty when r0 > r1 or c0 > c1

  std::int64_t area() const {
    return (r0 > r1 || c0 > c1) ? 0 : static_cast<std::int64_t>(r1 - r0 + 1) * (c1 - c0 + 1);
  }
  Box intersect(const Box& o) const {
    return {std::max(r0, o.r0), std::min(r1, o.r1), std::max(c0, o.c0), std::min(c1, o.c1)};
  }
};

// Positions whose square overlaps the square at p.
inline Box conflict_box(Placement p, int m, int L) {
  return {std::max(0, p.row - m + 1), std::min(L - 1, p.row + m - 1), std::max(0, p.col - m + 1),
          std::min(L - 1, p.col + m - 1)};
}

// Size of the union of boxes by inclusion-exclusion.
inline std::int64_t union_area(const std::vector<Box>& boxes) {
  std::int64_t total = 0;
  const std::size_t count = boxes.size();
  for (std::uint32_t mask = 1; mask < (1U << count); ++mask) {
    Box acc{0, INT32_MAX, 0, INT32_MAX};
    int bits = 0;
    for (std::size_t i = 0; i < count; ++i) {
      if (mask & (1U << i)) {
        acc = acc.intersect(boxes[i]);
        ++bits;
      }
    }
    const auto a = acc.area();
    total += (bits % 2 == 1) ? a : -a;
  }
  return total;
}

// Ordered k-tuples of disjoint squares; the last square is counted in closed
// form against the union of the others' conflict boxes.
inline std::uint64_t count_ordered(int L, int m, int k, std::vector<Placement>& chosen, std::vector<Box>& boxes) {
  const std::int64_t positions = static_cast<std::int64_t>(L) * L;
  if (static_cast<int>(chosen.size()) == k - 1) return static_cast<std::uint64_t>(positions - union_area(boxes));
  std::uint64_t total = 0;
  for (int r = 0; r < L; ++r) {
    for (int c = 0; c < L; ++c) {
      const Placement p{r, c};
      if (std::any_of(chosen.begin(), chosen.end(), [&](Placement o) { return squares_overlap(o, p, m); })) continue;
      chosen.push_back(p);
      boxes.push_back(conflict_box(p, m, L));
      total += count_ordered(L, m, k, chosen, boxes);
      chosen.pop_back();
      boxes.pop_back();
    }
  }
  return total;
}

}  // namespace detail

// Enumeration cost above which count_arrangements gives up (k >= 3 only).
inline constexpr double kDefaultCountWorkLimit = 5e8;

// Exact number of unordered placements of k disjoint m x m squares in n x n.
// Returns nullopt when k >= 3 and the enumeration would exceed `work_limit`
// elementary steps.
inline std::optional<std::uint64_t> count_arrangements(int n, int m, int k,
                                                       double work_limit = kDefaultCountWorkLimit) {
  if (n < 1 || m < 1 || k < 1) throw InvalidArgument("count_arrangements: n, m, k must be positive");
  if (m > n) return 0;
  const int L = n - m + 1;
  const std::uint64_t positions = static_cast<std::uint64_t>(L) * L;
  if (k == 1) return positions;
  if (k == 2) return count_pair_arrangements(n, m);
  if (static_cast<std::int64_t>(k) > max_disjoint_squares(n, m)) return 0;
  const double work = std::pow(static_cast<double>(positions), k - 1) * std::ldexp(1.0, k - 1);
  if (work > work_limit) return std::nullopt;
  std::vector<Placement> chosen;
  std::vector<detail::Box> boxes;
  std::uint64_t ordered = detail::count_ordered(L, m, k, chosen, boxes);
  for (int i = 2; i <= k; ++i) ordered /= static_cast<std::uint64_t>(i);
  return ordered;
}

// Monte Carlo estimate: C(P, k)-style count of unordered tuples times the
// fraction of uniformly drawn ordered tuples that are pairwise disjoint.
inline double estimate_arrangements(int n, int m, int k, int draws = 200'000, std::uint64_t seed = 0x5eed) {
  if (m > n) return 0.0;
  const int L = n - m + 1;
  Rng rng(seed, static_cast<std::uint64_t>(n) * 1000003 + m * 101 + k);
  std::int64_t ok = 0;
  std::vector<Placement> tuple(k);
  for (int d = 0; d < draws; ++d) {
    bool disjoint = true;
    for (int i = 0; i < k && disjoint; ++i) {
      tuple[i] = {static_cast<int>(rng.below(L)), static_cast<int>(rng.below(L))};
      for (int j = 0; j < i; ++j) disjoint = disjoint && !squares_overlap(tuple[i], tuple[j], m);
    }
    ok += disjoint;
  }
  double tuples = std::pow(static_cast<double>(L) * L, k);
  for (int i = 2; i <= k; ++i) tuples /= i;
  return tuples * static_cast<double>(ok) / draws;
}

// 2^(m*m) as decimal text (exact for every m the generator accepts).
inline std::string pattern_count_text(int m) {
  const int cells = m * m;
  if (cells < 64) return std::to_string(std::uint64_t{1} << cells);
  return "2^" + std::to_string(cells);
}

// ---------------------------------------------------------------------------
// Straining report

struct StrainingRow {
  train::Sweep sweep;
  int param_value = 0;
  std::string architecture;
  Task task = Task::SD;
  bool present = false;  // false: condition planned but no summary on disk
  std::optional<double> mean_alc;
  std::optional<double> min_alc;
  std::optional<double> max_alc;
  int non_learned = 0;
  int trials = 0;
  double arrangements = 0.0;
  bool arrangements_exact = false;
  std::string pattern_count;
};

struct StrainingTrend {
  train::Sweep sweep;
  std::string architecture;
  Task task = Task::SD;
  std::string driver;  // "arrangements" for the n and k sweeps, "patterns" for m
  std::optional<double> first_alc;
  std::optional<double> last_alc;
  int first_non_learned = 0;
  int last_non_learned = 0;
  double variability_growth = 0.0;  // last / first of the driver count, log10
};

struct StrainingReport {
  std::vector<StrainingRow> rows;
  std::vector<StrainingTrend> trends;
  std::vector<std::string> warnings;
};

inline double arrangement_count(int n, int m, int k, bool& exact) {
  if (auto c = count_arrangements(n, m, k)) {
    exact = true;
    return static_cast<double>(*c);
  }
  exact = false;
  return estimate_arrangements(n, m, k);
}

// Joins condition summaries with arrangement and pattern counts per sweep.
// Planned conditions without a summary are listed as absent, never filled in.
inline StrainingReport straining_report(const std::vector<train::ConditionSummary>& summaries,
                                        const train::GridPlan& plan) {
  StrainingReport report;
  if (summaries.empty()) {
    report.warnings.push_back("no condition summaries found; report is empty");
    return report;
  }
  const std::uint64_t seed = summaries.front().params.seed();
  for (train::Sweep s : plan.sweeps) {
    for (const auto& mt : plan.model_tasks) {
      std::vector<StrainingRow> rows;
      for (int v : plan.values(s)) {
        const ImageParams p = train::sweep_params(s, v, seed);
        StrainingRow row{s, v, mt.architecture, mt.task};
        const auto it = std::find_if(summaries.begin(), summaries.end(), [&](const train::ConditionSummary& cs) {
          return cs.architecture == mt.architecture && cs.task == mt.task && cs.params.m() == p.m() &&
                 cs.params.n() == p.n() && cs.params.k() == p.k();
        });
        if (it != summaries.end()) {
          row.present = true;
          row.mean_alc = it->mean_alc;
          row.min_alc = it->min_alc;
          row.max_alc = it->max_alc;
          row.non_learned = it->non_learned;
          row.trials = static_cast<int>(it->trials.size());
        } else {
          report.warnings.push_back("missing condition " + train::condition_key(mt.architecture, mt.task, p));
        }
        row.arrangements = arrangement_count(p.n(), p.m(), p.k(), row.arrangements_exact);
        row.pattern_count = pattern_count_text(p.m());
        rows.push_back(row);
      }
      const auto first = std::find_if(rows.begin(), rows.end(), [](const StrainingRow& r) { return r.present; });
      const auto last = std::find_if(rows.rbegin(), rows.rend(), [](const StrainingRow& r) { return r.present; });
      if (first != rows.end() && &*first != &*last) {
        StrainingTrend t{s, mt.architecture, mt.task};
        t.driver = s == train::Sweep::ItemSide ? "patterns" : "arrangements";
        t.first_alc = first->mean_alc;
        t.last_alc = last->mean_alc;
        t.first_non_learned = first->non_learned;
        t.last_non_learned = last->non_learned;
        if (s == train::Sweep::ItemSide) {
          const auto cells = [](int m) { return static_cast<double>(m) * m; };
          t.variability_growth = (cells(last->param_value) - cells(first->param_value)) * std::log10(2.0);
        } else {
          t.variability_growth = std::log10(last->arrangements / first->arrangements);
        }
        report.trends.push_back(t);
      }
      report.rows.insert(report.rows.end(), rows.begin(), rows.end());
    }
  }
  return report;
}

}  // namespace psvrt::probe
