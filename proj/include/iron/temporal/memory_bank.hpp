#pragma once

#include <deque>
#include <stdexcept>
#include <string>
#include <vector>

#include "iron/numerics/tape.hpp"

namespace iron::temporal {

struct MonotonicityError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Mask-aware token grid of one past frame.
struct MemoryEntry {
  Varf tokens;  // [d_mem, h0, w0]
  double timestamp = 0.0;
  double freespace_fraction = 0.0;
};

/// Bounded FIFO of memory entries, oldest first.
class MemoryBank {
 public:
  explicit MemoryBank(std::size_t capacity = 3) : capacity_(capacity) {
    if (capacity_ == 0) throw std::invalid_argument("memory bank capacity must be >= 1");
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::deque<MemoryEntry>& entries() const { return entries_; }

  /// Appends an entry, evicting the oldest once capacity is exceeded.
  void push(MemoryEntry entry) {
    if (!entries_.empty() && !(entry.timestamp > entries_.back().timestamp))
      throw MonotonicityError("memory bank: timestamp " + std::to_string(entry.timestamp) +
                              " is not newer than " + std::to_string(entries_.back().timestamp));
    entries_.push_back(std::move(entry));
    while (entries_.size() > capacity_) entries_.pop_front();
  }

  void reset() { entries_.clear(); }

  /// Mean stored freespace fraction; 0 for an empty bank.
  double coverage_ratio() const {
    if (entries_.empty()) return 0.0;
    double s = 0.0;
    for (const auto& e : entries_) s += e.freespace_fraction;
    return s / static_cast<double>(entries_.size());
  }

  std::vector<double> timestamps() const {
    std::vector<double> out;
    for (const auto& e : entries_) out.push_back(e.timestamp);
    return out;
  }

 private:
  std::size_t capacity_;
  std::deque<MemoryEntry> entries_;
};

inline void push_entry(MemoryBank& bank, MemoryEntry entry) { bank.push(std::move(entry)); }
inline void reset_bank(MemoryBank& bank) { bank.reset(); }
inline double coverage_ratio(const MemoryBank& bank) { return bank.coverage_ratio(); }

}  // namespace iron::temporal
