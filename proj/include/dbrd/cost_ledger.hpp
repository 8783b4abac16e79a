#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <map>
#include <mutex>
#include <string>

namespace dbrd {

struct LedgerCounts {
  std::uint64_t embed_calls = 0;
  std::uint64_t pair_classifications = 0;
  std::uint64_t similarity_ops = 0;

  friend bool operator==(const LedgerCounts&, const LedgerCounts&) = default;
};

// Exact inference accounting for one run. Counters are atomic so concurrent
// queries can share a ledger; they only ever increase.
class CostLedger {
 public:
  void add_embeds(std::uint64_t n) { embed_.fetch_add(n, std::memory_order_relaxed); }
  void add_classifications(std::uint64_t n) { classify_.fetch_add(n, std::memory_order_relaxed); }
  void add_similarities(std::uint64_t n) { sim_.fetch_add(n, std::memory_order_relaxed); }

  LedgerCounts counts() const {
    return {embed_.load(), classify_.load(), sim_.load()};
  }

  void add_time_ms(const std::string& phase, double ms) {
    std::lock_guard lock(mu_);
    wall_ms_[phase] += ms;
  }
  std::map<std::string, double> timings_ms() const {
    std::lock_guard lock(mu_);
    return wall_ms_;
  }

 private:
  std::atomic<std::uint64_t> embed_{0};
  std::atomic<std::uint64_t> classify_{0};
  std::atomic<std::uint64_t> sim_{0};
  mutable std::mutex mu_;
  std::map<std::string, double> wall_ms_;
};

// Adds the elapsed monotonic time to a ledger phase on destruction.
class PhaseTimer {
 public:
  PhaseTimer(CostLedger* ledger, std::string phase)
      : ledger_(ledger), phase_(std::move(phase)), start_(std::chrono::steady_clock::now()) {}
  ~PhaseTimer() {
    if (!ledger_) return;
    auto end = std::chrono::steady_clock::now();
    ledger_->add_time_ms(phase_, std::chrono::duration<double, std::milli>(end - start_).count());
  }
  PhaseTimer(const PhaseTimer&) = delete;
  PhaseTimer& operator=(const PhaseTimer&) = delete;

 private:
  CostLedger* ledger_;
  std::string phase_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace dbrd
