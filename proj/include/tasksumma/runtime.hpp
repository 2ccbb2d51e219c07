#pragma once

#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "tasksumma/block_matrix.hpp"
#include "tasksumma/dag.hpp"
#include "tasksumma/grid.hpp"
#include "tasksumma/metrics.hpp"

namespace tasksumma {

/// Message latency in virtual time.
struct LatencyModel {
  enum class Kind : std::uint8_t { Zero, Fixed, PerByte };
  Kind kind = Kind::Zero;
  double base_us = 0.0;
  double per_byte_us = 0.0;

  double delay_us(std::int64_t bytes) const {
    switch (kind) {
      case Kind::Zero: return 0.0;
      case Kind::Fixed: return base_us;
      case Kind::PerByte: return base_us + per_byte_us * static_cast<double>(bytes);
    }
    return 0.0;
  }

  static LatencyModel zero() { return {}; }
  static LatencyModel fixed(double us) { return {Kind::Fixed, us, 0.0}; }
  static LatencyModel per_byte(double base, double per_byte) {
    return {Kind::PerByte, base, per_byte};
  }
  /// Parse "zero" | "fixed:US" | "perbyte:US:USPB"; throws std::invalid_argument.
  static LatencyModel parse(const std::string& text);
};

/// One block copy in flight between two nodes.
struct Message {
  NodeCoord src;
  NodeCoord dst;
  BlockKey key;
  std::int64_t bytes = 0;
  DenseBlock payload;
  double arrival_us = 0.0;  // sender completion + modeled latency
};

/// One simulated process: a mailbox for incoming messages, a store of
/// blocks materialized by the run (received copies and temporaries; owned
/// input blocks stay with the caller's matrices), and metric counters.
/// Nodes share no state; everything crossing node boundaries is a Message.
class SimNode {
 public:
  SimNode() = default;
  explicit SimNode(NodeCoord coords) : coords_(coords) {}

  NodeCoord coords() const { return coords_; }

  /// Sender side: park a message in this node's mailbox.
  void post(Message&& msg);

  /// Receiver side: accept the parked message for `key`, moving its payload
  /// into the store with the given consumer count. Returns the arrival
  /// time. Throws ProtocolError if the key is already resident, was already
  /// consumed and released, or no message for it was posted.
  double deliver(const BlockKey& key, int consumers);

  /// Direct store insertion (run-local allocations, e.g. temporaries are
  /// accounted elsewhere; this is used by deliver and by tests).
  void put_block(const BlockKey& key, DenseBlock&& block, int consumers);

  bool has_block(const BlockKey& key) const;
  const DenseBlock& block(const BlockKey& key) const;

  /// One consumer of `key` finished. Frees the block when the last
  /// consumer is done; throws SchedulerError on over-release.
  void release_use(const BlockKey& key);

  /// Bytes added outside the store proper (result blocks, temporaries).
  void account_alloc(std::int64_t bytes);
  void account_free(std::int64_t bytes);

  /// Counter mutation, safe against concurrent workers on the same node.
  void note_task(TaskKind kind);
  void add_flops(std::int64_t flops);
  void add_sent(std::int64_t bytes);
  void note_temp();
  void note_elided_reduce();

  /// Snapshot of the counters (locks; use after or between tasks).
  MetricCounters counters() const;

  std::size_t store_size() const;

 private:
  struct Stored {
    DenseBlock block;
    int consumers_left = 0;
  };

  void put_block_locked(const BlockKey& key, DenseBlock&& block, int consumers);

  NodeCoord coords_;
  mutable std::mutex mutex_;
  std::unordered_map<BlockKey, Message> mailbox_;
  std::unordered_map<BlockKey, Stored> store_;
  std::unordered_set<BlockKey> released_;
  MetricCounters counters_;
};

struct RunConfig {
  int workers = 0;  // 0: hardware_concurrency (at least 1)
  LatencyModel latency{};
  RunMode mode = RunMode::Task;
  bool deterministic = false;
  std::optional<int> issue_limit;  // override the computed window
  int sub_split = 1;
  bool collect_timeline = true;
};

struct RunResult {
  BlockMatrix c;
  RunMetrics metrics;
};

/// Multiply a * b on the simulated grid. Builds the dependence graph for
/// the configured mode, validates it, and executes it on a pool of worker
/// threads with per-node ready queues and work stealing while a
/// discrete-event clock assigns virtual timestamps (compute cost is modeled
/// from flops; message hops add the latency model's delay).
///
/// In deterministic mode the result is bitwise identical across runs and
/// equal to the ascending-iteration fused accumulation the oracle produces.
/// Throws std::invalid_argument on shape/grid mismatch.
RunResult run(const BlockMatrix& a, const BlockMatrix& b,
              const ProcessGrid& grid, const RunConfig& config = {});

/// Modeled compute throughput of the virtual clock, in flops per
/// microsecond. Virtual time is a what-if clock for latency reasoning, so
/// the rate is a fixed constant rather than a measurement.
constexpr double kVirtualFlopsPerUs = 1.0e4;

int default_worker_count();

}  // namespace tasksumma
