#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "tasksumma/block_matrix.hpp"
#include "tasksumma/dag.hpp"
#include "tasksumma/grid.hpp"
#include "tasksumma/tiling.hpp"

namespace tasksumma {

/// Per-node accounting maintained by the simulated runtime.
struct MetricCounters {
  std::int64_t current_bytes = 0;     // live store bytes right now
  std::int64_t high_water_bytes = 0;  // max of current_bytes over the run
  std::int64_t flops = 0;             // 2*m*k*n per multiply executed here
  std::int64_t bytes_sent = 0;
  std::int64_t bytes_received = 0;
  std::array<std::uint64_t, kTaskKindCount> tasks_executed{};
  std::int64_t temps_allocated = 0;   // contended multiplies that took a temporary
  std::int64_t reduces_elided = 0;    // reduces skipped because the multiply fused
};

/// One executed task in the virtual-time trace.
struct TimelineEvent {
  TaskId task = 0;
  TaskKind kind = TaskKind::Multiply;
  NodeCoord node;
  std::int32_t iteration = 0;
  double start_us = 0.0;
  double end_us = 0.0;
  std::int64_t bytes = 0;  // sent (BcastSend) or received (BcastRecv)
};

enum class RunMode : std::uint8_t { Baseline, Task };

struct RunMetrics {
  ProcessGrid grid{1, 1};
  RunMode mode = RunMode::Task;
  int issue_limit = 1;
  std::vector<MetricCounters> per_node;  // indexed by grid.index()
  double makespan_virtual_us = 0.0;
  double makespan_wall_us = 0.0;
  double flop_rate = 0.0;  // total flops / wall seconds
  std::vector<TimelineEvent> timeline;  // sorted by start_us

  std::int64_t total_flops() const;
  std::int64_t total_bytes_sent() const;
  std::int64_t total_bytes_received() const;
};

/// min:max balance of static per-node load, reported as the x in "1:x"
/// (so 1.0 is perfect balance). Memory is the bytes of owned A, B and C
/// blocks; work is the multiply flops the node will execute. When some node
/// owns nothing, the ratio is +infinity and empty_nodes is set.
struct LoadRatios {
  double memory = 1.0;
  double work = 1.0;
  bool empty_nodes = false;
};
LoadRatios load_ratios(const Tiling& row_tiling, const Tiling& inner_tiling,
                       const Tiling& col_tiling, const ProcessGrid& grid);
LoadRatios load_ratios(const BlockMatrix& a, const BlockMatrix& b,
                       const ProcessGrid& grid);

/// Block-granularity extremes for the same tilings: memory compares single
/// result blocks (m*n), work compares single block products (m*k*n). Work
/// compounds three extents where memory compounds two, so its spread is
/// never smaller.
struct BlockExtremes {
  double memory = 1.0;
  double work = 1.0;
};
BlockExtremes block_level_ratios(const Tiling& row_tiling,
                                 const Tiling& inner_tiling,
                                 const Tiling& col_tiling);

struct ProblemInfo {
  int nodes = 1;
  double reference_rate = 0.0;  // measured single-node flop rate
  std::string label;
};

struct Report {
  double flop_rate = 0.0;
  double efficiency = 0.0;  // flop_rate / (nodes * reference_rate)
  std::int64_t total_flops = 0;
  std::int64_t total_bytes_sent = 0;
  double makespan_virtual_us = 0.0;
  double makespan_wall_us = 0.0;
};

/// Aggregate a run; throws MetricsError on degenerate input (no nodes,
/// zero wall makespan, or a non-positive reference rate).
Report summarize(const RunMetrics& metrics, const ProblemInfo& problem);

/// CSV, one row per node: row,col,mem_bytes_hwm,flops,bytes_sent,bytes_received.
void write_per_node_csv(std::ostream& out, const RunMetrics& metrics);

/// JSON object with totals, makespans and the per-node table.
void write_summary_json(std::ostream& out, const RunMetrics& metrics);

/// JSON-lines trace: {"task_id","kind","node","start_us","end_us","bytes"}.
void write_timeline_jsonl(std::ostream& out, const RunMetrics& metrics);

/// Highest number of iterations ever simultaneously open on one node,
/// judged from the timeline: an iteration is open on a node from its first
/// task start until its completion marker (gate task, or the rank-k update
/// in baseline mode) finishes.
int max_concurrent_iterations(const RunMetrics& metrics);

/// True if some instant strictly inside (0, makespan_virtual) has no task
/// executing anywhere — i.e. every node is waiting at once.
bool timeline_has_idle_gap(const RunMetrics& metrics);

}  // namespace tasksumma
