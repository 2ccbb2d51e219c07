#include "tasksumma/metrics.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>
#include <ostream>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tasksumma/errors.hpp"

#include <json.hpp>

namespace tasksumma {

std::int64_t RunMetrics::total_flops() const {
  std::int64_t sum = 0;
  for (const MetricCounters& c : per_node) sum += c.flops;
  return sum;
}

std::int64_t RunMetrics::total_bytes_sent() const {
  std::int64_t sum = 0;
  for (const MetricCounters& c : per_node) sum += c.bytes_sent;
  return sum;
}

std::int64_t RunMetrics::total_bytes_received() const {
  std::int64_t sum = 0;
  for (const MetricCounters& c : per_node) sum += c.bytes_received;
  return sum;
}

namespace {

/// Sum of tile extents owned by each cyclic residue class.
std::vector<std::int64_t> residue_sums(const Tiling& tiling, int classes) {
  std::vector<std::int64_t> sums(static_cast<std::size_t>(classes), 0);
  for (std::int64_t t = 0; t < tiling.block_count(); ++t) {
    sums[static_cast<std::size_t>(t % classes)] += tiling.block_extent(t);
  }
  return sums;
}

struct Spread {
  std::int64_t min = std::numeric_limits<std::int64_t>::max();
  std::int64_t max = 0;
  void feed(std::int64_t v) {
    min = std::min(min, v);
    max = std::max(max, v);
  }
  double ratio(bool* empty) const {
    if (min <= 0) {
      if (empty) *empty = true;
      return std::numeric_limits<double>::infinity();
    }
    return static_cast<double>(max) / static_cast<double>(min);
  }
};

}  // namespace

LoadRatios load_ratios(const Tiling& row_tiling, const Tiling& inner_tiling,
                       const Tiling& col_tiling, const ProcessGrid& grid) {
  // Ownership is cyclic in both block indices, so per-node totals factor
  // into residue-class sums; no need to walk the full block grid.
  const auto rows = residue_sums(row_tiling, grid.rows);        // result rows
  const auto cols = residue_sums(col_tiling, grid.cols);        // result cols
  const auto inner_c = residue_sums(inner_tiling, grid.cols);   // left operand cols
  const auto inner_r = residue_sums(inner_tiling, grid.rows);   // right operand rows
  const std::int64_t inner_total = inner_tiling.extent();

  Spread memory, work;
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      const std::int64_t elems = rows[r] * inner_c[c]    // owned share of A
                                 + inner_r[r] * cols[c]  // owned share of B
                                 + rows[r] * cols[c];    // owned share of C
      memory.feed(elems * static_cast<std::int64_t>(sizeof(double)));
      work.feed(2 * rows[r] * inner_total * cols[c]);
    }
  }
  LoadRatios out;
  out.memory = memory.ratio(&out.empty_nodes);
  out.work = work.ratio(&out.empty_nodes);
  return out;
}

LoadRatios load_ratios(const BlockMatrix& a, const BlockMatrix& b,
                       const ProcessGrid& grid) {
  if (!a.conformable(b)) {
    throw std::invalid_argument("load_ratios: inner tilings do not match");
  }
  return load_ratios(a.row_tiling(), a.col_tiling(), b.col_tiling(), grid);
}

BlockExtremes block_level_ratios(const Tiling& row_tiling,
                                 const Tiling& inner_tiling,
                                 const Tiling& col_tiling) {
  Spread m, k, n;
  for (std::int64_t t = 0; t < row_tiling.block_count(); ++t) {
    m.feed(row_tiling.block_extent(t));
  }
  for (std::int64_t t = 0; t < inner_tiling.block_count(); ++t) {
    k.feed(inner_tiling.block_extent(t));
  }
  for (std::int64_t t = 0; t < col_tiling.block_count(); ++t) {
    n.feed(col_tiling.block_extent(t));
  }
  BlockExtremes out;
  out.memory = static_cast<double>(m.max) * static_cast<double>(n.max) /
               (static_cast<double>(m.min) * static_cast<double>(n.min));
  out.work = out.memory * static_cast<double>(k.max) / static_cast<double>(k.min);
  return out;
}

Report summarize(const RunMetrics& metrics, const ProblemInfo& problem) {
  if (metrics.per_node.empty()) {
    throw MetricsError("summarize: metrics cover no nodes");
  }
  if (metrics.makespan_wall_us <= 0.0) {
    throw MetricsError("summarize: wall makespan must be positive");
  }
  if (problem.nodes < 1) throw MetricsError("summarize: node count must be >= 1");
  if (problem.reference_rate <= 0.0) {
    throw MetricsError("summarize: reference rate must be positive");
  }
  Report report;
  report.total_flops = metrics.total_flops();
  report.total_bytes_sent = metrics.total_bytes_sent();
  report.makespan_virtual_us = metrics.makespan_virtual_us;
  report.makespan_wall_us = metrics.makespan_wall_us;
  report.flop_rate =
      static_cast<double>(report.total_flops) / (metrics.makespan_wall_us * 1e-6);
  report.efficiency =
      report.flop_rate / (static_cast<double>(problem.nodes) * problem.reference_rate);
  return report;
}

void write_per_node_csv(std::ostream& out, const RunMetrics& metrics) {
  out << "row,col,mem_bytes_hwm,flops,bytes_sent,bytes_received\n";
  for (std::int32_t n = 0; n < metrics.grid.node_count(); ++n) {
    const NodeCoord coord = metrics.grid.coord(n);
    const MetricCounters& c = metrics.per_node[static_cast<std::size_t>(n)];
    out << coord.row << ',' << coord.col << ',' << c.high_water_bytes << ','
        << c.flops << ',' << c.bytes_sent << ',' << c.bytes_received << '\n';
  }
}

void write_summary_json(std::ostream& out, const RunMetrics& metrics) {
  nlohmann::json doc;
  doc["grid"] = {{"rows", metrics.grid.rows}, {"cols", metrics.grid.cols}};
  doc["mode"] = metrics.mode == RunMode::Baseline ? "baseline" : "task";
  doc["issue_limit"] = metrics.issue_limit;
  doc["makespan_virtual_us"] = metrics.makespan_virtual_us;
  doc["makespan_wall_us"] = metrics.makespan_wall_us;
  doc["flop_rate"] = metrics.flop_rate;

  std::array<std::uint64_t, kTaskKindCount> tasks{};
  std::int64_t temps = 0, elided = 0;
  for (const MetricCounters& c : metrics.per_node) {
    for (int k = 0; k < kTaskKindCount; ++k) tasks[k] += c.tasks_executed[k];
    temps += c.temps_allocated;
    elided += c.reduces_elided;
  }
  nlohmann::json by_kind;
  for (int k = 0; k < kTaskKindCount; ++k) {
    by_kind[task_kind_name(static_cast<TaskKind>(k))] = tasks[k];
  }
  doc["totals"] = {{"flops", metrics.total_flops()},
                   {"bytes_sent", metrics.total_bytes_sent()},
                   {"bytes_received", metrics.total_bytes_received()},
                   {"temps_allocated", temps},
                   {"reduces_elided", elided},
                   {"tasks", std::move(by_kind)}};

  nlohmann::json per_node = nlohmann::json::array();
  for (std::int32_t n = 0; n < metrics.grid.node_count(); ++n) {
    const NodeCoord coord = metrics.grid.coord(n);
    const MetricCounters& c = metrics.per_node[static_cast<std::size_t>(n)];
    per_node.push_back({{"row", coord.row},
                        {"col", coord.col},
                        {"high_water_bytes", c.high_water_bytes},
                        {"current_bytes", c.current_bytes},
                        {"flops", c.flops},
                        {"bytes_sent", c.bytes_sent},
                        {"bytes_received", c.bytes_received},
                        {"temps_allocated", c.temps_allocated},
                        {"reduces_elided", c.reduces_elided}});
  }
  doc["per_node"] = std::move(per_node);
  out << doc.dump(2) << '\n';
}

void write_timeline_jsonl(std::ostream& out, const RunMetrics& metrics) {
  for (const TimelineEvent& ev : metrics.timeline) {
    nlohmann::json line{{"task_id", ev.task},
                        {"kind", task_kind_name(ev.kind)},
                        {"node", {ev.node.row, ev.node.col}},
                        {"start_us", ev.start_us},
                        {"end_us", ev.end_us},
                        {"bytes", ev.bytes}};
    out << line.dump() << '\n';
  }
}

int max_concurrent_iterations(const RunMetrics& metrics) {
  struct Span {
    double first_start = std::numeric_limits<double>::infinity();
    double last_end = 0.0;
    double marker_end = -1.0;
  };
  // An iteration is open on a node from its first task to its completion
  // marker: the gate in task mode, the rank-k update in baseline mode.
  const TaskKind marker = metrics.mode == RunMode::Baseline
                              ? TaskKind::Multiply
                              : TaskKind::ThrottleGate;
  std::unordered_map<std::uint64_t, Span> spans;
  for (const TimelineEvent& ev : metrics.timeline) {
    const std::uint64_t key =
        (static_cast<std::uint64_t>(metrics.grid.index(ev.node)) << 32) |
        static_cast<std::uint32_t>(ev.iteration);
    Span& span = spans[key];
    span.first_start = std::min(span.first_start, ev.start_us);
    span.last_end = std::max(span.last_end, ev.end_us);
    if (ev.kind == marker) span.marker_end = std::max(span.marker_end, ev.end_us);
  }
  // Sweep per node; a close and an open at the same instant do not overlap.
  std::unordered_map<std::uint32_t, std::vector<std::pair<double, int>>> deltas;
  for (const auto& [key, span] : spans) {
    const auto node = static_cast<std::uint32_t>(key >> 32);
    const double close = span.marker_end >= 0.0 ? span.marker_end : span.last_end;
    deltas[node].push_back({span.first_start, +1});
    deltas[node].push_back({close, -1});
  }
  int best = 0;
  for (auto& [node, events] : deltas) {
    std::sort(events.begin(), events.end(),
              [](const std::pair<double, int>& lhs, const std::pair<double, int>& rhs) {
                if (lhs.first != rhs.first) return lhs.first < rhs.first;
                return lhs.second < rhs.second;  // close before open
              });
    int open = 0;
    for (const auto& [time, delta] : events) {
      open += delta;
      best = std::max(best, open);
    }
  }
  return best;
}

bool timeline_has_idle_gap(const RunMetrics& metrics) {
  std::vector<std::pair<double, double>> busy;
  double makespan = 0.0;
  for (const TimelineEvent& ev : metrics.timeline) {
    makespan = std::max(makespan, ev.end_us);
    if (ev.end_us > ev.start_us) busy.push_back({ev.start_us, ev.end_us});
  }
  if (makespan <= 0.0) return false;
  std::sort(busy.begin(), busy.end());
  double covered = 0.0;
  for (const auto& [start, end] : busy) {
    if (start > covered) return true;  // nothing runs in (covered, start)
    covered = std::max(covered, end);
  }
  return covered < makespan;
}

}  // namespace tasksumma
