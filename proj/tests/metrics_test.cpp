#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "tasksumma/block_matrix.hpp"
#include "tasksumma/errors.hpp"
#include "tasksumma/metrics.hpp"
#include "tasksumma/tiling.hpp"

#include <json.hpp>

using namespace tasksumma;

namespace {

TimelineEvent event(TaskKind kind, NodeCoord node, std::int32_t iteration,
                    double start, double end) {
  TimelineEvent ev;
  ev.kind = kind;
  ev.node = node;
  ev.iteration = iteration;
  ev.start_us = start;
  ev.end_us = end;
  return ev;
}

}  // namespace

TEST_CASE("evenly divisible tilings balance perfectly") {
  ProcessGrid grid(2, 2);
  Tiling t = make_uniform_tiling(128, 32);
  LoadRatios r = load_ratios(t, t, t, grid);
  CHECK(r.memory == 1.0);
  CHECK(r.work == 1.0);
  CHECK_FALSE(r.empty_nodes);

  BlockMatrix a = random_block_matrix(t, t, grid, 1);
  BlockMatrix b = random_block_matrix(t, t, grid, 2);
  LoadRatios from_blocks = load_ratios(a, b, grid);
  CHECK(from_blocks.memory == 1.0);
  CHECK(from_blocks.work == 1.0);

  Tiling other = make_uniform_tiling(96, 32);
  BlockMatrix c = random_block_matrix(other, other, grid, 3);
  CHECK_THROWS_AS(load_ratios(a, c, grid), std::invalid_argument);
}

TEST_CASE("a single node is always in balance with itself") {
  ProcessGrid grid(1, 1);
  Tiling rows = make_nonuniform_tiling(1000, 7, 5);
  Tiling mid = make_nonuniform_tiling(800, 9, 6);
  Tiling cols = make_nonuniform_tiling(600, 3, 7);
  LoadRatios r = load_ratios(rows, mid, cols, grid);
  CHECK(r.memory == 1.0);
  CHECK(r.work == 1.0);
  CHECK_FALSE(r.empty_nodes);
}

TEST_CASE("ownership ratios match a direct walk over the blocks") {
  ProcessGrid grid(16, 16);
  Tiling rows = make_nonuniform_tiling(32768, 128, 42);
  Tiling mid = make_nonuniform_tiling(32768, 128, 43);
  Tiling cols = make_nonuniform_tiling(32768, 128, 44);

  // Independent tally: walk every block of A, B and C and charge its
  // owner, then take the max:min spread. Sums stay far below 2^53, so the
  // double ratios must agree exactly.
  std::vector<std::int64_t> mem_bytes(256, 0);
  std::vector<std::int64_t> work(256, 0);
  auto node_index = [&](std::int64_t i, std::int64_t j) {
    NodeCoord o = owner(grid, i, j);
    return static_cast<std::size_t>(grid.index(o));
  };
  for (std::int64_t i = 0; i < rows.block_count(); ++i) {
    for (std::int64_t j = 0; j < mid.block_count(); ++j)
      mem_bytes[node_index(i, j)] += 8 * rows.block_extent(i) * mid.block_extent(j);
  }
  for (std::int64_t i = 0; i < mid.block_count(); ++i) {
    for (std::int64_t j = 0; j < cols.block_count(); ++j)
      mem_bytes[node_index(i, j)] += 8 * mid.block_extent(i) * cols.block_extent(j);
  }
  for (std::int64_t i = 0; i < rows.block_count(); ++i) {
    for (std::int64_t j = 0; j < cols.block_count(); ++j) {
      const std::size_t n = node_index(i, j);
      mem_bytes[n] += 8 * rows.block_extent(i) * cols.block_extent(j);
      work[n] += 2 * rows.block_extent(i) * mid.extent() * cols.block_extent(j);
    }
  }
  auto spread = [](const std::vector<std::int64_t>& v) {
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    return static_cast<double>(*hi) / static_cast<double>(*lo);
  };

  LoadRatios r = load_ratios(rows, mid, cols, grid);
  CHECK(r.memory == spread(mem_bytes));
  CHECK(r.work == spread(work));
  CHECK(r.memory > 1.0);
  CHECK(r.work > 1.0);
  CHECK_FALSE(r.empty_nodes);

  // Aggregating many random blocks per node smooths the imbalance well
  // below the spread between individual blocks.
  BlockExtremes blocks = block_level_ratios(rows, mid, cols);
  CHECK(r.memory < blocks.memory);
  CHECK(blocks.work >= blocks.memory);
}

TEST_CASE("nodes that own nothing poison the ratio") {
  ProcessGrid grid(3, 3);
  Tiling two = make_uniform_tiling(8, 4);  // 2 blocks per dimension
  LoadRatios r = load_ratios(two, two, two, grid);
  CHECK(r.empty_nodes);
  CHECK(std::isinf(r.memory));
  CHECK(std::isinf(r.work));
}

TEST_CASE("block-level extremes compound extents") {
  Tiling rows({0, 1, 3});   // extents 1, 2
  Tiling inner({0, 2, 3});  // extents 2, 1
  Tiling cols({0, 4, 5});   // extents 4, 1
  BlockExtremes b = block_level_ratios(rows, inner, cols);
  CHECK(b.memory == 8.0);  // (2*4) / (1*1)
  CHECK(b.work == 16.0);   // memory scaled by the 2:1 inner spread

  Tiling even = make_uniform_tiling(64, 16);
  BlockExtremes uniform = block_level_ratios(even, even, even);
  CHECK(uniform.memory == 1.0);
  CHECK(uniform.work == 1.0);
}

TEST_CASE("run summaries report rate against a reference machine") {
  RunMetrics m;
  m.per_node.resize(1);
  m.per_node[0].flops = 2'000'000'000;
  m.per_node[0].bytes_sent = 64;
  m.makespan_virtual_us = 123.0;
  m.makespan_wall_us = 1e6;  // one second

  ProblemInfo self;
  self.nodes = 1;
  self.reference_rate = 2e9;
  Report r = summarize(m, self);
  CHECK(r.flop_rate == doctest::Approx(2e9));
  CHECK(r.efficiency == doctest::Approx(1.0));
  CHECK(r.total_flops == 2'000'000'000);
  CHECK(r.total_bytes_sent == 64);
  CHECK(r.makespan_virtual_us == 123.0);
  CHECK(r.makespan_wall_us == 1e6);

  m.makespan_wall_us = 2e6;  // twice as slow: half the rate and efficiency
  CHECK(summarize(m, self).efficiency == doctest::Approx(0.5));

  ProblemInfo four = self;
  four.nodes = 4;
  m.makespan_wall_us = 1e6;
  CHECK(summarize(m, four).efficiency == doctest::Approx(0.25));

  RunMetrics empty;
  CHECK_THROWS_AS(summarize(empty, self), MetricsError);
  RunMetrics zero_wall = m;
  zero_wall.makespan_wall_us = 0.0;
  CHECK_THROWS_AS(summarize(zero_wall, self), MetricsError);
  ProblemInfo bad_nodes = self;
  bad_nodes.nodes = 0;
  CHECK_THROWS_AS(summarize(m, bad_nodes), MetricsError);
  ProblemInfo no_rate = self;
  no_rate.reference_rate = 0.0;
  CHECK_THROWS_AS(summarize(m, no_rate), MetricsError);
}

TEST_CASE("per-node tables serialize to csv and json") {
  RunMetrics m;
  m.grid = ProcessGrid(2, 1);
  m.mode = RunMode::Task;
  m.issue_limit = 2;
  m.per_node.resize(2);
  m.per_node[0].high_water_bytes = 10;
  m.per_node[0].flops = 4;
  m.per_node[0].bytes_sent = 2;
  m.per_node[0].bytes_received = 1;
  m.per_node[1].high_water_bytes = 20;
  m.per_node[1].flops = 8;
  m.per_node[1].bytes_sent = 3;
  m.per_node[1].bytes_received = 5;
  m.per_node[1].temps_allocated = 2;
  m.per_node[1].reduces_elided = 6;
  m.makespan_virtual_us = 50.0;
  m.makespan_wall_us = 75.0;

  std::ostringstream csv;
  write_per_node_csv(csv, m);
  CHECK(csv.str() ==
        "row,col,mem_bytes_hwm,flops,bytes_sent,bytes_received\n"
        "0,0,10,4,2,1\n"
        "1,0,20,8,3,5\n");

  std::ostringstream js;
  write_summary_json(js, m);
  nlohmann::json doc = nlohmann::json::parse(js.str());
  CHECK(doc["grid"]["rows"] == 2);
  CHECK(doc["grid"]["cols"] == 1);
  CHECK(doc["mode"] == "task");
  CHECK(doc["issue_limit"] == 2);
  CHECK(doc["makespan_virtual_us"] == 50.0);
  CHECK(doc["totals"]["flops"] == 12);
  CHECK(doc["totals"]["bytes_sent"] == 5);
  CHECK(doc["totals"]["bytes_received"] == 6);
  CHECK(doc["totals"]["temps_allocated"] == 2);
  CHECK(doc["totals"]["reduces_elided"] == 6);
  CHECK(doc["totals"]["tasks"].size() == static_cast<std::size_t>(kTaskKindCount));
  REQUIRE(doc["per_node"].size() == 2);
  CHECK(doc["per_node"][1]["high_water_bytes"] == 20);
  CHECK(doc["per_node"][1]["row"] == 1);
  CHECK(doc["per_node"][1]["col"] == 0);
}

TEST_CASE("timeline traces emit one json object per event") {
  RunMetrics m;
  m.grid = ProcessGrid(1, 1);
  m.timeline.push_back(event(TaskKind::Multiply, {0, 0}, 0, 1.0, 3.0));
  m.timeline.push_back(event(TaskKind::BcastRecv, {0, 0}, 1, 3.0, 3.0));
  m.timeline[1].bytes = 256;
  m.timeline[1].task = 7;

  std::ostringstream out;
  write_timeline_jsonl(out, m);
  std::istringstream lines(out.str());
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) {
    nlohmann::json ev = nlohmann::json::parse(line);
    CHECK(ev.contains("task_id"));
    CHECK(ev["kind"].is_string());
    CHECK(ev["node"].size() == 2);
    CHECK(ev["end_us"].get<double>() >= ev["start_us"].get<double>());
    ++count;
  }
  CHECK(count == 2);
}

TEST_CASE("iteration overlap is judged per node against the close marker") {
  RunMetrics m;
  m.grid = ProcessGrid(1, 1);
  m.mode = RunMode::Task;
  const NodeCoord n0{0, 0};
  // Three iterations in a ladder; each closes (gate) exactly when the next
  // opens, so only two are ever open together.
  m.timeline = {event(TaskKind::Multiply, n0, 0, 0.0, 10.0),
                event(TaskKind::ThrottleGate, n0, 0, 10.0, 10.0),
                event(TaskKind::Multiply, n0, 1, 5.0, 15.0),
                event(TaskKind::ThrottleGate, n0, 1, 15.0, 15.0),
                event(TaskKind::Multiply, n0, 2, 10.0, 20.0),
                event(TaskKind::ThrottleGate, n0, 2, 20.0, 20.0)};
  CHECK(max_concurrent_iterations(m) == 2);

  // Without its gate an iteration stays open to its last event.
  m.timeline.pop_back();
  CHECK(max_concurrent_iterations(m) == 2);

  // In pipeline mode the rank-k update is the closing marker, so the same
  // ladder without gates counts the full overlap.
  RunMetrics base;
  base.grid = ProcessGrid(1, 1);
  base.mode = RunMode::Baseline;
  base.timeline = {event(TaskKind::BcastRecv, n0, 0, 0.0, 1.0),
                   event(TaskKind::Multiply, n0, 0, 1.0, 3.0),
                   event(TaskKind::BcastRecv, n0, 1, 0.0, 2.0),
                   event(TaskKind::Multiply, n0, 1, 3.0, 5.0),
                   event(TaskKind::BcastRecv, n0, 2, 2.0, 4.0),
                   event(TaskKind::Multiply, n0, 2, 5.0, 6.0)};
  CHECK(max_concurrent_iterations(base) == 3);

  // Different nodes never stack against each other.
  RunMetrics two;
  two.grid = ProcessGrid(2, 1);
  two.mode = RunMode::Task;
  two.timeline = {event(TaskKind::Multiply, {0, 0}, 0, 0.0, 10.0),
                  event(TaskKind::Multiply, {1, 0}, 0, 0.0, 10.0)};
  CHECK(max_concurrent_iterations(two) == 1);

  RunMetrics quiet;
  quiet.grid = ProcessGrid(1, 1);
  CHECK(max_concurrent_iterations(quiet) == 0);
}

TEST_CASE("idle-gap detection ignores instantaneous events") {
  RunMetrics m;
  m.grid = ProcessGrid(1, 1);
  const NodeCoord n0{0, 0};

  m.timeline = {event(TaskKind::Multiply, n0, 0, 0.0, 10.0),
                event(TaskKind::Multiply, n0, 1, 20.0, 30.0)};
  CHECK(timeline_has_idle_gap(m));

  m.timeline[1] = event(TaskKind::Multiply, n0, 1, 10.0, 30.0);
  CHECK_FALSE(timeline_has_idle_gap(m));

  // A zero-length event inside the hole does not plug it.
  m.timeline = {event(TaskKind::Multiply, n0, 0, 0.0, 10.0),
                event(TaskKind::BcastRecv, n0, 1, 15.0, 15.0),
                event(TaskKind::Multiply, n0, 1, 20.0, 30.0)};
  CHECK(timeline_has_idle_gap(m));

  // ...and a trailing zero-length event extends the horizon past the work.
  m.timeline = {event(TaskKind::Multiply, n0, 0, 0.0, 10.0),
                event(TaskKind::ThrottleGate, n0, 0, 30.0, 30.0)};
  CHECK(timeline_has_idle_gap(m));

  m.timeline.clear();
  CHECK_FALSE(timeline_has_idle_gap(m));
}
