#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <thread>
#include <vector>

#include "tasksumma/block_matrix.hpp"
#include "tasksumma/errors.hpp"
#include "tasksumma/gemm.hpp"
#include "tasksumma/metrics.hpp"
#include "tasksumma/oracle.hpp"
#include "tasksumma/rng.hpp"
#include "tasksumma/runtime.hpp"
#include "tasksumma/tiling.hpp"

using namespace tasksumma;

namespace {

RunConfig task_cfg(bool deterministic, int workers = 2) {
  RunConfig cfg;
  cfg.mode = RunMode::Task;
  cfg.deterministic = deterministic;
  cfg.workers = workers;
  return cfg;
}

std::int64_t owned_result_bytes(const BlockMatrix& c, const ProcessGrid& grid,
                                NodeCoord node) {
  std::int64_t bytes = 0;
  for (std::int64_t i = 0; i < c.block_rows(); ++i)
    for (std::int64_t j = 0; j < c.block_cols(); ++j)
      if (owner(grid, i, j) == node) bytes += c.block(i, j).size_bytes();
  return bytes;
}

// Shared bookkeeping checks that must hold after any completed run.
void check_counters(const RunResult& result, const BlockMatrix& a,
                    const BlockMatrix& b) {
  const RunMetrics& m = result.metrics;
  const ProcessGrid& grid = m.grid;
  REQUIRE(m.per_node.size() == static_cast<std::size_t>(grid.node_count()));

  // All multiply work happened, no matter how it was tiled or scheduled.
  CHECK(m.total_flops() == 2 * a.rows() * a.cols() * b.cols());

  // Every transferred byte was sent by someone and received by someone,
  // and the tree broadcasts move each operand to its group exactly once.
  CHECK(m.total_bytes_sent() == m.total_bytes_received());
  const std::int64_t expected_traffic =
      8 * ((grid.cols - 1) * a.rows() * a.cols() +
           (grid.rows - 1) * a.cols() * b.cols());
  CHECK(m.total_bytes_received() == expected_traffic);

  for (std::int32_t n = 0; n < grid.node_count(); ++n) {
    const MetricCounters& c = m.per_node[static_cast<std::size_t>(n)];
    CHECK(c.flops % 2 == 0);
    CHECK(c.high_water_bytes >= c.current_bytes);
    // When the run ends, only this node's share of the result is still
    // accounted: every received block and temporary has been released.
    CHECK(c.current_bytes ==
          owned_result_bytes(result.c, grid, grid.coord(n)));
    const auto reduces =
        static_cast<std::int64_t>(c.tasks_executed[static_cast<int>(TaskKind::Reduce)]);
    CHECK(c.temps_allocated == reduces - c.reduces_elided);
  }

  if (m.mode == RunMode::Task) {
    for (const MetricCounters& c : m.per_node)
      CHECK(c.tasks_executed[static_cast<int>(TaskKind::Multiply)] ==
            c.tasks_executed[static_cast<int>(TaskKind::Reduce)]);
  } else {
    for (const MetricCounters& c : m.per_node) {
      CHECK(c.tasks_executed[static_cast<int>(TaskKind::Reduce)] == 0);
      CHECK(c.temps_allocated == 0);
    }
  }
}

}  // namespace

TEST_CASE("latency model parsing") {
  CHECK(LatencyModel::parse("zero").delay_us(1000) == 0.0);
  LatencyModel fixed = LatencyModel::parse("fixed:100");
  CHECK(fixed.delay_us(0) == 100.0);
  CHECK(fixed.delay_us(1 << 20) == 100.0);
  LatencyModel per_byte = LatencyModel::parse("perbyte:5:0.25");
  CHECK(per_byte.delay_us(100) == 5.0 + 25.0);
  CHECK_THROWS_AS(LatencyModel::parse("fixed"), std::invalid_argument);
  CHECK_THROWS_AS(LatencyModel::parse("fixed:abc"), std::invalid_argument);
  CHECK_THROWS_AS(LatencyModel::parse("fixed:-3"), std::invalid_argument);
  CHECK_THROWS_AS(LatencyModel::parse("perbyte:5"), std::invalid_argument);
  CHECK_THROWS_AS(LatencyModel::parse("warp:1"), std::invalid_argument);
}

TEST_CASE("node mailbox and store enforce the transfer protocol") {
  SimNode node(NodeCoord{0, 0});
  const BlockKey key{Operand::A, 1, 2, 0};

  auto make_message = [&] {
    Message msg;
    msg.src = NodeCoord{0, 1};
    msg.dst = NodeCoord{0, 0};
    msg.key = key;
    msg.payload = DenseBlock(2, 2);
    msg.payload.at(0, 0) = 4.0;
    msg.bytes = msg.payload.size_bytes();
    msg.arrival_us = 12.0;
    return msg;
  };

  node.post(make_message());
  CHECK_THROWS_AS(node.post(make_message()), ProtocolError);  // already queued
  CHECK_FALSE(node.has_block(key));

  CHECK(node.deliver(key, 2) == 12.0);
  CHECK(node.has_block(key));
  CHECK(node.block(key).at(0, 0) == 4.0);
  CHECK(node.counters().bytes_received == 32);
  CHECK(node.counters().current_bytes == 32);
  CHECK_THROWS_AS(node.post(make_message()), ProtocolError);  // still resident
  CHECK_THROWS_AS(node.deliver(key, 1), ProtocolError);       // nothing queued

  node.release_use(key);
  CHECK(node.has_block(key));  // one consumer left
  node.release_use(key);
  CHECK_FALSE(node.has_block(key));
  CHECK(node.counters().current_bytes == 0);
  CHECK(node.counters().high_water_bytes == 32);

  CHECK_THROWS_AS(node.release_use(key), SchedulerError);     // over-release
  CHECK_THROWS_AS(node.post(make_message()), ProtocolError);  // single-use key
  CHECK_THROWS_AS(node.block(key), SchedulerError);

  const BlockKey other{Operand::B, 0, 0, 1};
  CHECK_THROWS_AS(node.release_use(other), SchedulerError);  // never stored

  // Zero-consumer blocks are dropped on arrival but still counted.
  SimNode sink(NodeCoord{1, 0});
  sink.put_block(other, DenseBlock(4, 4), 0);
  CHECK_FALSE(sink.has_block(other));
  CHECK(sink.counters().high_water_bytes == 128);
  CHECK(sink.counters().current_bytes == 0);

  // The byte ledger survives free/alloc sequences.
  sink.account_alloc(100);
  sink.account_free(100);
  sink.account_alloc(50);
  CHECK(sink.counters().current_bytes == 50);
  CHECK(sink.counters().high_water_bytes == 128);
}

TEST_CASE("a single-block product equals the plain kernel") {
  ProcessGrid grid(1, 1);
  Tiling t({0, 7});
  BlockMatrix a = random_block_matrix(t, t, grid, 100);
  BlockMatrix b = random_block_matrix(t, t, grid, 101);
  RunResult r = run(a, b, grid, task_cfg(false, 1));
  DenseBlock want(7, 7);
  gemm_block(1.0, a.block(0, 0), b.block(0, 0), want);
  CHECK(r.c.block(0, 0) == want);
  check_counters(r, a, b);
}

TEST_CASE("deterministic runs reproduce the reference result exactly") {
  ProcessGrid grid(2, 2);
  Tiling t = make_uniform_tiling(256, 64);
  BlockMatrix a = random_block_matrix(t, t, grid, 1);
  BlockMatrix b = random_block_matrix(t, t, grid, 2);
  const DenseBlock want = oracle_multiply(a, b);

  RunResult det = run(a, b, grid, task_cfg(true, 3));
  CHECK(det.c.to_dense() == want);
  check_counters(det, a, b);

  RunResult again = run(a, b, grid, task_cfg(true, 3));
  CHECK(again.c.to_dense() == det.c.to_dense());

  RunConfig base_cfg;
  base_cfg.mode = RunMode::Baseline;
  base_cfg.workers = 2;
  RunResult base = run(a, b, grid, base_cfg);
  CHECK(base.c.to_dense() == want);
  CHECK(base.metrics.issue_limit == 2);
  check_counters(base, a, b);

  RunResult free_run = run(a, b, grid, task_cfg(false, 3));
  const ErrorReport err = max_mixed_relative_error(free_run.c.to_dense(), want);
  CHECK(err.worst <= 1e-12 * static_cast<double>(t.block_count()));
  check_counters(free_run, a, b);
}

TEST_CASE("uneven tilings and strip splitting keep results exact") {
  ProcessGrid grid(2, 3);
  Tiling rows = make_nonuniform_tiling(150, 5, 41);
  Tiling mid = make_nonuniform_tiling(120, 6, 42);
  Tiling cols = make_nonuniform_tiling(90, 4, 43);
  BlockMatrix a = random_block_matrix(rows, mid, grid, 7);
  BlockMatrix b = random_block_matrix(mid, cols, grid, 8);
  const DenseBlock want = oracle_multiply(a, b);

  RunConfig cfg = task_cfg(true, 3);
  cfg.sub_split = 2;
  RunResult det = run(a, b, grid, cfg);
  CHECK(det.c.to_dense() == want);
  CHECK(det.c.rows() == 150);
  CHECK(det.c.cols() == 90);
  check_counters(det, a, b);

  cfg.deterministic = false;
  cfg.sub_split = 3;
  RunResult free_run = run(a, b, grid, cfg);
  CHECK(max_mixed_relative_error(free_run.c.to_dense(), want).worst <=
        1e-12 * static_cast<double>(mid.block_count()));
  check_counters(free_run, a, b);
}

TEST_CASE("runs reject malformed setups") {
  ProcessGrid grid(2, 2);
  Tiling t8 = make_uniform_tiling(8, 4);
  Tiling t6 = make_uniform_tiling(6, 3);
  BlockMatrix a = random_block_matrix(t8, t8, grid, 1);
  BlockMatrix mismatched = random_block_matrix(t6, t8, grid, 2);
  CHECK_THROWS_AS(run(a, mismatched, grid, {}), std::invalid_argument);

  BlockMatrix b = random_block_matrix(t8, t8, grid, 3);
  CHECK_THROWS_AS(run(a, b, ProcessGrid(2, 1), {}), std::invalid_argument);

  RunConfig bad;
  bad.workers = -1;
  CHECK_THROWS_AS(run(a, b, grid, bad), std::invalid_argument);
  bad.workers = 1;
  bad.issue_limit = 0;
  CHECK_THROWS_AS(run(a, b, grid, bad), std::invalid_argument);
  bad.issue_limit = 1;
  bad.sub_split = 0;
  CHECK_THROWS_AS(run(a, b, grid, bad), std::invalid_argument);
}

TEST_CASE("contended accumulations fall back to temporaries") {
  // One result block fed by many iterations, several workers, and a window
  // wide enough to keep them all in flight: sooner or later two products
  // race for the same target and the loser must take a temporary. The
  // accounting identity (checked in check_counters) holds either way; this
  // drives the fallback path itself.
  ProcessGrid grid(1, 1);
  Tiling one({0, 128});
  Tiling inner = make_uniform_tiling(1024, 128);  // 8 iterations
  BlockMatrix a = random_block_matrix(one, inner, grid, 61);
  BlockMatrix b = random_block_matrix(inner, one, grid, 62);
  const DenseBlock want = oracle_multiply(a, b);

  RunConfig cfg = task_cfg(false, 4);
  cfg.issue_limit = 8;
  cfg.collect_timeline = false;

  std::int64_t temps_seen = 0;
  for (int attempt = 0; attempt < 40 && temps_seen == 0; ++attempt) {
    RunResult r = run(a, b, grid, cfg);
    check_counters(r, a, b);
    CHECK(max_mixed_relative_error(r.c.to_dense(), want).worst <= 8e-12);
    temps_seen = r.metrics.per_node[0].temps_allocated;
  }
  CHECK(temps_seen >= 1);

  // Deterministic mode serializes per-target accumulation, so the race
  // cannot happen and every fold is fused.
  RunConfig det = task_cfg(true, 4);
  det.issue_limit = 8;
  RunResult r = run(a, b, grid, det);
  CHECK(r.metrics.per_node[0].temps_allocated == 0);
  CHECK(r.metrics.per_node[0].reduces_elided == 8);
  CHECK(r.c.to_dense() == want);
}

TEST_CASE("virtual time is a pure function of the dependence graph") {
  ProcessGrid grid(2, 2);
  Tiling t = make_uniform_tiling(128, 32);
  BlockMatrix a = random_block_matrix(t, t, grid, 9);
  BlockMatrix b = random_block_matrix(t, t, grid, 10);

  RunConfig cfg = task_cfg(true, 1);
  cfg.latency = LatencyModel::fixed(50.0);
  const double first = run(a, b, grid, cfg).metrics.makespan_virtual_us;
  const double second = run(a, b, grid, cfg).metrics.makespan_virtual_us;
  cfg.workers = 3;
  const double more_workers = run(a, b, grid, cfg).metrics.makespan_virtual_us;
  CHECK(first == second);
  CHECK(first == more_workers);
  CHECK(first > 0.0);
}

TEST_CASE("fine-grained scheduling hides latency the pipeline cannot") {
  ProcessGrid grid(2, 2);
  Tiling t = make_uniform_tiling(256, 32);  // 8 iterations
  BlockMatrix a = random_block_matrix(t, t, grid, 11);
  BlockMatrix b = random_block_matrix(t, t, grid, 12);

  RunConfig task = task_cfg(true, 2);
  task.latency = LatencyModel::fixed(100.0);
  RunConfig baseline = task;
  baseline.mode = RunMode::Baseline;

  const double task_span = run(a, b, grid, task).metrics.makespan_virtual_us;
  const double base_span = run(a, b, grid, baseline).metrics.makespan_virtual_us;
  CHECK(task_span <= base_span);
}

TEST_CASE("timelines are ordered and bounded by the makespan") {
  ProcessGrid grid(2, 2);
  Tiling t = make_uniform_tiling(96, 24);
  BlockMatrix a = random_block_matrix(t, t, grid, 13);
  BlockMatrix b = random_block_matrix(t, t, grid, 14);
  RunConfig cfg = task_cfg(true, 2);
  cfg.latency = LatencyModel::fixed(10.0);
  RunResult r = run(a, b, grid, cfg);
  const auto& tl = r.metrics.timeline;
  REQUIRE(!tl.empty());
  double makespan = 0.0;
  for (std::size_t e = 0; e < tl.size(); ++e) {
    CHECK(tl[e].start_us >= 0.0);
    CHECK(tl[e].end_us >= tl[e].start_us);
    if (e > 0) CHECK(tl[e].start_us >= tl[e - 1].start_us);
    makespan = std::max(makespan, tl[e].end_us);
    // Every remote arrival waits out the modeled hop delay.
    if (tl[e].kind == TaskKind::BcastRecv && tl[e].bytes > 0)
      CHECK(tl[e].start_us >= 10.0);
  }
  CHECK(r.metrics.makespan_virtual_us == makespan);

  // The issue window is respected on the wire, not just in the graph.
  CHECK(max_concurrent_iterations(r.metrics) <= r.metrics.issue_limit);

  cfg.collect_timeline = false;
  CHECK(run(a, b, grid, cfg).metrics.timeline.empty());
}

TEST_CASE("pipeline mode never opens more than two iterations") {
  ProcessGrid grid(2, 2);
  Tiling t = make_uniform_tiling(192, 24);  // 8 iterations
  BlockMatrix a = random_block_matrix(t, t, grid, 15);
  BlockMatrix b = random_block_matrix(t, t, grid, 16);
  RunConfig cfg;
  cfg.mode = RunMode::Baseline;
  cfg.workers = 2;
  RunResult r = run(a, b, grid, cfg);
  CHECK(max_concurrent_iterations(r.metrics) <= 2);
  check_counters(r, a, b);
}

TEST_CASE("free-flowing runs leave no instant with every node stalled") {
  ProcessGrid grid(2, 2);
  Tiling t = make_uniform_tiling(128, 32);
  BlockMatrix a = random_block_matrix(t, t, grid, 17);
  BlockMatrix b = random_block_matrix(t, t, grid, 18);
  for (bool det : {true, false}) {
    RunResult r = run(a, b, grid, task_cfg(det, 2));
    CHECK_FALSE(timeline_has_idle_gap(r.metrics));
  }

  // With compute nearly free and long hops, everyone ends up waiting on
  // the network at once — the detector must see that.
  Tiling tiny = make_uniform_tiling(32, 8);
  BlockMatrix a2 = random_block_matrix(tiny, tiny, grid, 19);
  BlockMatrix b2 = random_block_matrix(tiny, tiny, grid, 20);
  RunConfig slow = task_cfg(false, 2);
  slow.latency = LatencyModel::fixed(1000.0);
  CHECK(timeline_has_idle_gap(run(a2, b2, grid, slow).metrics));
}

TEST_CASE("per-node memory stays within the issue-window budget") {
  ProcessGrid grid(2, 2);
  const std::int64_t block = 48;
  Tiling t = make_uniform_tiling(192, block);  // 4x4 blocks, divisible
  BlockMatrix a = random_block_matrix(t, t, grid, 21);
  BlockMatrix b = random_block_matrix(t, t, grid, 22);

  for (int window : {1, 2}) {
    for (bool det : {true, false}) {
      RunConfig cfg = task_cfg(det, 2);
      cfg.issue_limit = window;
      RunResult r = run(a, b, grid, cfg);
      check_counters(r, a, b);
      const double per_iteration_elems = iteration_memory_overhead(
          4, 4, static_cast<double>(block), static_cast<double>(block),
          static_cast<double>(block), grid);
      const std::int64_t temp_bytes = block * block * 8;
      for (const MetricCounters& c : r.metrics.per_node) {
        const std::int64_t budget =
            static_cast<std::int64_t>(per_iteration_elems * 8.0) * window +
            (c.temps_allocated + cfg.workers) * temp_bytes;
        CHECK(c.high_water_bytes <= budget);
      }
    }
  }
}

TEST_CASE("independent runs can execute concurrently") {
  ProcessGrid grid(2, 2);
  Tiling t = make_uniform_tiling(128, 32);
  BlockMatrix a = random_block_matrix(t, t, grid, 23);
  BlockMatrix b = random_block_matrix(t, t, grid, 24);
  const DenseBlock want = oracle_multiply(a, b);

  DenseBlock got1, got2;
  std::thread one([&] { got1 = run(a, b, grid, task_cfg(true, 2)).c.to_dense(); });
  std::thread two([&] { got2 = run(a, b, grid, task_cfg(true, 2)).c.to_dense(); });
  one.join();
  two.join();
  CHECK(got1 == want);
  CHECK(got2 == want);
}

TEST_CASE("issue-limit override flows through to the run metrics") {
  ProcessGrid grid(2, 2);
  Tiling t = make_uniform_tiling(128, 16);  // 8 iterations
  BlockMatrix a = random_block_matrix(t, t, grid, 25);
  BlockMatrix b = random_block_matrix(t, t, grid, 26);
  RunConfig cfg = task_cfg(true, 2);
  CHECK(run(a, b, grid, cfg).metrics.issue_limit == 2);  // 2x2 grid window
  cfg.issue_limit = 5;
  CHECK(run(a, b, grid, cfg).metrics.issue_limit == 5);
}
