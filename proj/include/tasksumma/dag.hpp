#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "tasksumma/block_matrix.hpp"
#include "tasksumma/grid.hpp"

namespace tasksumma {

using TaskId = std::uint32_t;

enum class TaskKind : std::uint8_t {
  BcastSend,     // forward a block (or panel) to binary-tree children
  BcastRecv,     // arrival of a block (or panel); at the root: local availability
  Multiply,      // one sub-block product (task mode) or one rank-k update (baseline)
  Reduce,        // fold a multiply's temporary into the result sub-block
  ThrottleGate,  // per-node end-of-iteration marker driving the issue window
};
constexpr int kTaskKindCount = 5;
const char* task_kind_name(TaskKind kind);

enum class Operand : std::uint8_t { A, B };

enum class EdgeKind : std::uint8_t { Data, Sequence };

/// Why a sequence edge exists. Exported JSON only distinguishes
/// data/sequence; the tag lets tests reason about edge roles.
enum class SeqTag : std::uint8_t {
  None,    // data edges
  Window,  // issue-window edges: iteration completion -> later iteration's entry
  Order,   // deterministic mode: fixes the accumulation order per result sub-block
};

/// Identity of one transferable unit in a node's store or in a message:
/// a block of A or B, narrowed to one strip when sub-splitting is active.
struct BlockKey {
  Operand operand = Operand::A;
  std::int32_t row = 0;    // block row (A: i, B: k)
  std::int32_t col = 0;    // block col (A: k, B: j)
  std::int32_t strip = 0;  // intra-block strip index; 0 when unsplit
  bool operator==(const BlockKey&) const = default;
};

struct BcastPayload {
  Operand operand = Operand::A;
  std::int32_t k = 0;          // iteration
  std::int32_t block_row = -1; // -1 for whole-panel transfers (baseline)
  std::int32_t block_col = -1;
  std::int32_t strip = 0;
  bool panel = false;          // baseline bundles one whole panel share per message set
};

struct MultiplyPayload {
  std::int32_t i = -1;  // result block row; -1 for baseline rank-k updates
  std::int32_t j = -1;  // result block col
  std::int32_t k = 0;   // iteration
  std::int32_t x = 0;   // result strip row
  std::int32_t y = 0;   // result strip col
  bool rank_update = false;  // baseline: one update covering all local blocks
};

struct ReducePayload {
  std::int32_t i = 0;
  std::int32_t j = 0;
  std::int32_t k = 0;
  std::int32_t x = 0;
  std::int32_t y = 0;
};

struct GatePayload {};

struct Task {
  TaskId id = 0;
  TaskKind kind = TaskKind::Multiply;
  std::int32_t iteration = 0;
  NodeCoord node;
  std::variant<BcastPayload, MultiplyPayload, ReducePayload, GatePayload> payload;
};

struct Edge {
  TaskId src = 0;
  TaskId dst = 0;
  EdgeKind kind = EdgeKind::Data;
  SeqTag tag = SeqTag::None;
};

enum class GraphMode : std::uint8_t { Baseline, TaskBased };

/// Immutable dependence graph over simulation tasks, with adjacency built
/// once at construction.
class TaskGraph {
 public:
  TaskGraph(GraphMode mode, int issue_limit, int sub_split, bool deterministic,
            std::vector<Task> tasks, std::vector<Edge> edges);

  GraphMode mode() const { return mode_; }
  int issue_limit() const { return issue_limit_; }
  int sub_split() const { return sub_split_; }
  bool deterministic() const { return deterministic_; }

  const std::vector<Task>& tasks() const { return tasks_; }
  const std::vector<Edge>& edges() const { return edges_; }
  std::size_t task_count() const { return tasks_.size(); }

  /// Edge index lists, CSR style.
  std::span<const std::uint32_t> out_edges(TaskId id) const;
  std::span<const std::uint32_t> in_edges(TaskId id) const;
  int in_degree(TaskId id) const;
  int data_in_degree(TaskId id) const;

  /// JSON export: {"mode", "issue_limit", "tasks": [...], "edges": [...]}.
  std::string to_json() const;

 private:
  GraphMode mode_;
  int issue_limit_;
  int sub_split_;
  bool deterministic_;
  std::vector<Task> tasks_;
  std::vector<Edge> edges_;
  std::vector<std::uint32_t> out_offsets_, out_index_;
  std::vector<std::uint32_t> in_offsets_, in_index_;
  std::vector<std::int32_t> data_in_degree_;
};

/// How many iterations may be in flight at once on a p_row x p_col grid
/// multiplying with inner_blocks inner block steps:
///   - a degenerate grid dimension (< 2) pins the window to 2,
///   - a grid at least inner_blocks wide in both dimensions admits them all,
///   - otherwise the narrower grid dimension is the limit,
/// and the window never exceeds the number of iterations that exist.
int concurrency_limit(int p_row, int p_col, std::int64_t inner_blocks);

/// Children of `me` in the binary broadcast tree rooted at `root` over a
/// group of `group_size` ranks. Hardware-oblivious: ranks are renumbered
/// relative to the root, and relative rank r forwards to 2r+1 and 2r+2.
std::vector<int> bcast_tree_children(int root, int me, int group_size);

/// Parent of `me` in the same tree; -1 for the root.
int bcast_tree_parent(int root, int me, int group_size);

/// Procedural pipeline: per iteration and node, one pair of panel
/// arrivals feeding a single rank-k update, updates chained through the
/// result, and each iteration's communication entry sequence-gated on the
/// completion of the iteration two steps back (the one-iteration prefetch
/// of the classic non-blocking formulation). issue_limit is fixed at 2.
TaskGraph build_baseline_graph(std::int64_t block_rows, std::int64_t block_cols,
                               std::int64_t inner_blocks,
                               const ProcessGrid& grid);

struct TaskGraphOptions {
  std::optional<int> issue_limit;  // override; >= 1, defaults to concurrency_limit
  bool deterministic = false;      // add per-target accumulation-order chains
  int sub_split = 1;               // split each block into up to T strips per dim
};

/// Fully task-decomposed graph: per-strip broadcasts, one Multiply per
/// (result sub-block, iteration) with exactly two data inputs, one Reduce
/// per Multiply, and per-node ThrottleGate tasks that open iteration
/// k + issue_limit once everything of iteration k has retired locally.
TaskGraph build_task_graph(const BlockMatrix& a, const BlockMatrix& b,
                           const ProcessGrid& grid,
                           const TaskGraphOptions& options = {});

/// Kahn topological sort over data + sequence edges. Returns a valid order;
/// throws GraphError naming an offending edge if a cycle exists.
std::vector<TaskId> topo_validate(const TaskGraph& graph);

/// Strip helpers shared by graph construction and execution. A dimension of
/// `extent` elements splits into min(sub_split, extent) nearly equal strips.
int strip_count(std::int64_t extent, int sub_split);
std::pair<std::int64_t, std::int64_t> strip_range(std::int64_t extent,
                                                  int parts, int s);

}  // namespace tasksumma

template <>
struct std::hash<tasksumma::BlockKey> {
  std::size_t operator()(const tasksumma::BlockKey& k) const noexcept {
    std::size_t h = static_cast<std::size_t>(k.operand);
    h = h * 1000003u ^ static_cast<std::size_t>(static_cast<std::uint32_t>(k.row));
    h = h * 1000003u ^ static_cast<std::size_t>(static_cast<std::uint32_t>(k.col));
    h = h * 1000003u ^ static_cast<std::size_t>(static_cast<std::uint32_t>(k.strip));
    return h;
  }
};
