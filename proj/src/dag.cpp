#include "tasksumma/dag.hpp"

#include <algorithm>
#include <stdexcept>
#include <utility>

#include "tasksumma/errors.hpp"

#include <json.hpp>

namespace tasksumma {

const char* task_kind_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::BcastSend: return "BcastSend";
    case TaskKind::BcastRecv: return "BcastRecv";
    case TaskKind::Multiply: return "Multiply";
    case TaskKind::Reduce: return "Reduce";
    case TaskKind::ThrottleGate: return "ThrottleGate";
  }
  return "?";
}

int concurrency_limit(int p_row, int p_col, std::int64_t inner_blocks) {
  if (p_row < 1 || p_col < 1 || inner_blocks < 1) {
    throw std::invalid_argument("concurrency_limit: all arguments must be >= 1");
  }
  std::int64_t limit;
  if (p_row < 2 || p_col < 2) {
    limit = 2;  // a 1-wide grid cannot pipeline more than one lookahead step
  } else if (p_row >= inner_blocks && p_col >= inner_blocks) {
    limit = inner_blocks;  // enough roots to start everything at once
  } else {
    limit = std::min(p_row, p_col);  // roots recycle after this many steps
  }
  return static_cast<int>(std::min(limit, inner_blocks));
}

std::vector<int> bcast_tree_children(int root, int me, int group_size) {
  if (group_size < 1 || root < 0 || root >= group_size || me < 0 || me >= group_size) {
    throw std::invalid_argument("bcast_tree_children: rank out of range");
  }
  const int rel = (me - root + group_size) % group_size;
  std::vector<int> children;
  for (int c = 2 * rel + 1; c <= 2 * rel + 2; ++c) {
    if (c < group_size) children.push_back((root + c) % group_size);
  }
  return children;
}

int bcast_tree_parent(int root, int me, int group_size) {
  if (group_size < 1 || root < 0 || root >= group_size || me < 0 || me >= group_size) {
    throw std::invalid_argument("bcast_tree_parent: rank out of range");
  }
  const int rel = (me - root + group_size) % group_size;
  if (rel == 0) return -1;
  return (root + (rel - 1) / 2) % group_size;
}

int strip_count(std::int64_t extent, int sub_split) {
  return static_cast<int>(std::min<std::int64_t>(sub_split, extent));
}

std::pair<std::int64_t, std::int64_t> strip_range(std::int64_t extent,
                                                  int parts, int s) {
  return {extent * s / parts, extent * (s + 1) / parts};
}

TaskGraph::TaskGraph(GraphMode mode, int issue_limit, int sub_split,
                     bool deterministic, std::vector<Task> tasks,
                     std::vector<Edge> edges)
    : mode_(mode),
      issue_limit_(issue_limit),
      sub_split_(sub_split),
      deterministic_(deterministic),
      tasks_(std::move(tasks)),
      edges_(std::move(edges)) {
  if (issue_limit_ < 1) throw std::invalid_argument("TaskGraph: issue_limit < 1");
  if (sub_split_ < 1) throw std::invalid_argument("TaskGraph: sub_split < 1");
  const auto n = tasks_.size();
  out_offsets_.assign(n + 1, 0);
  in_offsets_.assign(n + 1, 0);
  data_in_degree_.assign(n, 0);
  for (const Edge& e : edges_) {
    if (e.src >= n || e.dst >= n) {
      throw GraphError("TaskGraph: edge references unknown task");
    }
    ++out_offsets_[e.src + 1];
    ++in_offsets_[e.dst + 1];
    if (e.kind == EdgeKind::Data) ++data_in_degree_[e.dst];
  }
  for (std::size_t t = 0; t < n; ++t) {
    out_offsets_[t + 1] += out_offsets_[t];
    in_offsets_[t + 1] += in_offsets_[t];
  }
  out_index_.resize(edges_.size());
  in_index_.resize(edges_.size());
  std::vector<std::uint32_t> out_fill(out_offsets_.begin(), out_offsets_.end() - 1);
  std::vector<std::uint32_t> in_fill(in_offsets_.begin(), in_offsets_.end() - 1);
  for (std::uint32_t e = 0; e < edges_.size(); ++e) {
    out_index_[out_fill[edges_[e].src]++] = e;
    in_index_[in_fill[edges_[e].dst]++] = e;
  }
}

std::span<const std::uint32_t> TaskGraph::out_edges(TaskId id) const {
  return {out_index_.data() + out_offsets_[id],
          out_index_.data() + out_offsets_[id + 1]};
}

std::span<const std::uint32_t> TaskGraph::in_edges(TaskId id) const {
  return {in_index_.data() + in_offsets_[id],
          in_index_.data() + in_offsets_[id + 1]};
}

int TaskGraph::in_degree(TaskId id) const {
  return static_cast<int>(in_offsets_[id + 1] - in_offsets_[id]);
}

int TaskGraph::data_in_degree(TaskId id) const { return data_in_degree_[id]; }

namespace {

/// Accumulates tasks/edges and tracks, per task, whether it has a successor
/// within its own (node, iteration) group. Tasks without one are the
/// group's sinks: everything the node does for that iteration funnels
/// through them, so they are what completion gating hangs off.
class Builder {
 public:
  explicit Builder(const ProcessGrid& grid, std::int64_t iterations)
      : grid_(grid), iterations_(iterations),
        by_group_(static_cast<std::size_t>(grid.node_count()) *
                  static_cast<std::size_t>(iterations)) {}

  TaskId add(TaskKind kind, std::int32_t iteration, NodeCoord node,
             std::variant<BcastPayload, MultiplyPayload, ReducePayload,
                          GatePayload> payload,
             bool track = true) {
    const TaskId id = static_cast<TaskId>(tasks_.size());
    tasks_.push_back(Task{id, kind, iteration, node, std::move(payload)});
    has_group_succ_.push_back(false);
    if (track) group_of(node, iteration).push_back(id);
    return id;
  }

  void edge(TaskId src, TaskId dst, EdgeKind kind, SeqTag tag = SeqTag::None) {
    edges_.push_back(Edge{src, dst, kind, tag});
    if (tasks_[src].node == tasks_[dst].node &&
        tasks_[src].iteration == tasks_[dst].iteration) {
      has_group_succ_[src] = true;
    }
  }

  std::vector<TaskId>& group_of(NodeCoord node, std::int64_t iteration) {
    return by_group_[static_cast<std::size_t>(grid_.index(node)) * iterations_ +
                     static_cast<std::size_t>(iteration)];
  }

  std::vector<TaskId> sinks_of(NodeCoord node, std::int64_t iteration) {
    std::vector<TaskId> sinks;
    for (TaskId t : group_of(node, iteration)) {
      if (!has_group_succ_[t]) sinks.push_back(t);
    }
    return sinks;
  }

  std::vector<Task> take_tasks() { return std::move(tasks_); }
  std::vector<Edge> take_edges() { return std::move(edges_); }

 private:
  const ProcessGrid& grid_;
  std::int64_t iterations_;
  std::vector<Task> tasks_;
  std::vector<Edge> edges_;
  std::vector<bool> has_group_succ_;
  std::vector<std::vector<TaskId>> by_group_;
};

constexpr TaskId kNoTask = static_cast<TaskId>(-1);

}  // namespace

TaskGraph build_baseline_graph(std::int64_t block_rows, std::int64_t block_cols,
                               std::int64_t inner_blocks,
                               const ProcessGrid& grid) {
  if (block_rows < 1 || block_cols < 1 || inner_blocks < 1) {
    throw std::invalid_argument("build_baseline_graph: block counts must be >= 1");
  }
  const int pr = grid.rows;
  const int pc = grid.cols;
  Builder builder(grid, inner_blocks);

  // Per-node ids of the current iteration's tasks, and the previous update.
  const std::size_t nodes = static_cast<std::size_t>(grid.node_count());
  std::vector<TaskId> prev_update(nodes, kNoTask);
  std::vector<std::vector<TaskId>> recv_a(static_cast<std::size_t>(inner_blocks),
                                          std::vector<TaskId>(nodes, kNoTask));
  std::vector<std::vector<TaskId>> recv_b(static_cast<std::size_t>(inner_blocks),
                                          std::vector<TaskId>(nodes, kNoTask));

  for (std::int64_t k = 0; k < inner_blocks; ++k) {
    const auto kk = static_cast<std::int32_t>(k);
    // Left-operand panel share, one broadcast per grid row that owns blocks.
    for (int r = 0; r < pr && r < block_rows; ++r) {
      const int root = static_cast<int>(k % pc);
      std::vector<TaskId> recv(pc), send(pc, kNoTask);
      for (int c = 0; c < pc; ++c) {
        const NodeCoord node{r, c};
        recv[c] = builder.add(TaskKind::BcastRecv, kk, node,
                              BcastPayload{Operand::A, kk, -1, -1, 0, true});
        recv_a[k][grid.index(node)] = recv[c];
      }
      for (int c = 0; c < pc; ++c) {
        if (bcast_tree_children(root, c, pc).empty()) continue;
        send[c] = builder.add(TaskKind::BcastSend, kk, NodeCoord{r, c},
                              BcastPayload{Operand::A, kk, -1, -1, 0, true});
        builder.edge(recv[c], send[c], EdgeKind::Data);
      }
      for (int c = 0; c < pc; ++c) {
        if (c == root) continue;
        builder.edge(send[bcast_tree_parent(root, c, pc)], recv[c], EdgeKind::Data);
      }
    }
    // Right-operand panel share, one broadcast per grid column.
    for (int c = 0; c < pc && c < block_cols; ++c) {
      const int root = static_cast<int>(k % pr);
      std::vector<TaskId> recv(pr), send(pr, kNoTask);
      for (int r = 0; r < pr; ++r) {
        const NodeCoord node{r, c};
        recv[r] = builder.add(TaskKind::BcastRecv, kk, node,
                              BcastPayload{Operand::B, kk, -1, -1, 0, true});
        recv_b[k][grid.index(node)] = recv[r];
      }
      for (int r = 0; r < pr; ++r) {
        if (bcast_tree_children(root, r, pr).empty()) continue;
        send[r] = builder.add(TaskKind::BcastSend, kk, NodeCoord{r, c},
                              BcastPayload{Operand::B, kk, -1, -1, 0, true});
        builder.edge(recv[r], send[r], EdgeKind::Data);
      }
      for (int r = 0; r < pr; ++r) {
        if (r == root) continue;
        builder.edge(send[bcast_tree_parent(root, r, pr)], recv[r], EdgeKind::Data);
      }
    }
    // One rank-k update per node that owns result blocks; chained on the
    // result so iterations cannot reorder.
    for (int r = 0; r < pr && r < block_rows; ++r) {
      for (int c = 0; c < pc && c < block_cols; ++c) {
        const NodeCoord node{r, c};
        const std::size_t n = static_cast<std::size_t>(grid.index(node));
        const TaskId u =
            builder.add(TaskKind::Multiply, kk, node,
                        MultiplyPayload{-1, -1, kk, 0, 0, true});
        builder.edge(recv_a[k][n], u, EdgeKind::Data);
        builder.edge(recv_b[k][n], u, EdgeKind::Data);
        if (prev_update[n] != kNoTask) {
          builder.edge(prev_update[n], u, EdgeKind::Data);
        }
        prev_update[n] = u;
      }
    }
    // Communication of iteration k is posted by the loop body that runs
    // after the update of iteration k-2 retired: the one-step prefetch.
    if (k >= 2) {
      for (std::size_t n = 0; n < nodes; ++n) {
        const TaskId ra = recv_a[k][n];
        const TaskId rb = recv_b[k][n];
        if (ra == kNoTask && rb == kNoTask) continue;
        for (TaskId sink :
             builder.sinks_of(grid.coord(static_cast<std::int32_t>(n)),
                              k - 2)) {
          if (ra != kNoTask) builder.edge(sink, ra, EdgeKind::Sequence, SeqTag::Window);
          if (rb != kNoTask) builder.edge(sink, rb, EdgeKind::Sequence, SeqTag::Window);
        }
      }
    }
  }

  return TaskGraph(GraphMode::Baseline, 2, 1, false, builder.take_tasks(),
                   builder.take_edges());
}

TaskGraph build_task_graph(const BlockMatrix& a, const BlockMatrix& b,
                           const ProcessGrid& grid,
                           const TaskGraphOptions& options) {
  if (!a.conformable(b)) {
    throw std::invalid_argument("build_task_graph: inner tilings do not match");
  }
  if (!(a.grid() == grid) || !(b.grid() == grid)) {
    throw std::invalid_argument("build_task_graph: operands live on a different grid");
  }
  if (options.sub_split < 1) {
    throw std::invalid_argument("build_task_graph: sub_split must be >= 1");
  }
  const std::int64_t M = a.block_rows();
  const std::int64_t K = a.block_cols();
  const std::int64_t N = b.block_cols();
  const int pr = grid.rows;
  const int pc = grid.cols;
  const int T = options.sub_split;
  int issue_limit = options.issue_limit
                        ? *options.issue_limit
                        : concurrency_limit(pr, pc, K);
  if (issue_limit < 1) {
    throw std::invalid_argument("build_task_graph: issue_limit must be >= 1");
  }

  // Strip layout per block row / block col of the result.
  std::vector<int> sa(static_cast<std::size_t>(M)), sb(static_cast<std::size_t>(N));
  std::vector<std::int64_t> sa_off(static_cast<std::size_t>(M) + 1, 0);
  std::vector<std::int64_t> sb_off(static_cast<std::size_t>(N) + 1, 0);
  for (std::int64_t i = 0; i < M; ++i) {
    sa[i] = strip_count(a.row_tiling().block_extent(i), T);
    sa_off[i + 1] = sa_off[i] + sa[i];
  }
  for (std::int64_t j = 0; j < N; ++j) {
    sb[j] = strip_count(b.col_tiling().block_extent(j), T);
    sb_off[j + 1] = sb_off[j] + sb[j];
  }
  // Accumulation-order chain tails per result sub-block (deterministic mode).
  std::vector<std::int64_t> tgt_off(static_cast<std::size_t>(M * N) + 1, 0);
  for (std::int64_t i = 0; i < M; ++i) {
    for (std::int64_t j = 0; j < N; ++j) {
      tgt_off[i * N + j + 1] = tgt_off[i * N + j] + sa[i] * sb[j];
    }
  }
  std::vector<TaskId> last_reduce(
      options.deterministic ? static_cast<std::size_t>(tgt_off.back()) : 0,
      kNoTask);

  Builder builder(grid, K);
  const std::size_t nodes = static_cast<std::size_t>(grid.node_count());

  // recv ids for the current iteration, then gates wired in a second pass.
  std::vector<TaskId> arecv(static_cast<std::size_t>(sa_off[M]) * pc);
  std::vector<TaskId> brecv(static_cast<std::size_t>(sb_off[N]) * pr);
  std::vector<std::vector<TaskId>> recvs_by_group(nodes *
                                                  static_cast<std::size_t>(K));

  for (std::int64_t k = 0; k < K; ++k) {
    const auto kk = static_cast<std::int32_t>(k);
    // Strip broadcasts of A(i, k) along the owning grid row.
    for (std::int64_t i = 0; i < M; ++i) {
      const int grow = static_cast<int>(i % pr);
      const int root = static_cast<int>(k % pc);
      for (int x = 0; x < sa[i]; ++x) {
        std::vector<TaskId> recv(pc), send(pc, kNoTask);
        for (int c = 0; c < pc; ++c) {
          const NodeCoord node{grow, c};
          recv[c] = builder.add(
              TaskKind::BcastRecv, kk, node,
              BcastPayload{Operand::A, kk, static_cast<std::int32_t>(i), kk, x,
                           false});
          arecv[(sa_off[i] + x) * pc + c] = recv[c];
          recvs_by_group[static_cast<std::size_t>(grid.index(node)) * K + k]
              .push_back(recv[c]);
        }
        for (int c = 0; c < pc; ++c) {
          if (bcast_tree_children(root, c, pc).empty()) continue;
          send[c] = builder.add(
              TaskKind::BcastSend, kk, NodeCoord{grow, c},
              BcastPayload{Operand::A, kk, static_cast<std::int32_t>(i), kk, x,
                           false});
          builder.edge(recv[c], send[c], EdgeKind::Data);
        }
        for (int c = 0; c < pc; ++c) {
          if (c == root) continue;
          builder.edge(send[bcast_tree_parent(root, c, pc)], recv[c],
                       EdgeKind::Data);
        }
      }
    }
    // Strip broadcasts of B(k, j) along the owning grid column.
    for (std::int64_t j = 0; j < N; ++j) {
      const int gcol = static_cast<int>(j % pc);
      const int root = static_cast<int>(k % pr);
      for (int y = 0; y < sb[j]; ++y) {
        std::vector<TaskId> recv(pr), send(pr, kNoTask);
        for (int r = 0; r < pr; ++r) {
          const NodeCoord node{r, gcol};
          recv[r] = builder.add(
              TaskKind::BcastRecv, kk, node,
              BcastPayload{Operand::B, kk, kk, static_cast<std::int32_t>(j), y,
                           false});
          brecv[(sb_off[j] + y) * pr + r] = recv[r];
          recvs_by_group[static_cast<std::size_t>(grid.index(node)) * K + k]
              .push_back(recv[r]);
        }
        for (int r = 0; r < pr; ++r) {
          if (bcast_tree_children(root, r, pr).empty()) continue;
          send[r] = builder.add(
              TaskKind::BcastSend, kk, NodeCoord{r, gcol},
              BcastPayload{Operand::B, kk, kk, static_cast<std::int32_t>(j), y,
                           false});
          builder.edge(recv[r], send[r], EdgeKind::Data);
        }
        for (int r = 0; r < pr; ++r) {
          if (r == root) continue;
          builder.edge(send[bcast_tree_parent(root, r, pr)], recv[r],
                       EdgeKind::Data);
        }
      }
    }
    // One multiply+reduce pair per result sub-block. The multiply's only
    // data inputs are the two strip arrivals on its node.
    for (std::int64_t i = 0; i < M; ++i) {
      for (std::int64_t j = 0; j < N; ++j) {
        const NodeCoord node = owner(grid, i, j);
        for (int x = 0; x < sa[i]; ++x) {
          for (int y = 0; y < sb[j]; ++y) {
            const TaskId m = builder.add(
                TaskKind::Multiply, kk, node,
                MultiplyPayload{static_cast<std::int32_t>(i),
                                static_cast<std::int32_t>(j), kk, x, y, false});
            builder.edge(arecv[(sa_off[i] + x) * pc + node.col], m,
                         EdgeKind::Data);
            builder.edge(brecv[(sb_off[j] + y) * pr + node.row], m,
                         EdgeKind::Data);
            const TaskId red = builder.add(
                TaskKind::Reduce, kk, node,
                ReducePayload{static_cast<std::int32_t>(i),
                              static_cast<std::int32_t>(j), kk, x, y});
            builder.edge(m, red, EdgeKind::Data);
            if (options.deterministic) {
              const std::size_t tgt = static_cast<std::size_t>(
                  tgt_off[i * N + j] + static_cast<std::int64_t>(x) * sb[j] + y);
              if (last_reduce[tgt] != kNoTask) {
                builder.edge(last_reduce[tgt], m, EdgeKind::Sequence,
                             SeqTag::Order);
              }
              last_reduce[tgt] = red;
            }
          }
        }
      }
    }
  }

  // Completion gates: one per (node, iteration) that has any work, fed by
  // the group's sinks, opening the iteration issue_limit steps ahead.
  std::vector<TaskId> gate(nodes * static_cast<std::size_t>(K), kNoTask);
  for (std::size_t n = 0; n < nodes; ++n) {
    const NodeCoord node = grid.coord(static_cast<std::int32_t>(n));
    for (std::int64_t k = 0; k < K; ++k) {
      if (builder.group_of(node, k).empty()) continue;
      const TaskId g = builder.add(TaskKind::ThrottleGate,
                                   static_cast<std::int32_t>(k), node,
                                   GatePayload{}, /*track=*/false);
      gate[n * K + k] = g;
      for (TaskId sink : builder.sinks_of(node, k)) {
        builder.edge(sink, g, EdgeKind::Sequence, SeqTag::Window);
      }
    }
  }
  for (std::size_t n = 0; n < nodes; ++n) {
    for (std::int64_t k = 0; k + issue_limit < K; ++k) {
      const TaskId g = gate[n * K + k];
      if (g == kNoTask) continue;
      for (TaskId recv : recvs_by_group[n * K + k + issue_limit]) {
        builder.edge(g, recv, EdgeKind::Sequence, SeqTag::Window);
      }
    }
  }

  return TaskGraph(GraphMode::TaskBased, issue_limit, T, options.deterministic,
                   builder.take_tasks(), builder.take_edges());
}

std::vector<TaskId> topo_validate(const TaskGraph& graph) {
  const std::size_t n = graph.task_count();
  std::vector<std::int32_t> pending(n, 0);
  for (std::size_t t = 0; t < n; ++t) {
    pending[t] = graph.in_degree(static_cast<TaskId>(t));
  }
  std::vector<TaskId> order;
  order.reserve(n);
  std::vector<TaskId> frontier;
  for (std::size_t t = 0; t < n; ++t) {
    if (pending[t] == 0) frontier.push_back(static_cast<TaskId>(t));
  }
  while (!frontier.empty()) {
    const TaskId t = frontier.back();
    frontier.pop_back();
    order.push_back(t);
    for (std::uint32_t e : graph.out_edges(t)) {
      const TaskId dst = graph.edges()[e].dst;
      if (--pending[dst] == 0) frontier.push_back(dst);
    }
  }
  if (order.size() != n) {
    for (const Edge& e : graph.edges()) {
      if (pending[e.src] > 0 && pending[e.dst] > 0) {
        throw GraphError("topo_validate: cycle through edge " +
                         std::to_string(e.src) + " -> " + std::to_string(e.dst));
      }
    }
    throw GraphError("topo_validate: cycle detected");
  }
  return order;
}

std::string TaskGraph::to_json() const {
  nlohmann::json doc;
  doc["mode"] = mode_ == GraphMode::Baseline ? "baseline" : "task";
  doc["issue_limit"] = issue_limit_;
  nlohmann::json jtasks = nlohmann::json::array();
  for (const Task& t : tasks_) {
    nlohmann::json jt{{"id", t.id},
                      {"kind", task_kind_name(t.kind)},
                      {"iteration", t.iteration},
                      {"node", {t.node.row, t.node.col}}};
    nlohmann::json payload;
    if (const auto* b = std::get_if<BcastPayload>(&t.payload)) {
      payload["operand"] = b->operand == Operand::A ? "A" : "B";
      payload["panel"] = b->panel;
      if (!b->panel) {
        payload["block"] = {b->block_row, b->block_col};
        payload["strip"] = b->strip;
      }
    } else if (const auto* m = std::get_if<MultiplyPayload>(&t.payload)) {
      payload["rank_update"] = m->rank_update;
      if (!m->rank_update) {
        payload["block"] = {m->i, m->j};
        payload["strip"] = {m->x, m->y};
      }
    } else if (const auto* r = std::get_if<ReducePayload>(&t.payload)) {
      payload["block"] = {r->i, r->j};
      payload["strip"] = {r->x, r->y};
    }
    jt["payload"] = std::move(payload);
    jtasks.push_back(std::move(jt));
  }
  doc["tasks"] = std::move(jtasks);
  nlohmann::json jedges = nlohmann::json::array();
  for (const Edge& e : edges_) {
    jedges.push_back({{"src", e.src},
                      {"dst", e.dst},
                      {"kind", e.kind == EdgeKind::Data ? "data" : "sequence"}});
  }
  doc["edges"] = std::move(jedges);
  return doc.dump();
}

}  // namespace tasksumma
