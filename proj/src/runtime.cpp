#include "tasksumma/runtime.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <exception>
#include <memory>
#include <stdexcept>
#include <thread>
#include <utility>

#include "tasksumma/errors.hpp"
#include "tasksumma/gemm.hpp"

namespace tasksumma {

LatencyModel LatencyModel::parse(const std::string& text) {
  if (text == "zero") return zero();
  auto number = [&](std::size_t from, std::size_t to) {
    const std::string part = text.substr(from, to - from);
    std::size_t used = 0;
    double value = 0.0;
    try {
      value = std::stod(part, &used);
    } catch (const std::exception&) {
      throw std::invalid_argument("latency: bad number '" + part + "'");
    }
    if (used != part.size() || value < 0.0) {
      throw std::invalid_argument("latency: bad number '" + part + "'");
    }
    return value;
  };
  if (text.rfind("fixed:", 0) == 0) {
    return fixed(number(6, text.size()));
  }
  if (text.rfind("perbyte:", 0) == 0) {
    const std::size_t sep = text.find(':', 8);
    if (sep == std::string::npos) {
      throw std::invalid_argument("latency: expected perbyte:US:USPB");
    }
    return per_byte(number(8, sep), number(sep + 1, text.size()));
  }
  throw std::invalid_argument("latency: unknown model '" + text +
                              "' (zero | fixed:US | perbyte:US:USPB)");
}

int default_worker_count() {
  const unsigned n = std::thread::hardware_concurrency();
  return n > 0 ? static_cast<int>(n) : 1;
}

void SimNode::post(Message&& msg) {
  std::lock_guard<std::mutex> lock(mutex_);
  if (released_.count(msg.key) || store_.count(msg.key)) {
    throw ProtocolError("message re-delivers a block already handled");
  }
  if (!mailbox_.emplace(msg.key, std::move(msg)).second) {
    throw ProtocolError("duplicate message for the same block");
  }
}

double SimNode::deliver(const BlockKey& key, int consumers) {
  std::lock_guard<std::mutex> lock(mutex_);
  const auto it = mailbox_.find(key);
  if (it == mailbox_.end()) {
    if (released_.count(key)) throw ProtocolError("block delivered twice");
    throw ProtocolError("no message posted for expected block");
  }
  Message msg = std::move(it->second);
  mailbox_.erase(it);
  counters_.bytes_received += msg.bytes;
  put_block_locked(key, std::move(msg.payload), consumers);
  return msg.arrival_us;
}

void SimNode::put_block(const BlockKey& key, DenseBlock&& block, int consumers) {
  std::lock_guard<std::mutex> lock(mutex_);
  put_block_locked(key, std::move(block), consumers);
}

void SimNode::put_block_locked(const BlockKey& key, DenseBlock&& block,
                               int consumers) {
  if (released_.count(key)) {
    throw ProtocolError("block stored again after it was released");
  }
  const std::int64_t bytes = block.size_bytes();
  const auto [it, inserted] =
      store_.emplace(key, Stored{std::move(block), consumers});
  if (!inserted) throw ProtocolError("block stored while still resident");
  counters_.current_bytes += bytes;
  counters_.high_water_bytes =
      std::max(counters_.high_water_bytes, counters_.current_bytes);
  if (consumers <= 0) {
    counters_.current_bytes -= bytes;
    store_.erase(it);
    released_.insert(key);
  }
}

bool SimNode::has_block(const BlockKey& key) const {
  std::lock_guard<std::mutex> lock(mutex_);
  return store_.count(key) > 0;
}

const DenseBlock& SimNode::block(const BlockKey& key) const {
  std::lock_guard<std::mutex> lock(mutex_);
  const auto it = store_.find(key);
  if (it == store_.end()) throw SchedulerError("block read before it arrived");
  return it->second.block;
}

void SimNode::release_use(const BlockKey& key) {
  std::lock_guard<std::mutex> lock(mutex_);
  const auto it = store_.find(key);
  if (it == store_.end()) {
    throw SchedulerError(released_.count(key)
                             ? "block released more times than it has consumers"
                             : "release of a block that was never stored");
  }
  if (--it->second.consumers_left == 0) {
    counters_.current_bytes -= it->second.block.size_bytes();
    store_.erase(it);
    released_.insert(key);
  }
}

void SimNode::account_alloc(std::int64_t bytes) {
  std::lock_guard<std::mutex> lock(mutex_);
  counters_.current_bytes += bytes;
  counters_.high_water_bytes =
      std::max(counters_.high_water_bytes, counters_.current_bytes);
}

void SimNode::account_free(std::int64_t bytes) {
  std::lock_guard<std::mutex> lock(mutex_);
  counters_.current_bytes -= bytes;
}

void SimNode::note_task(TaskKind kind) {
  std::lock_guard<std::mutex> lock(mutex_);
  ++counters_.tasks_executed[static_cast<std::size_t>(kind)];
}

void SimNode::add_flops(std::int64_t flops) {
  std::lock_guard<std::mutex> lock(mutex_);
  counters_.flops += flops;
}

void SimNode::add_sent(std::int64_t bytes) {
  std::lock_guard<std::mutex> lock(mutex_);
  counters_.bytes_sent += bytes;
}

void SimNode::note_temp() {
  std::lock_guard<std::mutex> lock(mutex_);
  ++counters_.temps_allocated;
}

void SimNode::note_elided_reduce() {
  std::lock_guard<std::mutex> lock(mutex_);
  ++counters_.reduces_elided;
}

MetricCounters SimNode::counters() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return counters_;
}

std::size_t SimNode::store_size() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return store_.size();
}

namespace {

int priority_of(TaskKind kind) {
  switch (kind) {
    case TaskKind::BcastSend:
    case TaskKind::BcastRecv:
    case TaskKind::ThrottleGate: return 0;  // keep the network busy first
    case TaskKind::Reduce: return 1;        // retire temporaries early
    case TaskKind::Multiply: return 2;
  }
  return 2;
}

BlockKey key_of(const BcastPayload& p) {
  if (p.panel) return BlockKey{p.operand, -1, p.k, -1};
  return BlockKey{p.operand, p.block_row, p.block_col, p.strip};
}

/// Executes one validated graph over a fresh set of simulated nodes.
class Engine {
 public:
  Engine(const TaskGraph& graph, const BlockMatrix& a, const BlockMatrix& b,
         const ProcessGrid& grid, const RunConfig& cfg, int workers)
      : graph_(graph),
        a_(a),
        b_(b),
        grid_(grid),
        cfg_(cfg),
        workers_(workers),
        c_(a.row_tiling(), b.col_tiling(), grid),
        pending_(graph.task_count()),
        vt_end_(graph.task_count(), 0.0),
        temp_(graph.task_count()),
        queues_(static_cast<std::size_t>(grid.node_count())),
        timelines_(static_cast<std::size_t>(workers)) {
    for (std::int32_t n = 0; n < grid.node_count(); ++n) {
      nodes_.emplace_back(grid.coord(n));
    }
    // The result lives on its owners from the start; charge it up front so
    // the high-water mark covers everything the run keeps resident.
    for (std::int64_t i = 0; i < c_.block_rows(); ++i) {
      for (std::int64_t j = 0; j < c_.block_cols(); ++j) {
        node_at(owner(grid_, i, j)).account_alloc(c_.block(i, j).size_bytes());
      }
    }
    if (graph_.mode() == GraphMode::TaskBased && !graph_.deterministic()) {
      const std::int64_t M = a_.block_rows();
      const std::int64_t N = b_.block_cols();
      tgt_off_.assign(static_cast<std::size_t>(M * N) + 1, 0);
      for (std::int64_t i = 0; i < M; ++i) {
        const int si = strip_count(a_.row_tiling().block_extent(i),
                                   graph_.sub_split());
        for (std::int64_t j = 0; j < N; ++j) {
          const int sj = strip_count(b_.col_tiling().block_extent(j),
                                     graph_.sub_split());
          tgt_off_[i * N + j + 1] = tgt_off_[i * N + j] + si * sj;
        }
      }
      claim_ = std::vector<std::atomic<char>>(
          static_cast<std::size_t>(tgt_off_.back()));
    }
  }

  RunResult execute() {
    const auto& tasks = graph_.tasks();
    remaining_ = tasks.size();
    for (const Task& t : tasks) {
      pending_[t.id].store(graph_.in_degree(t.id), std::memory_order_relaxed);
    }
    const auto wall_start = std::chrono::steady_clock::now();
    {
      std::lock_guard<std::mutex> lock(mutex_);
      for (const Task& t : tasks) {
        if (pending_[t.id].load(std::memory_order_relaxed) == 0) {
          queues_[node_index(t)][priority_of(t.kind)].push_back(t.id);
        }
      }
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers_));
    for (int w = 0; w < workers_; ++w) {
      pool.emplace_back([this, w] { worker_loop(static_cast<std::size_t>(w)); });
    }
    for (std::thread& t : pool) t.join();
    if (error_) std::rethrow_exception(error_);
    const auto wall_end = std::chrono::steady_clock::now();

    RunMetrics metrics;
    metrics.grid = grid_;
    metrics.mode = graph_.mode() == GraphMode::Baseline ? RunMode::Baseline
                                                        : RunMode::Task;
    metrics.issue_limit = graph_.issue_limit();
    for (const SimNode& node : nodes_) {
      metrics.per_node.push_back(node.counters());
    }
    for (double end : vt_end_) {
      metrics.makespan_virtual_us = std::max(metrics.makespan_virtual_us, end);
    }
    metrics.makespan_wall_us =
        std::chrono::duration<double, std::micro>(wall_end - wall_start).count();
    if (metrics.makespan_wall_us > 0.0) {
      metrics.flop_rate = static_cast<double>(metrics.total_flops()) /
                          (metrics.makespan_wall_us * 1e-6);
    }
    if (cfg_.collect_timeline) {
      std::size_t total = 0;
      for (const auto& tl : timelines_) total += tl.size();
      metrics.timeline.reserve(total);
      for (auto& tl : timelines_) {
        metrics.timeline.insert(metrics.timeline.end(), tl.begin(), tl.end());
      }
      std::sort(metrics.timeline.begin(), metrics.timeline.end(),
                [](const TimelineEvent& lhs, const TimelineEvent& rhs) {
                  if (lhs.start_us != rhs.start_us) return lhs.start_us < rhs.start_us;
                  return lhs.task < rhs.task;
                });
    }
    return RunResult{std::move(c_), std::move(metrics)};
  }

 private:
  std::size_t node_index(const Task& t) const {
    return static_cast<std::size_t>(grid_.index(t.node));
  }
  SimNode& node_at(NodeCoord coord) {
    return nodes_[static_cast<std::size_t>(grid_.index(coord))];
  }

  void worker_loop(std::size_t wid) {
    const std::size_t nnodes = queues_.size();
    const std::size_t home = wid % nnodes;
    std::unique_lock<std::mutex> lock(mutex_);
    while (!abort_ && remaining_ > 0) {
      TaskId id = 0;
      bool found = false;
      for (int pri = 0; pri < 3 && !found; ++pri) {
        for (std::size_t off = 0; off < nnodes && !found; ++off) {
          auto& q = queues_[(home + off) % nnodes][pri];
          if (!q.empty()) {
            id = q.front();
            q.pop_front();
            found = true;
          }
        }
      }
      if (!found) {
        ++idle_;
        if (idle_ == workers_) {
          // Everyone is out of work with tasks still pending: the graph
          // promised progress it cannot deliver.
          fail_locked(std::make_exception_ptr(
              SchedulerError("ready queues drained with tasks pending")));
        } else {
          cv_.wait(lock);
        }
        --idle_;
        continue;
      }
      lock.unlock();
      bool done = true;
      try {
        done = exec(id, wid);
      } catch (...) {
        lock.lock();
        fail_locked(std::current_exception());
        return;
      }
      if (done) {
        std::vector<TaskId> ready;
        for (std::uint32_t e : graph_.out_edges(id)) {
          const TaskId dst = graph_.edges()[e].dst;
          if (pending_[dst].fetch_sub(1, std::memory_order_acq_rel) == 1) {
            ready.push_back(dst);
          }
        }
        lock.lock();
        for (TaskId r : ready) {
          const Task& t = graph_.tasks()[r];
          queues_[node_index(t)][priority_of(t.kind)].push_back(r);
        }
        if (--remaining_ == 0 || !ready.empty()) cv_.notify_all();
      } else {
        std::this_thread::yield();  // the claim holder is mid-task; retry soon
        lock.lock();
        const Task& t = graph_.tasks()[id];
        queues_[node_index(t)][priority_of(t.kind)].push_back(id);
      }
    }
  }

  void fail_locked(std::exception_ptr err) {
    if (!error_) error_ = err;
    abort_ = true;
    cv_.notify_all();
  }

  /// Runs one task. Returns false when the task must be retried later
  /// (a reduce that lost the race for its target sub-block).
  bool exec(TaskId id, std::size_t wid) {
    const Task& task = graph_.tasks()[id];
    SimNode& node = node_at(task.node);
    double start = 0.0;
    for (std::uint32_t e : graph_.in_edges(id)) {
      start = std::max(start, vt_end_[graph_.edges()[e].src]);
    }
    double cost = 0.0;
    std::int64_t event_bytes = 0;
    switch (task.kind) {
      case TaskKind::BcastRecv: {
        const auto& p = std::get<BcastPayload>(task.payload);
        if (!recv_is_root(p, task.node)) {
          event_bytes = payload_bytes(p, task.node);
          const double arrival = node.deliver(key_of(p), data_out_degree(id));
          start = std::max(start, arrival);
        }
        break;
      }
      case TaskKind::BcastSend: {
        const auto& p = std::get<BcastPayload>(task.payload);
        event_bytes = run_send(task, p, node, start);
        break;
      }
      case TaskKind::Multiply: {
        const auto& p = std::get<MultiplyPayload>(task.payload);
        const std::int64_t flops = p.rank_update
                                       ? run_rank_update(task, p, node)
                                       : run_multiply(id, task, p, node);
        node.add_flops(flops);
        cost = static_cast<double>(flops) / kVirtualFlopsPerUs;
        break;
      }
      case TaskKind::Reduce: {
        std::int64_t flops = 0;
        if (!run_reduce(id, task, node, flops)) return false;
        cost = static_cast<double>(flops) / kVirtualFlopsPerUs;
        break;
      }
      case TaskKind::ThrottleGate:
        break;
    }
    vt_end_[id] = start + cost;
    node.note_task(task.kind);
    if (cfg_.collect_timeline) {
      timelines_[wid].push_back(TimelineEvent{id, task.kind, task.node,
                                              task.iteration, start, start + cost,
                                              event_bytes});
    }
    return true;
  }

  bool recv_is_root(const BcastPayload& p, NodeCoord node) const {
    if (p.operand == Operand::A) return node.col == p.k % grid_.cols;
    return node.row == p.k % grid_.rows;
  }

  int data_out_degree(TaskId id) const {
    int n = 0;
    for (std::uint32_t e : graph_.out_edges(id)) {
      if (graph_.edges()[e].kind == EdgeKind::Data) ++n;
    }
    return n;
  }

  std::int64_t payload_bytes(const BcastPayload& p, NodeCoord node) const {
    if (p.panel) {
      std::int64_t elems = 0;
      if (p.operand == Operand::A) {
        const std::int64_t inner = a_.col_tiling().block_extent(p.k);
        for (std::int64_t i = node.row; i < a_.block_rows(); i += grid_.rows) {
          elems += a_.row_tiling().block_extent(i) * inner;
        }
      } else {
        const std::int64_t inner = b_.row_tiling().block_extent(p.k);
        for (std::int64_t j = node.col; j < b_.block_cols(); j += grid_.cols) {
          elems += inner * b_.col_tiling().block_extent(j);
        }
      }
      return elems * static_cast<std::int64_t>(sizeof(double));
    }
    if (p.operand == Operand::A) {
      const std::int64_t rows = a_.row_tiling().block_extent(p.block_row);
      const auto [r0, r1] =
          strip_range(rows, strip_count(rows, graph_.sub_split()), p.strip);
      return (r1 - r0) * a_.col_tiling().block_extent(p.block_col) *
             static_cast<std::int64_t>(sizeof(double));
    }
    const std::int64_t cols = b_.col_tiling().block_extent(p.block_col);
    const auto [c0, c1] =
        strip_range(cols, strip_count(cols, graph_.sub_split()), p.strip);
    return b_.row_tiling().block_extent(p.block_row) * (c1 - c0) *
           static_cast<std::int64_t>(sizeof(double));
  }

  /// Materialize the block this send forwards, from the caller's matrix at
  /// the broadcast root and from the node store elsewhere.
  DenseBlock build_send_payload(const BcastPayload& p, NodeCoord coord,
                                SimNode& node) const {
    const bool root = p.operand == Operand::A ? coord.col == p.k % grid_.cols
                                              : coord.row == p.k % grid_.rows;
    if (!root) return node.block(key_of(p));  // copy of the stored block
    if (!p.panel) {
      if (p.operand == Operand::A) {
        const DenseBlock& src = a_.block(p.block_row, p.block_col);
        const auto [r0, r1] = strip_range(
            src.rows, strip_count(src.rows, graph_.sub_split()), p.strip);
        DenseBlock out(r1 - r0, src.cols);
        std::memcpy(out.data.data(), src.row_ptr(r0),
                    static_cast<std::size_t>(out.size_bytes()));
        return out;
      }
      const DenseBlock& src = b_.block(p.block_row, p.block_col);
      const auto [c0, c1] = strip_range(
          src.cols, strip_count(src.cols, graph_.sub_split()), p.strip);
      DenseBlock out(src.rows, c1 - c0);
      for (std::int64_t r = 0; r < src.rows; ++r) {
        std::memcpy(out.row_ptr(r), src.row_ptr(r) + c0,
                    static_cast<std::size_t>(out.cols) * sizeof(double));
      }
      return out;
    }
    if (p.operand == Operand::A) {
      // Stack the node's share of the iteration's left panel by rows.
      std::int64_t rows = 0;
      for (std::int64_t i = coord.row; i < a_.block_rows(); i += grid_.rows) {
        rows += a_.row_tiling().block_extent(i);
      }
      DenseBlock out(rows, a_.col_tiling().block_extent(p.k));
      std::int64_t at = 0;
      for (std::int64_t i = coord.row; i < a_.block_rows(); i += grid_.rows) {
        const DenseBlock& src = a_.block(i, p.k);
        std::memcpy(out.row_ptr(at), src.data.data(),
                    static_cast<std::size_t>(src.size_bytes()));
        at += src.rows;
      }
      return out;
    }
    // Right panel share: the node's result columns side by side.
    std::int64_t cols = 0;
    for (std::int64_t j = coord.col; j < b_.block_cols(); j += grid_.cols) {
      cols += b_.col_tiling().block_extent(j);
    }
    DenseBlock out(b_.row_tiling().block_extent(p.k), cols);
    std::int64_t at = 0;
    for (std::int64_t j = coord.col; j < b_.block_cols(); j += grid_.cols) {
      const DenseBlock& src = b_.block(p.k, j);
      for (std::int64_t r = 0; r < src.rows; ++r) {
        std::memcpy(out.row_ptr(r) + at, src.row_ptr(r),
                    static_cast<std::size_t>(src.cols) * sizeof(double));
      }
      at += src.cols;
    }
    return out;
  }

  std::int64_t run_send(const Task& task, const BcastPayload& p, SimNode& node,
                        double start) {
    DenseBlock payload = build_send_payload(p, task.node, node);
    const bool root = recv_is_root(p, task.node);
    if (!root) node.release_use(key_of(p));
    const std::int64_t bytes = payload.size_bytes();
    const bool along_row = p.operand == Operand::A;
    const int group = along_row ? grid_.cols : grid_.rows;
    const int me = along_row ? task.node.col : task.node.row;
    const int tree_root = p.k % group;
    const std::vector<int> children = bcast_tree_children(tree_root, me, group);
    std::int64_t sent = 0;
    for (std::size_t idx = 0; idx < children.size(); ++idx) {
      const NodeCoord dst = along_row
                                ? NodeCoord{task.node.row, children[idx]}
                                : NodeCoord{children[idx], task.node.col};
      Message msg;
      msg.src = task.node;
      msg.dst = dst;
      msg.key = key_of(p);
      msg.bytes = bytes;
      msg.payload = idx + 1 == children.size() ? std::move(payload)
                                               : payload;  // last child moves
      msg.arrival_us = start + cfg_.latency.delay_us(bytes);
      node_at(dst).post(std::move(msg));
      sent += bytes;
    }
    node.add_sent(sent);
    return sent;
  }

  /// Baseline: one iteration's worth of work on this node, every owned
  /// result block updated from the panel shares.
  std::int64_t run_rank_update(const Task& task, const MultiplyPayload& p,
                               SimNode& node) {
    const std::int64_t k = p.k;
    const bool a_root = task.node.col == k % grid_.cols;
    const bool b_root = task.node.row == k % grid_.rows;
    const BlockKey akey{Operand::A, -1, p.k, -1};
    const BlockKey bkey{Operand::B, -1, p.k, -1};
    const DenseBlock* apanel = a_root ? nullptr : &node.block(akey);
    const DenseBlock* bpanel = b_root ? nullptr : &node.block(bkey);
    std::int64_t flops = 0;
    std::int64_t arow_off = 0;
    for (std::int64_t i = task.node.row; i < a_.block_rows(); i += grid_.rows) {
      const std::int64_t m = a_.row_tiling().block_extent(i);
      const std::int64_t inner = a_.col_tiling().block_extent(k);
      const double* ap;
      std::int64_t lda;
      if (a_root) {
        ap = a_.block(i, k).data.data();
        lda = inner;
      } else {
        ap = apanel->row_ptr(arow_off);
        lda = apanel->cols;
      }
      std::int64_t bcol_off = 0;
      for (std::int64_t j = task.node.col; j < b_.block_cols(); j += grid_.cols) {
        const std::int64_t n = b_.col_tiling().block_extent(j);
        const double* bp;
        std::int64_t ldb;
        if (b_root) {
          bp = b_.block(k, j).data.data();
          ldb = n;
        } else {
          bp = bpanel->data.data() + bcol_off;
          ldb = bpanel->cols;
        }
        DenseBlock& out = c_.block(i, j);
        gemm_accumulate(1.0, ap, lda, m, inner, bp, ldb, n, out.data.data(),
                        out.cols);
        flops += 2 * m * inner * n;
        bcol_off += n;
      }
      arow_off += m;
    }
    if (!a_root) node.release_use(akey);
    if (!b_root) node.release_use(bkey);
    return flops;
  }

  std::size_t target_index(std::int64_t i, std::int64_t j, int x, int y) const {
    const std::int64_t N = b_.block_cols();
    const int sj =
        strip_count(b_.col_tiling().block_extent(j), graph_.sub_split());
    return static_cast<std::size_t>(tgt_off_[i * N + j] +
                                    static_cast<std::int64_t>(x) * sj + y);
  }

  std::int64_t run_multiply(TaskId id, const Task& task,
                            const MultiplyPayload& p, SimNode& node) {
    const std::int64_t mi = a_.row_tiling().block_extent(p.i);
    const std::int64_t inner = a_.col_tiling().block_extent(p.k);
    const std::int64_t nj = b_.col_tiling().block_extent(p.j);
    const auto [r0, r1] =
        strip_range(mi, strip_count(mi, graph_.sub_split()), p.x);
    const auto [c0, c1] =
        strip_range(nj, strip_count(nj, graph_.sub_split()), p.y);
    const std::int64_t m = r1 - r0;
    const std::int64_t n = c1 - c0;

    const bool a_root = task.node.col == p.k % grid_.cols;
    const bool b_root = task.node.row == p.k % grid_.rows;
    const BlockKey akey{Operand::A, p.i, p.k, p.x};
    const BlockKey bkey{Operand::B, p.k, p.j, p.y};
    const double* ap;
    std::int64_t lda;
    if (a_root) {
      const DenseBlock& src = a_.block(p.i, p.k);
      ap = src.row_ptr(r0);
      lda = src.cols;
    } else {
      const DenseBlock& src = node.block(akey);
      ap = src.data.data();
      lda = src.cols;
    }
    const double* bp;
    std::int64_t ldb;
    if (b_root) {
      const DenseBlock& src = b_.block(p.k, p.j);
      bp = src.data.data() + c0;
      ldb = src.cols;
    } else {
      const DenseBlock& src = node.block(bkey);
      bp = src.data.data();
      ldb = src.cols;
    }

    DenseBlock& out = c_.block(p.i, p.j);
    double* cp = out.data.data() + r0 * out.cols + c0;
    if (graph_.deterministic()) {
      // Accumulation-order edges already serialize writers of this target.
      gemm_accumulate(1.0, ap, lda, m, inner, bp, ldb, n, cp, out.cols);
    } else {
      auto& claim = claim_[target_index(p.i, p.j, p.x, p.y)];
      char expected = 0;
      if (claim.compare_exchange_strong(expected, 1,
                                        std::memory_order_acq_rel)) {
        gemm_accumulate(1.0, ap, lda, m, inner, bp, ldb, n, cp, out.cols);
        claim.store(0, std::memory_order_release);
      } else {
        // Someone else is accumulating into this target right now: compute
        // into a temporary and let the reduce fold it in later.
        auto tmp = std::make_unique<DenseBlock>(m, n);
        node.account_alloc(tmp->size_bytes());
        node.note_temp();
        gemm_accumulate(1.0, ap, lda, m, inner, bp, ldb, n, tmp->data.data(), n);
        temp_[id] = std::move(tmp);
      }
    }
    if (!a_root) node.release_use(akey);
    if (!b_root) node.release_use(bkey);
    return 2 * m * inner * n;
  }

  bool run_reduce(TaskId id, const Task& task, SimNode& node,
                  std::int64_t& flops) {
    TaskId mult = id;
    for (std::uint32_t e : graph_.in_edges(id)) {
      if (graph_.edges()[e].kind == EdgeKind::Data) {
        mult = graph_.edges()[e].src;
        break;
      }
    }
    auto& slot = temp_[mult];
    if (!slot) {
      node.note_elided_reduce();
      flops = 0;
      return true;
    }
    const auto& p = std::get<ReducePayload>(task.payload);
    auto& claim = claim_[target_index(p.i, p.j, p.x, p.y)];
    char expected = 0;
    if (!claim.compare_exchange_strong(expected, 1, std::memory_order_acq_rel)) {
      return false;  // target busy; retry
    }
    const DenseBlock& tmp = *slot;
    DenseBlock& out = c_.block(p.i, p.j);
    const std::int64_t mi = out.rows;
    const std::int64_t nj = out.cols;
    const auto [r0, r1] =
        strip_range(mi, strip_count(mi, graph_.sub_split()), p.x);
    const auto [c0, c1] =
        strip_range(nj, strip_count(nj, graph_.sub_split()), p.y);
    for (std::int64_t r = 0; r < r1 - r0; ++r) {
      double* crow = out.row_ptr(r0 + r) + c0;
      const double* trow = tmp.row_ptr(r);
      for (std::int64_t col = 0; col < c1 - c0; ++col) crow[col] += trow[col];
    }
    claim.store(0, std::memory_order_release);
    // Fold additions cost virtual time but are not counted as work: the
    // flops counter tracks multiply-add work only (2*m*k*n per multiply).
    flops = (r1 - r0) * (c1 - c0);
    node.account_free(tmp.size_bytes());
    slot.reset();
    return true;
  }

  const TaskGraph& graph_;
  const BlockMatrix& a_;
  const BlockMatrix& b_;
  const ProcessGrid& grid_;
  const RunConfig& cfg_;
  const int workers_;
  BlockMatrix c_;
  std::deque<SimNode> nodes_;
  std::vector<std::atomic<std::int32_t>> pending_;
  std::vector<double> vt_end_;
  std::vector<std::unique_ptr<DenseBlock>> temp_;  // indexed by multiply id
  std::vector<std::int64_t> tgt_off_;
  std::vector<std::atomic<char>> claim_;

  std::mutex mutex_;
  std::condition_variable cv_;
  std::vector<std::array<std::deque<TaskId>, 3>> queues_;  // [node][priority]
  std::size_t remaining_ = 0;
  int idle_ = 0;
  bool abort_ = false;
  std::exception_ptr error_;
  std::vector<std::vector<TimelineEvent>> timelines_;  // one per worker
};

}  // namespace

RunResult run(const BlockMatrix& a, const BlockMatrix& b,
              const ProcessGrid& grid, const RunConfig& config) {
  if (!a.conformable(b)) {
    throw std::invalid_argument("run: inner tilings do not match");
  }
  if (!(a.grid() == grid) || !(b.grid() == grid)) {
    throw std::invalid_argument("run: operands distributed over a different grid");
  }
  if (config.workers < 0) {
    throw std::invalid_argument("run: workers must be >= 0");
  }
  TaskGraph graph =
      config.mode == RunMode::Baseline
          ? build_baseline_graph(a.block_rows(), b.block_cols(), a.block_cols(),
                                 grid)
          : build_task_graph(a, b, grid,
                             TaskGraphOptions{config.issue_limit,
                                              config.deterministic,
                                              config.sub_split});
  topo_validate(graph);
  const int workers = config.workers > 0 ? config.workers : default_worker_count();
  Engine engine(graph, a, b, grid, config, workers);
  return engine.execute();
}

}  // namespace tasksumma
