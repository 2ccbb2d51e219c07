#pragma once

#include <stdexcept>

namespace tasksumma {

/// A task graph failed structural validation (cycle, dangling edge, ...).
struct GraphError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A node observed an illegal message sequence (duplicate delivery,
/// delivery of a key that was already consumed and released, ...).
struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// The engine violated its own readiness contract: a task ran before its
/// inputs were resident, or a block was released while consumers remained.
/// Always indicates a bug in the scheduler, never bad user input.
struct SchedulerError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Metric aggregation was asked to summarize degenerate data
/// (zero makespan, empty run, ...).
struct MetricsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace tasksumma
