// Command-line driver for the simulated distributed matrix product:
//   run     execute an experiment and emit metrics files
//   verify  execute once and compare against the reference multiply
//   bench   execute a series of experiments and emit a combined table
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tasksumma/block_matrix.hpp"
#include "tasksumma/dag.hpp"
#include "tasksumma/errors.hpp"
#include "tasksumma/metrics.hpp"
#include "tasksumma/oracle.hpp"
#include "tasksumma/runtime.hpp"
#include "tasksumma/tiling.hpp"

namespace {

using namespace tasksumma;

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct Options {
  std::int64_t size = 512;
  std::int64_t block = 64;
  std::optional<std::int64_t> nonuniform_blocks;
  std::uint64_t seed = 1;
  int grid_rows = 1;
  int grid_cols = 1;
  std::string mode = "task";
  int repeats = 5;
  bool deterministic = false;
  std::optional<int> issue_limit;
  int sub_split = 1;
  std::string latency = "zero";
  std::optional<int> threads;
  std::string out_dir = "out";
  bool timeline = false;
  std::string label;
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void parse_grid(const std::string& text, Options& opt) {
  const std::size_t sep = text.find('x');
  std::size_t used_r = 0, used_c = 0;
  try {
    opt.grid_rows = std::stoi(text.substr(0, sep), &used_r);
    opt.grid_cols = std::stoi(text.substr(sep + 1), &used_c);
  } catch (const std::exception&) {
    throw UsageError("--grid expects RxC with positive integers, got '" + text + "'");
  }
  if (sep == std::string::npos || used_r != sep ||
      used_c != text.size() - sep - 1) {
    throw UsageError("--grid expects RxC with positive integers, got '" + text + "'");
  }
}

void apply_json(const nlohmann::json& doc, Options& opt) {
  if (doc.contains("size")) opt.size = doc.at("size").get<std::int64_t>();
  if (doc.contains("block")) opt.block = doc.at("block").get<std::int64_t>();
  if (doc.contains("nonuniform_blocks")) {
    opt.nonuniform_blocks = doc.at("nonuniform_blocks").get<std::int64_t>();
  }
  if (doc.contains("seed")) opt.seed = doc.at("seed").get<std::uint64_t>();
  if (doc.contains("grid")) parse_grid(doc.at("grid").get<std::string>(), opt);
  if (doc.contains("mode")) opt.mode = doc.at("mode").get<std::string>();
  if (doc.contains("repeats")) opt.repeats = doc.at("repeats").get<int>();
  if (doc.contains("deterministic")) {
    opt.deterministic = doc.at("deterministic").get<bool>();
  }
  if (doc.contains("issue_limit")) opt.issue_limit = doc.at("issue_limit").get<int>();
  if (doc.contains("sub_split")) opt.sub_split = doc.at("sub_split").get<int>();
  if (doc.contains("latency")) opt.latency = doc.at("latency").get<std::string>();
  if (doc.contains("threads")) opt.threads = doc.at("threads").get<int>();
  if (doc.contains("out_dir")) opt.out_dir = doc.at("out_dir").get<std::string>();
  if (doc.contains("label")) opt.label = doc.at("label").get<std::string>();
}

nlohmann::json load_spec_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open spec file '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const std::exception& e) {
    throw UsageError("spec file '" + path + "' is not valid JSON: " + e.what());
  }
  return doc;
}

int resolve_threads(const Options& opt) {
  if (opt.threads) {
    if (*opt.threads < 0) throw UsageError("--threads must be >= 0");
    return *opt.threads;
  }
  if (const char* env = std::getenv("TASKSUMMA_THREADS")) {
    try {
      std::size_t used = 0;
      const int value = std::stoi(env, &used);
      if (used != std::string(env).size() || value < 0) throw std::exception();
      return value;
    } catch (const std::exception&) {
      throw UsageError(std::string("TASKSUMMA_THREADS must be a non-negative "
                                   "integer, got '") + env + "'");
    }
  }
  return 0;  // runtime picks hardware concurrency
}

void validate(const Options& opt) {
  if (opt.size < 1) throw UsageError("--size must be >= 1");
  if (opt.block < 1) throw UsageError("--block must be >= 1");
  if (opt.nonuniform_blocks &&
      (*opt.nonuniform_blocks < 1 || *opt.nonuniform_blocks > opt.size)) {
    throw UsageError("--nonuniform-blocks must be in [1, size]");
  }
  if (opt.grid_rows < 1 || opt.grid_cols < 1) {
    throw UsageError("--grid dimensions must be >= 1");
  }
  if (opt.mode != "baseline" && opt.mode != "task") {
    throw UsageError("--mode must be 'baseline' or 'task'");
  }
  if (opt.repeats < 1) throw UsageError("--repeats must be >= 1");
  if (opt.issue_limit && *opt.issue_limit < 1) {
    throw UsageError("--issue-limit must be >= 1");
  }
  if (opt.sub_split < 1) throw UsageError("--sub-split must be >= 1");
  try {
    LatencyModel::parse(opt.latency);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

struct Tilings {
  Tiling rows;
  Tiling inner;
  Tiling cols;
};

Tilings make_tilings(const Options& opt) {
  if (opt.nonuniform_blocks) {
    const std::int64_t blocks = *opt.nonuniform_blocks;
    return {make_nonuniform_tiling(opt.size, blocks, opt.seed + 101),
            make_nonuniform_tiling(opt.size, blocks, opt.seed + 102),
            make_nonuniform_tiling(opt.size, blocks, opt.seed + 103)};
  }
  Tiling t = make_uniform_tiling(opt.size, opt.block);
  return {t, t, t};
}

BlockMatrix identity_matrix(const Tiling& rows, const Tiling& cols,
                            const ProcessGrid& grid) {
  BlockMatrix m(rows, cols, grid);
  for (std::int64_t i = 0; i < m.block_rows(); ++i) {
    for (std::int64_t j = 0; j < m.block_cols(); ++j) {
      DenseBlock& blk = m.block(i, j);
      const std::int64_t r0 = rows.block_offset(i);
      const std::int64_t c0 = cols.block_offset(j);
      for (std::int64_t r = 0; r < blk.rows; ++r) {
        const std::int64_t global = r0 + r;
        if (global >= c0 && global < c0 + blk.cols) {
          blk.at(r, global - c0) = 1.0;
        }
      }
    }
  }
  return m;
}

RunConfig run_config(const Options& opt) {
  RunConfig cfg;
  cfg.workers = resolve_threads(opt);
  cfg.latency = LatencyModel::parse(opt.latency);
  cfg.mode = opt.mode == "baseline" ? RunMode::Baseline : RunMode::Task;
  cfg.deterministic = opt.deterministic;
  cfg.issue_limit = opt.issue_limit;
  cfg.sub_split = opt.sub_split;
  return cfg;
}

void write_tilings_json(const std::filesystem::path& path, const Tilings& t) {
  std::ofstream out(path);
  nlohmann::json doc{{"rows", nlohmann::json::parse(to_json(t.rows))},
                     {"inner", nlohmann::json::parse(to_json(t.inner))},
                     {"cols", nlohmann::json::parse(to_json(t.cols))}};
  out << doc.dump(2) << '\n';
}

int cmd_run(const Options& opt) {
  validate(opt);
  const ProcessGrid grid{opt.grid_rows, opt.grid_cols};
  const Tilings tilings = make_tilings(opt);
  const BlockMatrix a =
      random_block_matrix(tilings.rows, tilings.inner, grid, opt.seed);
  const BlockMatrix b =
      random_block_matrix(tilings.inner, tilings.cols, grid, opt.seed + 1);
  const RunConfig cfg = run_config(opt);

  std::filesystem::create_directories(opt.out_dir);
  const std::filesystem::path dir(opt.out_dir);
  write_tilings_json(dir / "tilings.json", tilings);

  std::ofstream runs(dir / "runs.csv");
  runs << "repeat,mode,wall_us,virtual_us,flops,flop_rate\n";
  std::vector<double> walls;
  RunResult last{BlockMatrix(tilings.rows, tilings.cols, grid), RunMetrics{}};
  for (int r = 0; r < opt.repeats; ++r) {
    last = run(a, b, grid, cfg);
    const RunMetrics& m = last.metrics;
    walls.push_back(m.makespan_wall_us);
    runs << r << ',' << opt.mode << ',' << m.makespan_wall_us << ','
         << m.makespan_virtual_us << ',' << m.total_flops() << ','
         << m.flop_rate << '\n';
    std::cout << "repeat " << r << ": wall " << m.makespan_wall_us
              << " us, virtual " << m.makespan_virtual_us << " us\n";
  }
  {
    std::ofstream summary(dir / "summary.json");
    write_summary_json(summary, last.metrics);
    std::ofstream pernode(dir / "pernode.csv");
    write_per_node_csv(pernode, last.metrics);
    if (opt.timeline) {
      std::ofstream tl(dir / "timeline.jsonl");
      write_timeline_jsonl(tl, last.metrics);
    }
  }
  double mean = 0.0;
  for (double w : walls) mean += w;
  mean /= static_cast<double>(walls.size());
  double var = 0.0;
  for (double w : walls) var += (w - mean) * (w - mean);
  const double stddev =
      walls.size() > 1 ? std::sqrt(var / static_cast<double>(walls.size() - 1))
                       : 0.0;
  std::cout << "wall time over " << opt.repeats << " repeats: mean " << mean
            << " us, std " << stddev << " us\n";
  return 0;
}

int cmd_verify(const Options& opt, bool corrupt_result, bool identity_a) {
  validate(opt);
  const ProcessGrid grid{opt.grid_rows, opt.grid_cols};
  const Tilings tilings = make_tilings(opt);
  const BlockMatrix a = identity_a
                            ? identity_matrix(tilings.rows, tilings.inner, grid)
                            : random_block_matrix(tilings.rows, tilings.inner,
                                                  grid, opt.seed);
  const BlockMatrix b =
      random_block_matrix(tilings.inner, tilings.cols, grid, opt.seed + 1);
  RunResult result = run(a, b, grid, run_config(opt));
  DenseBlock got = result.c.to_dense();
  const DenseBlock want = oracle_multiply(a, b);
  if (corrupt_result) {
    got.data[0] += 1.0 + std::abs(got.data[0]);  // test hook: force a mismatch
  }

  const std::int64_t inner_blocks = a.block_cols();
  const ErrorReport report = max_mixed_relative_error(got, want);
  std::cout << "max relative error: " << report.worst << '\n';
  const bool exact_mode = opt.deterministic || opt.mode == "baseline";
  const double tolerance =
      exact_mode ? 0.0 : 1e-12 * static_cast<double>(inner_blocks);
  bool ok = report.worst <= tolerance;
  if (!ok) {
    std::cout << "FAIL: worst element (" << report.row << "," << report.col
              << ") got " << report.got << " want " << report.want << '\n';
  }
  if (identity_a) {
    const DenseBlock bd = b.to_dense();
    const DenseBlock cd = result.c.to_dense();
    if (!(bd == cd)) {
      std::cout << "FAIL: identity left operand did not reproduce the right "
                   "operand\n";
      ok = false;
    } else {
      std::cout << "identity check: product equals the right operand\n";
    }
  }
  std::cout << (ok ? "verify OK\n" : "verify FAILED\n");
  return ok ? 0 : kExitFailure;
}

struct BenchRow {
  std::string label;
  Options opt;
  Report report;
  LoadRatios ratios;
  bool done = false;
};

void write_bench_csv(const std::filesystem::path& path,
                     const std::vector<BenchRow>& rows) {
  std::ofstream out(path);
  out << "label,grid,nodes,size,mode,flop_rate,makespan_wall_us,"
         "makespan_virtual_us,efficiency,mem_ratio,work_ratio\n";
  for (const BenchRow& row : rows) {
    if (!row.done) continue;
    out << row.label << ',' << row.opt.grid_rows << 'x' << row.opt.grid_cols
        << ',' << row.opt.grid_rows * row.opt.grid_cols << ',' << row.opt.size
        << ',' << row.opt.mode << ',' << row.report.flop_rate << ','
        << row.report.makespan_wall_us << ',' << row.report.makespan_virtual_us
        << ',' << row.report.efficiency << ',' << row.ratios.memory << ','
        << row.ratios.work << '\n';
  }
}

void write_series_svg(const std::filesystem::path& path,
                      const std::string& title,
                      const std::vector<std::pair<double, double>>& points) {
  std::ofstream out(path);
  const int w = 640, h = 400, margin = 60;
  double xmax = 1.0, ymax = 1e-300;
  for (const auto& [x, y] : points) {
    xmax = std::max(xmax, x);
    ymax = std::max(ymax, y);
  }
  auto px = [&](double x) { return margin + x / xmax * (w - 2 * margin); };
  auto py = [&](double y) { return h - margin - y / ymax * (h - 2 * margin); };
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << w << "' height='"
      << h << "'>\n";
  out << "<text x='" << w / 2 << "' y='24' text-anchor='middle' "
      << "font-family='sans-serif' font-size='16'>" << title << "</text>\n";
  out << "<line x1='" << margin << "' y1='" << h - margin << "' x2='"
      << w - margin << "' y2='" << h - margin << "' stroke='black'/>\n";
  out << "<line x1='" << margin << "' y1='" << margin << "' x2='" << margin
      << "' y2='" << h - margin << "' stroke='black'/>\n";
  out << "<polyline fill='none' stroke='steelblue' stroke-width='2' points='";
  for (const auto& [x, y] : points) out << px(x) << ',' << py(y) << ' ';
  out << "'/>\n";
  for (const auto& [x, y] : points) {
    out << "<circle cx='" << px(x) << "' cy='" << py(y)
        << "' r='4' fill='steelblue'/>\n";
    out << "<text x='" << px(x) << "' y='" << h - margin + 20
        << "' text-anchor='middle' font-family='sans-serif' font-size='12'>"
        << x << "</text>\n";
  }
  out << "</svg>\n";
}

int cmd_bench(const Options& base, const std::string& grids_list,
              bool pair_nonuniform, bool svg,
              const std::optional<nlohmann::json>& spec_doc) {
  std::vector<Options> series;
  if (spec_doc && spec_doc->contains("series")) {
    for (const auto& entry : spec_doc->at("series")) {
      Options opt = base;
      apply_json(entry, opt);
      series.push_back(opt);
    }
  } else if (!grids_list.empty()) {
    std::stringstream ss(grids_list);
    std::string token;
    while (std::getline(ss, token, ',')) {
      if (token.empty()) continue;
      Options opt = base;
      parse_grid(token, opt);
      series.push_back(opt);
    }
  } else {
    series.push_back(base);
  }
  if (series.empty()) throw UsageError("bench: the experiment series is empty");
  if (pair_nonuniform) {
    std::vector<Options> paired;
    for (const Options& opt : series) {
      Options uniform = opt;
      uniform.nonuniform_blocks.reset();
      uniform.label = opt.label.empty() ? "uniform" : opt.label + "-uniform";
      paired.push_back(uniform);
      Options nonuniform = opt;
      nonuniform.nonuniform_blocks = std::max<std::int64_t>(
          1, opt.size / std::max<std::int64_t>(1, opt.block));
      nonuniform.label =
          opt.label.empty() ? "nonuniform" : opt.label + "-nonuniform";
      paired.push_back(nonuniform);
    }
    series = std::move(paired);
  }
  for (Options& opt : series) validate(opt);

  std::filesystem::create_directories(base.out_dir);
  const std::filesystem::path dir(base.out_dir);

  // Efficiency is reported against this artifact's own measured single-node
  // rate on the first entry's problem.
  double reference_rate;
  {
    Options ref = series.front();
    ref.grid_rows = ref.grid_cols = 1;
    const ProcessGrid grid{1, 1};
    const Tilings tilings = make_tilings(ref);
    const BlockMatrix a =
        random_block_matrix(tilings.rows, tilings.inner, grid, ref.seed);
    const BlockMatrix b =
        random_block_matrix(tilings.inner, tilings.cols, grid, ref.seed + 1);
    const RunResult result = run(a, b, grid, run_config(ref));
    reference_rate = result.metrics.flop_rate;
    std::cout << "single-node reference rate: " << reference_rate
              << " flop/s\n";
  }

  std::vector<BenchRow> rows;
  for (const Options& opt : series) {
    BenchRow row;
    row.opt = opt;
    row.label = opt.label.empty()
                    ? (std::to_string(opt.grid_rows) + "x" +
                       std::to_string(opt.grid_cols))
                    : opt.label;
    rows.push_back(row);
  }
  int exit_code = 0;
  for (BenchRow& row : rows) {
    const Options& opt = row.opt;
    try {
      const ProcessGrid grid{opt.grid_rows, opt.grid_cols};
      const Tilings tilings = make_tilings(opt);
      const BlockMatrix a =
          random_block_matrix(tilings.rows, tilings.inner, grid, opt.seed);
      const BlockMatrix b =
          random_block_matrix(tilings.inner, tilings.cols, grid, opt.seed + 1);
      const RunResult result = run(a, b, grid, run_config(opt));
      row.ratios = load_ratios(a, b, grid);
      row.report = summarize(result.metrics,
                             ProblemInfo{grid.node_count(), reference_rate,
                                         row.label});
      row.done = true;
      std::cout << row.label << ": " << row.report.flop_rate
                << " flop/s, efficiency " << row.report.efficiency << '\n';
    } catch (const std::exception& e) {
      std::cerr << "bench entry '" << row.label << "' failed: " << e.what()
                << '\n';
      exit_code = kExitFailure;
      break;
    }
  }
  write_bench_csv(dir / "bench.csv", rows);
  if (svg && exit_code == 0) {
    std::vector<std::pair<double, double>> rate, eff;
    for (const BenchRow& row : rows) {
      if (!row.done) continue;
      const double nodes = row.opt.grid_rows * row.opt.grid_cols;
      rate.push_back({nodes, row.report.flop_rate});
      eff.push_back({nodes, row.report.efficiency});
    }
    std::sort(rate.begin(), rate.end());
    std::sort(eff.begin(), eff.end());
    write_series_svg(dir / "rate_vs_nodes.svg", "flop rate vs nodes", rate);
    write_series_svg(dir / "efficiency_vs_nodes.svg", "efficiency vs nodes",
                     eff);
  }
  return exit_code;
}

void add_common_flags(CLI::App* cmd, Options& opt, std::string& grid_text,
                      std::string& spec_path) {
  cmd->add_option("--spec", spec_path,
                  "JSON experiment spec; explicit flags override its values");
  cmd->add_option("--size", opt.size, "matrix extent per dimension")
      ->capture_default_str();
  cmd->add_option("--block", opt.block, "uniform block size")
      ->capture_default_str();
  cmd->add_option("--nonuniform-blocks", opt.nonuniform_blocks,
                  "use a seeded nonuniform tiling with this many blocks/dim");
  cmd->add_option("--seed", opt.seed, "RNG seed")->capture_default_str();
  cmd->add_option("--grid", grid_text, "process grid as RxC")
      ->capture_default_str();
  cmd->add_option("--mode", opt.mode, "baseline | task")->capture_default_str();
  cmd->add_flag("--deterministic", opt.deterministic,
                "fix the accumulation order for bitwise-reproducible results");
  cmd->add_option("--issue-limit", opt.issue_limit,
                  "override the computed concurrent-iteration window");
  cmd->add_option("--sub-split", opt.sub_split,
                  "split each result tile into up to this many strips per dim")
      ->capture_default_str();
  cmd->add_option("--latency", opt.latency,
                  "message latency: zero | fixed:US | perbyte:US:USPB")
      ->capture_default_str();
  cmd->add_option("--threads", opt.threads,
                  "worker threads (0 = hardware; env TASKSUMMA_THREADS)");
  cmd->add_option("--out-dir", opt.out_dir, "output directory")
      ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulated distributed block matrix multiplication"};
  app.require_subcommand(1);

  Options opt;
  std::string grid_text = "1x1";
  std::string spec_path;

  CLI::App* run_cmd = app.add_subcommand("run", "execute an experiment");
  add_common_flags(run_cmd, opt, grid_text, spec_path);
  run_cmd->add_option("--repeats", opt.repeats, "number of repeated runs")
      ->capture_default_str();
  run_cmd->add_flag("--timeline", opt.timeline,
                    "also write the virtual-time trace (timeline.jsonl)");

  CLI::App* verify_cmd =
      app.add_subcommand("verify", "run once and compare with the reference");
  add_common_flags(verify_cmd, opt, grid_text, spec_path);
  bool corrupt_result = false, identity_a = false;
  verify_cmd->add_flag("--corrupt-result", corrupt_result,
                       "test hook: corrupt one element before comparing");
  verify_cmd->add_flag("--identity-a", identity_a,
                       "use the identity for A and check the product equals B");

  CLI::App* bench_cmd =
      app.add_subcommand("bench", "run a series and emit a combined table");
  add_common_flags(bench_cmd, opt, grid_text, spec_path);
  std::string grids_list;
  bool pair_nonuniform = false, svg = false;
  bench_cmd->add_option("--grids", grids_list,
                        "comma-separated scaling series, e.g. 1x1,2x2,4x4");
  bench_cmd->add_flag("--pair-nonuniform", pair_nonuniform,
                      "run every entry with uniform and nonuniform tilings");
  bench_cmd->add_flag("--svg", svg, "emit rate/efficiency SVG plots");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    // Merge order: defaults, then the spec file, then explicit flags.
    std::optional<nlohmann::json> spec_doc;
    if (!spec_path.empty()) {
      spec_doc = load_spec_file(spec_path);
      Options merged;
      apply_json(*spec_doc, merged);
      CLI::App* cmd = app.get_subcommands().front();
      auto keep = [&](const std::string& flag) {
        const CLI::Option* o = cmd->get_option_no_throw(flag);
        return o != nullptr && o->count() > 0;
      };
      if (!keep("--size")) opt.size = merged.size;
      if (!keep("--block")) opt.block = merged.block;
      if (!keep("--nonuniform-blocks") && merged.nonuniform_blocks) {
        opt.nonuniform_blocks = merged.nonuniform_blocks;
      }
      if (!keep("--seed")) opt.seed = merged.seed;
      if (!keep("--grid")) {
        opt.grid_rows = merged.grid_rows;
        opt.grid_cols = merged.grid_cols;
      }
      if (!keep("--mode")) opt.mode = merged.mode;
      if (!keep("--repeats")) opt.repeats = merged.repeats;
      if (!keep("--deterministic")) opt.deterministic = merged.deterministic;
      if (!keep("--issue-limit") && merged.issue_limit) {
        opt.issue_limit = merged.issue_limit;
      }
      if (!keep("--sub-split")) opt.sub_split = merged.sub_split;
      if (!keep("--latency")) opt.latency = merged.latency;
      if (!keep("--threads") && merged.threads) opt.threads = merged.threads;
      if (!keep("--out-dir")) opt.out_dir = merged.out_dir;
      opt.label = merged.label;
    }
    if (app.get_subcommands().front()->get_option("--grid")->count() > 0 ||
        !spec_doc) {
      parse_grid(grid_text, opt);
    }

    if (app.got_subcommand("run")) return cmd_run(opt);
    if (app.got_subcommand("verify")) {
      return cmd_verify(opt, corrupt_result, identity_a);
    }
    return cmd_bench(opt, grids_list, pair_nonuniform, svg, spec_doc);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}
