#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#ifdef _OPENMP
#include <omp.h>
#endif

#include "symsim/config.hpp"
#include "symsim/report.hpp"
#include "symsim/simcore.hpp"
#include "symsim/workload.hpp"

namespace fs = std::filesystem;
using namespace symsim;

namespace {

// Reports land atomically: a half-written file never shadows a good one.
template <class WriteFn>
void write_atomic(const fs::path& path, WriteFn fn) {
  const fs::path tmp = path.string() + ".tmp";
  fn(tmp.string());
  fs::rename(tmp, path);
}

std::string default_output_root() {
  if (const char* env = std::getenv("SYMSIM_OUTPUT_ROOT")) return env;
  return "runs";
}

int cmd_gen_trace(const std::string& out, const std::string& kind, const std::string& corpus,
                  int sessions, int concurrency, std::uint64_t seed, double multi_turn_frac,
                  double mean_extra_turns, double miss_fraction, double high_fraction, int jobs,
                  double words_per_token) {
  Trace trace;
  if (kind == "agent") {
    trace = generate_agent_trace(review_cycle_graph(), jobs, seed);
    if (concurrency > 0) {
      if (concurrency > static_cast<int>(trace.sessions.size()))
        throw std::runtime_error("concurrency exceeds the number of jobs");
      trace.concurrency_target = concurrency;
    }
  } else {
    std::vector<SessionScript> scripts;
    if (!corpus.empty()) {
      scripts = load_chat_corpus(corpus, static_cast<std::size_t>(sessions), words_per_token);
    } else {
      SyntheticSpec spec;
      spec.sessions = sessions;
      spec.multi_turn_fraction = multi_turn_frac;
      spec.mean_extra_turns = mean_extra_turns;
      spec.prefill_heavy = kind == "prefill-heavy";
      spec.words_per_token = words_per_token;
      scripts = synthesize_corpus(spec, seed);
    }
    if (high_fraction > 0) assign_priorities(scripts, high_fraction, seed + 1);
    const int c = concurrency > 0 ? concurrency : std::max(1, sessions / 8);
    trace = synthesize_arrivals(std::move(scripts), c, seed + 2);
    trace = inject_advisories(std::move(trace), miss_fraction, seed + 3);
  }
  if (const fs::path dir = fs::path(out).parent_path(); !dir.empty()) fs::create_directories(dir);
  write_atomic(out, [&](const std::string& p) { write_trace(p, trace); });
  std::cout << out << ": " << trace.sessions.size() << " sessions, "
            << trace.inference_count() << " turns, " << trace.advisory_count()
            << " advisories, concurrency " << trace.concurrency_target << ", workload "
            << workload_hash(trace) << "\n";
  return 0;
}

int cmd_run(ExperimentConfig cfg, const std::string& out_root, bool force) {
  cfg.validate();
  const Trace trace = read_trace(cfg.trace_path);
  const std::vector<Cell> cells = derive_cells(cfg);
  const fs::path root = fs::path(out_root) / cfg.name;
  fs::create_directories(root);

  std::vector<std::string> status(cells.size());
  std::vector<int> failed(cells.size(), 0);
  // Cells are independent runs over a shared read-only trace.
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (long i = 0; i < static_cast<long>(cells.size()); ++i) {
    const Cell& cell = cells[i];
    const fs::path dir = root / cell.dir_name(trace.seed);
    try {
      if (fs::exists(dir / "report.json") && !force) {
        status[i] = "skipped (report exists; use --force)";
        continue;
      }
      fs::create_directories(dir);
      Trace local = trace;
      if (cell.concurrency > 0) {
        if (cell.concurrency > static_cast<int>(local.sessions.size()))
          throw std::runtime_error("concurrency exceeds session count");
        local.concurrency_target = cell.concurrency;
      }
      const RunConfig rc = to_run_config(cfg, cell.policy);
      const RunReport rep = run_simulation(local, rc);
      write_atomic(dir / "report.json",
                   [&](const std::string& p) { write_report_json(p, rep); });
      write_atomic(dir / "records.tsv",
                   [&](const std::string& p) { write_records_tsv(p, rep); });
      std::ostringstream os;
      os << "ok: " << rep.records.size() << " requests, rps " << std::fixed
         << std::setprecision(2) << steady_rps(rep) << ", tpot_ms " << std::setprecision(3)
         << mean_tpot_ms(rep) << ", imbalance " << std::setprecision(2) << rep.imbalance.mean;
      status[i] = os.str();
    } catch (const std::exception& e) {
      status[i] = std::string("FAILED: ") + e.what();
      failed[i] = 1;
    }
  }

  int bad = 0;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    std::cout << cells[i].dir_name(trace.seed) << ": " << status[i] << "\n";
    bad += failed[i];
  }
  if (bad > 0) std::cout << bad << " of " << cells.size() << " cells failed\n";
  return bad > 0 ? 1 : 0;
}

int cmd_compare(const std::vector<std::string>& paths, const std::string& csv) {
  std::vector<RunReport> runs;
  runs.reserve(paths.size());
  for (const auto& p : paths) runs.push_back(read_report_json(p));
  std::cout << compare_table(runs);
  if (!csv.empty()) write_compare_csv(csv, runs);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trace-driven simulator of a multi-node LLM inference cluster"};
  app.require_subcommand(1);

  // gen-trace
  auto* gen = app.add_subcommand("gen-trace", "synthesize a closed-loop trace file");
  std::string gen_out, gen_kind = "chat", gen_corpus;
  int gen_sessions = 1000, gen_concurrency = 0, gen_jobs = 16;
  std::uint64_t gen_seed = 1;
  double gen_mtf = 0.734, gen_extra = 4.0, gen_miss = 0.0, gen_high = 0.0, gen_wpt = 0.75;
  gen->add_option("--out", gen_out, "trace file to write")->required();
  gen->add_option("--kind", gen_kind, "chat | prefill-heavy | agent")
      ->check(CLI::IsMember({"chat", "prefill-heavy", "agent"}));
  gen->add_option("--corpus", gen_corpus, "chat corpus (JSONL) instead of synthesis");
  gen->add_option("--sessions", gen_sessions, "session count (chat kinds)");
  gen->add_option("--concurrency", gen_concurrency, "slot count (default: sessions/8)");
  gen->add_option("--seed", gen_seed, "base seed");
  gen->add_option("--multi-turn-fraction", gen_mtf, "fraction of sessions with >1 turn");
  gen->add_option("--mean-extra-turns", gen_extra, "mean extra turns for multi-turn sessions");
  gen->add_option("--miss-fraction", gen_miss, "fraction of turns without an advisory");
  gen->add_option("--high-fraction", gen_high, "fraction of sessions marked high-priority");
  gen->add_option("--jobs", gen_jobs, "pipeline executions (agent kind)");
  gen->add_option("--words-per-token", gen_wpt, "think-time words per token");

  // run
  auto* run = app.add_subcommand("run", "run an experiment (policy x concurrency cells)");
  std::string run_config, run_trace, run_root = default_output_root(), run_name;
  std::vector<std::string> run_policies;
  std::vector<int> run_concurrencies;
  int run_nodes = 0;
  bool run_force = false;
  run->add_option("--config", run_config, "experiment config JSON");
  run->add_option("--trace", run_trace, "trace file (overrides config)");
  run->add_option("--policy", run_policies, "policies (overrides config)");
  run->add_option("--concurrency", run_concurrencies, "concurrencies (overrides config)");
  run->add_option("--nodes", run_nodes, "node count (overrides config)");
  run->add_option("--name", run_name, "experiment name (output subdirectory)");
  run->add_option("--out-root", run_root, "output root (default $SYMSIM_OUTPUT_ROOT or ./runs)");
  run->add_flag("--force", run_force, "overwrite existing cell reports");

  // compare
  auto* cmp = app.add_subcommand("compare", "tabulate reports of one workload side by side");
  std::vector<std::string> cmp_paths;
  std::string cmp_csv;
  cmp->add_option("reports", cmp_paths, "report.json files")->required()->expected(-1);
  cmp->add_option("--csv", cmp_csv, "also write the table as CSV");

  // validate-config
  auto* val = app.add_subcommand("validate-config", "parse and validate an experiment config");
  std::string val_config;
  val->add_option("--config", val_config, "experiment config JSON")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return cmd_gen_trace(gen_out, gen_kind, gen_corpus, gen_sessions, gen_concurrency,
                           gen_seed, gen_mtf, gen_extra, gen_miss, gen_high, gen_jobs, gen_wpt);
    if (run->parsed()) {
      ExperimentConfig cfg;
      if (!run_config.empty()) cfg = read_experiment(run_config);
      if (!run_trace.empty()) cfg.trace_path = run_trace;
      if (!run_policies.empty()) cfg.policies = run_policies;
      if (!run_concurrencies.empty()) cfg.concurrencies = run_concurrencies;
      if (run_nodes > 0) cfg.num_nodes = run_nodes;
      if (!run_name.empty()) cfg.name = run_name;
      return cmd_run(std::move(cfg), run_root, run_force);
    }
    if (cmp->parsed()) return cmd_compare(cmp_paths, cmp_csv);
    if (val->parsed()) {
      const ExperimentConfig cfg = read_experiment(val_config);
      std::cout << val_config << ": ok (" << derive_cells(cfg).size() << " cells)\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
