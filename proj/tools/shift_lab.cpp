#include "shiftlab/harness/config.hpp"
#include "shiftlab/harness/runner.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <iostream>

namespace {

enum ExitCode { kOk = 0, kConfigError = 1, kTheoryFailures = 2, kIoError = 3, kInterrupted = 130 };

extern "C" void on_sigint(int) { shiftlab::harness::interrupt_flag().store(true); }

}  // namespace

int main(int argc, char** argv) {
  using namespace shiftlab::harness;
  CLI::App app{"Watermark-removal attack laboratory with closed-form diffusion models"};
  app.require_subcommand(1);
  app.fallthrough();

  int workers = 0;
  bool keep_traces = false;
  std::string out;
  app.add_option("--workers", workers, "Worker threads (overrides run.workers)")->check(CLI::PositiveNumber);
  app.add_flag("--keep-traces", keep_traces, "Write trajectories and grids of trial 0 per cell");
  app.add_option("--out", out, "Output directory (overrides run.output)");

  std::string spec_path;
  std::string run_dir;
  auto* sweep = app.add_subcommand("sweep", "Attack sweep over schemes and lambda");
  sweep->add_option("spec", spec_path, "Experiment spec")->required();
  auto* theory = app.add_subcommand("verify-theory", "Stability and decoupling checks");
  theory->add_option("spec", spec_path, "Experiment spec")->required();
  auto* plot = app.add_subcommand("plotdata", "Long-format plot tables from a sweep run");
  plot->add_option("run-dir", run_dir, "Directory holding sweep.csv")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfigError;
  }

  std::signal(SIGINT, on_sigint);
  RunOptions opts;
  if (workers > 0) opts.workers = workers;
  if (!out.empty()) opts.out_dir = out;
  opts.keep_traces = keep_traces;

  try {
    if (plot->parsed()) {
      write_plotdata(run_dir);
      std::printf("wrote %s/asr_vs_lambda.csv and dist_vs_lambda.csv\n", run_dir.c_str());
      return kOk;
    }
    const ExperimentSpec spec = load_spec(spec_path);
    if (sweep->parsed()) {
      const SweepResult r = run_sweep(spec, opts);
      for (const auto& [id, lam] : r.minimal_lambda) {
        std::printf("%s: minimal lambda with ASR >= 0.95: %s\n", shiftlab::scheme_name(id),
                    lam ? format_number(*lam).c_str() : "none");
      }
      if (!r.hierarchy_reproduced) std::printf("flag: ring minimal lambda does not exceed sign minimal lambda\n");
      std::printf("wrote %s\n", (r.out_dir / "sweep.csv").string().c_str());
      return r.interrupted ? kInterrupted : kOk;
    }
    const TheoryResult r = run_theory(spec, opts);
    for (const auto& row : r.rows) {
      if (row.pass == "fail") std::printf("FAIL %s bound=%s observed=%s\n", row.name.c_str(),
                                          format_number(row.bound).c_str(), format_number(row.observed).c_str());
    }
    std::printf("%zu checks, %d failed; wrote %s\n", r.rows.size(), r.failures(),
                (r.out_dir / "theory.csv").string().c_str());
    if (r.interrupted) return kInterrupted;
    return r.failures() > 0 ? kTheoryFailures : kOk;
  } catch (const shiftlab::Error& e) {
    std::cerr << "shift-lab: " << e.what() << '\n';
    return e.kind() == shiftlab::ErrorKind::Io ? kIoError : kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "shift-lab: " << e.what() << '\n';
    return kIoError;
  }
}
