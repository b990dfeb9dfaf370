#pragma once

#include "shiftlab/codec.hpp"
#include "shiftlab/harness/config.hpp"
#include "shiftlab/metrics.hpp"
#include "shiftlab/schedule.hpp"
#include "shiftlab/score.hpp"
#include "shiftlab/watermark.hpp"

#include <atomic>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace shiftlab::harness {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kSweepSchema = "# schema: shiftlab.sweep v1";
inline constexpr const char* kSummarySchema = "# schema: shiftlab.summary v1";
inline constexpr const char* kTheorySchema = "# schema: shiftlab.theory v1";
inline constexpr const char* kPlotSchema = "# schema: shiftlab.plotdata v1";

/// Set by the SIGINT handler; long loops stop between cells and the
/// completed part of the run is written out.
std::atomic<bool>& interrupt_flag();

struct RunOptions {
  std::optional<int> workers;  ///< overrides run.workers
  std::optional<std::filesystem::path> out_dir;  ///< overrides run.output
  bool keep_traces = false;
};

/// Every model object a run needs, built once from a spec.
struct Lab {
  NoiseSchedule<double> schedule;
  ScoreModel<double> score;   ///< defender (generation and verification)
  ScoreModel<double> attacker;
  ToyCodec<double> codec = ToyCodec<double>::identity();
  std::vector<WatermarkScheme> schemes;

  const MixtureScore<double>* mixture() const { return std::get_if<MixtureScore<double>>(&score); }
};

Lab build_lab(const ExperimentSpec& spec);
WatermarkScheme build_scheme(const ExperimentSpec& spec, SchemeId id);

/// Per-cell aggregate of one attack variant.
struct CellSummary {
  SchemeId scheme = SchemeId::SignMark;
  std::string variant;  ///< "shift" or "ddim"
  double lambda = 0.0;
  double eta = 0.0;
  int t_lambda = 0;
  int trials = 0;
  int eligible = 0;
  double asr = 0.0;
  double clean_asr = 0.0;
  MeanStderr bit_acc_attacked;  ///< NaN mean for ring
  MeanStderr l1;
  MeanStderr l2;
  MeanStderr latent_mse;
  std::optional<double> mode_retention;
};

struct SchemeCalibration {
  SchemeId scheme = SchemeId::SignMark;
  double tau = 0.0;
  double fresh_null_fpr = 0.0;  ///< measured on n_null unseen null samples
  double tpr = 0.0;             ///< unattacked detections over the sweep trials
};

struct SweepResult {
  std::vector<TrialRecord> records;  ///< sorted by (scheme, variant, lambda, trial)
  std::vector<std::string> record_variants;
  std::vector<CellSummary> cells;
  std::vector<SchemeCalibration> calibration;
  std::map<SchemeId, std::optional<double>> minimal_lambda;  ///< SHIFT ASR >= 0.95
  bool hierarchy_reproduced = false;
  bool interrupted = false;
  std::filesystem::path out_dir;
};

SweepResult run_sweep(const ExperimentSpec& spec, const RunOptions& opts = {});

struct TheoryRow {
  std::string name;
  std::string anchor;
  double bound = 0.0;
  double observed = 0.0;
  std::string pass;  ///< pass | fail | skip | info
};

struct TheoryResult {
  std::vector<TheoryRow> rows;
  bool interrupted = false;
  std::filesystem::path out_dir;

  int failures() const;
  const TheoryRow* find(const std::string& name) const;
};

TheoryResult run_theory(const ExperimentSpec& spec, const RunOptions& opts = {});

/// Reads <run_dir>/sweep.csv and writes asr_vs_lambda.csv and
/// dist_vs_lambda.csv next to it.
void write_plotdata(const std::filesystem::path& run_dir);

std::string format_number(double v);

}  // namespace shiftlab::harness
