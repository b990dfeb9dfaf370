#pragma once

#include "shiftlab/core.hpp"
#include "shiftlab/watermark.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace shiftlab::harness {

/// Parse failure carrying the 1-based line it refers to (0 when the problem
/// is a missing or inconsistent setting rather than a single line).
class ConfigError : public Error {
 public:
  ConfigError(int line, const std::string& what)
      : Error(ErrorKind::Config, (line > 0 ? "line " + std::to_string(line) + ": " : std::string()) + what),
        line_(line) {}

  int line() const noexcept { return line_; }

 private:
  int line_;
};

struct ScheduleSpec {
  int steps = 100;
  double beta_start = 1e-3;
  double beta_end = 0.2;
};

enum class ScoreKind { Gaussian, Mixture };

struct ScoreSpec {
  ScoreKind kind = ScoreKind::Gaussian;
  double scale = 1.0;
  /// Gaussian mean: empty = 0, one value = constant, d values = explicit.
  std::vector<double> mean;
  int components = 4;
  std::uint64_t mean_seed = 17;
  std::vector<double> weights;  ///< empty = uniform
  std::vector<double> means;    ///< flat d*K, component-major; empty = seeded
};

struct CodecSpec {
  CodecKind kind = CodecKind::Identity;
  double gain = 1.0;
  std::uint64_t basis_seed = 3;
};

struct RingSpec {
  std::uint64_t key_seed = 101;
  double r_in = 3.0;
  double r_out = 5.0;
};

struct SignSpec {
  std::uint64_t key_seed = 202;
  int m_len = 128;
  std::uint64_t message_seed = 303;
  std::vector<int> message;  ///< explicit bits; overrides message_seed
};

enum class AttackModel { Same, Mismatched };

struct TheorySpec {
  std::vector<double> lambdas{0.25, 0.5, 0.75, 1.0};
  int trials = 200;              ///< coupled pairs per lambda
  int pair_trials = 200;         ///< probe pairs per one-step / multi-step check
  int one_step_stride = 1;       ///< check every stride-th t (t = T always included)
  std::vector<int> multistep_n;  ///< empty = {1, T/4, T/2, T}
  int lipschitz_trials = 4000;   ///< probe pairs per t for empirical L_t
  std::uint64_t lipschitz_seed = 29;
  double lipschitz_scale = 1.0;  ///< multiplies L_t in the bounds (sabotage control < 1)
  int independence_samples = 500;
  int terminal_samples = 500;
};

struct ExperimentSpec {
  Shape shape{1, 16, 16};
  ScheduleSpec schedule;
  ScoreSpec score;
  CodecSpec codec;
  std::vector<SchemeId> schemes{SchemeId::RingMark, SchemeId::SignMark};
  RingSpec ring;
  SignSpec sign;
  std::vector<double> lambdas{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  double eta = 1.0;
  bool baseline = true;
  AttackModel attack_model = AttackModel::Same;
  std::uint64_t mismatch_seed = 977;
  int trials = 200;
  std::uint64_t master_seed = 1;
  double fpr_target = 0.01;
  int n_null = 1000;
  std::string output = "runs/default";
  int workers = 1;
  TheorySpec theory;

  /// FNV-1a of the config text this value was parsed from.
  std::uint64_t source_hash = 0;
};

ExperimentSpec parse_spec(std::string_view text);
ExperimentSpec load_spec(const std::filesystem::path& path);

/// Every accepted key, in documentation order.
const std::vector<std::string>& spec_keys();

std::string hex64(std::uint64_t v);

}  // namespace shiftlab::harness
