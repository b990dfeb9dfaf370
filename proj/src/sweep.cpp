#include "io.hpp"
#include "shiftlab/attack.hpp"
#include "shiftlab/harness/runner.hpp"
#include "shiftlab/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace shiftlab::harness {
namespace {

constexpr double kEvasionTarget = 0.95;

struct TrialBase {
  Latent<double> eps_w;
  Latent<double> x_w;
  VerifyResult clean;
};

struct Variant {
  std::string name;
  double eta;
};

std::string grid_csv(const Latent<double>& z) {
  std::string out;
  const Shape& s = z.shape;
  for (int c = 0; c < s.channels; ++c) {
    for (int r = 0; r < s.height; ++r) {
      std::vector<std::string> cells;
      for (int col = 0; col < s.width; ++col) {
        cells.push_back(format_number(z.values[(c * s.height + r) * s.width + col]));
      }
      out += io::join(cells);
    }
  }
  return out;
}

std::string trace_csv(const std::vector<Latent<double>>& trace, int t_start) {
  std::string out;
  for (std::size_t k = 0; k < trace.size(); ++k) {
    std::vector<std::string> cells{std::to_string(t_start - static_cast<int>(k))};
    for (Eigen::Index i = 0; i < trace[k].values.size(); ++i) cells.push_back(format_number(trace[k].values[i]));
    out += io::join(cells);
  }
  return out;
}

CellSummary summarize(std::span<const TrialRecord> recs, const std::string& variant, int t_lambda) {
  CellSummary c;
  c.scheme = recs.front().scheme;
  c.variant = variant;
  c.lambda = recs.front().lambda;
  c.eta = recs.front().eta;
  c.t_lambda = t_lambda;
  c.trials = static_cast<int>(recs.size());
  c.asr = attack_success_rate(recs);
  c.clean_asr = clean_evasion_rate(recs);
  for (const auto& r : recs) c.eligible += r.verify_clean.decision == Decision::Watermarked ? 1 : 0;
  std::vector<double> l1, l2, mse, ba;
  int retained = 0;
  int with_mode = 0;
  for (const auto& r : recs) {
    l1.push_back(r.l1_dist);
    l2.push_back(r.l2_dist);
    mse.push_back(r.latent_mse);
    if (r.verify_attacked.bit_accuracy) ba.push_back(*r.verify_attacked.bit_accuracy);
    if (auto m = r.mode_retained()) {
      ++with_mode;
      retained += *m ? 1 : 0;
    }
  }
  c.l1 = mean_and_stderr(l1);
  c.l2 = mean_and_stderr(l2);
  c.latent_mse = mean_and_stderr(mse);
  c.bit_acc_attacked = ba.empty() ? MeanStderr{std::numeric_limits<double>::quiet_NaN(), 0.0} : mean_and_stderr(ba);
  if (with_mode > 0) c.mode_retention = static_cast<double>(retained) / with_mode;
  return c;
}

std::string sweep_csv(const SweepResult& r) {
  std::string out = std::string(kSweepSchema) + "\n";
  out += io::join({"scheme", "lambda", "eta", "trial", "clean_decision", "attacked_decision", "bit_acc_clean",
                   "bit_acc_attacked", "l1", "l2", "latent_mse", "mode_retained"});
  for (const auto& rec : r.records) {
    const auto opt = [](const std::optional<double>& v) { return v ? format_number(*v) : std::string("NA"); };
    const auto mode = rec.mode_retained();
    out += io::join({scheme_name(rec.scheme), format_number(rec.lambda), format_number(rec.eta),
                     std::to_string(rec.trial_id), to_string(rec.verify_clean.decision),
                     to_string(rec.verify_attacked.decision), opt(rec.verify_clean.bit_accuracy),
                     opt(rec.verify_attacked.bit_accuracy), format_number(rec.l1_dist), format_number(rec.l2_dist),
                     format_number(rec.latent_mse), mode ? (*mode ? "1" : "0") : "NA"});
  }
  return out;
}

std::string summary_csv(const SweepResult& r) {
  std::string out = std::string(kSummarySchema) + "\n";
  out += io::join({"scheme", "variant", "lambda", "eta", "t_lambda", "trials", "eligible", "asr", "clean_asr",
                   "mean_bit_acc_attacked", "mean_l1", "stderr_l1", "mean_l2", "stderr_l2", "mean_latent_mse",
                   "mode_retention"});
  for (const auto& c : r.cells) {
    out += io::join({scheme_name(c.scheme), c.variant, format_number(c.lambda), format_number(c.eta),
                     std::to_string(c.t_lambda), std::to_string(c.trials), std::to_string(c.eligible),
                     format_number(c.asr), format_number(c.clean_asr), format_number(c.bit_acc_attacked.mean),
                     format_number(c.l1.mean), format_number(c.l1.stderr_), format_number(c.l2.mean),
                     format_number(c.l2.stderr_), format_number(c.latent_mse.mean),
                     c.mode_retention ? format_number(*c.mode_retention) : "NA"});
  }
  return out;
}

const CellSummary* find_cell(const SweepResult& r, SchemeId s, const std::string& variant, double lambda) {
  for (const auto& c : r.cells) {
    if (c.scheme == s && c.variant == variant && std::abs(c.lambda - lambda) < 1e-12) return &c;
  }
  return nullptr;
}

nlohmann::json json_number(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

nlohmann::json report_json(const ExperimentSpec& spec, const SweepResult& r) {
  using nlohmann::json;
  json j;
  j["version"] = kVersion;
  j["spec_hash"] = hex64(spec.source_hash);
  j["interrupted"] = r.interrupted;
  j["steps"] = spec.schedule.steps;
  j["dim"] = spec.shape.size();
  j["trials"] = spec.trials;
  for (const auto& c : r.calibration) {
    j["calibration"][scheme_name(c.scheme)] = {
        {"tau", json_number(c.tau)}, {"fresh_null_fpr", c.fresh_null_fpr}, {"tpr", c.tpr}};
  }
  for (const auto& [id, lam] : r.minimal_lambda) {
    j["minimal_lambda"][scheme_name(id)] = lam ? json(*lam) : json(nullptr);
  }
  j["hierarchy"]["ring_exceeds_sign"] = r.hierarchy_reproduced;
  if (!r.hierarchy_reproduced) {
    j["hierarchy"]["flag"] = "ring minimal lambda does not exceed sign minimal lambda in this run";
  }

  std::vector<double> grid = spec.lambdas;
  std::sort(grid.begin(), grid.end());
  for (SchemeId id : spec.schemes) {
    std::vector<double> l1, l2, asr;
    for (double lam : grid) {
      if (const auto* c = find_cell(r, id, "shift", lam)) {
        l1.push_back(c->l1.mean);
        l2.push_back(c->l2.mean);
        asr.push_back(c->asr);
      }
    }
    j["monotonicity"][scheme_name(id)] = {{"l1_inversions", adjacent_inversions(l1)},
                                          {"l2_inversions", adjacent_inversions(l2)},
                                          {"asr_inversions", adjacent_inversions(asr)}};
  }
  // separation between SHIFT and the deterministic baseline at the sign minimal lambda
  if (auto it = r.minimal_lambda.find(SchemeId::SignMark); it != r.minimal_lambda.end() && it->second && spec.baseline) {
    const auto* s = find_cell(r, SchemeId::SignMark, "shift", *it->second);
    const auto* b = find_cell(r, SchemeId::SignMark, "ddim", *it->second);
    if (s && b) {
      j["stochasticity_gap"] = {{"lambda", *it->second}, {"shift_asr", s->asr}, {"ddim_asr", b->asr},
                                {"gap", s->asr - b->asr}};
    }
  }
  // across-scheme l1 range at the largest lambda <= 0.9
  double probe = -1.0;
  for (double lam : grid) {
    if (lam <= 0.9 + 1e-12) probe = lam;
  }
  if (probe > 0.0 && spec.schemes.size() > 1) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (SchemeId id : spec.schemes) {
      if (const auto* c = find_cell(r, id, "shift", probe)) {
        lo = std::min(lo, c->l1.mean);
        hi = std::max(hi, c->l1.mean);
      }
    }
    if (hi >= lo) j["saturation"] = {{"lambda", probe}, {"l1_range", hi - lo}};
  }
  return j;
}

}  // namespace

SweepResult run_sweep(const ExperimentSpec& spec, const RunOptions& opts) {
  const Lab lab = build_lab(spec);
  const int workers = opts.workers.value_or(spec.workers);
  const int T = lab.schedule.steps();
  SweepResult result;
  result.out_dir = opts.out_dir.value_or(std::filesystem::path(spec.output));
  io::ensure_dir(result.out_dir);
  if (opts.keep_traces) io::ensure_dir(result.out_dir / "traces");

  std::vector<Variant> variants{{"shift", spec.eta}};
  if (spec.baseline) variants.push_back({"ddim", 0.0});
  std::vector<std::size_t> order(spec.lambdas.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return spec.lambdas[a] < spec.lambdas[b]; });

  for (const WatermarkScheme& scheme : lab.schemes) {
    if (interrupt_flag().load()) break;
    const SchemeId id = scheme_id(scheme);
    const char* name = scheme_name(id);
    SchemeCalibration cal{id};
    cal.tau = calibrate_threshold(scheme, spec.shape, lab.score, lab.schedule, lab.codec, spec.n_null,
                                  spec.fpr_target, spec.master_seed, workers);
    const auto fresh = null_statistics(scheme, spec.shape, lab.score, lab.schedule, lab.codec, spec.n_null,
                                       spec.master_seed, workers, static_cast<std::uint64_t>(spec.n_null));
    int false_pos = 0;
    for (double s : fresh) false_pos += accepts(id, s, cal.tau) ? 1 : 0;
    cal.fresh_null_fpr = static_cast<double>(false_pos) / static_cast<double>(fresh.size());

    std::vector<TrialBase> base(static_cast<std::size_t>(spec.trials));
    parallel_for(spec.trials, workers, [&](int i) {
      RngStream rng(derive_trial_seed(spec.master_seed, name, static_cast<std::uint64_t>(i), "gen-noise"), "gen-noise");
      auto& b = base[static_cast<std::size_t>(i)];
      b.eps_w = embed<double>(scheme, spec.shape, rng);
      b.x_w = generate_watermarked(b.eps_w, lab.score, lab.schedule, lab.codec);
      b.clean = verify_recovered(recover_noise(b.x_w, lab.score, lab.schedule, lab.codec), scheme, cal.tau);
    });
    int detected = 0;
    for (const auto& b : base) detected += b.clean.decision == Decision::Watermarked ? 1 : 0;
    cal.tpr = static_cast<double>(detected) / static_cast<double>(spec.trials);
    result.calibration.push_back(cal);
    if (opts.keep_traces && !base.empty()) {
      io::write_text(result.out_dir / "traces" / (std::string(name) + "_eps_w.csv"), grid_csv(base[0].eps_w));
      io::write_text(result.out_dir / "traces" / (std::string(name) + "_x_w.csv"), grid_csv(base[0].x_w));
    }

    for (const Variant& variant : variants) {
      for (std::size_t li : order) {
        if (interrupt_flag().load()) break;
        const double lambda = spec.lambdas[li];
        const AttackConfig probe{lambda, variant.eta, 0};
        std::vector<TrialRecord> cell(static_cast<std::size_t>(spec.trials));
        std::vector<Latent<double>> trace0;
        parallel_for(spec.trials, workers, [&](int i) {
          const auto& b = base[static_cast<std::size_t>(i)];
          const AttackConfig cfg{lambda, variant.eta,
                                 derive_trial_seed(spec.master_seed, name, static_cast<std::uint64_t>(i), "attack")};
          const bool keep = opts.keep_traces && i == 0;
          auto out = shift_attack(b.x_w, cfg, lab.codec, lab.attacker, lab.schedule, keep);
          const Latent<double> eps_hat = recover_noise(out.x_a, lab.score, lab.schedule, lab.codec);
          const NoiseDistance dist = noise_distance(eps_hat, b.eps_w);
          const SemanticProxy sem = semantic_proxy(out.x_a, b.x_w, lab.codec, lab.mixture());
          TrialRecord& r = cell[static_cast<std::size_t>(i)];
          r.trial_id = i;
          r.lambda = lambda;
          r.eta = variant.eta;
          r.scheme = id;
          r.verify_clean = b.clean;
          r.verify_attacked = verify_recovered(eps_hat, scheme, cal.tau);
          r.l1_dist = dist.l1;
          r.l2_dist = dist.l2;
          r.latent_mse = sem.latent_mse;
          r.mode_clean = sem.mode_clean;
          r.mode_attacked = sem.mode_attacked;
          if (keep) trace0 = std::move(out.trace);
        });
        const int t_lambda = probe.t_lambda(T);
        if (!trace0.empty()) {
          io::write_text(result.out_dir / "traces" /
                             (std::string(name) + "_" + variant.name + "_lambda" + format_number(lambda) + ".csv"),
                         trace_csv(trace0, t_lambda));
        }
        result.cells.push_back(summarize(cell, variant.name, t_lambda));
        result.records.insert(result.records.end(), cell.begin(), cell.end());
        result.record_variants.insert(result.record_variants.end(), cell.size(), variant.name);
      }
    }
  }
  result.interrupted = interrupt_flag().load();

  for (SchemeId id : spec.schemes) {
    std::optional<double> best;
    for (const auto& c : result.cells) {
      if (c.scheme == id && c.variant == "shift" && c.asr >= kEvasionTarget && (!best || c.lambda < *best)) {
        best = c.lambda;
      }
    }
    result.minimal_lambda[id] = best;
  }
  const auto ring = result.minimal_lambda.find(SchemeId::RingMark);
  const auto sign = result.minimal_lambda.find(SchemeId::SignMark);
  result.hierarchy_reproduced = ring != result.minimal_lambda.end() && sign != result.minimal_lambda.end() &&
                                ring->second && sign->second && *ring->second > *sign->second;

  io::write_text(result.out_dir / "sweep.csv", sweep_csv(result));
  io::write_text(result.out_dir / "summary.csv", summary_csv(result));
  io::write_text(result.out_dir / "report.json", report_json(spec, result).dump(2) + "\n");
  return result;
}

}  // namespace shiftlab::harness
