#include "shiftlab/harness/config.hpp"

#include "shiftlab/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace shiftlab::harness {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_list(std::string_view v) {
  std::vector<std::string_view> out;
  if (trim(v).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = v.find(',', start);
    out.push_back(trim(v.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

struct Line {
  int number;
  std::string_view key;
  std::string_view value;
};

double parse_double(const Line& l, std::string_view v) {
  double x = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError(l.number, std::string(l.key) + ": expected a number, got '" + std::string(v) + "'");
  }
  return x;
}

long long parse_int(const Line& l, std::string_view v) {
  long long x = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError(l.number, std::string(l.key) + ": expected an integer, got '" + std::string(v) + "'");
  }
  return x;
}

int parse_count(const Line& l, long long lo) {
  const long long x = parse_int(l, l.value);
  if (x < lo || x > 100000000) {
    throw ConfigError(l.number, std::string(l.key) + " must be >= " + std::to_string(lo));
  }
  return static_cast<int>(x);
}

std::uint64_t parse_seed(const Line& l) {
  std::uint64_t x = 0;
  const auto v = l.value;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError(l.number, std::string(l.key) + ": expected an unsigned integer seed");
  }
  return x;
}

double parse_positive(const Line& l) {
  const double x = parse_double(l, l.value);
  if (!(x > 0.0) || !std::isfinite(x)) throw ConfigError(l.number, std::string(l.key) + " must be > 0");
  return x;
}

std::vector<double> parse_doubles(const Line& l) {
  std::vector<double> out;
  for (auto item : split_list(l.value)) out.push_back(parse_double(l, item));
  return out;
}

bool parse_bool(const Line& l) {
  if (l.value == "true" || l.value == "1" || l.value == "yes") return true;
  if (l.value == "false" || l.value == "0" || l.value == "no") return false;
  throw ConfigError(l.number, std::string(l.key) + ": expected true or false");
}

using Setter = std::function<void(ExperimentSpec&, const Line&)>;

const std::vector<std::pair<std::string, Setter>>& setters() {
  static const std::vector<std::pair<std::string, Setter>> table = {
      {"shape.channels", [](ExperimentSpec& s, const Line& l) { s.shape.channels = parse_count(l, 1); }},
      {"shape.height", [](ExperimentSpec& s, const Line& l) { s.shape.height = parse_count(l, 1); }},
      {"shape.width", [](ExperimentSpec& s, const Line& l) { s.shape.width = parse_count(l, 1); }},
      {"schedule.T", [](ExperimentSpec& s, const Line& l) { s.schedule.steps = parse_count(l, 1); }},
      {"schedule.beta_start", [](ExperimentSpec& s, const Line& l) { s.schedule.beta_start = parse_double(l, l.value); }},
      {"schedule.beta_end", [](ExperimentSpec& s, const Line& l) { s.schedule.beta_end = parse_double(l, l.value); }},
      {"score.kind",
       [](ExperimentSpec& s, const Line& l) {
         if (l.value == "gaussian") {
           s.score.kind = ScoreKind::Gaussian;
         } else if (l.value == "mixture") {
           s.score.kind = ScoreKind::Mixture;
         } else {
           throw ConfigError(l.number, "score.kind must be gaussian or mixture");
         }
       }},
      {"score.scale", [](ExperimentSpec& s, const Line& l) { s.score.scale = parse_positive(l); }},
      {"score.mean", [](ExperimentSpec& s, const Line& l) { s.score.mean = parse_doubles(l); }},
      {"score.components", [](ExperimentSpec& s, const Line& l) { s.score.components = parse_count(l, 1); }},
      {"score.mean_seed", [](ExperimentSpec& s, const Line& l) { s.score.mean_seed = parse_seed(l); }},
      {"score.weights", [](ExperimentSpec& s, const Line& l) { s.score.weights = parse_doubles(l); }},
      {"score.means", [](ExperimentSpec& s, const Line& l) { s.score.means = parse_doubles(l); }},
      {"codec.kind",
       [](ExperimentSpec& s, const Line& l) {
         if (l.value == "identity") {
           s.codec.kind = CodecKind::Identity;
         } else if (l.value == "orthogonal") {
           s.codec.kind = CodecKind::OrthogonalLinear;
         } else {
           throw ConfigError(l.number, "codec.kind must be identity or orthogonal");
         }
       }},
      {"codec.gain", [](ExperimentSpec& s, const Line& l) { s.codec.gain = parse_positive(l); }},
      {"codec.basis_seed", [](ExperimentSpec& s, const Line& l) { s.codec.basis_seed = parse_seed(l); }},
      {"schemes.list",
       [](ExperimentSpec& s, const Line& l) {
         s.schemes.clear();
         for (auto item : split_list(l.value)) {
           SchemeId id;
           if (item == "ring") {
             id = SchemeId::RingMark;
           } else if (item == "sign") {
             id = SchemeId::SignMark;
           } else {
             throw ConfigError(l.number, "unknown scheme '" + std::string(item) + "' (ring, sign)");
           }
           if (std::find(s.schemes.begin(), s.schemes.end(), id) != s.schemes.end()) {
             throw ConfigError(l.number, "scheme listed twice");
           }
           s.schemes.push_back(id);
         }
         if (s.schemes.empty()) throw ConfigError(l.number, "schemes.list is empty");
       }},
      {"ring.key_seed", [](ExperimentSpec& s, const Line& l) { s.ring.key_seed = parse_seed(l); }},
      {"ring.r_in", [](ExperimentSpec& s, const Line& l) { s.ring.r_in = parse_double(l, l.value); }},
      {"ring.r_out", [](ExperimentSpec& s, const Line& l) { s.ring.r_out = parse_double(l, l.value); }},
      {"sign.key_seed", [](ExperimentSpec& s, const Line& l) { s.sign.key_seed = parse_seed(l); }},
      {"sign.m_len", [](ExperimentSpec& s, const Line& l) { s.sign.m_len = parse_count(l, 1); }},
      {"sign.message_seed", [](ExperimentSpec& s, const Line& l) { s.sign.message_seed = parse_seed(l); }},
      {"sign.message",
       [](ExperimentSpec& s, const Line& l) {
         s.sign.message.clear();
         for (char c : l.value) {
           if (c != '0' && c != '1') throw ConfigError(l.number, "sign.message must be a string of 0/1");
           s.sign.message.push_back(c - '0');
         }
       }},
      {"sweep.lambdas",
       [](ExperimentSpec& s, const Line& l) {
         s.lambdas = parse_doubles(l);
         if (s.lambdas.empty()) throw ConfigError(l.number, "sweep.lambdas is empty");
         for (double x : s.lambdas) {
           if (!(x > 0.0 && x <= 1.0)) throw ConfigError(l.number, "lambda values must lie in (0,1]");
         }
       }},
      {"sweep.trials", [](ExperimentSpec& s, const Line& l) { s.trials = parse_count(l, 1); }},
      {"attack.eta",
       [](ExperimentSpec& s, const Line& l) {
         s.eta = parse_double(l, l.value);
         if (!(s.eta >= 0.0 && s.eta <= 1.0)) throw ConfigError(l.number, "attack.eta must lie in [0,1]");
       }},
      {"attack.baseline", [](ExperimentSpec& s, const Line& l) { s.baseline = parse_bool(l); }},
      {"attack.model",
       [](ExperimentSpec& s, const Line& l) {
         if (l.value == "same") {
           s.attack_model = AttackModel::Same;
         } else if (l.value == "mismatched") {
           s.attack_model = AttackModel::Mismatched;
         } else {
           throw ConfigError(l.number, "attack.model must be same or mismatched");
         }
       }},
      {"attack.mismatch_seed", [](ExperimentSpec& s, const Line& l) { s.mismatch_seed = parse_seed(l); }},
      {"run.master_seed", [](ExperimentSpec& s, const Line& l) { s.master_seed = parse_seed(l); }},
      {"run.fpr_target",
       [](ExperimentSpec& s, const Line& l) {
         s.fpr_target = parse_double(l, l.value);
         if (!(s.fpr_target > 0.0 && s.fpr_target < 1.0)) {
           throw ConfigError(l.number, "run.fpr_target must lie in (0,1)");
         }
       }},
      {"run.n_null", [](ExperimentSpec& s, const Line& l) { s.n_null = parse_count(l, 100); }},
      {"run.output",
       [](ExperimentSpec& s, const Line& l) {
         if (l.value.empty()) throw ConfigError(l.number, "run.output is empty");
         s.output = std::string(l.value);
       }},
      {"run.workers", [](ExperimentSpec& s, const Line& l) { s.workers = parse_count(l, 1); }},
      {"theory.lambdas",
       [](ExperimentSpec& s, const Line& l) {
         s.theory.lambdas = parse_doubles(l);
         for (double x : s.theory.lambdas) {
           if (!(x > 0.0 && x <= 1.0)) throw ConfigError(l.number, "lambda values must lie in (0,1]");
         }
       }},
      {"theory.trials", [](ExperimentSpec& s, const Line& l) { s.theory.trials = parse_count(l, 1); }},
      {"theory.pair_trials", [](ExperimentSpec& s, const Line& l) { s.theory.pair_trials = parse_count(l, 1); }},
      {"theory.one_step_stride",
       [](ExperimentSpec& s, const Line& l) { s.theory.one_step_stride = parse_count(l, 1); }},
      {"theory.multistep_n",
       [](ExperimentSpec& s, const Line& l) {
         s.theory.multistep_n.clear();
         for (auto item : split_list(l.value)) {
           const long long n = parse_int(l, item);
           if (n < 1) throw ConfigError(l.number, "theory.multistep_n entries must be >= 1");
           s.theory.multistep_n.push_back(static_cast<int>(n));
         }
       }},
      {"theory.lipschitz_trials",
       [](ExperimentSpec& s, const Line& l) { s.theory.lipschitz_trials = parse_count(l, 1); }},
      {"theory.lipschitz_seed", [](ExperimentSpec& s, const Line& l) { s.theory.lipschitz_seed = parse_seed(l); }},
      {"theory.lipschitz_scale", [](ExperimentSpec& s, const Line& l) { s.theory.lipschitz_scale = parse_positive(l); }},
      {"theory.independence_samples",
       [](ExperimentSpec& s, const Line& l) { s.theory.independence_samples = parse_count(l, 2); }},
      {"theory.terminal_samples",
       [](ExperimentSpec& s, const Line& l) { s.theory.terminal_samples = parse_count(l, 2); }},
  };
  return table;
}

void validate(const ExperimentSpec& s) {
  if (!(s.schedule.beta_start > 0.0 && s.schedule.beta_start <= s.schedule.beta_end && s.schedule.beta_end < 1.0)) {
    throw ConfigError(0, "schedule needs 0 < beta_start <= beta_end < 1");
  }
  const int d = s.shape.size();
  if (s.score.kind == ScoreKind::Gaussian && !s.score.mean.empty() && s.score.mean.size() != 1 &&
      static_cast<int>(s.score.mean.size()) != d) {
    throw ConfigError(0, "score.mean needs 1 or d=" + std::to_string(d) + " values");
  }
  if (s.score.kind == ScoreKind::Mixture) {
    if (!s.score.weights.empty() && static_cast<int>(s.score.weights.size()) != s.score.components) {
      throw ConfigError(0, "score.weights needs score.components values");
    }
    if (!s.score.means.empty() && static_cast<int>(s.score.means.size()) != d * s.score.components) {
      throw ConfigError(0, "score.means needs d*K values");
    }
  }
  const bool has_ring = std::find(s.schemes.begin(), s.schemes.end(), SchemeId::RingMark) != s.schemes.end();
  if (has_ring) {
    if (s.shape.height != s.shape.width || s.shape.height % 2 != 0) {
      throw ConfigError(0, "ring scheme needs an even square grid");
    }
    if (!(s.ring.r_in >= 0.0 && s.ring.r_in <= s.ring.r_out)) throw ConfigError(0, "ring needs 0 <= r_in <= r_out");
  }
  const int m = s.sign.message.empty() ? s.sign.m_len : static_cast<int>(s.sign.message.size());
  if (m > d) throw ConfigError(0, "sign message longer than d=" + std::to_string(d));
  for (int n : s.theory.multistep_n) {
    if (n > s.schedule.steps) throw ConfigError(0, "theory.multistep_n entry exceeds T");
  }
}

}  // namespace

const std::vector<std::string>& spec_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, _] : setters()) k.push_back(name);
    return k;
  }();
  return keys;
}

ExperimentSpec parse_spec(std::string_view text) {
  ExperimentSpec spec;
  std::map<std::string, int, std::less<>> seen;
  int number = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view raw = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++number;
    if (const auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    raw = trim(raw);
    if (raw.empty()) continue;
    const auto eq = raw.find('=');
    if (eq == std::string_view::npos) throw ConfigError(number, "expected 'section.key = value'");
    const Line line{number, trim(raw.substr(0, eq)), trim(raw.substr(eq + 1))};
    if (line.key.find('.') == std::string_view::npos) {
      throw ConfigError(number, "key '" + std::string(line.key) + "' lacks a section");
    }
    const auto& table = setters();
    const auto it = std::find_if(table.begin(), table.end(), [&](const auto& e) { return e.first == line.key; });
    if (it == table.end()) throw ConfigError(number, "unknown key '" + std::string(line.key) + "'");
    if (const auto prev = seen.find(line.key); prev != seen.end()) {
      throw ConfigError(number, "duplicate key '" + std::string(line.key) + "' (first on line " +
                                    std::to_string(prev->second) + ")");
    }
    seen.emplace(std::string(line.key), number);
    it->second(spec, line);
  }
  validate(spec);
  spec.source_hash = fnv1a64(text);
  return spec;
}

ExperimentSpec load_spec(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read spec " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_spec(buf.str());
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace shiftlab::harness
