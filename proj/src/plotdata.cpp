#include "io.hpp"
#include "shiftlab/harness/runner.hpp"

#include <fstream>
#include <limits>
#include <map>
#include <tuple>

namespace shiftlab::harness {
namespace {

struct Series {
  std::vector<double> asr;  ///< 1 = evaded, over eligible trials
  std::vector<double> l1, l2, mse;
};

std::size_t column(const std::vector<std::string>& header, const std::string& name, const std::filesystem::path& file) {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw Error(ErrorKind::Io, file.string() + " lacks column '" + name + "'");
}

double to_double(const std::string& s, const std::filesystem::path& file) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorKind::Io, file.string() + ": malformed number '" + s + "'");
}

std::string row(const std::string& scheme, const std::string& lambda, const std::string& metric,
                std::span<const double> xs) {
  if (xs.empty()) return io::join({scheme, lambda, metric, "NA", "NA"});
  const MeanStderr m = mean_and_stderr(xs);
  return io::join({scheme, lambda, metric, format_number(m.mean), format_number(m.stderr_)});
}

}  // namespace

void write_plotdata(const std::filesystem::path& run_dir) {
  const std::filesystem::path file = run_dir / "sweep.csv";
  std::ifstream in(file);
  if (!in) throw Error(ErrorKind::Io, "no completed run at " + run_dir.string() + " (missing sweep.csv)");
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    header = io::split_csv_line(line);
    break;
  }
  if (header.empty()) throw Error(ErrorKind::Io, file.string() + " has no header");
  const std::size_t c_scheme = column(header, "scheme", file), c_lambda = column(header, "lambda", file),
                    c_eta = column(header, "eta", file), c_clean = column(header, "clean_decision", file),
                    c_att = column(header, "attacked_decision", file), c_l1 = column(header, "l1", file),
                    c_l2 = column(header, "l2", file), c_mse = column(header, "latent_mse", file);

  // keyed by (scheme, eta text, lambda value) so output order is stable
  std::map<std::tuple<std::string, std::string, double>, std::pair<std::string, Series>> groups;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto cells = io::split_csv_line(line);
    if (cells.size() != header.size()) throw Error(ErrorKind::Io, file.string() + ": ragged row");
    const double lambda = to_double(cells[c_lambda], file);
    auto& [lambda_text, s] = groups[{cells[c_scheme], cells[c_eta], lambda}];
    lambda_text = cells[c_lambda];
    if (cells[c_clean] == "watermarked") s.asr.push_back(cells[c_att] == "clean" ? 1.0 : 0.0);
    s.l1.push_back(to_double(cells[c_l1], file));
    s.l2.push_back(to_double(cells[c_l2], file));
    s.mse.push_back(to_double(cells[c_mse], file));
  }
  if (groups.empty()) throw Error(ErrorKind::Io, file.string() + " has no rows");

  const std::string head = std::string(kPlotSchema) + "\n" + io::join({"scheme", "lambda", "metric", "mean", "stderr"});
  std::string asr = head;
  std::string dist = head;
  for (const auto& [key, value] : groups) {
    const auto& [scheme, eta, lambda] = key;
    const auto& [lambda_text, s] = value;
    const std::string suffix = "_eta" + eta;
    asr += row(scheme, lambda_text, "asr" + suffix, s.asr);
    dist += row(scheme, lambda_text, "l1" + suffix, s.l1);
    dist += row(scheme, lambda_text, "l2" + suffix, s.l2);
    dist += row(scheme, lambda_text, "latent_mse" + suffix, s.mse);
  }
  io::write_text(run_dir / "asr_vs_lambda.csv", asr);
  io::write_text(run_dir / "dist_vs_lambda.csv", dist);
}

}  // namespace shiftlab::harness
