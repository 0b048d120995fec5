// SPDX-License-Identifier: Apache-2.0
// madtp command-line front end.
//
// Exit codes: 0 success, 2 validation or input error, 3 non-convergence.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "madtp/errors.hpp"
#include "madtp/runs.hpp"
#include "madtp/train.hpp"

namespace {

using namespace madtp;
using namespace madtp::harness;
namespace fs = std::filesystem;

constexpr int kOk = 0;
constexpr int kInvalid = 2;
constexpr int kNoConvergence = 3;

void write_text(const fs::path& path, const std::string& text) {
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::string out_dir(const std::optional<std::string>& flag, const RunConfig& c) { return flag ? *flag : c.run.out_dir; }

void print_summary(const PruneReport& r) {
  std::printf("pairs                   %zu\n", r.instances.size());
  std::printf("baseline GFLOPs         %.6g\n", r.baseline_gflops);
  std::printf("dataset-average GFLOPs  %.6g\n", r.dataset_average_gflops);
  std::printf("reduce ratio            %.4f\n", r.reduce_ratio);
}

int cmd_simulate(const std::string& config, const std::optional<std::string>& out) {
  const RunConfig c = load_config(config);
  const std::string dir = out_dir(out, c);
  const SimulateOutput r = run_simulate(c, dir);
  print_summary(r.report);
  std::printf("wrote %zu files to %s\n", r.files.size(), dir.c_str());
  return kOk;
}

int cmd_calibrate(const std::string& config, std::optional<double> ratio, const std::optional<std::string>& out) {
  const RunConfig c = load_config(config);
  const double r = ratio ? *ratio : c.model.target_ratio;
  const CalibrationResult res = run_calibrate(c, r);
  const fs::path trace = fs::path(out_dir(out, c)) / "calibration.tsv";
  write_text(trace, calibration_trace(res));
  if (!res.converged) {
    std::fprintf(stderr, "calibrate: no convergence after %zu iterations (target %.6g GFLOPs, last %.6g at T=%.6g)\n",
                 res.iterations, res.state.target, res.measured, res.temperature);
    std::fprintf(stderr, "%s", calibration_trace(res).c_str());
    std::fprintf(stderr, "trace written to %s\n", trace.string().c_str());
    return kNoConvergence;
  }
  std::printf("converged after %zu iterations\n", res.iterations);
  std::printf("temperature             %.17g\n", res.temperature);
  std::printf("target GFLOPs           %.6g\n", res.state.target);
  std::printf("measured GFLOPs         %.6g\n", res.measured);
  std::printf("trace                   %s\n", trace.string().c_str());
  return kOk;
}

int cmd_stp(const std::string& config, std::optional<std::size_t> k, const std::optional<std::string>& out) {
  const RunConfig c = load_config(config);
  const PruneReport r = run_stp_baseline(c, k ? *k : c.run.stp_k);
  const fs::path dir = out_dir(out, c);
  write_text(dir / "stp_report.txt", to_text(r));
  write_text(dir / "stp_report.json", to_json(r));
  print_summary(r);
  std::printf("wrote %s\n", (dir / "stp_report.txt").string().c_str());
  return kOk;
}

int cmd_ingest(const std::string& dump, double temperature) {
  if (!(temperature > 0.0)) throw InvalidArgument("--temperature must be positive");
  const IngestResult in = ingest_attention_dump(dump);
  for (const std::string& w : in.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
  std::printf("layer\tbranch\ttokens\ttheta\tkept\tforced\n");
  for (const ReplayLayer& l : replay(in, temperature)) {
    std::printf("%zu\t%s\t%zu\t%.17g\t%zu\t%d\n", l.layer, std::string(to_string(l.branch)).c_str(), l.keep.size(),
                l.theta, dtp::count_kept(l.keep), l.force_kept ? 1 : 0);
  }
  return kOk;
}

int cmd_train(const std::string& config, const std::optional<std::string>& out) {
  const RunConfig c = load_config(config);
  const fs::path dir = out_dir(out, c);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
  const TrainResult r = run_train_toy(c, dir.string());
  write_text(dir / "loss_curve.tsv", loss_curve_tsv(r));
  const LossBreakdown& a = r.curve.front();
  const LossBreakdown& b = r.curve.back();
  std::printf("steps   %zu\n", r.curve.size() - 1);
  std::printf("L_sim   %.6g -> %.6g\n", a.l_sim, b.l_sim);
  std::printf("L_task  %.6g -> %.6g\n", a.l_task, b.l_task);
  std::printf("L       %.6g -> %.6g\n", a.total, b.total);
  std::printf("wrote %s\n", (dir / "loss_curve.tsv").string().c_str());
  return kOk;
}

int cmd_report(const std::string& in, const std::string& format) {
  fs::path p = in;
  if (fs::is_directory(p)) p /= "report.txt";
  const PruneReport r = read_report(p.string());
  std::cout << (format == "json" ? to_json(r) : to_text(r));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Alignment-guided dynamic token pruning on a toy vision-language transformer"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "madtp 0.1.0");

  std::string config, dump, in, format = "text";
  std::optional<std::string> out;
  std::optional<double> ratio;
  std::optional<std::size_t> k;
  double temperature = 1.0;

  auto* sim = app.add_subcommand("simulate", "Forward the synthetic dataset and write reports and mask renderings");
  sim->add_option("--config", config, "Config file")->required()->check(CLI::ExistingFile);
  sim->add_option("--out", out, "Output directory (default: run.out_dir)");

  auto* cal = app.add_subcommand("calibrate", "Tune the temperature until GFLOPs meet the target reduce ratio");
  cal->add_option("--config", config, "Config file")->required()->check(CLI::ExistingFile);
  cal->add_option("--target-ratio", ratio, "Target reduce ratio in [0,1) (default: model.target_ratio)");
  cal->add_option("--out", out, "Directory for calibration.tsv (default: run.out_dir)");

  auto* stp = app.add_subcommand("stp", "Static baseline dropping k lowest-importance tokens per layer");
  stp->add_option("--config", config, "Config file")->required()->check(CLI::ExistingFile);
  stp->add_option("--k", k, "Tokens dropped per layer and branch (default: run.stp_k)");
  stp->add_option("--out", out, "Output directory (default: run.out_dir)");

  auto* ing = app.add_subcommand("ingest", "Validate an attention dump and replay pruning on it");
  ing->add_option("--dump", dump, "Attention dump file")->required();
  ing->add_option("--temperature", temperature, "Sparsemax temperature for the replay")->capture_default_str();

  auto* tr = app.add_subcommand("train-toy", "Train the alignment tokens and projections on planted data");
  tr->add_option("--config", config, "Config file")->required()->check(CLI::ExistingFile);
  tr->add_option("--out", out, "Output directory (default: run.out_dir)");

  auto* rep = app.add_subcommand("report", "Print a stored report");
  rep->add_option("--in", in, "Run directory or report.txt")->required();
  rep->add_option("--format", format, "Output format")->check(CLI::IsMember({"text", "json"}))->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInvalid;
  }

  try {
    if (*sim) return cmd_simulate(config, out);
    if (*cal) return cmd_calibrate(config, ratio, out);
    if (*stp) return cmd_stp(config, k, out);
    if (*ing) return cmd_ingest(dump, temperature);
    if (*tr) return cmd_train(config, out);
    if (*rep) return cmd_report(in, format);
  } catch (const NonConvergence& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNoConvergence;
  } catch (const NonFiniteLoss& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNoConvergence;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kInvalid;
  }
  return kInvalid;
}
