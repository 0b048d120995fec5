// SPDX-License-Identifier: Apache-2.0
#include "madtp/runs.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "madtp/errors.hpp"
#include "madtp/render.hpp"

namespace madtp::harness {

namespace {

struct MapCapture {
  std::size_t limit = 0;  // dataset indices below this keep their maps
  std::vector<std::vector<vlt::LayerMaps>> maps;
};

PruneReport simulate_impl(const RunConfig& config, const vlt::Model& model, const Dataset& data,
                          const vlt::DtpHandle& dtp, MapCapture* capture) {
  const std::size_t n = data.samples.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (config.run.sorted) {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return data.samples[a].concepts < data.samples[b].concepts;
    });
  }
  if (capture) capture->maps.assign(std::min(capture->limit, n), {});

  PruneReport report;
  report.instances.resize(n);
  const std::size_t bs = std::max<std::size_t>(1, config.run.batch_size);
  for (std::size_t b0 = 0; b0 < n; b0 += bs) {
    const std::size_t b1 = std::min(n, b0 + bs);
    std::vector<Matrix> images, texts;
    bool want_maps = false;
    for (std::size_t j = b0; j < b1; ++j) {
      images.push_back(data.samples[order[j]].image);
      texts.push_back(data.samples[order[j]].text);
      want_maps = want_maps || (capture && order[j] < capture->limit);
    }
    vlt::ForwardOptions opt;
    opt.keep_maps = want_maps;
    vlt::ForwardResult fwd = vlt::model_forward(images, texts, model, dtp, opt);
    for (std::size_t j = b0; j < b1; ++j) {
      const std::size_t idx = order[j];
      InstanceTrace t = std::move(fwd.report.instances[j - b0]);
      t.index = idx;
      t.difficulty = data.samples[idx].concepts;
      report.instances[idx] = std::move(t);
      if (want_maps && idx < capture->limit) capture->maps[idx] = std::move(fwd.maps[j - b0]);
    }
  }

  const budget::FlopsModel fm = vlt::flops_model(model.config);
  report.baseline_gflops = budget::baseline_gflops(fm);
  if (n > 0) {
    std::vector<double> per_pair;
    for (const InstanceTrace& t : report.instances) per_pair.push_back(t.gflops);
    report.dataset_average_gflops = budget::dataset_average_flops(per_pair);
    report.reduce_ratio = 1.0 - report.dataset_average_gflops / report.baseline_gflops;
  }
  return annotate(std::move(report), config);
}

void write_file(const std::string& path, const std::string& content, std::vector<std::string>& files) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << content;
  if (!out) throw IoError("write failed for '" + path + "'");
  files.push_back(path);
}

void make_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

}  // namespace

PruneReport annotate(PruneReport r, const RunConfig& config) {
  r.config = config_echo(config);
  r.decisions = default_decisions();
  r.decisions.push_back("controller gain eta=" + format_number(config.run.eta) + ", T clamped to [" +
                        format_number(config.run.t_min) + ", " + format_number(config.run.t_max) + "]");
  r.decisions.push_back("sorted-inference difficulty is the planted concept count");
  return r;
}

PruneReport simulate(const RunConfig& config, const vlt::Model& model, const Dataset& data,
                     const vlt::DtpHandle& dtp) {
  return simulate_impl(config, model, data, dtp, nullptr);
}

PruneReport simulate(const RunConfig& config, const vlt::Model& model, const Dataset& data) {
  return simulate(config, model, data, vlt::make_dtp_handle(model.config));
}

SimulateOutput run_simulate(const RunConfig& config, const std::string& out_dir) {
  validate(config, Mode::simulate);
  const vlt::Model model = vlt::build_model(config.model);
  const Dataset data = gen_synthetic(config, model, config.data.seed);
  MapCapture cap;
  cap.limit = config.run.dump_instances;
  SimulateOutput out;
  out.report = simulate_impl(config, model, data, vlt::make_dtp_handle(model.config), &cap);

  make_dir(out_dir);
  write_file(out_dir + "/report.txt", to_text(out.report), out.files);
  write_file(out_dir + "/report.json", to_json(out.report), out.files);
  write_file(out_dir + "/density.tsv", density_table(out.report, config.model.patches, config.model.words), out.files);
  write_file(out_dir + "/ground_truth.tsv", ground_truth_tsv(data), out.files);
  write_file(out_dir + "/config.json", config_to_json(config), out.files);
  for (std::size_t i = 0; i < cap.maps.size(); ++i) {
    const std::string p = out_dir + "/attention_" + std::to_string(i) + ".dmp";
    write_dump(dump_from_maps(cap.maps[i]), p);
    out.files.push_back(p);
  }
  const std::size_t renders = std::min(config.run.render_samples, data.samples.size());
  if (renders > 0) {
    const std::string mdir = out_dir + "/masks";
    make_dir(mdir);
    for (std::size_t i = 0; i < renders; ++i) {
      auto p = render_sample(out.report.instances[i], data.samples[i], config.model.patches, config.model.words, mdir);
      out.files.insert(out.files.end(), p.begin(), p.end());
    }
  }
  return out;
}

CalibrationResult run_calibrate(const RunConfig& config, const vlt::Model& model, const Dataset& data,
                                double target_ratio) {
  const double f0 = budget::baseline_gflops(vlt::flops_model(model.config));
  CalibrationResult res;
  res.state = budget::make_budget(target_ratio, f0, model.config.temperature, config.run.eta, config.run.t_min,
                                  config.run.t_max);
  vlt::DtpHandle dtp = vlt::make_dtp_handle(model.config);
  for (std::size_t it = 0; it < config.run.max_iterations; ++it) {
    dtp.settings.temperature = res.state.temperature;
    const PruneReport r = simulate(config, model, data, dtp);
    const double measured = r.dataset_average_gflops;
    const double used = res.state.temperature;
    res.state = budget::adjust_temperature(res.state, measured);
    res.iterations = it + 1;
    res.temperature = used;
    res.measured = measured;
    if (std::abs(measured - res.state.target) <= config.run.tolerance * res.state.target) {
      res.converged = true;
      res.state.temperature = used;
      break;
    }
  }
  return res;
}

CalibrationResult run_calibrate(const RunConfig& config, double target_ratio) {
  validate(config, Mode::calibrate);
  const vlt::Model model = vlt::build_model(config.model);
  const Dataset data = gen_synthetic(config, model, config.data.seed);
  return run_calibrate(config, model, data, target_ratio);
}

std::string calibration_trace(const CalibrationResult& r) {
  std::ostringstream os;
  os << "epoch\ttemperature\tmeasured_gflops\ttarget_gflops\trel_error\n";
  for (const budget::BudgetEntry& e : r.state.history) {
    os << e.epoch << '\t' << format_number(e.temperature) << '\t' << format_number(e.measured) << '\t'
       << format_number(r.state.target) << '\t' << format_number((e.measured - r.state.target) / r.state.target)
       << '\n';
  }
  return os.str();
}

PruneReport run_stp_baseline(const RunConfig& config, const vlt::Model& model, const Dataset& data,
                             std::size_t k, const std::vector<std::array<std::size_t, 2>>& counts) {
  const vlt::VltConfig& c = model.config;
  if (counts.empty()) {
    for (const std::size_t n : {c.patches, c.words}) {
      // Content tokens entering layer l are n - l*k; each layer needs more than k.
      if (k > 0 && n <= c.layers * k) {
        throw InvalidArgument("stp: k=" + std::to_string(k) + " leaves no content token within " +
                              std::to_string(c.layers) + " layers of " + std::to_string(n) + " tokens");
      }
    }
  }
  vlt::DtpHandle dtp = vlt::make_dtp_handle(c);
  dtp.settings.enabled = true;
  dtp.settings.mode = dtp::PruneMode::drop_lowest;
  dtp.settings.count = k;
  dtp.counts = counts;
  return simulate(config, model, data, dtp);
}

PruneReport run_stp_baseline(const RunConfig& config, std::size_t k) {
  validate(config, Mode::stp);
  const vlt::Model model = vlt::build_model(config.model);
  const Dataset data = gen_synthetic(config, model, config.data.seed);
  return run_stp_baseline(config, model, data, k);
}

std::vector<std::array<std::size_t, 2>> matched_stp_counts(const PruneReport& madtp, std::size_t layers) {
  std::vector<std::array<double, 2>> mean_out(layers, {0.0, 0.0});
  std::array<double, 2> start{0.0, 0.0};
  if (madtp.instances.empty()) throw InvalidArgument("matched_stp_counts: empty report");
  for (const InstanceTrace& t : madtp.instances) {
    for (const LayerRecord& r : t.layers) {
      const int b = r.branch == Modality::vision ? 0 : 1;
      mean_out.at(r.layer)[b] += static_cast<double>(r.tokens_out);
      if (r.layer == 0) start[b] = static_cast<double>(r.tokens_in);
    }
  }
  const double n = static_cast<double>(madtp.instances.size());
  std::vector<std::array<std::size_t, 2>> counts(layers);
  for (int b = 0; b < 2; ++b) {
    double prev = start[b];
    for (std::size_t l = 0; l < layers; ++l) {
      const double want = mean_out[l][b] / n;
      // Keep at least the special plus one content token.
      const double k = std::clamp(std::round(prev - want), 0.0, std::max(0.0, prev - 3.0));
      counts[l][b] = static_cast<std::size_t>(k);
      prev -= k;
    }
  }
  return counts;
}

}  // namespace madtp::harness
