// SPDX-License-Identifier: Apache-2.0
#include "madtp/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "madtp/errors.hpp"

namespace madtp::harness {

using ojson = nlohmann::ordered_json;

std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::simulate: return "simulate";
    case Mode::calibrate: return "calibrate";
    case Mode::stp: return "stp";
    case Mode::ingest: return "ingest";
    case Mode::train_toy: return "train-toy";
    case Mode::report: return "report";
  }
  return "?";
}

std::string format_number(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

RunConfig default_config() {
  RunConfig c;
  vlt::VltConfig& m = c.model;
  m.layers = 4;
  m.vision_width = 64;
  m.language_width = 64;
  m.heads = 4;
  m.patches = 64;
  m.words = 16;
  m.learnable_tokens = 1;
  m.token_width = 32;
  m.qk_gain = 0.3;
  m.special_std = 0.0;
  m.token_gain = 1.0;
  return c;
}

namespace {

ojson to_ojson(const RunConfig& c) {
  const vlt::VltConfig& m = c.model;
  ojson j;
  j["schema_version"] = RunConfig::kSchemaVersion;
  ojson model;
  model["layers"] = m.layers;
  model["vision_width"] = m.vision_width;
  model["language_width"] = m.language_width;
  model["heads"] = m.heads;
  model["patches"] = m.patches;
  model["words"] = m.words;
  model["vision_input_dim"] = m.vision_input_dim;
  model["language_input_dim"] = m.language_input_dim;
  model["learnable_tokens"] = m.learnable_tokens;
  model["token_width"] = m.token_width;
  model["alpha"] = m.alpha;
  model["temperature"] = m.temperature;
  model["target_ratio"] = m.target_ratio;
  model["ffn_mult"] = m.ffn_mult;
  model["seed"] = m.seed;
  model["pruning"] = m.pruning;
  model["keep_policy"] = std::string(dtp::to_string(m.keep_policy));
  model["cross_attention"] = m.cross_attention;
  model["modality_scope"] = std::string(vlt::to_string(m.scope));
  model["score_cls"] = m.scores.cls;
  model["score_self"] = m.scores.self;
  model["score_token"] = m.scores.token;
  model["include_overhead"] = m.include_overhead;
  model["qk_gain"] = m.qk_gain;
  model["special_std"] = m.special_std;
  model["token_gain"] = m.token_gain;
  j["model"] = model;

  const DataConfig& d = c.data;
  ojson data;
  data["size"] = d.size;
  data["seed"] = d.seed;
  data["concept_min"] = d.concept_min;
  data["concept_max"] = d.concept_max;
  data["zero_fraction"] = d.zero_fraction;
  data["match_fraction"] = d.match_fraction;
  data["distractor_max"] = d.distractor_max;
  data["anti_aligned_distractors"] = d.anti_aligned_distractors;
  data["amplitude"] = d.amplitude;
  data["background"] = d.background;
  data["noise"] = d.noise;
  data["jitter"] = d.jitter;
  data["patches_per_concept"] = d.patches_per_concept;
  data["words_per_concept"] = d.words_per_concept;
  j["data"] = data;

  const RunSettings& r = c.run;
  ojson run;
  run["batch_size"] = r.batch_size;
  run["out_dir"] = r.out_dir;
  run["stp_k"] = r.stp_k;
  run["sorted"] = r.sorted;
  run["render_samples"] = r.render_samples;
  run["dump_instances"] = r.dump_instances;
  run["max_iterations"] = r.max_iterations;
  run["tolerance"] = r.tolerance;
  run["eta"] = r.eta;
  run["t_min"] = r.t_min;
  run["t_max"] = r.t_max;
  j["run"] = run;

  ojson train;
  train["steps"] = c.train.steps;
  train["learning_rate"] = c.train.learning_rate;
  j["train"] = train;
  return j;
}

// Reads known keys from one section and rejects anything else.
class Section {
 public:
  Section(const ojson& root, const char* name) : name_(name) {
    if (root.contains(name)) {
      if (!root[name].is_object()) throw InvalidArgument(std::string("config: '") + name + "' must be an object");
      obj_ = root[name];
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!obj_.contains(key)) return;
    try {
      out = obj_[key].get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw InvalidArgument("config: " + name_ + "." + key + ": " + e.what());
    }
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it)
      if (!seen_.count(it.key())) throw InvalidArgument("config: unknown key " + name_ + "." + it.key());
  }

 private:
  std::string name_;
  ojson obj_ = ojson::object();
  std::set<std::string> seen_;
};

}  // namespace

RunConfig parse_config(std::string_view json_text) {
  ojson root;
  try {
    root = ojson::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("config: not valid JSON: ") + e.what());
  }
  if (!root.is_object()) throw FormatError("config: top level must be an object");
  if (!root.contains("schema_version")) throw FormatError("config: missing schema_version");
  if (root["schema_version"] != RunConfig::kSchemaVersion) {
    throw FormatError("config: unsupported schema_version " + root["schema_version"].dump());
  }
  for (auto it = root.begin(); it != root.end(); ++it) {
    const std::string& k = it.key();
    if (k != "schema_version" && k != "model" && k != "data" && k != "run" && k != "train")
      throw InvalidArgument("config: unknown section '" + k + "'");
  }

  RunConfig c = default_config();
  vlt::VltConfig& m = c.model;
  Section s(root, "model");
  s.get("layers", m.layers);
  s.get("vision_width", m.vision_width);
  s.get("language_width", m.language_width);
  s.get("heads", m.heads);
  s.get("patches", m.patches);
  s.get("words", m.words);
  s.get("vision_input_dim", m.vision_input_dim);
  s.get("language_input_dim", m.language_input_dim);
  s.get("learnable_tokens", m.learnable_tokens);
  s.get("token_width", m.token_width);
  s.get("alpha", m.alpha);
  s.get("temperature", m.temperature);
  s.get("target_ratio", m.target_ratio);
  s.get("ffn_mult", m.ffn_mult);
  s.get("seed", m.seed);
  s.get("pruning", m.pruning);
  std::string policy(dtp::to_string(m.keep_policy));
  s.get("keep_policy", policy);
  m.keep_policy = dtp::keep_policy_from_string(policy);
  s.get("cross_attention", m.cross_attention);
  std::string scope(vlt::to_string(m.scope));
  s.get("modality_scope", scope);
  m.scope = vlt::scope_from_string(scope);
  s.get("score_cls", m.scores.cls);
  s.get("score_self", m.scores.self);
  s.get("score_token", m.scores.token);
  s.get("include_overhead", m.include_overhead);
  s.get("qk_gain", m.qk_gain);
  s.get("special_std", m.special_std);
  s.get("token_gain", m.token_gain);
  s.finish();

  DataConfig& d = c.data;
  Section sd(root, "data");
  sd.get("size", d.size);
  sd.get("seed", d.seed);
  sd.get("concept_min", d.concept_min);
  sd.get("concept_max", d.concept_max);
  sd.get("zero_fraction", d.zero_fraction);
  sd.get("match_fraction", d.match_fraction);
  sd.get("distractor_max", d.distractor_max);
  sd.get("anti_aligned_distractors", d.anti_aligned_distractors);
  sd.get("amplitude", d.amplitude);
  sd.get("background", d.background);
  sd.get("noise", d.noise);
  sd.get("jitter", d.jitter);
  sd.get("patches_per_concept", d.patches_per_concept);
  sd.get("words_per_concept", d.words_per_concept);
  sd.finish();

  RunSettings& r = c.run;
  Section sr(root, "run");
  sr.get("batch_size", r.batch_size);
  sr.get("out_dir", r.out_dir);
  sr.get("stp_k", r.stp_k);
  sr.get("sorted", r.sorted);
  sr.get("render_samples", r.render_samples);
  sr.get("dump_instances", r.dump_instances);
  sr.get("max_iterations", r.max_iterations);
  sr.get("tolerance", r.tolerance);
  sr.get("eta", r.eta);
  sr.get("t_min", r.t_min);
  sr.get("t_max", r.t_max);
  sr.finish();

  Section st(root, "train");
  st.get("steps", c.train.steps);
  st.get("learning_rate", c.train.learning_rate);
  st.finish();

  c.model.validate();
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const RunConfig& c) { return to_ojson(c).dump(2) + "\n"; }

void validate(const RunConfig& c, Mode mode) {
  c.model.validate();
  const DataConfig& d = c.data;
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw InvalidArgument("config: " + what);
  };
  need(d.concept_min <= d.concept_max, "data.concept_min exceeds data.concept_max");
  need(d.zero_fraction >= 0.0 && d.zero_fraction <= 1.0, "data.zero_fraction must be in [0,1]");
  need(d.match_fraction >= 0.0 && d.match_fraction <= 1.0, "data.match_fraction must be in [0,1]");
  need(d.noise >= 0.0 && d.amplitude >= 0.0 && d.background >= 0.0 && d.jitter >= 0.0,
       "data amplitudes must be non-negative");
  const std::size_t max_v = (d.concept_max + d.distractor_max) * d.patches_per_concept;
  const std::size_t max_l = (d.concept_max + d.distractor_max) * d.words_per_concept;
  need(max_v <= c.model.patches, "planted patches exceed the patch count");
  need(max_l <= c.model.words, "planted words exceed the word count");
  need(c.run.batch_size >= 1, "run.batch_size must be >= 1");
  need(c.run.tolerance > 0.0, "run.tolerance must be positive");
  need(c.run.eta > 0.0, "run.eta must be positive");
  need(c.run.t_min > 0.0 && c.run.t_min <= c.run.t_max, "run.t_min/t_max invalid");
  switch (mode) {
    case Mode::simulate:
    case Mode::stp:
      break;
    case Mode::calibrate:
      need(d.size >= 1, "calibrate needs a non-empty dataset");
      need(c.run.max_iterations >= 1, "run.max_iterations must be >= 1");
      break;
    case Mode::train_toy:
      need(d.size >= 1, "train-toy needs a non-empty dataset");
      need(c.train.learning_rate > 0.0, "train.learning_rate must be positive");
      break;
    case Mode::ingest:
    case Mode::report:
      break;
  }
}

std::vector<std::pair<std::string, std::string>> config_echo(const RunConfig& c) {
  std::vector<std::pair<std::string, std::string>> out;
  const ojson j = to_ojson(c);
  for (auto sec = j.begin(); sec != j.end(); ++sec) {
    if (!sec->is_object()) {
      out.emplace_back(sec.key(), sec->dump());
      continue;
    }
    for (auto it = sec->begin(); it != sec->end(); ++it) {
      std::string v;
      if (it->is_string()) v = it->get<std::string>();
      else if (it->is_number_float()) v = format_number(it->get<double>());
      else v = it->dump();
      out.emplace_back(sec.key() + "." + it.key(), v);
    }
  }
  return out;
}

}  // namespace madtp::harness
