// SPDX-License-Identifier: Apache-2.0
#include "madtp/report.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "madtp/errors.hpp"

namespace madtp {

namespace {

constexpr const char* kMagic = "madtp-report";

std::string num(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string origins(const std::vector<int>& o) {
  if (o.empty()) return "-";
  std::string s;
  for (std::size_t i = 0; i < o.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(o[i]);
  }
  return s;
}

}  // namespace

std::vector<std::string> default_decisions() {
  return {
      "importance scores use the column-wise max of A_self and A_token (attention a token receives)",
      "special tokens take part in score normalization and are only exempt from pruning",
      "A_self is averaged over heads before scoring",
      "prune rule is strict TIS > theta; the argmax-TIS content token is force-kept if none survive",
      "pruned tokens merge into one TIS-weighted token appended last; it carries the max constituent TIS",
      "mean-keep rounds half up and never drops below specials + 1",
      "layer cost counts attention at the pre-pruning count and FFN at the post-pruning count",
      "controller: T <- clamp(T * (measured / target)^eta)",
      "alignment loss is averaged over layers",
  };
}

std::string to_text(const PruneReport& r) {
  std::ostringstream os;
  os << kMagic << " v" << PruneReport::kVersion << '\n';
  os << "flops_convention " << r.flops_convention << '\n';
  os << "config_count " << r.config.size() << '\n';
  for (const auto& [k, v] : r.config) os << "config " << k << '\t' << v << '\n';
  os << "decision_count " << r.decisions.size() << '\n';
  for (const auto& d : r.decisions) os << "decision " << d << '\n';
  os << "baseline_gflops " << num(r.baseline_gflops) << '\n';
  os << "dataset_average_gflops " << num(r.dataset_average_gflops) << '\n';
  os << "reduce_ratio " << num(r.reduce_ratio) << '\n';
  os << "instance_count " << r.instances.size() << '\n';
  for (const InstanceTrace& t : r.instances) {
    os << "instance " << t.index << " difficulty " << t.difficulty << " gflops " << num(t.gflops)
       << " layers " << t.layers.size() << '\n';
    for (const LayerRecord& l : t.layers) {
      os << "layer " << l.layer << ' ' << to_string(l.branch) << " in " << l.tokens_in << " own "
         << l.own_count << " kept " << l.kept_count << " out " << l.tokens_out << " context " << l.context
         << " theta " << num(l.theta) << " tis_sum " << num(l.tis_sum) << " tis_min " << num(l.tis_min)
         << " tis_max " << num(l.tis_max) << " merged_tis " << num(l.merged_tis) << " merged "
         << (l.merged ? 1 : 0) << " forced " << (l.force_kept ? 1 : 0) << " gflops " << num(l.gflops)
         << " origins " << origins(l.kept_origins) << '\n';
    }
  }
  os << "end\n";
  return os.str();
}

namespace {

class LineReader {
 public:
  explicit LineReader(std::string_view text) : in_(std::string(text)) {}

  std::string next() {
    std::string line;
    if (!std::getline(in_, line)) throw FormatError("report: unexpected end of input after line " + std::to_string(no_));
    ++no_;
    return line;
  }

  // Expects "<key> <rest>" and returns rest.
  std::string field(const std::string& key) {
    std::string line = next();
    if (line.compare(0, key.size() + 1, key + " ") != 0) fail("expected '" + key + "'");
    return line.substr(key.size() + 1);
  }

  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError("report line " + std::to_string(no_) + ": " + what);
  }

 private:
  std::istringstream in_;
  std::size_t no_ = 0;
};

double parse_double(const std::string& s, const LineReader& lr) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0' || errno == ERANGE) lr.fail("bad number '" + s + "'");
  return v;
}

std::size_t parse_count(const std::string& s, const LineReader& lr) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) lr.fail("bad count '" + s + "'");
  return std::stoull(s);
}

std::vector<int> parse_origins(const std::string& s, const LineReader& lr) {
  std::vector<int> out;
  if (s == "-") return out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(tok, &used));
      if (used != tok.size()) lr.fail("bad origin '" + tok + "'");
    } catch (const std::logic_error&) {
      lr.fail("bad origin '" + tok + "'");
    }
  }
  return out;
}

// Parses "k1 v1 k2 v2 ..." checking keys in order.
std::vector<std::string> keyed(const std::string& rest, const std::vector<std::string>& keys,
                               const LineReader& lr) {
  std::istringstream ss(rest);
  std::vector<std::string> vals;
  for (const std::string& k : keys) {
    std::string key, val;
    if (!(ss >> key >> val) || key != k) lr.fail("expected key '" + k + "'");
    vals.push_back(val);
  }
  std::string extra;
  if (ss >> extra) lr.fail("trailing field '" + extra + "'");
  return vals;
}

}  // namespace

PruneReport parse_text(std::string_view text) {
  LineReader lr(text);
  PruneReport r;
  const std::string head = lr.next();
  if (head.rfind(kMagic, 0) != 0) lr.fail("not a report");
  if (head != std::string(kMagic) + " v" + std::to_string(PruneReport::kVersion)) lr.fail("unsupported version");
  r.flops_convention = lr.field("flops_convention");
  const std::size_t nc = parse_count(lr.field("config_count"), lr);
  for (std::size_t i = 0; i < nc; ++i) {
    const std::string kv = lr.field("config");
    const auto tab = kv.find('\t');
    if (tab == std::string::npos) lr.fail("config line without tab");
    r.config.emplace_back(kv.substr(0, tab), kv.substr(tab + 1));
  }
  const std::size_t nd = parse_count(lr.field("decision_count"), lr);
  for (std::size_t i = 0; i < nd; ++i) r.decisions.push_back(lr.field("decision"));
  r.baseline_gflops = parse_double(lr.field("baseline_gflops"), lr);
  r.dataset_average_gflops = parse_double(lr.field("dataset_average_gflops"), lr);
  r.reduce_ratio = parse_double(lr.field("reduce_ratio"), lr);
  const std::size_t ni = parse_count(lr.field("instance_count"), lr);
  for (std::size_t i = 0; i < ni; ++i) {
    std::string rest = lr.field("instance");
    const auto sp = rest.find(' ');
    if (sp == std::string::npos) lr.fail("bad instance line");
    InstanceTrace t;
    t.index = parse_count(rest.substr(0, sp), lr);
    const auto iv = keyed(rest.substr(sp + 1), {"difficulty", "gflops", "layers"}, lr);
    t.difficulty = parse_count(iv[0], lr);
    t.gflops = parse_double(iv[1], lr);
    const std::size_t nl = parse_count(iv[2], lr);
    for (std::size_t j = 0; j < nl; ++j) {
      std::istringstream ls(lr.field("layer"));
      std::string idx, branch;
      if (!(ls >> idx >> branch)) lr.fail("bad layer line");
      std::string tail;
      std::getline(ls, tail);
      LayerRecord l;
      l.layer = parse_count(idx, lr);
      try {
        l.branch = modality_from_string(branch);
      } catch (const InvalidArgument&) {
        lr.fail("bad branch '" + branch + "'");
      }
      const auto v = keyed(tail, {"in", "own", "kept", "out", "context", "theta", "tis_sum", "tis_min", "tis_max",
                                  "merged_tis", "merged", "forced", "gflops", "origins"},
                           lr);
      l.tokens_in = parse_count(v[0], lr);
      l.own_count = parse_count(v[1], lr);
      l.kept_count = parse_count(v[2], lr);
      l.tokens_out = parse_count(v[3], lr);
      l.context = parse_count(v[4], lr);
      l.theta = parse_double(v[5], lr);
      l.tis_sum = parse_double(v[6], lr);
      l.tis_min = parse_double(v[7], lr);
      l.tis_max = parse_double(v[8], lr);
      l.merged_tis = parse_double(v[9], lr);
      l.merged = parse_count(v[10], lr) != 0;
      l.force_kept = parse_count(v[11], lr) != 0;
      l.gflops = parse_double(v[12], lr);
      l.kept_origins = parse_origins(v[13], lr);
      t.layers.push_back(std::move(l));
    }
    r.instances.push_back(std::move(t));
  }
  if (lr.next() != "end") lr.fail("expected 'end'");
  if (!lr.at_end()) lr.fail("content after 'end'");
  return r;
}

std::string to_json(const PruneReport& r) {
  nlohmann::ordered_json j;
  j["format"] = kMagic;
  j["version"] = PruneReport::kVersion;
  j["flops_convention"] = r.flops_convention;
  nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.config) cfg[k] = v;
  j["config"] = cfg;
  j["decisions"] = r.decisions;
  j["baseline_gflops"] = r.baseline_gflops;
  j["dataset_average_gflops"] = r.dataset_average_gflops;
  j["reduce_ratio"] = r.reduce_ratio;
  nlohmann::ordered_json inst = nlohmann::ordered_json::array();
  for (const InstanceTrace& t : r.instances) {
    nlohmann::ordered_json ti;
    ti["index"] = t.index;
    ti["difficulty"] = t.difficulty;
    ti["gflops"] = t.gflops;
    nlohmann::ordered_json layers = nlohmann::ordered_json::array();
    for (const LayerRecord& l : t.layers) {
      nlohmann::ordered_json lj;
      lj["layer"] = l.layer;
      lj["branch"] = std::string(to_string(l.branch));
      lj["tokens_in"] = l.tokens_in;
      lj["own_count"] = l.own_count;
      lj["kept_count"] = l.kept_count;
      lj["tokens_out"] = l.tokens_out;
      lj["context"] = l.context;
      lj["theta"] = l.theta;
      lj["tis_sum"] = l.tis_sum;
      lj["tis_min"] = l.tis_min;
      lj["tis_max"] = l.tis_max;
      lj["merged_tis"] = l.merged_tis;
      lj["merged"] = l.merged;
      lj["force_kept"] = l.force_kept;
      lj["gflops"] = l.gflops;
      lj["kept_origins"] = l.kept_origins;
      layers.push_back(std::move(lj));
    }
    ti["layers"] = std::move(layers);
    inst.push_back(std::move(ti));
  }
  j["instances"] = std::move(inst);
  return j.dump(2) + "\n";
}

void write_report(const PruneReport& r, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write report '" + path + "'");
  out << to_text(r);
  if (!out) throw IoError("write failed for '" + path + "'");
}

PruneReport read_report(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open report '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str());
}

}  // namespace madtp
