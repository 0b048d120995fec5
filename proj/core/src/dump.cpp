// SPDX-License-Identifier: Apache-2.0
#include "madtp/dump.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "madtp/errors.hpp"

namespace madtp::harness {

namespace {

constexpr char kMagic[8] = {'M', 'A', 'D', 'T', 'P', 'D', 'M', 'P'};
constexpr double kRowTolerance = 1e-4;
constexpr double kRowReject = 1e-2;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(const std::string& in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

}  // namespace

std::uint32_t record_id(std::size_t layer, MapKind kind) {
  return static_cast<std::uint32_t>(4 * layer) + static_cast<std::uint32_t>(kind);
}

std::string encode_dump(const AttentionDump& d) {
  std::string out(kMagic, sizeof kMagic);
  put_u32(out, AttentionDump::kVersion);
  put_u32(out, static_cast<std::uint32_t>(d.records.size()));
  for (const DumpRecord& r : d.records) {
    put_u32(out, r.id);
    put_u32(out, static_cast<std::uint32_t>(r.data.rows()));
    put_u32(out, static_cast<std::uint32_t>(r.data.cols()));
  }
  for (const DumpRecord& r : d.records) {
    for (double x : r.data.data()) {
      const float f = static_cast<float>(x);
      std::uint32_t bits = 0;
      std::memcpy(&bits, &f, sizeof bits);
      put_u32(out, bits);
    }
  }
  return out;
}

AttentionDump decode_dump(const std::string& bytes) {
  constexpr std::size_t head = sizeof kMagic + 8;
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw FormatError("attention dump: bad magic");
  if (bytes.size() < head) {
    throw CorruptFile("attention dump: truncated header, expected at least " + std::to_string(head) +
                      " bytes, got " + std::to_string(bytes.size()));
  }
  const std::uint32_t version = get_u32(bytes, sizeof kMagic);
  if (version != AttentionDump::kVersion)
    throw FormatError("attention dump: unsupported version " + std::to_string(version));
  const std::uint32_t count = get_u32(bytes, sizeof kMagic + 4);
  const std::size_t meta_end = head + 12ull * count;
  if (bytes.size() < meta_end) {
    throw CorruptFile("attention dump: truncated record table, expected at least " + std::to_string(meta_end) +
                      " bytes, got " + std::to_string(bytes.size()));
  }
  AttentionDump d;
  std::size_t expected = meta_end;
  std::vector<std::pair<std::size_t, std::size_t>> dims;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t p = head + 12ull * i;
    DumpRecord r;
    r.id = get_u32(bytes, p);
    dims.emplace_back(get_u32(bytes, p + 4), get_u32(bytes, p + 8));
    expected += 4ull * dims.back().first * dims.back().second;
    d.records.push_back(std::move(r));
  }
  if (bytes.size() != expected) {
    throw CorruptFile("attention dump: expected " + std::to_string(expected) + " bytes, got " +
                      std::to_string(bytes.size()));
  }
  std::size_t pos = meta_end;
  for (std::uint32_t i = 0; i < count; ++i) {
    Matrix m(dims[i].first, dims[i].second);
    for (double& x : m.data()) {
      const std::uint32_t bits = get_u32(bytes, pos);
      float f = 0.0f;
      std::memcpy(&f, &bits, sizeof f);
      x = static_cast<double>(f);
      pos += 4;
    }
    d.records[i].data = std::move(m);
  }
  return d;
}

void write_dump(const AttentionDump& d, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write attention dump '" + path + "'");
  const std::string bytes = encode_dump(d);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

AttentionDump read_dump(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open attention dump '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return decode_dump(ss.str());
}

AttentionDump dump_from_maps(const std::vector<vlt::LayerMaps>& maps) {
  AttentionDump d;
  auto rounded = [](const Matrix& m) {
    Matrix r = m;
    for (double& x : r.data()) x = static_cast<double>(static_cast<float>(x));
    return r;
  };
  for (const vlt::LayerMaps& m : maps) {
    const bool v = m.branch == Modality::vision;
    d.records.push_back({record_id(m.layer, v ? MapKind::vision_self : MapKind::language_self), rounded(m.a_self)});
    if (!m.a_token.empty())
      d.records.push_back({record_id(m.layer, v ? MapKind::vision_token : MapKind::language_token), rounded(m.a_token)});
  }
  return d;
}

namespace {

void check_rows(Matrix& m, const std::string& what, std::vector<std::string>& warnings) {
  bool renormalized = false;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    double s = 0.0;
    for (double x : row) {
      if (!std::isfinite(x) || x < 0.0) throw CorruptFile("attention dump: " + what + " has a negative or non-finite entry");
      s += x;
    }
    const double dev = std::abs(s - 1.0);
    if (dev > kRowReject) {
      throw CorruptFile("attention dump: " + what + " row " + std::to_string(r) + " sums to " + std::to_string(s));
    }
    if (dev > kRowTolerance) {
      for (double& x : row) x /= s;
      renormalized = true;
    }
  }
  if (renormalized) warnings.push_back(what + ": rows renormalized");
}

}  // namespace

IngestResult validate_dump(const AttentionDump& d) {
  std::map<std::pair<std::size_t, int>, IngestedLayer> layers;
  std::map<std::pair<std::size_t, int>, Matrix> tokens;
  IngestResult res;
  for (const DumpRecord& r : d.records) {
    const std::size_t layer = r.id / 4;
    const std::uint32_t kind = r.id % 4;
    const int branch = static_cast<int>(kind % 2);
    const std::string what = "layer " + std::to_string(layer) + " " +
                             (branch == 0 ? "vision" : "language") + (kind < 2 ? " A_self" : " A_token");
    Matrix m = r.data;
    if (m.rows() == 0 || m.cols() == 0) throw CorruptFile("attention dump: " + what + " is empty");
    check_rows(m, what, res.warnings);
    const auto key = std::make_pair(layer, branch);
    if (kind < 2) {
      if (m.rows() != m.cols()) throw CorruptFile("attention dump: " + what + " is not square");
      if (layers.count(key)) throw CorruptFile("attention dump: duplicate " + what);
      IngestedLayer il;
      il.layer = layer;
      il.branch = branch == 0 ? Modality::vision : Modality::language;
      il.a_self = std::move(m);
      layers.emplace(key, std::move(il));
    } else {
      if (tokens.count(key)) throw CorruptFile("attention dump: duplicate " + what);
      tokens.emplace(key, std::move(m));
    }
  }
  for (auto& [key, m] : tokens) {
    auto it = layers.find(key);
    if (it == layers.end()) throw CorruptFile("attention dump: A_token without A_self at layer " + std::to_string(key.first));
    if (m.cols() != it->second.a_self.cols()) {
      throw CorruptFile("attention dump: A_token has " + std::to_string(m.cols()) + " columns, A_self has " +
                        std::to_string(it->second.a_self.cols()) + " tokens");
    }
    it->second.a_token = std::move(m);
  }
  for (auto& [key, l] : layers) res.layers.push_back(std::move(l));
  return res;
}

IngestResult ingest_attention_dump(const std::string& path) { return validate_dump(read_dump(path)); }

std::vector<ReplayLayer> replay(const IngestResult& in, double temperature, dtp::ScoreSwitches scores) {
  std::vector<ReplayLayer> out;
  dtp::PruneSettings s;
  s.temperature = temperature;
  s.policy = dtp::KeepPolicy::per_instance;
  s.scores = scores;
  for (const IngestedLayer& l : in.layers) {
    const std::size_t n = l.a_self.rows();
    TokenBatch b;
    b.modality = l.branch;
    TokenSequence seq;
    seq.tokens = Matrix(n, 1);
    for (std::size_t i = 0; i < n; ++i) seq.origin.push_back(static_cast<int>(i));
    seq.specials = {0};
    seq.alive.assign(n, true);
    b.instances.push_back(std::move(seq));
    const dtp::InstanceMaps maps{&l.a_self, l.a_token ? &*l.a_token : nullptr};
    const dtp::PruneResult r = dtp::prune(b, {maps}, s);
    const dtp::PruneDecision& d = r.decisions.front();
    out.push_back({l.layer, l.branch, d.theta, d.keep, d.force_kept});
  }
  return out;
}

}  // namespace madtp::harness
