// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "madtp/dtp.hpp"
#include "madtp/vlt.hpp"

namespace madtp::harness {

// Record ids encode layer and map kind as 4 * layer + kind.
enum class MapKind : std::uint32_t { vision_self = 0, language_self = 1, vision_token = 2, language_token = 3 };

std::uint32_t record_id(std::size_t layer, MapKind kind);

struct DumpRecord {
  std::uint32_t id = 0;
  Matrix data;  // values are exactly representable as float

  friend bool operator==(const DumpRecord&, const DumpRecord&) = default;
};

struct AttentionDump {
  static constexpr std::uint32_t kVersion = 1;
  std::vector<DumpRecord> records;

  friend bool operator==(const AttentionDump&, const AttentionDump&) = default;
};

std::string encode_dump(const AttentionDump& d);
AttentionDump decode_dump(const std::string& bytes);
void write_dump(const AttentionDump& d, const std::string& path);
AttentionDump read_dump(const std::string& path);

// Rounds each map to float.
AttentionDump dump_from_maps(const std::vector<vlt::LayerMaps>& maps);

struct IngestedLayer {
  std::size_t layer = 0;
  Modality branch = Modality::vision;
  Matrix a_self;
  std::optional<Matrix> a_token;
};

struct IngestResult {
  std::vector<IngestedLayer> layers;  // sorted by (layer, branch)
  std::vector<std::string> warnings;
};

// Validated maps. Rows off by more than 1e-4 are renormalized with a warning;
// more than 1e-2 rejects the file.
IngestResult validate_dump(const AttentionDump& d);
IngestResult ingest_attention_dump(const std::string& path);

struct ReplayLayer {
  std::size_t layer = 0;
  Modality branch = Modality::vision;
  double theta = 0.0;
  std::vector<bool> keep;
  bool force_kept = false;
};

// Special token at index 0; each layer is pruned on its own maps.
std::vector<ReplayLayer> replay(const IngestResult& in, double temperature, dtp::ScoreSwitches scores = {});

}  // namespace madtp::harness
