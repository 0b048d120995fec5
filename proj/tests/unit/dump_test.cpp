// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "madtp/dump.hpp"
#include "madtp/errors.hpp"
#include "oracles.hpp"

namespace madtp::harness {
namespace {

Matrix floats(Matrix m) {
  for (double& x : m.data()) x = static_cast<double>(static_cast<float>(x));
  return m;
}

AttentionDump sample_dump(std::mt19937_64& g) {
  AttentionDump d;
  for (std::size_t l = 0; l < 2; ++l) {
    d.records.push_back({record_id(l, MapKind::vision_self), floats(oracle::random_stochastic(g, 5, 5))});
    d.records.push_back({record_id(l, MapKind::language_self), floats(oracle::random_stochastic(g, 3, 3))});
    d.records.push_back({record_id(l, MapKind::vision_token), floats(oracle::random_stochastic(g, 2, 5))});
  }
  return d;
}

TEST(Dump, RecordIds) {
  EXPECT_EQ(record_id(0, MapKind::vision_self), 0u);
  EXPECT_EQ(record_id(3, MapKind::language_token), 15u);
}

TEST(Dump, EncodeDecodeRoundTrip) {
  std::mt19937_64 g(1);
  const AttentionDump d = sample_dump(g);
  const std::string bytes = encode_dump(d);
  EXPECT_EQ(bytes.substr(0, 8), "MADTPDMP");
  EXPECT_EQ(decode_dump(bytes), d);
  EXPECT_EQ(encode_dump(decode_dump(bytes)), bytes);
}

TEST(Dump, FileRoundTrip) {
  std::mt19937_64 g(2);
  const AttentionDump d = sample_dump(g);
  const auto path = std::filesystem::temp_directory_path() / "madtp_dump_test.dmp";
  write_dump(d, path.string());
  EXPECT_EQ(read_dump(path.string()), d);
  std::filesystem::remove(path);
  EXPECT_THROW(read_dump(path.string()), IoError);
}

TEST(Dump, RejectsBadFiles) {
  std::mt19937_64 g(3);
  const std::string bytes = encode_dump(sample_dump(g));
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_dump(bad), FormatError);
  bad = bytes;
  bad[8] = 2;
  EXPECT_THROW(decode_dump(bad), FormatError);
  try {
    decode_dump(bytes.substr(0, bytes.size() - 4));
    FAIL();
  } catch (const CorruptFile& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find(std::to_string(bytes.size())), std::string::npos);
    EXPECT_NE(what.find(std::to_string(bytes.size() - 4)), std::string::npos);
  }
  EXPECT_THROW(decode_dump(bytes + "x"), CorruptFile);
  EXPECT_THROW(decode_dump(bytes.substr(0, 10)), CorruptFile);
}

TEST(Ingest, RenormalizesSmallDriftAndRejectsLarge) {
  AttentionDump d;
  Matrix a(2, 2, Vector{0.5, 0.5005, 0.5, 0.5});
  d.records.push_back({record_id(0, MapKind::vision_self), a});
  const IngestResult r = validate_dump(d);
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_NEAR(r.layers[0].a_self(0, 0) + r.layers[0].a_self(0, 1), 1.0, 1e-15);

  d.records[0].data(0, 0) = 0.52;
  EXPECT_THROW(validate_dump(d), CorruptFile);
  d.records[0].data(0, 0) = -0.5;
  EXPECT_THROW(validate_dump(d), CorruptFile);
}

TEST(Ingest, StructuralChecks) {
  std::mt19937_64 g(4);
  AttentionDump d;
  d.records.push_back({record_id(0, MapKind::vision_token), oracle::random_stochastic(g, 2, 5)});
  EXPECT_THROW(validate_dump(d), CorruptFile);
  d.records.push_back({record_id(0, MapKind::vision_self), oracle::random_stochastic(g, 4, 4)});
  EXPECT_THROW(validate_dump(d), CorruptFile);
  d.records.back().data = oracle::random_stochastic(g, 4, 5);
  EXPECT_THROW(validate_dump(d), CorruptFile);
}

TEST(Replay, PrunesEachLayer) {
  std::mt19937_64 g(5);
  const IngestResult in = validate_dump(sample_dump(g));
  ASSERT_EQ(in.layers.size(), 4u);
  const auto out = replay(in, 3.0);
  ASSERT_EQ(out.size(), 4u);
  for (const ReplayLayer& l : out) {
    EXPECT_TRUE(l.keep[0]);
    EXPECT_GE(dtp::count_kept(l.keep), 2u);
  }
}

// TIS = (S_cls + S_self + S_token)/3 = [4/9, 5/18, 5/18].
TEST(Replay, HandComputedThreshold) {
  AttentionDump d;
  d.records.push_back({record_id(0, MapKind::vision_self),
                       Matrix(3, 3, Vector{0.5, 0.25, 0.25, 0.25, 0.5, 0.25, 0.25, 0.25, 0.5})});
  d.records.push_back({record_id(0, MapKind::vision_token), Matrix(1, 3, Vector{0.5, 0.25, 0.25})});
  const IngestResult in = validate_dump(d);
  EXPECT_TRUE(in.warnings.empty());

  // sparsemax([0.5, 0.25, 0.25]) is the row itself.
  const auto t1 = replay(in, 1.0);
  ASSERT_EQ(t1.size(), 1u);
  EXPECT_NEAR(t1[0].theta, 13.0 / 36.0, 1e-15);
  EXPECT_EQ(t1[0].keep, (std::vector<bool>{true, true, false}));
  EXPECT_TRUE(t1[0].force_kept);

  // sparsemax([2, 1, 1]) = [1, 0, 0].
  const auto t4 = replay(in, 4.0);
  EXPECT_NEAR(t4[0].theta, 4.0 / 9.0, 1e-15);
}

}  // namespace
}  // namespace madtp::harness
