// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "madtp/config.hpp"
#include "madtp/errors.hpp"

namespace madtp::harness {
namespace {

TEST(Config, DefaultsAreTheToyModel) {
  const RunConfig c = default_config();
  EXPECT_EQ(c.model.layers, 4u);
  EXPECT_EQ(c.model.patches, 64u);
  EXPECT_EQ(c.model.words, 16u);
  EXPECT_EQ(c.model.vision_width, 64u);
  EXPECT_EQ(c.model.language_width, 64u);
  EXPECT_NO_THROW(validate(c, Mode::calibrate));
}

TEST(Config, JsonRoundTrip) {
  RunConfig c = default_config();
  c.model.keep_policy = dtp::KeepPolicy::mean_keep;
  c.model.scope = vlt::ModalityScope::language;
  c.model.temperature = 0.1;
  c.data.seed = 99;
  c.run.out_dir = "x/y";
  const std::string j = config_to_json(c);
  EXPECT_EQ(config_to_json(parse_config(j)), j);
}

TEST(Config, MissingKeysTakeDefaults) {
  const RunConfig c = parse_config(R"({"schema_version": 1, "model": {"layers": 2}})");
  EXPECT_EQ(c.model.layers, 2u);
  EXPECT_EQ(c.model.patches, default_config().model.patches);
}

TEST(Config, Rejections) {
  EXPECT_THROW(parse_config("{"), FormatError);
  EXPECT_THROW(parse_config("[]"), FormatError);
  EXPECT_THROW(parse_config(R"({"model": {}})"), FormatError);
  EXPECT_THROW(parse_config(R"({"schema_version": 2})"), FormatError);
  EXPECT_THROW(parse_config(R"({"schema_version": 1, "model": {"layer": 2}})"), InvalidArgument);
  EXPECT_THROW(parse_config(R"({"schema_version": 1, "extra": {}})"), InvalidArgument);
  EXPECT_THROW(parse_config(R"({"schema_version": 1, "model": {"layers": "four"}})"), InvalidArgument);
  EXPECT_THROW(parse_config(R"({"schema_version": 1, "model": {"keep_policy": "median"}})"), InvalidArgument);
  EXPECT_THROW(parse_config(R"({"schema_version": 1, "model": {"heads": 5}})"), InvalidArgument);
  EXPECT_THROW(load_config("/nonexistent/config.json"), IoError);
}

TEST(Config, ValidateChecksGenerator) {
  RunConfig c = default_config();
  c.data.concept_min = 4;
  EXPECT_THROW(validate(c, Mode::simulate), InvalidArgument);
  c = default_config();
  c.data.patches_per_concept = 40;
  EXPECT_THROW(validate(c, Mode::simulate), InvalidArgument);
  c = default_config();
  c.train.learning_rate = 0.0;
  EXPECT_NO_THROW(validate(c, Mode::simulate));
  EXPECT_THROW(validate(c, Mode::train_toy), InvalidArgument);
}

TEST(Config, EchoIsFlatAndOrdered) {
  const auto e = config_echo(default_config());
  ASSERT_GE(e.size(), 2u);
  EXPECT_EQ(e[0], (std::pair<std::string, std::string>{"schema_version", "1"}));
  EXPECT_EQ(e[1], (std::pair<std::string, std::string>{"model.layers", "4"}));
  bool found = false;
  for (const auto& [k, v] : e) found = found || (k == "data.zero_fraction" && v == "0.25");
  EXPECT_TRUE(found);
  EXPECT_EQ(config_echo(default_config()), e);
}

TEST(Config, NumbersRoundTrip) {
  EXPECT_EQ(format_number(0.1), "0.10000000000000001");
  EXPECT_EQ(std::stod(format_number(1.0 / 3.0)), 1.0 / 3.0);
}

}  // namespace
}  // namespace madtp::harness
