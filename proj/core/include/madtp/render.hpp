// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "madtp/report.hpp"
#include "madtp/synthetic.hpp"

namespace madtp::harness {

struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;
};

std::string encode_ppm(const Image& img);
void write_ppm(const Image& img, const std::string& path);

// Alive flags over original positions after the given record (special at 0).
std::vector<bool> alive_after(const LayerRecord& rec, std::size_t positions);

// Patch grid, pruned patches drawn white.
Image render_vision_mask(const LayerRecord& rec, const Sample& s, std::size_t patches);
// One cell per word, pruned words drawn white.
Image render_language_mask(const LayerRecord& rec, const Sample& s, std::size_t words);

// Word lists per layer with pruned words struck through as ~~wN~~.
std::string word_strike_list(const InstanceTrace& t, std::size_t words);

// Writes sample<i>_<branch>_layer<l>.ppm and sample<i>_words.txt; returns paths.
std::vector<std::string> render_sample(const InstanceTrace& t, const Sample& s, std::size_t patches,
                                       std::size_t words, const std::string& dir);

// Mean alive fraction per layer and branch, overall and per difficulty.
std::string density_table(const PruneReport& r, std::size_t patches, std::size_t words);

}  // namespace madtp::harness
