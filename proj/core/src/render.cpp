// SPDX-License-Identifier: Apache-2.0
#include "madtp/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "madtp/errors.hpp"

namespace madtp::harness {

namespace {

constexpr std::size_t kCell = 8;

void fill_cell(Image& img, std::size_t cx, std::size_t cy, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  for (std::size_t y = cy * kCell; y < (cy + 1) * kCell; ++y) {
    for (std::size_t x = cx * kCell; x < (cx + 1) * kCell; ++x) {
      const std::size_t p = 3 * (y * img.width + x);
      // One-pixel grid line in light grey.
      const bool edge = x % kCell == 0 || y % kCell == 0;
      img.rgb[p] = edge ? 200 : r;
      img.rgb[p + 1] = edge ? 200 : g;
      img.rgb[p + 2] = edge ? 200 : b;
    }
  }
}

std::uint8_t shade(double v) {
  const double t = 0.5 + 0.45 * std::tanh(v);
  return static_cast<std::uint8_t>(std::lround(40.0 + 160.0 * t));
}

// Features of a raw row squashed to a colour; planted rows tinted red.
void cell_colour(const Matrix& raw, std::size_t row, bool planted, std::uint8_t out[3]) {
  for (int c = 0; c < 3; ++c) {
    const std::size_t col = static_cast<std::size_t>(c) % raw.cols();
    out[c] = shade(raw(row, col));
  }
  if (planted) {
    out[0] = 220;
    out[1] = static_cast<std::uint8_t>(out[1] / 3);
    out[2] = static_cast<std::uint8_t>(out[2] / 3);
  }
}

Image render_strip(const LayerRecord& rec, const Matrix& raw, const std::vector<std::size_t>& planted,
                   std::size_t n, std::size_t cols) {
  if (raw.rows() < n || raw.cols() == 0) throw InvalidArgument("render: sample has fewer rows than positions");
  const std::size_t rows = (n + cols - 1) / cols;
  Image img;
  img.width = cols * kCell;
  img.height = rows * kCell;
  img.rgb.assign(img.width * img.height * 3, 255);
  const std::vector<bool> alive = alive_after(rec, n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cx = i % cols, cy = i / cols;
    if (!alive[i + 1]) {
      fill_cell(img, cx, cy, 255, 255, 255);
      continue;
    }
    std::uint8_t c[3];
    cell_colour(raw, i, std::binary_search(planted.begin(), planted.end(), i), c);
    fill_cell(img, cx, cy, c[0], c[1], c[2]);
  }
  return img;
}

}  // namespace

std::string encode_ppm(const Image& img) {
  if (img.rgb.size() != img.width * img.height * 3) throw InvalidArgument("ppm: pixel buffer size mismatch");
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.rgb.data()), img.rgb.size());
  return out;
}

void write_ppm(const Image& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image '" + path + "'");
  const std::string bytes = encode_ppm(img);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

std::vector<bool> alive_after(const LayerRecord& rec, std::size_t positions) {
  std::vector<bool> alive(positions, false);
  for (int o : rec.kept_origins)
    if (o >= 0 && static_cast<std::size_t>(o) < positions) alive[static_cast<std::size_t>(o)] = true;
  return alive;
}

Image render_vision_mask(const LayerRecord& rec, const Sample& s, std::size_t patches) {
  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(patches))));
  return render_strip(rec, s.image, s.vision_planted, patches, cols);
}

Image render_language_mask(const LayerRecord& rec, const Sample& s, std::size_t words) {
  return render_strip(rec, s.text, s.language_planted, words, words);
}

std::string word_strike_list(const InstanceTrace& t, std::size_t words) {
  std::ostringstream os;
  for (const LayerRecord& r : t.layers) {
    if (r.branch != Modality::language) continue;
    const std::vector<bool> alive = alive_after(r, words + 1);
    os << "layer " << r.layer << ":";
    for (std::size_t i = 0; i < words; ++i) {
      os << ' ';
      if (alive[i + 1]) os << 'w' << i;
      else os << "~~w" << i << "~~";
    }
    os << (r.merged ? " +merged" : "") << '\n';
  }
  return os.str();
}

std::vector<std::string> render_sample(const InstanceTrace& t, const Sample& s, std::size_t patches,
                                       std::size_t words, const std::string& dir) {
  std::vector<std::string> paths;
  const std::string stem = dir + "/sample" + std::to_string(t.index);
  for (const LayerRecord& r : t.layers) {
    const bool v = r.branch == Modality::vision;
    const std::string p = stem + "_" + std::string(to_string(r.branch)) + "_layer" + std::to_string(r.layer) + ".ppm";
    write_ppm(v ? render_vision_mask(r, s, patches) : render_language_mask(r, s, words), p);
    paths.push_back(p);
  }
  const std::string wp = stem + "_words.txt";
  std::ofstream out(wp, std::ios::binary);
  if (!out) throw IoError("cannot write '" + wp + "'");
  out << word_strike_list(t, words);
  paths.push_back(wp);
  return paths;
}

std::string density_table(const PruneReport& r, std::size_t patches, std::size_t words) {
  struct Acc {
    double sum = 0.0;
    std::size_t n = 0;
  };
  // (layer, branch) -> difficulty -> accumulator; difficulty SIZE_MAX is the overall bucket.
  std::map<std::pair<std::size_t, int>, std::map<std::size_t, Acc>> acc;
  std::vector<std::size_t> levels;
  for (const InstanceTrace& t : r.instances) {
    if (std::find(levels.begin(), levels.end(), t.difficulty) == levels.end()) levels.push_back(t.difficulty);
    for (const LayerRecord& l : t.layers) {
      const double total = static_cast<double>((l.branch == Modality::vision ? patches : words) + 1);
      const double frac = static_cast<double>(l.tokens_out) / total;
      auto& m = acc[{l.layer, l.branch == Modality::vision ? 0 : 1}];
      m[SIZE_MAX].sum += frac;
      ++m[SIZE_MAX].n;
      m[t.difficulty].sum += frac;
      ++m[t.difficulty].n;
    }
  }
  std::sort(levels.begin(), levels.end());
  std::ostringstream os;
  os << "layer\tbranch\tdensity";
  for (std::size_t d : levels) os << "\tdensity_c" << d;
  os << '\n';
  char buf[32];
  for (const auto& [key, m] : acc) {
    os << key.first << '\t' << (key.second == 0 ? "vision" : "language");
    const Acc& all = m.at(SIZE_MAX);
    std::snprintf(buf, sizeof buf, "%.6f", all.sum / static_cast<double>(all.n));
    os << '\t' << buf;
    for (std::size_t d : levels) {
      auto it = m.find(d);
      if (it == m.end()) {
        os << "\t-";
        continue;
      }
      std::snprintf(buf, sizeof buf, "%.6f", it->second.sum / static_cast<double>(it->second.n));
      os << '\t' << buf;
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace madtp::harness
