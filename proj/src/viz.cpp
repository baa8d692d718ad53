#include "sam/viz.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "sam/error.hpp"

namespace fs = std::filesystem;

namespace sam::viz {

int grid_side(int n) {
  if (n < 1) throw ShapeError("panel needs at least one value");
  int s = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  return s;
}

void write_panel_pgm(const std::string& path, const std::vector<float>& v, float pad) {
  int side = grid_side(static_cast<int>(v.size()));
  float lo = v[0], hi = v[0];
  for (float x : v) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  lo = std::min(lo, pad);
  hi = std::max(hi, pad);
  float span = hi - lo;
  auto scaled = [&](float x) {
    if (span <= 0) return 0;
    return static_cast<int>((x - lo) / span * 255.0f + 0.5f);
  };
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f << "P2\n" << side << " " << side << "\n255\n";
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      int i = r * side + c;
      f << (i < static_cast<int>(v.size()) ? scaled(v[i]) : scaled(pad));
      f << (c + 1 == side ? "\n" : " ");
    }
  }
}

double sparsity(const std::vector<float>& v) {
  if (v.empty()) return 0;
  float mx = *std::max_element(v.begin(), v.end());
  if (mx <= 0) return 0;
  int low = 0;
  for (float x : v) low += (x < 0.1f * mx);
  return static_cast<double>(low) / static_cast<double>(v.size());
}

void write_probe(const std::string& dir, const std::string& tag, int sample_index,
                 const nn::Probe<float>& probe) {
  fs::create_directories(dir);
  char stem[128];
  std::snprintf(stem, sizeof stem, "%s_sample%d", tag.c_str(), sample_index);
  std::ofstream csv(fs::path(dir) / (std::string(stem) + ".csv"));
  if (!csv) throw IoError("cannot write probe csv under " + dir);
  csv << "block,kind,index,value\n";
  for (std::size_t b = 0; b < probe.blocks.size(); ++b) {
    const auto& blk = probe.blocks[b];
    auto dump = [&](const char* kind, const std::vector<float>& v) {
      for (std::size_t i = 0; i < v.size(); ++i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6f", static_cast<double>(v[i]));
        csv << b << "," << kind << "," << i << "," << buf << "\n";
      }
      char name[160];
      std::snprintf(name, sizeof name, "%s_block%zu_%s.pgm", stem, b, kind);
      write_panel_pgm((fs::path(dir) / name).string(), v);
    };
    dump("pre", blk.pre);
    dump("gate", blk.gate);
    dump("post", blk.post);
  }
}

}  // namespace sam::viz
