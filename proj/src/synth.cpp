#include "sam/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "sam/data.hpp"
#include "sam/error.hpp"
#include "sam/random.hpp"

namespace fs = std::filesystem;

namespace sam::synth {

namespace {

struct P2 {
  double x, y;
};
using Polyline = std::vector<P2>;

// Renders thick anti-aliased polylines onto an n x n canvas (ink = 1).
void draw(std::vector<float>& img, int n, const std::vector<Polyline>& strokes,
          double thickness) {
  auto seg = [&](P2 a, P2 b) {
    double ax = a.x * n, ay = a.y * n, bx = b.x * n, by = b.y * n;
    int x0 = std::max(0, static_cast<int>(std::floor(std::min(ax, bx) - thickness - 1)));
    int x1 = std::min(n - 1, static_cast<int>(std::ceil(std::max(ax, bx) + thickness + 1)));
    int y0 = std::max(0, static_cast<int>(std::floor(std::min(ay, by) - thickness - 1)));
    int y1 = std::min(n - 1, static_cast<int>(std::ceil(std::max(ay, by) + thickness + 1)));
    double dx = bx - ax, dy = by - ay;
    double len2 = dx * dx + dy * dy;
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        double px = x + 0.5, py = y + 0.5;
        double t = len2 > 1e-12 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        double qx = ax + t * dx, qy = ay + t * dy;
        double d = std::hypot(px - qx, py - qy);
        double ink = std::clamp(thickness + 0.5 - d, 0.0, 1.0);
        float& p = img[static_cast<std::size_t>(y) * n + x];
        p = std::max(p, static_cast<float>(ink));
      }
  };
  for (const auto& s : strokes)
    for (std::size_t i = 0; i + 1 < s.size(); ++i) seg(s[i], s[i + 1]);
}

Polyline arc(double cx, double cy, double rx, double ry, double a0, double a1, int segs = 8) {
  Polyline p;
  for (int i = 0; i <= segs; ++i) {
    double a = a0 + (a1 - a0) * i / segs;
    p.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
  }
  return p;
}

const double kPi = 3.141592653589793;

// Stroke templates for the ten digit classes, unit square, y growing down.
std::vector<Polyline> digit_template(int d) {
  switch (d) {
    case 0:
      return {arc(0.5, 0.5, 0.28, 0.38, 0, 2 * kPi, 12)};
    case 1:
      return {{{0.35, 0.3}, {0.55, 0.12}, {0.55, 0.88}}};
    case 2:
      return {arc(0.5, 0.3, 0.25, 0.2, -kPi, 0.25 * kPi, 8),
              {{0.68, 0.45}, {0.28, 0.85}, {0.75, 0.85}}};
    case 3:
      return {arc(0.48, 0.3, 0.22, 0.18, -0.75 * kPi, 0.5 * kPi, 8),
              arc(0.48, 0.68, 0.25, 0.2, -0.5 * kPi, 0.75 * kPi, 8)};
    case 4:
      return {{{0.62, 0.12}, {0.25, 0.6}, {0.78, 0.6}}, {{0.62, 0.12}, {0.62, 0.88}}};
    case 5:
      return {{{0.7, 0.14}, {0.32, 0.14}, {0.3, 0.48}},
              arc(0.48, 0.66, 0.24, 0.2, -0.5 * kPi, 0.75 * kPi, 8)};
    case 6:
      return {{{0.62, 0.12}, {0.34, 0.5}}, arc(0.5, 0.66, 0.22, 0.2, 0, 2 * kPi, 10)};
    case 7:
      return {{{0.26, 0.14}, {0.74, 0.14}, {0.42, 0.88}}};
    case 8:
      return {arc(0.5, 0.3, 0.2, 0.17, 0, 2 * kPi, 10),
              arc(0.5, 0.68, 0.24, 0.2, 0, 2 * kPi, 10)};
    case 9:
      return {arc(0.5, 0.32, 0.22, 0.19, 0, 2 * kPi, 10), {{0.72, 0.32}, {0.64, 0.88}}};
    default:
      throw Error("digit_template: bad class");
  }
}

// Instance deformation knobs. Digit difficulty is calibrated against the
// continual benchmark (per-task head accuracy landing in the high-90s like
// the real corpus), glyph classes stay comparatively clean.
struct Jitter {
  double rot = 0.42;  // full range in radians, about +/- 12 degrees
  double scale_lo = 0.85, scale_hi = 1.10;
  double shift = 0.14;  // full range of the translation, unit square
  double point_noise = 0.012;
  double pixel_noise = 0.02;
};

// Shared handwriting-style instance variation for the digit and glyph
// corpora. Clean stroke renders are far easier than real handwriting; this
// level of rotation / scale / translation / point / pixel noise calibrates
// the stand-in benchmarks to the qualitative difficulty of the real ones
// (per-task heads in the high 90s, task-agnostic well below conditioned).
Jitter handwriting_jitter() {
  Jitter j;
  j.rot = 0.55;
  j.scale_lo = 0.79;
  j.scale_hi = 1.14;
  j.shift = 0.175;
  j.point_noise = 0.024;
  j.pixel_noise = 0.05;
  return j;
}

std::vector<Polyline> jitter_strokes(const std::vector<Polyline>& strokes, Rng& rng,
                                     const Jitter& j) {
  double point_noise = j.point_noise;
  double ang = (rng.uniform() - 0.5) * j.rot;
  double scale = j.scale_lo + rng.uniform() * (j.scale_hi - j.scale_lo);
  double tx = (rng.uniform() - 0.5) * j.shift, ty = (rng.uniform() - 0.5) * j.shift;
  double ca = std::cos(ang), sa = std::sin(ang);
  std::vector<Polyline> out;
  for (const auto& s : strokes) {
    Polyline q;
    for (const auto& p : s) {
      double x = (p.x - 0.5) + rng.normal() * point_noise;
      double y = (p.y - 0.5) + rng.normal() * point_noise;
      q.push_back({0.5 + scale * (ca * x - sa * y) + tx, 0.5 + scale * (sa * x + ca * y) + ty});
    }
    out.push_back(std::move(q));
  }
  return out;
}

std::vector<std::uint8_t> render_u8(const std::vector<Polyline>& strokes, Rng& rng, int n,
                                    double pixel_noise = 0.02, double th_lo = 0.8,
                                    double th_hi = 1.5) {
  std::vector<float> img(static_cast<std::size_t>(n) * n, 0.0f);
  double thickness = th_lo + rng.uniform() * (th_hi - th_lo);
  draw(img, n, strokes, thickness);
  double gain = 0.85 + rng.uniform() * 0.15;
  std::vector<std::uint8_t> out(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    double v = img[i] * gain + rng.normal() * pixel_noise;
    out[i] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
  }
  return out;
}

void write_be32(std::ofstream& f, std::uint32_t v) {
  std::uint8_t b[4] = {static_cast<std::uint8_t>(v >> 24), static_cast<std::uint8_t>(v >> 16),
                       static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v)};
  f.write(reinterpret_cast<char*>(b), 4);
}

void write_idx_images(const std::string& path, const std::vector<std::vector<std::uint8_t>>& imgs,
                      int rows, int cols) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  write_be32(f, 2051);
  write_be32(f, static_cast<std::uint32_t>(imgs.size()));
  write_be32(f, rows);
  write_be32(f, cols);
  for (const auto& im : imgs) f.write(reinterpret_cast<const char*>(im.data()), im.size());
}

void write_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  write_be32(f, 2049);
  write_be32(f, static_cast<std::uint32_t>(labels.size()));
  f.write(reinterpret_cast<const char*>(labels.data()), labels.size());
}

void write_pgm(const std::string& path, const std::vector<std::uint8_t>& img, int n) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << "P5\n" << n << " " << n << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.data()), img.size());
}

}  // namespace

void write_mnist_like(const std::string& root, std::uint64_t seed, int train_per_class,
                      int test_per_class) {
  fs::create_directories(fs::path(root) / "mnist");
  Rng rng(seed);
  Jitter hard = handwriting_jitter();
  auto make_set = [&](int per_class, std::string_view stream) {
    Rng r = rng.substream(stream);
    std::vector<std::vector<std::uint8_t>> imgs;
    std::vector<std::uint8_t> labels;
    for (int d = 0; d < 10; ++d) {
      auto tmpl = digit_template(d);
      for (int i = 0; i < per_class; ++i) {
        imgs.push_back(render_u8(jitter_strokes(tmpl, r, hard), r, 28, hard.pixel_noise));
        labels.push_back(static_cast<std::uint8_t>(d));
      }
    }
    // interleave classes the way the real files do
    std::vector<int> order(imgs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    r.shuffle(order);
    std::vector<std::vector<std::uint8_t>> si(imgs.size());
    std::vector<std::uint8_t> sl(labels.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
      si[i] = std::move(imgs[order[i]]);
      sl[i] = labels[order[i]];
    }
    return std::pair(std::move(si), std::move(sl));
  };
  auto [ti, tl] = make_set(train_per_class, "mnist-train");
  auto [vi, vl] = make_set(test_per_class, "mnist-test");
  fs::path d = fs::path(root) / "mnist";
  write_idx_images((d / "train-images-idx3-ubyte").string(), ti, 28, 28);
  write_idx_labels((d / "train-labels-idx1-ubyte").string(), tl);
  write_idx_images((d / "t10k-images-idx3-ubyte").string(), vi, 28, 28);
  write_idx_labels((d / "t10k-labels-idx1-ubyte").string(), vl);
}

// Per-alphabet glyph grammar. Real Omniglot's alphabets differ strongly in
// style (stroke counts, curvature, symmetry, blockiness, pen width); the
// stand-in mirrors that so the meta-learner sees a heterogeneous class pool
// rather than one homogeneous stroke distribution.
struct AlphabetStyle {
  int min_strokes, max_strokes;
  int min_pts, max_pts;
  bool mirror;   // bilaterally symmetric script
  bool closed;   // strokes close into loops
  int smooth;    // corner-cutting rounds: 0 = angular, 2 = curvy
  int grid;      // 0 = free placement, else control points snap to a grid
  double margin; // canvas margin
  double th_lo, th_hi;  // pen thickness range
};

AlphabetStyle alphabet_style(Rng r) {
  AlphabetStyle s;
  s.min_strokes = 1 + static_cast<int>(r.uniform_int(3));
  s.max_strokes = s.min_strokes + static_cast<int>(r.uniform_int(3));
  s.min_pts = 2 + static_cast<int>(r.uniform_int(2));
  s.max_pts = s.min_pts + 1 + static_cast<int>(r.uniform_int(3));
  s.mirror = r.uniform() < 0.25;
  s.closed = r.uniform() < 0.2;
  s.smooth = static_cast<int>(r.uniform_int(3));
  s.grid = r.uniform() < 0.3 ? 3 + static_cast<int>(r.uniform_int(3)) : 0;
  s.margin = 0.10 + r.uniform() * 0.15;
  s.th_lo = 0.6 + r.uniform() * 0.6;
  s.th_hi = s.th_lo + 0.2 + r.uniform() * 0.5;
  return s;
}

Polyline chaikin(const Polyline& p) {
  if (p.size() < 3) return p;
  Polyline q;
  q.push_back(p.front());
  for (std::size_t i = 0; i + 1 < p.size(); ++i) {
    const P2 &a = p[i], &b = p[i + 1];
    q.push_back({0.75 * a.x + 0.25 * b.x, 0.75 * a.y + 0.25 * b.y});
    q.push_back({0.25 * a.x + 0.75 * b.x, 0.25 * a.y + 0.75 * b.y});
  }
  q.push_back(p.back());
  return q;
}

std::vector<Polyline> glyph_template(const AlphabetStyle& st, Rng& rng) {
  int span = st.max_strokes - st.min_strokes + 1;
  int nstrokes = st.min_strokes + static_cast<int>(rng.uniform_int(span));
  if (st.mirror) nstrokes = (nstrokes + 1) / 2;
  std::vector<Polyline> tmpl;
  for (int s = 0; s < nstrokes; ++s) {
    int pspan = st.max_pts - st.min_pts + 1;
    int npts = st.min_pts + static_cast<int>(rng.uniform_int(pspan));
    Polyline p;
    for (int k = 0; k < npts; ++k) {
      double u = rng.uniform(), v = rng.uniform();
      if (st.grid) {
        u = std::round(u * (st.grid - 1)) / (st.grid - 1);
        v = std::round(v * (st.grid - 1)) / (st.grid - 1);
      }
      p.push_back({st.margin + (1 - 2 * st.margin) * u, st.margin + (1 - 2 * st.margin) * v});
    }
    if (st.closed && p.size() > 2) p.push_back(p.front());
    for (int r = 0; r < st.smooth; ++r) p = chaikin(p);
    tmpl.push_back(std::move(p));
  }
  if (st.mirror) {
    std::size_t n = tmpl.size();
    for (std::size_t i = 0; i < n; ++i) {
      Polyline q;
      for (const auto& pt : tmpl[i]) q.push_back({1.0 - pt.x, pt.y});
      tmpl.push_back(std::move(q));
    }
  }
  return tmpl;
}

void write_omniglot_like(const std::string& root, std::uint64_t seed, int classes,
                         int instances) {
  Rng rng(seed);
  const int per_alphabet = 40;
  for (int c = 0; c < classes; ++c) {
    int alphabet = c / per_alphabet;
    char dir[64], ch[64];
    std::snprintf(dir, sizeof dir, "alphabet%03d", alphabet);
    std::snprintf(ch, sizeof ch, "character%04d", c);
    fs::path cd = fs::path(root) / "omniglot" / dir / ch;
    fs::create_directories(cd);
    // Class identity: a fixed stroke composition drawn from its alphabet's
    // style grammar.
    AlphabetStyle st =
        alphabet_style(rng.substream("omniglot-alphabet", static_cast<std::uint64_t>(alphabet)));
    Rng class_rng = rng.substream("omniglot-class", static_cast<std::uint64_t>(c));
    std::vector<Polyline> tmpl = glyph_template(st, class_rng);
    Rng inst_rng = rng.substream("omniglot-inst", static_cast<std::uint64_t>(c));
    Jitter glyph = handwriting_jitter();
    for (int i = 0; i < instances; ++i) {
      auto img = render_u8(jitter_strokes(tmpl, inst_rng, glyph), inst_rng, 28,
                           glyph.pixel_noise, st.th_lo, st.th_hi);
      char name[16];
      std::snprintf(name, sizeof name, "%02d.pgm", i);
      write_pgm((cd / name).string(), img, 28);
    }
  }
}

namespace {

// Class-conditional 32x32 RGB texture. Classes come in "families" so the
// probe-task similarity structure of the CIFAR-10 label set is reflected:
// vehicles (0,1,8,9) share a family, animals (2,3,...) another.
struct TextureClass {
  double base_r, base_g, base_b;
  double fx, fy, phase_scale;
  double blob_amp;
};

TextureClass texture_class(int family, int variant, Rng& rng) {
  TextureClass t;
  if (family == 0) {  // vehicle-like: smooth, rectilinear, bluish-grey
    t.base_r = 0.35 + 0.1 * rng.uniform();
    t.base_g = 0.4 + 0.1 * rng.uniform();
    t.base_b = 0.55 + 0.15 * rng.uniform();
    t.fx = 1.0 + variant * 0.5 + rng.uniform();
    t.fy = 0.5 + rng.uniform() * 0.5;
    t.blob_amp = 0.25;
  } else if (family == 1) {  // animal-like: warm, high-frequency
    t.base_r = 0.5 + 0.2 * rng.uniform();
    t.base_g = 0.35 + 0.15 * rng.uniform();
    t.base_b = 0.2 + 0.1 * rng.uniform();
    t.fx = 3.0 + variant + rng.uniform() * 2.0;
    t.fy = 3.0 + rng.uniform() * 2.0;
    t.blob_amp = 0.5;
  } else {  // neutral
    t.base_r = 0.3 + 0.4 * rng.uniform();
    t.base_g = 0.3 + 0.4 * rng.uniform();
    t.base_b = 0.3 + 0.4 * rng.uniform();
    t.fx = 1.0 + rng.uniform() * 4.0;
    t.fy = 1.0 + rng.uniform() * 4.0;
    t.blob_amp = 0.35;
  }
  t.phase_scale = rng.uniform() * 2 * kPi;
  return t;
}

std::vector<std::uint8_t> render_texture(const TextureClass& t, Rng& rng) {
  const int n = 32;
  double phase = rng.uniform() * 2 * kPi;
  double cx = 8 + rng.uniform() * 16, cy = 8 + rng.uniform() * 16;
  double rad = 4 + rng.uniform() * 6;
  std::vector<std::uint8_t> out(3 * n * n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      double wave = 0.5 + 0.5 * std::sin(t.fx * x * 2 * kPi / n + t.phase_scale) *
                              std::cos(t.fy * y * 2 * kPi / n + phase);
      double d = std::hypot(x - cx, y - cy);
      double blob = t.blob_amp * std::exp(-d * d / (2 * rad * rad));
      double base[3] = {t.base_r, t.base_g, t.base_b};
      for (int c = 0; c < 3; ++c) {
        double v = base[c] * (0.55 + 0.45 * wave) + blob + rng.normal() * 0.03;
        out[static_cast<std::size_t>(c) * n * n + y * n + x] =
            static_cast<std::uint8_t>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
      }
    }
  return out;
}

void write_cifar_records(const std::string& path, const std::vector<TextureClass>& classes,
                         int per_class, Rng& rng, bool coarse_byte) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  std::vector<std::pair<int, std::vector<std::uint8_t>>> records;
  for (int c = 0; c < static_cast<int>(classes.size()); ++c)
    for (int i = 0; i < per_class; ++i) records.emplace_back(c, render_texture(classes[c], rng));
  rng.shuffle(records);
  for (auto& [label, img] : records) {
    if (coarse_byte) {
      std::uint8_t coarse = static_cast<std::uint8_t>(label / 5);
      f.write(reinterpret_cast<char*>(&coarse), 1);
    }
    std::uint8_t fine = static_cast<std::uint8_t>(label);
    f.write(reinterpret_cast<char*>(&fine), 1);
    f.write(reinterpret_cast<const char*>(img.data()), img.size());
  }
}

}  // namespace

void write_cifar_like(const std::string& root, std::uint64_t seed, int c10_train_per_class,
                      int c10_test_per_class, int c100_train_per_class,
                      int c100_test_per_class) {
  fs::create_directories(fs::path(root) / "cifar10");
  fs::create_directories(fs::path(root) / "cifar100");
  Rng rng(seed);

  // CIFAR-10 label set: vehicles at 0,1,8,9; animals elsewhere.
  std::vector<TextureClass> c10;
  Rng crng = rng.substream("cifar10-classes");
  for (int c = 0; c < 10; ++c) {
    int family = (c <= 1 || c >= 8) ? 0 : 1;
    int variant = (c <= 1) ? c : (c >= 8 ? c - 6 : c - 2);
    c10.push_back(texture_class(family, variant, crng));
  }
  std::vector<TextureClass> c100;
  Rng crng2 = rng.substream("cifar100-classes");
  for (int c = 0; c < 50; ++c)
    c100.push_back(texture_class(static_cast<int>(crng2.uniform_int(3)), c % 7, crng2));

  Rng r10 = rng.substream("cifar10-images");
  write_cifar_records((fs::path(root) / "cifar10" / "data_batch_1.bin").string(), c10,
                      c10_train_per_class, r10, false);
  write_cifar_records((fs::path(root) / "cifar10" / "test_batch.bin").string(), c10,
                      c10_test_per_class, r10, false);
  Rng r100 = rng.substream("cifar100-images");
  write_cifar_records((fs::path(root) / "cifar100" / "train.bin").string(), c100,
                      c100_train_per_class, r100, true);
  write_cifar_records((fs::path(root) / "cifar100" / "test.bin").string(), c100,
                      c100_test_per_class, r100, true);
}

void write_all(const std::string& root, std::uint64_t seed, bool reduced_scale) {
  if (reduced_scale) {
    write_mnist_like(root, seed, 400, 100);
    write_omniglot_like(root, seed, 140, 20);
    write_cifar_like(root, seed, 80, 20, 30, 10);
  } else {
    write_mnist_like(root, seed);
    write_omniglot_like(root, seed);
    write_cifar_like(root, seed);
  }
  data::Manifest m;
  m.name = reduced_scale ? "synthetic-reduced" : "synthetic";
  const char* files[] = {
      "mnist/train-images-idx3-ubyte", "mnist/train-labels-idx1-ubyte",
      "mnist/t10k-images-idx3-ubyte",  "mnist/t10k-labels-idx1-ubyte",
      "cifar10/data_batch_1.bin",      "cifar10/test_batch.bin",
      "cifar100/train.bin",            "cifar100/test.bin"};
  for (const char* f : files)
    m.files.push_back({f, data::file_checksum((fs::path(root) / f).string())});
  data::save_manifest(root, m);
}

}  // namespace sam::synth
