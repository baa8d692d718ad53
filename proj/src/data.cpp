#include "sam/data.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "nlohmann/json.hpp"
#include "sam/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace sam::data {

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file: " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

std::uint32_t be32(const std::uint8_t* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

}  // namespace

IdxData load_idx(const std::string& path) {
  auto bytes = read_file(path);
  if (bytes.size() < 4)
    throw IoError("IDX file truncated in header (offset 0): " + path);
  IdxData out;
  out.magic = be32(bytes.data());
  int ndims;
  if (out.magic == 2051)
    ndims = 3;
  else if (out.magic == 2049)
    ndims = 1;
  else
    throw IoError("bad IDX magic " + std::to_string(out.magic) + " in " + path +
                  " (expected 2051 for images or 2049 for labels)");
  std::size_t header = 4 + 4ull * ndims;
  if (bytes.size() < header)
    throw IoError("IDX file truncated in dimension table (offset " +
                  std::to_string(bytes.size()) + " of " + std::to_string(header) +
                  "): " + path);
  std::size_t payload = 1;
  for (int d = 0; d < ndims; ++d) {
    out.dims.push_back(static_cast<int>(be32(bytes.data() + 4 + 4ull * d)));
    payload *= static_cast<std::size_t>(out.dims.back());
  }
  if (bytes.size() != header + payload)
    throw IoError("IDX payload size mismatch in " + path + ": have " +
                  std::to_string(bytes.size() - header) + " bytes at offset " +
                  std::to_string(header) + ", expected " + std::to_string(payload));
  out.bytes.assign(bytes.begin() + header, bytes.end());
  return out;
}

ImageSet load_mnist(const std::string& images_path, const std::string& labels_path) {
  IdxData img = load_idx(images_path);
  IdxData lab = load_idx(labels_path);
  if (img.magic != 2051) throw IoError("not an IDX image file: " + images_path);
  if (lab.magic != 2049) throw IoError("not an IDX label file: " + labels_path);
  if (img.dims[0] != lab.dims[0])
    throw IoError("image/label count mismatch: " + std::to_string(img.dims[0]) + " vs " +
                  std::to_string(lab.dims[0]));
  ImageSet out;
  out.count = img.dims[0];
  out.rows = img.dims[1];
  out.cols = img.dims[2];
  out.channels = 1;
  out.pixels.resize(img.bytes.size());
  for (std::size_t i = 0; i < img.bytes.size(); ++i)
    out.pixels[i] = static_cast<float>(img.bytes[i]) / 255.0f;
  out.labels.assign(lab.bytes.begin(), lab.bytes.end());
  return out;
}

ImageSet load_cifar(const std::vector<std::string>& paths, int variant) {
  if (variant != 10 && variant != 100)
    throw ConfigError("CIFAR variant must be 10 or 100");
  const std::size_t pixel_bytes = 3072;
  const std::size_t record = (variant == 10 ? 1 : 2) + pixel_bytes;
  ImageSet out;
  out.channels = 3;
  out.rows = out.cols = 32;
  for (const auto& path : paths) {
    auto bytes = read_file(path);
    if (bytes.size() % record != 0)
      throw IoError("CIFAR record-length mismatch in " + path + ": " +
                    std::to_string(bytes.size()) + " bytes is not a multiple of " +
                    std::to_string(record) + " (fails at record " +
                    std::to_string(bytes.size() / record) + ")");
    std::size_t n = bytes.size() / record;
    for (std::size_t r = 0; r < n; ++r) {
      const std::uint8_t* p = bytes.data() + r * record;
      // CIFAR-100 carries coarse then fine label; the fine label is used.
      out.labels.push_back(variant == 10 ? p[0] : p[1]);
      const std::uint8_t* px = p + (variant == 10 ? 1 : 2);
      for (std::size_t k = 0; k < pixel_bytes; ++k)
        out.pixels.push_back(static_cast<float>(px[k]) / 255.0f);
    }
    out.count += static_cast<int>(n);
  }
  return out;
}

namespace {

// Minimal PGM reader (P5 binary or P2 ascii), values scaled to [0,1].
struct Gray {
  int rows = 0, cols = 0;
  std::vector<float> v;
};

Gray load_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5" && magic != "P2") throw IoError("unsupported image format in " + path);
  auto next_int = [&]() {
    int x;
    for (;;) {
      in >> std::ws;
      if (in.peek() == '#') {
        std::string line;
        std::getline(in, line);
        continue;
      }
      if (!(in >> x)) throw IoError("malformed header in " + path);
      return x;
    }
  };
  int w = next_int(), h = next_int(), maxv = next_int();
  Gray g;
  g.rows = h;
  g.cols = w;
  g.v.resize(static_cast<std::size_t>(w) * h);
  if (magic == "P5") {
    in.get();  // single whitespace after maxval
    std::vector<std::uint8_t> buf(g.v.size());
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in) throw IoError("truncated pixel data in " + path);
    for (std::size_t i = 0; i < buf.size(); ++i)
      g.v[i] = static_cast<float>(buf[i]) / static_cast<float>(maxv);
  } else {
    for (auto& x : g.v) {
      int p;
      if (!(in >> p)) throw IoError("truncated pixel data in " + path);
      x = static_cast<float>(p) / static_cast<float>(maxv);
    }
  }
  return g;
}

// Area-average resample to out x out.
std::vector<float> resize_to(const Gray& g, int out) {
  std::vector<float> r(static_cast<std::size_t>(out) * out, 0.0f);
  for (int i = 0; i < out; ++i) {
    int r0 = i * g.rows / out, r1 = std::max(r0 + 1, (i + 1) * g.rows / out);
    for (int j = 0; j < out; ++j) {
      int c0 = j * g.cols / out, c1 = std::max(c0 + 1, (j + 1) * g.cols / out);
      float acc = 0;
      for (int a = r0; a < r1; ++a)
        for (int b = c0; b < c1; ++b) acc += g.v[static_cast<std::size_t>(a) * g.cols + b];
      r[static_cast<std::size_t>(i) * out + j] = acc / static_cast<float>((r1 - r0) * (c1 - c0));
    }
  }
  return r;
}

}  // namespace

ClassImages load_omniglot(const std::string& root) {
  if (!fs::exists(root)) throw IoError("omniglot root not found: " + root);
  // One class per character directory, two levels below the root.
  std::vector<fs::path> class_dirs;
  for (const auto& alpha : fs::directory_iterator(root)) {
    if (!alpha.is_directory()) continue;
    for (const auto& ch : fs::directory_iterator(alpha.path()))
      if (ch.is_directory()) class_dirs.push_back(ch.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw IoError("no character directories under " + root);
  ClassImages out;
  for (const auto& dir : class_dirs) {
    std::vector<fs::path> files;
    for (const auto& f : fs::directory_iterator(dir))
      if (f.is_regular_file()) files.push_back(f.path());
    std::sort(files.begin(), files.end());
    std::vector<std::vector<float>> imgs;
    for (const auto& f : files) imgs.push_back(resize_to(load_pgm(f.string()), out.rows));
    if (imgs.size() != 20)
      out.warnings.push_back(dir.string() + " has " + std::to_string(imgs.size()) +
                             " instances (expected 20); included anyway");
    out.class_names.push_back(fs::relative(dir, root).string());
    out.images.push_back(std::move(imgs));
  }
  return out;
}

ClassSplit split_classes(int num_classes, int num_train, std::uint64_t seed) {
  if (num_train > num_classes) throw ConfigError("class split larger than class count");
  std::vector<int> order(num_classes);
  for (int i = 0; i < num_classes; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  ClassSplit out;
  out.train_classes.assign(order.begin(), order.begin() + num_train);
  out.test_classes.assign(order.begin() + num_train, order.end());
  std::sort(out.train_classes.begin(), out.train_classes.end());
  std::sort(out.test_classes.begin(), out.test_classes.end());
  return out;
}

namespace {

TaskDataset gather_task(int id, const std::vector<int>& classes, int global_base,
                        const ImageSet& train, const ImageSet& test) {
  TaskDataset t;
  t.id = id;
  t.nclasses = static_cast<int>(classes.size());
  if (train.channels == 1)
    t.input_shape = {train.rows * train.cols};
  else
    t.input_shape = {train.channels, train.rows, train.cols};
  for (int k = 0; k < t.nclasses; ++k) t.global_labels.push_back(global_base + k);
  auto scan = [&](const ImageSet& src, std::vector<float>& xs, std::vector<int>& ys) {
    for (int i = 0; i < src.count; ++i) {
      auto it = std::find(classes.begin(), classes.end(), src.labels[i]);
      if (it == classes.end()) continue;
      const float* p = src.image(i);
      xs.insert(xs.end(), p, p + src.image_size());
      ys.push_back(static_cast<int>(it - classes.begin()));
    }
  };
  scan(train, t.train_x, t.train_y);
  scan(test, t.test_x, t.test_y);
  return t;
}

}  // namespace

CLSequence make_split_mnist(const ImageSet& train, const ImageSet& test) {
  CLSequence seq;
  seq.input_shape = {train.rows * train.cols};
  for (int task = 0; task < 5; ++task) {
    std::vector<int> classes{2 * task, 2 * task + 1};
    seq.tasks.push_back(gather_task(task, classes, 2 * task, train, test));
  }
  seq.total_classes = 10;
  return seq;
}

CLSequence make_split_cifar(const ImageSet& c10_train, const ImageSet& c10_test,
                            const ImageSet& c100_train, const ImageSet& c100_test,
                            std::vector<float>* mean_out, std::vector<float>* std_out) {
  // Per-channel normalization fitted on the task-1 (CIFAR-10) training set.
  std::vector<float> mean(3, 0.0f), sd(3, 0.0f);
  const int px = c10_train.rows * c10_train.cols;
  std::size_t per_chan = static_cast<std::size_t>(c10_train.count) * px;
  for (int i = 0; i < c10_train.count; ++i) {
    const float* p = c10_train.image(i);
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < px; ++k) mean[c] += p[c * px + k];
  }
  for (int c = 0; c < 3; ++c) mean[c] /= static_cast<float>(per_chan);
  for (int i = 0; i < c10_train.count; ++i) {
    const float* p = c10_train.image(i);
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < px; ++k) {
        float d = p[c * px + k] - mean[c];
        sd[c] += d * d;
      }
  }
  for (int c = 0; c < 3; ++c) sd[c] = std::sqrt(sd[c] / static_cast<float>(per_chan)) + 1e-6f;
  if (mean_out) *mean_out = mean;
  if (std_out) *std_out = sd;

  auto normalize = [&](TaskDataset& t) {
    auto apply = [&](std::vector<float>& xs) {
      std::size_t n = xs.size() / (3 * px);
      for (std::size_t i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c)
          for (int k = 0; k < px; ++k) {
            float& v = xs[(i * 3 + c) * px + k];
            v = (v - mean[c]) / sd[c];
          }
    };
    apply(t.train_x);
    apply(t.test_x);
  };

  CLSequence seq;
  seq.input_shape = {3, c10_train.rows, c10_train.cols};
  {
    std::vector<int> classes(10);
    for (int i = 0; i < 10; ++i) classes[i] = i;
    seq.tasks.push_back(gather_task(0, classes, 0, c10_train, c10_test));
    normalize(seq.tasks.back());
  }
  for (int task = 1; task <= 5; ++task) {
    std::vector<int> classes(10);
    for (int i = 0; i < 10; ++i) classes[i] = (task - 1) * 10 + i;
    seq.tasks.push_back(gather_task(task, classes, 10 * task, c100_train, c100_test));
    normalize(seq.tasks.back());
  }
  seq.total_classes = 60;
  return seq;
}

std::vector<TaskDataset> make_fwt_probes(const ImageSet& c10_train, const ImageSet& c10_test) {
  // airplane=0, automobile=1, bird=2, cat=3, ship=8, truck=9
  std::vector<TaskDataset> out;
  out.push_back(gather_task(0, {0, 1}, 0, c10_train, c10_test));
  out.push_back(gather_task(1, {2, 3}, 2, c10_train, c10_test));
  out.push_back(gather_task(2, {8, 9}, 4, c10_train, c10_test));
  return out;
}

TaskDataset subsample_task(const TaskDataset& t, int n_train, int n_test, Rng& rng) {
  TaskDataset out;
  out.id = t.id;
  out.nclasses = t.nclasses;
  out.global_labels = t.global_labels;
  out.input_shape = t.input_shape;
  int dim = t.input_dim();
  auto pick = [&](const std::vector<float>& xs, const std::vector<int>& ys, int per_class,
                  std::vector<float>& ox, std::vector<int>& oy) {
    for (int c = 0; c < t.nclasses; ++c) {
      std::vector<int> idx;
      for (std::size_t i = 0; i < ys.size(); ++i)
        if (ys[i] == c) idx.push_back(static_cast<int>(i));
      rng.shuffle(idx);
      int keep = std::min<int>(per_class, static_cast<int>(idx.size()));
      for (int k = 0; k < keep; ++k) {
        const float* p = xs.data() + static_cast<std::size_t>(idx[k]) * dim;
        ox.insert(ox.end(), p, p + dim);
        oy.push_back(c);
      }
    }
  };
  pick(t.train_x, t.train_y, n_train, out.train_x, out.train_y);
  pick(t.test_x, t.test_y, n_test, out.test_x, out.test_y);
  return out;
}

std::uint64_t sequence_hash(const CLSequence& seq) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const void* p, std::size_t n) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& t : seq.tasks) {
    mix(t.train_x.data(), t.train_x.size() * sizeof(float));
    mix(t.train_y.data(), t.train_y.size() * sizeof(int));
    mix(t.test_x.data(), t.test_x.size() * sizeof(float));
    mix(t.test_y.data(), t.test_y.size() * sizeof(int));
  }
  return h;
}

std::uint64_t file_checksum(const std::string& path) {
  auto bytes = read_file(path);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

Manifest load_manifest(const std::string& root) {
  std::ifstream in(fs::path(root) / "manifest.json");
  if (!in) throw IoError("manifest.json not found under " + root);
  json j = json::parse(in, nullptr, /*allow_exceptions=*/true);
  Manifest m;
  m.name = j.value("name", "");
  m.normalization = j.value("normalization", "unit-range");
  if (j.contains("cifar_mean")) m.cifar_mean = j["cifar_mean"].get<std::vector<float>>();
  if (j.contains("cifar_std")) m.cifar_std = j["cifar_std"].get<std::vector<float>>();
  for (const auto& f : j.value("files", json::array()))
    m.files.push_back({f.at("path").get<std::string>(),
                       std::stoull(f.at("checksum").get<std::string>(), nullptr, 16)});
  return m;
}

void save_manifest(const std::string& root, const Manifest& m) {
  json j;
  j["name"] = m.name;
  j["normalization"] = m.normalization;
  if (!m.cifar_mean.empty()) j["cifar_mean"] = m.cifar_mean;
  if (!m.cifar_std.empty()) j["cifar_std"] = m.cifar_std;
  j["files"] = json::array();
  for (const auto& f : m.files) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(f.checksum));
    j["files"].push_back({{"path", f.path}, {"checksum", std::string(buf)}});
  }
  std::ofstream out(fs::path(root) / "manifest.json");
  out << j.dump(2) << "\n";
}

void verify_manifest(const std::string& root, const Manifest& m) {
  for (const auto& f : m.files) {
    std::string full = (fs::path(root) / f.path).string();
    std::uint64_t have = file_checksum(full);
    if (have != f.checksum)
      throw IoError("checksum mismatch for " + f.path + ": manifest says " +
                    std::to_string(f.checksum) + ", file has " + std::to_string(have));
  }
}

std::string resolve_data_root(const std::string& configured) {
  if (!configured.empty()) return configured;
  if (const char* env = std::getenv("SAM_DATA_ROOT")) return env;
  return "data";
}

ImageSet load_mnist_split(const std::string& root, bool train) {
  fs::path d = fs::path(root) / "mnist";
  std::string stem = train ? "train" : "t10k";
  return load_mnist((d / (stem + "-images-idx3-ubyte")).string(),
                    (d / (stem + "-labels-idx1-ubyte")).string());
}

ImageSet load_cifar_split(const std::string& root, int variant, bool train) {
  fs::path d = fs::path(root) / (variant == 10 ? "cifar10" : "cifar100");
  std::vector<std::string> files;
  if (variant == 10) {
    if (train) {
      for (int i = 1; i <= 5; ++i) {
        fs::path f = d / ("data_batch_" + std::to_string(i) + ".bin");
        if (fs::exists(f)) files.push_back(f.string());
      }
      if (files.empty()) throw IoError("no CIFAR-10 training batches under " + d.string());
    } else {
      files.push_back((d / "test_batch.bin").string());
    }
  } else {
    files.push_back((d / (train ? "train.bin" : "test.bin")).string());
  }
  return load_cifar(files, variant);
}

}  // namespace sam::data
