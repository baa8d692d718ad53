#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sam/random.hpp"
#include "sam/tensor.hpp"

namespace sam::data {

// One labeled image collection, pixels scaled to [0,1] (normalization, when
// any, is applied on top and recorded in the manifest).
struct ImageSet {
  int count = 0;
  int channels = 1, rows = 0, cols = 0;
  std::vector<float> pixels;  // count * channels*rows*cols
  std::vector<int> labels;    // count

  int image_size() const { return channels * rows * cols; }
  const float* image(int i) const { return pixels.data() + static_cast<std::size_t>(i) * image_size(); }
};

// Raw IDX container contents (big-endian header already decoded).
struct IdxData {
  std::uint32_t magic = 0;
  std::vector<int> dims;
  std::vector<std::uint8_t> bytes;
};

// Parses an IDX file; accepts image (magic 2051) and label (magic 2049)
// containers and reports corrupt input with byte offsets.
IdxData load_idx(const std::string& path);

ImageSet load_mnist(const std::string& images_path, const std::string& labels_path);

// CIFAR-10 binary batches (1 label byte + 3072 pixel bytes per record) or
// CIFAR-100 (coarse + fine label bytes + 3072). Multiple files concatenate.
ImageSet load_cifar(const std::vector<std::string>& paths, int variant);

// Per-class image sets from an image-directory tree: root/<alphabet>/<character>/
// holds one class. Images are portable graymaps, resized to 28x28 by area
// averaging; classes are enumerated in sorted path order.
struct ClassImages {
  int rows = 28, cols = 28;
  std::vector<std::string> class_names;
  std::vector<std::vector<std::vector<float>>> images;  // [class][instance][pixels]
  std::vector<std::string> warnings;                    // odd instance counts etc.

  int num_classes() const { return static_cast<int>(images.size()); }
};

ClassImages load_omniglot(const std::string& root);

// Seeded meta-train / meta-test partition of the class list.
struct ClassSplit {
  std::vector<int> train_classes, test_classes;
};
ClassSplit split_classes(int num_classes, int num_train, std::uint64_t seed);

// ---- continual-learning sequences -----------------------------------------

struct TaskDataset {
  int id = 0;
  int nclasses = 0;
  std::vector<int> global_labels;  // local index -> global class id
  std::vector<float> train_x, test_x;
  std::vector<int> train_y, test_y;  // local labels, dense 0..k-1
  Shape input_shape;

  int input_dim() const {
    int n = 1;
    for (int d : input_shape) n *= d;
    return n;
  }
  int train_count() const { return static_cast<int>(train_y.size()); }
  int test_count() const { return static_cast<int>(test_y.size()); }
};

struct CLSequence {
  std::vector<TaskDataset> tasks;
  Shape input_shape;
  int total_classes = 0;
};

// Split MNIST: five two-class tasks over consecutive digit pairs.
CLSequence make_split_mnist(const ImageSet& train, const ImageSet& test);

// Split CIFAR-10/100: task 1 = all of CIFAR-10, tasks 2..6 = consecutive
// 10-class chunks of CIFAR-100. Normalization constants come from the task-1
// training set and are returned through `mean`/`stddev` when non-null.
CLSequence make_split_cifar(const ImageSet& c10_train, const ImageSet& c10_test,
                            const ImageSet& c100_train, const ImageSet& c100_test,
                            std::vector<float>* mean = nullptr,
                            std::vector<float>* stddev = nullptr);

// Two-class probe tasks from CIFAR-10 for the forward-transfer analysis:
// {airplane, automobile}, {bird, cat}, {ship, truck}.
std::vector<TaskDataset> make_fwt_probes(const ImageSet& c10_train, const ImageSet& c10_test);

// Keeps at most n_train/n_test examples per class (reduced-scale smoke runs).
TaskDataset subsample_task(const TaskDataset& t, int n_train, int n_test, Rng& rng);

// Order-sensitive content hash of a sequence, for determinism checks.
std::uint64_t sequence_hash(const CLSequence& seq);

// ---- dataset root + manifest ----------------------------------------------

// Layout under a dataset root directory:
//   mnist/train-images-idx3-ubyte, mnist/train-labels-idx1-ubyte, ... (t10k)
//   cifar10/data_batch_{1..5}.bin, cifar10/test_batch.bin
//   cifar100/train.bin, cifar100/test.bin
//   omniglot/<alphabet>/<character>/*.pgm
//   manifest.json
struct Manifest {
  struct FileEntry {
    std::string path;  // relative to root
    std::uint64_t checksum = 0;
  };
  std::string name;
  std::vector<FileEntry> files;
  std::vector<float> cifar_mean, cifar_std;
  std::string normalization = "unit-range";
};

std::uint64_t file_checksum(const std::string& path);
Manifest load_manifest(const std::string& root);
void save_manifest(const std::string& root, const Manifest& m);
// Verifies every listed file's checksum; throws IoError naming the first bad file.
void verify_manifest(const std::string& root, const Manifest& m);

// Resolves the dataset root: explicit value, else SAM_DATA_ROOT, else "data".
std::string resolve_data_root(const std::string& configured);

ImageSet load_mnist_split(const std::string& root, bool train);
ImageSet load_cifar_split(const std::string& root, int variant, bool train);

}  // namespace sam::data
