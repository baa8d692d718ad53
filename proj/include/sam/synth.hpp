#pragma once

#include <cstdint>
#include <string>

namespace sam::synth {

// Deterministic procedurally generated stand-in corpora, written in the
// exact on-disk formats of the real datasets (IDX, CIFAR binary records,
// image-directory tree) plus a manifest with checksums. Intended for smoke
// runs and environments where the real corpora are not present; the loaders
// cannot tell the difference.

// Handwritten-digit-like IDX files under <root>/mnist/.
void write_mnist_like(const std::string& root, std::uint64_t seed,
                      int train_per_class = 6000, int test_per_class = 1000);

// Stroke-glyph classes under <root>/omniglot/<alphabet>/<character>/*.pgm.
void write_omniglot_like(const std::string& root, std::uint64_t seed,
                         int classes = 1623, int instances = 20);

// CIFAR-shaped binary files under <root>/cifar10/ and <root>/cifar100/.
// Per-class counts are configurable; full-scale files are large.
void write_cifar_like(const std::string& root, std::uint64_t seed,
                      int c10_train_per_class = 500, int c10_test_per_class = 100,
                      int c100_train_per_class = 100, int c100_test_per_class = 20);

// All three corpora plus the manifest.
void write_all(const std::string& root, std::uint64_t seed, bool reduced_scale = false);

}  // namespace sam::synth
