#pragma once

#include <string>
#include <vector>

#include "sam/nn.hpp"

namespace sam::viz {

// Side length of the square grid holding n values (ceil square root).
int grid_side(int n);

// Min-max scales `v` to 8-bit and writes a text portable graymap, padding to
// a full square with `pad` (scaled like a data value).
void write_panel_pgm(const std::string& path, const std::vector<float>& v, float pad = 0.0f);

// Fraction of values strictly below 10% of the vector's maximum. Higher means
// sparser post-recalibration activity.
double sparsity(const std::vector<float>& v);

// Writes pre / gate / post panels plus a raw-values CSV for every attention
// block captured in `probe`; files land in dir as
// <tag>_sample<k>_block<b>_{pre,gate,post}.pgm and <tag>_sample<k>.csv.
void write_probe(const std::string& dir, const std::string& tag, int sample_index,
                 const nn::Probe<float>& probe);

}  // namespace sam::viz
