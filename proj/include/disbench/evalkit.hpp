#pragma once

#include <array>
#include <string>
#include <vector>

#include "disbench/mat.hpp"

namespace disbench {

// Rank-based AUROC (Mann-Whitney U with midranks for ties), in [0,1].
// Throws UndefinedMetric when only one class is present.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

// Majority vote among the k Euclidean-nearest training latents; vote ties go
// to label 0, distance ties at the k boundary break by training index.
// Returns percent correct.
double knn_accuracy(const Mat& train_z, const std::vector<int>& train_y, const Mat& test_z,
                    const std::vector<int>& test_y, int k = 30);

// Subspace-label kNN accuracy matrix (percent). Split models fill all four
// entries; shared-latent models expose only the two (z, label) entries.
struct ConfusionMatrix2x2 {
    bool shared = false;
    // split: [0]=(z1,y1) [1]=(z1,y2) [2]=(z2,y1) [3]=(z2,y2)
    // shared: [0]=(z,y1) [1]=(z,y2)
    std::array<double, 4> entries{};
};

ConfusionMatrix2x2 subspace_confusion(const Mat& train_z, const std::vector<int>& train_y1,
                                      const std::vector<int>& train_y2, const Mat& test_z,
                                      const std::vector<int>& test_y1,
                                      const std::vector<int>& test_y2, int d1, int d2,
                                      bool shared, int k = 30);

// Chance-normalized diagonal dominance: |diag - 50| mass over total |· - 50|
// mass, in [0,1]; 0.5 when the matrix is entirely at chance. Undefined for
// shared-latent matrices.
double diagonal_dominance(const ConfusionMatrix2x2& cm);

// Writes <base>.csv (header x,y,label) and <base>.svg (600x600 canvas, two
// marker colors, axes scaled to the data box plus a 5% margin). Deterministic
// byte-for-byte for identical inputs.
void scatter_export(const Mat& z1, const std::vector<int>& labels, const std::string& base_path);

}  // namespace disbench
