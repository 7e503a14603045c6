#pragma once

#include <Eigen/Dense>

#include <cstdint>

namespace hscl {

// Exact (O(N^2)) t-SNE to 2 dimensions. Fixed recipe: perplexity 30 (capped
// at (N-1)/3 for tiny inputs), 1000 gradient iterations, early exaggeration
// x12 for the first 250, learning rate 200, momentum 0.5 switching to 0.8 at
// iteration 250. Deterministic given the seed.
Eigen::MatrixXd tsne_2d(const Eigen::MatrixXd& points_cols,
                        std::uint64_t seed, double perplexity = 30.0,
                        int iterations = 1000);

}  // namespace hscl
