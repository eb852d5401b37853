#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace kgfuse {

// All in-memory math runs in double precision; checkpoints are float32.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class SeededRng;

Mat normal_matrix(int rows, int cols, double stddev, SeededRng& rng);

bool all_finite(const Mat& m);

// Row-major float32 little-endian image of the matrix, the checkpoint wire format.
std::vector<uint8_t> to_f32_bytes(const Mat& m);
Mat from_f32_bytes(const std::vector<uint8_t>& bytes, int rows, int cols);

}  // namespace kgfuse
