#include "kgfuse/matrix.hpp"

#include <cmath>
#include <cstring>

#include "kgfuse/common.hpp"
#include "kgfuse/rng.hpp"

namespace kgfuse {

Mat normal_matrix(int rows, int cols, double stddev, SeededRng& rng) {
    Mat m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = stddev * rng.normal();
    return m;
}

bool all_finite(const Mat& m) {
    for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < m.cols(); ++c)
            if (!std::isfinite(m(r, c))) return false;
    return true;
}

std::vector<uint8_t> to_f32_bytes(const Mat& m) {
    std::vector<uint8_t> out(sizeof(float) * static_cast<size_t>(m.size()));
    size_t pos = 0;
    for (int r = 0; r < m.rows(); ++r) {
        for (int c = 0; c < m.cols(); ++c) {
            const float f = static_cast<float>(m(r, c));
            std::memcpy(out.data() + pos, &f, sizeof(float));
            pos += sizeof(float);
        }
    }
    return out;
}

Mat from_f32_bytes(const std::vector<uint8_t>& bytes, int rows, int cols) {
    const size_t want = sizeof(float) * static_cast<size_t>(rows) * static_cast<size_t>(cols);
    if (bytes.size() != want)
        throw Error("parameter payload size mismatch: got " + std::to_string(bytes.size()) +
                    " bytes, expected " + std::to_string(want));
    Mat m(rows, cols);
    size_t pos = 0;
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            float f;
            std::memcpy(&f, bytes.data() + pos, sizeof(float));
            pos += sizeof(float);
            m(r, c) = static_cast<double>(f);
        }
    }
    return m;
}

}  // namespace kgfuse
