#pragma once

#include <cassert>
#include <cstddef>
#include <vector>

namespace qlvm {

// Dense row-major matrix of doubles. Rows are packed contiguously.
struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

    double* row(int i) { return data.data() + static_cast<std::size_t>(i) * cols; }
    const double* row(int i) const { return data.data() + static_cast<std::size_t>(i) * cols; }

    double& operator()(int i, int j) {
        assert(i >= 0 && i < rows && j >= 0 && j < cols);
        return data[static_cast<std::size_t>(i) * cols + j];
    }
    double operator()(int i, int j) const {
        assert(i >= 0 && i < rows && j >= 0 && j < cols);
        return data[static_cast<std::size_t>(i) * cols + j];
    }

    std::size_t size() const { return data.size(); }

    void resize(int r, int c) {
        rows = r;
        cols = c;
        data.assign(static_cast<std::size_t>(r) * c, 0.0);
    }

    void zero() { std::fill(data.begin(), data.end(), 0.0); }
};

}  // namespace qlvm
