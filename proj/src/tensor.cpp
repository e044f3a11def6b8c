#include "dmad/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dmad {

std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw std::invalid_argument("negative tensor dimension");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

Tensor::Tensor(std::vector<int> s) : shape(std::move(s)), data(shape_numel(shape), 0.0) {}

Tensor::Tensor(std::vector<int> s, double fill_value)
    : shape(std::move(s)), data(shape_numel(shape), fill_value) {}

Tensor::Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != shape_numel(shape)) throw std::invalid_argument("tensor data/shape mismatch");
}

void Tensor::fill(double v) { std::fill(data.begin(), data.end(), v); }

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

double dot(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

double sq_dist(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

double l2_norm(const double* a, std::size_t n) { return std::sqrt(dot(a, a, n)); }

void l2_normalize_rows_inplace(Tensor& m, double eps) {
    if (m.ndim() != 2) throw std::invalid_argument("l2_normalize_rows: expected 2-d tensor");
    const int rows = m.dim(0), cols = m.dim(1);
    for (int r = 0; r < rows; ++r) {
        double* p = m.data.data() + static_cast<std::size_t>(r) * cols;
        const double n = l2_norm(p, static_cast<std::size_t>(cols));
        if (n > eps) {
            const double inv = 1.0 / n;
            for (int c = 0; c < cols; ++c) p[c] *= inv;
        }
    }
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::fabs(a.data[i] - b.data[i]));
    return m;
}

}  // namespace dmad
