#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

namespace dmad {

// Dense row-major tensor of doubles. All model math runs in float64 so that
// finite-difference checks are meaningful.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s);
    Tensor(std::vector<int> s, double fill);
    Tensor(std::vector<int> s, std::vector<double> d);

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

    std::size_t numel() const { return data.size(); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(shape.size()); }

    double& operator()(int i) { return data[static_cast<std::size_t>(i)]; }
    double operator()(int i) const { return data[static_cast<std::size_t>(i)]; }
    double& operator()(int i, int j) { return data[static_cast<std::size_t>(i) * shape[1] + j]; }
    double operator()(int i, int j) const { return data[static_cast<std::size_t>(i) * shape[1] + j]; }
    double& operator()(int c, int y, int x) {
        return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    double operator()(int c, int y, int x) const {
        return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
    }

    void fill(double v);
    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    bool all_finite() const;
};

std::size_t shape_numel(const std::vector<int>& shape);

double dot(const double* a, const double* b, std::size_t n);
double sq_dist(const double* a, const double* b, std::size_t n);
double l2_norm(const double* a, std::size_t n);

// Normalizes each row of a [K, C] matrix to unit L2 norm. Rows with norm
// below eps are left untouched.
void l2_normalize_rows_inplace(Tensor& m, double eps = 1e-12);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace dmad
