#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace cilbench {

// Dense row-major double tensor. Shapes follow NCHW for activations,
// (out, in, kh, kw) for conv weights, (out, in) for linear weights.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) { resize(std::move(s)); }

    void resize(std::vector<int> s) {
        shape = std::move(s);
        data.assign(numel_of(shape), 0.0);
    }

    static size_t numel_of(const std::vector<int>& s) {
        size_t n = 1;
        for (int d : s) n *= static_cast<size_t>(d);
        return n;
    }

    size_t numel() const { return data.size(); }
    bool empty() const { return data.empty(); }

    double* ptr() { return data.data(); }
    const double* ptr() const { return data.data(); }

    double& operator[](size_t i) { return data[i]; }
    double operator[](size_t i) const { return data[i]; }

    void zero() { std::fill(data.begin(), data.end(), 0.0); }

    std::string shape_str() const {
        std::string s = "(";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + ")";
    }
};

// C[m,n] += A[m,k] * B[k,n], all row-major.
void gemm_acc(const double* a, const double* b, double* c, int m, int k, int n);

// C[m,n] += A^T[m,k] * B[k,n] where A is stored as [k,m].
void gemm_at_b_acc(const double* a, const double* b, double* c, int m, int k, int n);

// C[m,n] += A[m,k] * B^T[k,n] where B is stored as [n,k].
void gemm_a_bt_acc(const double* a, const double* b, double* c, int m, int k, int n);

}  // namespace cilbench
