#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pmetlab {

struct TensorError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dense row-major f64 tensor, rank 1 or 2.
class Tensor {
  public:
    Tensor() = default;

    static Tensor vector(int64_t n);
    static Tensor matrix(int64_t rows, int64_t cols);
    static Tensor from_vector(std::vector<double> values);
    static Tensor from_matrix(int64_t rows, int64_t cols, std::vector<double> values);

    int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }
    const std::vector<int64_t>& shape() const { return shape_; }
    // rows()/cols() view any tensor as a matrix: a vector is [1×n]
    int64_t rows() const;
    int64_t cols() const;

    double& at(int64_t i);
    double at(int64_t i) const;
    double& at(int64_t r, int64_t c);
    double at(int64_t r, int64_t c) const;

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double* row(int64_t r) { return data_.data() + r * cols(); }
    const double* row(int64_t r) const { return data_.data() + r * cols(); }

    void fill(double v);
    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    std::string shape_str() const;

  private:
    Tensor(std::vector<int64_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {}
    std::vector<int64_t> shape_;
    std::vector<double> data_;
};

// a [m×k] · b [k×n] -> [m×n]
Tensor matmul(const Tensor& a, const Tensor& b);
// a [m×k] · bᵀ where b is [n×k] -> [m×n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// aᵀ · b where a is [k×m], b is [k×n] -> [m×n]
Tensor matmul_tn(const Tensor& a, const Tensor& b);

// Accumulating variants: out += product. Shapes must already match.
void addmm_nn(Tensor& out, const Tensor& a, const Tensor& b);
void addmm_nt(Tensor& out, const Tensor& a, const Tensor& b);
void addmm_tn(Tensor& out, const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& a);

// Solves A·X = B for symmetric positive-definite A via Cholesky.
// Throws TensorError if A is asymmetric beyond 1e-10 (relative to its largest
// entry) or the factorization hits a non-positive pivot.
Tensor solve_spd(const Tensor& a, const Tensor& b);

// Max-subtracted softmax of a rank-1 tensor.
Tensor softmax(const Tensor& x);
// (x − mean) / sqrt(var + 1e-5) ⊙ gain + bias, population variance.
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
void add_inplace(Tensor& a, const Tensor& b);
void axpy_inplace(Tensor& a, double s, const Tensor& b);  // a += s·b

double dot(const Tensor& a, const Tensor& b);
double norm2(const Tensor& a);            // Euclidean norm of all entries
double frobenius_norm(const Tensor& a);   // same value, matrix naming
double max_abs_diff(const Tensor& a, const Tensor& b);

// Throws TensorError naming `what` if any entry is NaN or Inf.
void assert_all_finite(const Tensor& t, const std::string& what);

constexpr double kLayernormEps = 1e-5;

namespace detail {

// four independent accumulators break the serial add dependence so the
// loop vectorizes; summation order differs from a naive loop by O(eps)
inline double dot_n(const double* __restrict a, const double* __restrict b, int64_t n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    int64_t i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

inline void axpy_n(double* __restrict y, double alpha, const double* __restrict x, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// softmax over a raw row, max-subtracted, writes probabilities to out
void softmax_row(const double* x, int64_t n, double* out);
// log-softmax over a raw row, numerically stable
void log_softmax_row(const double* x, int64_t n, double* out);
// layernorm over a raw row; reports mean and reciprocal std for backward
void layernorm_row(const double* x, int64_t n, const double* gain, const double* bias,
                   double* out, double* mean_out, double* rstd_out);

}  // namespace detail

}  // namespace pmetlab
