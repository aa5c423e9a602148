#include "pmetlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pmetlab {

namespace {

std::string dims_str(const std::vector<int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

void check_positive_dims(const std::vector<int64_t>& shape) {
    if (shape.empty() || shape.size() > 2)
        throw TensorError("tensor rank must be 1 or 2, got " + dims_str(shape));
    for (int64_t d : shape)
        if (d <= 0) throw TensorError("tensor dims must be positive, got " + dims_str(shape));
}

}  // namespace

Tensor Tensor::vector(int64_t n) {
    check_positive_dims({n});
    return Tensor({n}, std::vector<double>(static_cast<size_t>(n), 0.0));
}

Tensor Tensor::matrix(int64_t rows, int64_t cols) {
    check_positive_dims({rows, cols});
    return Tensor({rows, cols}, std::vector<double>(static_cast<size_t>(rows * cols), 0.0));
}

Tensor Tensor::from_vector(std::vector<double> values) {
    if (values.empty()) throw TensorError("from_vector: empty data");
    std::vector<int64_t> shape{static_cast<int64_t>(values.size())};
    return Tensor(std::move(shape), std::move(values));
}

Tensor Tensor::from_matrix(int64_t rows, int64_t cols, std::vector<double> values) {
    check_positive_dims({rows, cols});
    if (static_cast<int64_t>(values.size()) != rows * cols)
        throw TensorError("from_matrix: data length " + std::to_string(values.size()) +
                          " does not fill " + dims_str({rows, cols}));
    return Tensor({rows, cols}, std::move(values));
}

int64_t Tensor::rows() const {
    if (shape_.empty()) return 0;
    return rank() == 1 ? 1 : shape_[0];
}

int64_t Tensor::cols() const {
    if (shape_.empty()) return 0;
    return rank() == 1 ? shape_[0] : shape_[1];
}

double& Tensor::at(int64_t i) {
    if (i < 0 || i >= size()) throw TensorError("index " + std::to_string(i) + " out of range for " + shape_str());
    return data_[static_cast<size_t>(i)];
}

double Tensor::at(int64_t i) const {
    if (i < 0 || i >= size()) throw TensorError("index " + std::to_string(i) + " out of range for " + shape_str());
    return data_[static_cast<size_t>(i)];
}

double& Tensor::at(int64_t r, int64_t c) {
    if (r < 0 || r >= rows() || c < 0 || c >= cols())
        throw TensorError("index (" + std::to_string(r) + "," + std::to_string(c) + ") out of range for " + shape_str());
    return data_[static_cast<size_t>(r * cols() + c)];
}

double Tensor::at(int64_t r, int64_t c) const {
    if (r < 0 || r >= rows() || c < 0 || c >= cols())
        throw TensorError("index (" + std::to_string(r) + "," + std::to_string(c) + ") out of range for " + shape_str());
    return data_[static_cast<size_t>(r * cols() + c)];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

std::string Tensor::shape_str() const { return dims_str(shape_); }

namespace {

void require_matmul_shapes(const Tensor& a, const Tensor& b, int64_t a_inner, int64_t b_inner,
                           const char* name) {
    if (a.size() == 0 || b.size() == 0) throw TensorError(std::string(name) + ": empty operand");
    if (a_inner != b_inner)
        throw TensorError(std::string(name) + ": inner dims mismatch " + a.shape_str() + " vs " +
                          b.shape_str());
}

}  // namespace

void addmm_nn(Tensor& out, const Tensor& a, const Tensor& b) {
    require_matmul_shapes(a, b, a.cols(), b.rows(), "matmul");
    if (out.rows() != a.rows() || out.cols() != b.cols())
        throw TensorError("matmul: output shape " + out.shape_str() + " does not fit " +
                          a.shape_str() + " x " + b.shape_str());
    const int64_t m = a.rows(), k = a.cols(), n = b.cols();
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a.row(i);
        double* orow = out.row(i);
        for (int64_t p = 0; p < k; ++p) detail::axpy_n(orow, arow[p], b.row(p), n);
    }
}

void addmm_nt(Tensor& out, const Tensor& a, const Tensor& b) {
    require_matmul_shapes(a, b, a.cols(), b.cols(), "matmul_nt");
    if (out.rows() != a.rows() || out.cols() != b.rows())
        throw TensorError("matmul_nt: output shape " + out.shape_str() + " does not fit " +
                          a.shape_str() + " x " + b.shape_str() + "T");
    const int64_t m = a.rows(), k = a.cols(), n = b.rows();
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = a.row(i);
        double* orow = out.row(i);
        for (int64_t j = 0; j < n; ++j) orow[j] += detail::dot_n(arow, b.row(j), k);
    }
}

void addmm_tn(Tensor& out, const Tensor& a, const Tensor& b) {
    require_matmul_shapes(a, b, a.rows(), b.rows(), "matmul_tn");
    if (out.rows() != a.cols() || out.cols() != b.cols())
        throw TensorError("matmul_tn: output shape " + out.shape_str() + " does not fit " +
                          a.shape_str() + "T x " + b.shape_str());
    const int64_t k = a.rows(), m = a.cols(), n = b.cols();
    for (int64_t p = 0; p < k; ++p) {
        const double* arow = a.row(p);
        const double* brow = b.row(p);
        for (int64_t i = 0; i < m; ++i) detail::axpy_n(out.row(i), arow[i], brow, n);
    }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matmul_shapes(a, b, a.cols(), b.rows(), "matmul");
    Tensor out = Tensor::matrix(a.rows(), b.cols());
    addmm_nn(out, a, b);
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    require_matmul_shapes(a, b, a.cols(), b.cols(), "matmul_nt");
    Tensor out = Tensor::matrix(a.rows(), b.rows());
    addmm_nt(out, a, b);
    return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    require_matmul_shapes(a, b, a.rows(), b.rows(), "matmul_tn");
    Tensor out = Tensor::matrix(a.cols(), b.cols());
    addmm_tn(out, a, b);
    return out;
}

Tensor transpose(const Tensor& a) {
    Tensor out = Tensor::matrix(a.cols(), a.rows());
    for (int64_t i = 0; i < a.rows(); ++i)
        for (int64_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
    return out;
}

Tensor solve_spd(const Tensor& a, const Tensor& b) {
    const int64_t d = a.rows();
    if (a.rank() != 2 || a.cols() != d)
        throw TensorError("solve_spd: A must be square, got " + a.shape_str());
    if (b.rows() != d)
        throw TensorError("solve_spd: B rows " + b.shape_str() + " do not match A " + a.shape_str());

    double max_entry = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) max_entry = std::max(max_entry, std::abs(a.at(i)));
    const double sym_tol = 1e-10 * std::max(1.0, max_entry);
    for (int64_t i = 0; i < d; ++i)
        for (int64_t j = i + 1; j < d; ++j)
            if (std::abs(a.at(i, j) - a.at(j, i)) > sym_tol)
                throw TensorError("solve_spd: A asymmetric at (" + std::to_string(i) + "," +
                                  std::to_string(j) + ") beyond 1e-10");

    // lower Cholesky factor, L·Lᵀ = A
    Tensor l = Tensor::matrix(d, d);
    for (int64_t i = 0; i < d; ++i) {
        for (int64_t j = 0; j <= i; ++j) {
            double s = a.at(i, j) - detail::dot_n(l.row(i), l.row(j), j);
            if (i == j) {
                if (!(s > 0.0))
                    throw TensorError("solve_spd: not positive-definite (pivot " +
                                      std::to_string(s) + " at row " + std::to_string(i) + ")");
                l.at(i, i) = std::sqrt(s);
            } else {
                l.at(i, j) = s / l.at(j, j);
            }
        }
    }

    const int64_t n = b.cols();
    Tensor x = (b.rank() == 1) ? Tensor::vector(d) : Tensor::matrix(d, n);
    // forward solve L·Y = B, then back solve Lᵀ·X = Y, column by column
    std::vector<double> col(static_cast<size_t>(d));
    for (int64_t c = 0; c < n; ++c) {
        for (int64_t i = 0; i < d; ++i) {
            double s = (b.rank() == 1) ? b.at(i) : b.at(i, c);
            s -= detail::dot_n(l.row(i), col.data(), i);
            col[static_cast<size_t>(i)] = s / l.at(i, i);
        }
        for (int64_t i = d - 1; i >= 0; --i) {
            double s = col[static_cast<size_t>(i)];
            for (int64_t r = i + 1; r < d; ++r) s -= l.at(r, i) * col[static_cast<size_t>(r)];
            col[static_cast<size_t>(i)] = s / l.at(i, i);
        }
        for (int64_t i = 0; i < d; ++i) {
            if (b.rank() == 1)
                x.at(i) = col[static_cast<size_t>(i)];
            else
                x.at(i, c) = col[static_cast<size_t>(i)];
        }
    }
    return x;
}

namespace detail {

void softmax_row(const double* x, int64_t n, double* out) {
    double mx = x[0];
    for (int64_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    double sum = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        out[i] = std::exp(x[i] - mx);
        sum += out[i];
    }
    for (int64_t i = 0; i < n; ++i) out[i] /= sum;
}

void log_softmax_row(const double* x, int64_t n, double* out) {
    double mx = x[0];
    for (int64_t i = 1; i < n; ++i) mx = std::max(mx, x[i]);
    double sum = 0.0;
    for (int64_t i = 0; i < n; ++i) sum += std::exp(x[i] - mx);
    const double lse = mx + std::log(sum);
    for (int64_t i = 0; i < n; ++i) out[i] = x[i] - lse;
}

void layernorm_row(const double* x, int64_t n, const double* gain, const double* bias,
                   double* out, double* mean_out, double* rstd_out) {
    double mean = 0.0;
    for (int64_t i = 0; i < n; ++i) mean += x[i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double c = x[i] - mean;
        var += c * c;
    }
    var /= static_cast<double>(n);
    const double rstd = 1.0 / std::sqrt(var + kLayernormEps);
    for (int64_t i = 0; i < n; ++i) out[i] = (x[i] - mean) * rstd * gain[i] + bias[i];
    if (mean_out) *mean_out = mean;
    if (rstd_out) *rstd_out = rstd;
}

}  // namespace detail

Tensor softmax(const Tensor& x) {
    if (x.rank() != 1) throw TensorError("softmax: expected rank-1 tensor, got " + x.shape_str());
    Tensor out = Tensor::vector(x.size());
    detail::softmax_row(x.data(), x.size(), out.data());
    return out;
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
    if (x.rank() != 1 || x.size() < 2)
        throw TensorError("layernorm: expected rank-1 tensor of dim >= 2, got " + x.shape_str());
    if (!gain.same_shape(x) || !bias.same_shape(x))
        throw TensorError("layernorm: gain/bias shape mismatch vs " + x.shape_str());
    Tensor out = Tensor::vector(x.size());
    detail::layernorm_row(x.data(), x.size(), gain.data(), bias.data(), out.data(), nullptr, nullptr);
    return out;
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* name) {
    if (!a.same_shape(b))
        throw TensorError(std::string(name) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = a;
    for (int64_t i = 0; i < out.size(); ++i) out.at(i) += b.at(i);
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = a;
    for (int64_t i = 0; i < out.size(); ++i) out.at(i) -= b.at(i);
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tensor out = a;
    for (int64_t i = 0; i < out.size(); ++i) out.at(i) *= s;
    return out;
}

void add_inplace(Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add_inplace");
    detail::axpy_n(a.data(), 1.0, b.data(), a.size());
}

void axpy_inplace(Tensor& a, double s, const Tensor& b) {
    require_same_shape(a, b, "axpy_inplace");
    detail::axpy_n(a.data(), s, b.data(), a.size());
}

double dot(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "dot");
    return detail::dot_n(a.data(), b.data(), a.size());
}

double norm2(const Tensor& a) { return std::sqrt(detail::dot_n(a.data(), a.data(), a.size())); }

double frobenius_norm(const Tensor& a) { return norm2(a); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.at(i) - b.at(i)));
    return m;
}

void assert_all_finite(const Tensor& t, const std::string& what) {
    for (int64_t i = 0; i < t.size(); ++i)
        if (!std::isfinite(t.at(i)))
            throw TensorError(what + ": non-finite entry at flat index " + std::to_string(i));
}

}  // namespace pmetlab
