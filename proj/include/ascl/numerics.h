#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

namespace ascl {

// Dense row-major float64 matrix. Construction from explicit data rejects
// NaN/Inf; in-place writes through the mutable accessors are unchecked, so
// callers producing values from arithmetic use check_finite() at boundaries.
class Mat {
public:
    Mat() = default;
    Mat(std::size_t rows, std::size_t cols, double fill = 0.0);
    Mat(std::size_t rows, std::size_t cols, std::vector<double> data);
    Mat(std::initializer_list<std::initializer_list<double>> rows);

    static Mat identity(std::size_t n);
    static Mat row_vector(std::span<const double> values);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    void fill(double v);
    void set_zero() { fill(0.0); }
    bool same_shape(const Mat& other) const noexcept {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }

    // Throws NumericError naming `what` if any entry is NaN/Inf.
    void check_finite(const char* what) const;

    Mat& operator+=(const Mat& other);
    Mat& operator-=(const Mat& other);
    Mat& operator*=(double s);

    friend bool operator==(const Mat& a, const Mat& b) {
        return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Mat operator+(Mat a, const Mat& b);
Mat operator-(Mat a, const Mat& b);
Mat operator*(Mat a, double s);

Mat transpose(const Mat& a);
Mat matmul(const Mat& a, const Mat& b);     // a * b
Mat matmul_tn(const Mat& a, const Mat& b);  // a^T * b
Mat matmul_nt(const Mat& a, const Mat& b);  // a * b^T
// out += a^T * b, shapes checked.
void add_matmul_tn(Mat& out, const Mat& a, const Mat& b);

std::vector<double> column_mean(const Mat& a);
// y = A^T x for A (n x m), x (n).
std::vector<double> matvec_t(const Mat& a, std::span<const double> x);

double dot(std::span<const double> x, std::span<const double> y);
double norm(std::span<const double> x);
double frobenius_norm(const Mat& a);
double max_abs_diff(const Mat& a, const Mat& b);

// x^T y / (|x| |y|). Throws DegenerateVector on a zero-norm input.
double cosine(std::span<const double> x, std::span<const double> y);

// Row-wise softmax of logits / temperature with max subtraction.
Mat softmax_rows(const Mat& logits, double temperature = 1.0);

// softmax(Q K^T / sqrt(d)) V with d = Q.cols().
Mat sdp_attention(const Mat& q, const Mat& k, const Mat& v);

struct AttentionGrads {
    Mat dq;
    Mat dk;
    Mat dv;
};

// Backward of sdp_attention given upstream gradient d_out (Q.rows x V.cols).
AttentionGrads sdp_attention_backward(const Mat& q, const Mat& k, const Mat& v, const Mat& d_out);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    Mat m;
    Mat v;

    AdamState() = default;
    explicit AdamState(const Mat& like) : m(like.rows(), like.cols()), v(like.rows(), like.cols()) {}
};

// One bias-corrected Adam update; `step` is 1-based.
void adam_step(Mat& param, const Mat& grad, AdamState& state, const AdamConfig& config, long step);

// Central-difference gradient of a scalar function of a matrix.
Mat finite_diff_grad(const std::function<double(const Mat&)>& f, const Mat& at, double h);

// max_ij |a-b| / max(|a|, |b|, floor); the floor keeps near-zero entries from
// dominating.
double max_relative_error(const Mat& analytic, const Mat& numeric, double floor = 1e-6);

} // namespace ascl
