#include "ascl/numerics.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "ascl/error.h"

namespace ascl {

namespace {

void require_finite(std::span<const double> values, const char* what) {
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
            throw NumericError(std::string(what) + ": non-finite value at flat index " + std::to_string(i));
        }
    }
}

void require_same_shape(const Mat& a, const Mat& b, const char* what) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(what) + ": " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                         " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
}

} // namespace

Mat::Mat(std::size_t rows, std::size_t cols, double fill) : rows_(rows), cols_(cols), data_(rows * cols, fill) {
    require_finite({&fill, 1}, "Mat fill");
}

Mat::Mat(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw ShapeError("Mat: data length " + std::to_string(data_.size()) + " != " + std::to_string(rows_) + "*" +
                         std::to_string(cols_));
    }
    require_finite(data_, "Mat");
}

Mat::Mat(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
        if (r.size() != cols_) throw ShapeError("Mat: ragged initializer");
        data_.insert(data_.end(), r.begin(), r.end());
    }
    require_finite(data_, "Mat");
}

Mat Mat::identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Mat Mat::row_vector(std::span<const double> values) {
    return Mat(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

void Mat::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Mat::check_finite(const char* what) const { require_finite(data_, what); }

Mat& Mat::operator+=(const Mat& other) {
    require_same_shape(*this, other, "Mat +=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
}

Mat& Mat::operator-=(const Mat& other) {
    require_same_shape(*this, other, "Mat -=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
    return *this;
}

Mat& Mat::operator*=(double s) {
    for (double& x : data_) x *= s;
    return *this;
}

Mat operator+(Mat a, const Mat& b) { return a += b; }
Mat operator-(Mat a, const Mat& b) { return a -= b; }
Mat operator*(Mat a, double s) { return a *= s; }

Mat transpose(const Mat& a) {
    Mat t(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    return t;
}

Mat matmul(const Mat& a, const Mat& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner dimensions " + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()));
    }
    Mat out(a.rows(), b.cols());
    const std::size_t n = b.cols();
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double* o = out.row(i).data();
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            const double* br = b.row(k).data();
            for (std::size_t j = 0; j < n; ++j) o[j] += aik * br[j];
        }
    }
    return out;
}

void add_matmul_tn(Mat& out, const Mat& a, const Mat& b) {
    if (a.rows() != b.rows() || out.rows() != a.cols() || out.cols() != b.cols()) {
        throw ShapeError("add_matmul_tn: incompatible shapes");
    }
    const std::size_t n = b.cols();
    for (std::size_t r = 0; r < a.rows(); ++r) {
        const double* ar = a.row(r).data();
        const double* br = b.row(r).data();
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double ai = ar[i];
            if (ai == 0.0) continue;
            double* o = out.row(i).data();
            for (std::size_t j = 0; j < n; ++j) o[j] += ai * br[j];
        }
    }
}

Mat matmul_tn(const Mat& a, const Mat& b) {
    Mat out(a.cols(), b.cols());
    add_matmul_tn(out, a, b);
    return out;
}

Mat matmul_nt(const Mat& a, const Mat& b) {
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_nt: column counts " + std::to_string(a.cols()) + " vs " + std::to_string(b.cols()));
    }
    Mat out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
    return out;
}

std::vector<double> column_mean(const Mat& a) {
    std::vector<double> mean(a.cols(), 0.0);
    if (a.rows() == 0) return mean;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const auto r = a.row(i);
        for (std::size_t j = 0; j < a.cols(); ++j) mean[j] += r[j];
    }
    const double inv = 1.0 / static_cast<double>(a.rows());
    for (double& m : mean) m *= inv;
    return mean;
}

std::vector<double> matvec_t(const Mat& a, std::span<const double> x) {
    if (x.size() != a.rows()) throw ShapeError("matvec_t: vector length mismatch");
    std::vector<double> y(a.cols(), 0.0);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double xi = x[i];
        const auto r = a.row(i);
        for (std::size_t j = 0; j < a.cols(); ++j) y[j] += xi * r[j];
    }
    return y;
}

double dot(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw ShapeError("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

double norm(std::span<const double> x) { return std::sqrt(dot(x, x)); }

double frobenius_norm(const Mat& a) { return norm(a.values()); }

double max_abs_diff(const Mat& a, const Mat& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
    return m;
}

double cosine(std::span<const double> x, std::span<const double> y) {
    const double nx = norm(x);
    const double ny = norm(y);
    if (nx == 0.0 || ny == 0.0) throw DegenerateVector("cosine: zero-norm input");
    return std::clamp(dot(x, y) / (nx * ny), -1.0, 1.0);
}

Mat softmax_rows(const Mat& logits, double temperature) {
    if (!(temperature > 0.0)) throw ConfigError("softmax_rows: temperature must be > 0");
    Mat out(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        const auto in = logits.row(i);
        auto o = out.row(i);
        if (in.empty()) continue;
        const double mx = *std::max_element(in.begin(), in.end());
        double sum = 0.0;
        for (std::size_t j = 0; j < in.size(); ++j) {
            o[j] = std::exp((in[j] - mx) / temperature);
            sum += o[j];
        }
        for (double& v : o) v /= sum;
    }
    return out;
}

Mat sdp_attention(const Mat& q, const Mat& k, const Mat& v) {
    if (q.cols() != k.cols()) throw ShapeError("sdp_attention: Q and K column counts differ");
    if (k.rows() != v.rows()) throw ShapeError("sdp_attention: K and V row counts differ");
    Mat logits = matmul_nt(q, k);
    logits *= 1.0 / std::sqrt(static_cast<double>(q.cols()));
    return matmul(softmax_rows(logits), v);
}

AttentionGrads sdp_attention_backward(const Mat& q, const Mat& k, const Mat& v, const Mat& d_out) {
    if (q.cols() != k.cols() || k.rows() != v.rows()) throw ShapeError("sdp_attention_backward: shape mismatch");
    if (d_out.rows() != q.rows() || d_out.cols() != v.cols()) {
        throw ShapeError("sdp_attention_backward: upstream gradient shape mismatch");
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    Mat logits = matmul_nt(q, k);
    logits *= scale;
    const Mat weights = softmax_rows(logits);

    AttentionGrads g;
    g.dv = matmul_tn(weights, d_out);
    const Mat d_weights = matmul_nt(d_out, v);
    Mat d_logits(weights.rows(), weights.cols());
    for (std::size_t i = 0; i < weights.rows(); ++i) {
        const double inner = dot(weights.row(i), d_weights.row(i));
        for (std::size_t j = 0; j < weights.cols(); ++j) {
            d_logits(i, j) = weights(i, j) * (d_weights(i, j) - inner) * scale;
        }
    }
    g.dq = matmul(d_logits, k);
    g.dk = matmul_tn(d_logits, q);
    return g;
}

void adam_step(Mat& param, const Mat& grad, AdamState& state, const AdamConfig& config, long step) {
    require_same_shape(param, grad, "adam_step grad");
    require_same_shape(param, state.m, "adam_step first moment");
    require_same_shape(param, state.v, "adam_step second moment");
    if (step < 1) throw ConfigError("adam_step: step count must be >= 1");

    const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
    auto p = param.values();
    auto m = state.m.values();
    auto v = state.v.values();
    const auto g = grad.values();
    for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
        v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
        const double m_hat = m[i] / c1;
        const double v_hat = v[i] / c2;
        p[i] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
}

Mat finite_diff_grad(const std::function<double(const Mat&)>& f, const Mat& at, double h) {
    if (!(h > 0.0)) throw ConfigError("finite_diff_grad: step must be > 0");
    Mat grad(at.rows(), at.cols());
    Mat probe = at;
    for (std::size_t i = 0; i < at.size(); ++i) {
        const double x = at.values()[i];
        probe.values()[i] = x + h;
        const double up = f(probe);
        probe.values()[i] = x - h;
        const double down = f(probe);
        probe.values()[i] = x;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw NumericError("finite_diff_grad: non-finite function value at flat index " + std::to_string(i));
        }
        grad.values()[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

double max_relative_error(const Mat& analytic, const Mat& numeric, double floor) {
    require_same_shape(analytic, numeric, "max_relative_error");
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double a = analytic.values()[i];
        const double n = numeric.values()[i];
        const double denom = std::max({std::abs(a), std::abs(n), floor});
        worst = std::max(worst, std::abs(a - n) / denom);
    }
    return worst;
}

} // namespace ascl
