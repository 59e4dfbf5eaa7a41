#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace sanet {

class Rng;

/// Extent of a 4-D tensor in (batch, channels, rows, cols) order.
struct Shape {
    std::size_t n = 1;
    std::size_t c = 1;
    std::size_t h = 1;
    std::size_t w = 1;

    /// Total element count; throws std::overflow_error when n*c*h*w does not fit.
    std::size_t numel() const;
    std::size_t plane() const { return h * w; }

    bool operator==(const Shape&) const = default;
    std::string str() const;
};

/// Dense row-major (n, c, h, w) array of doubles.
///
/// Tensor4 is a plain value type. Arithmetic helpers below never mutate their
/// arguments; in-place element access exists for construction and for
/// parameter updates.
class Tensor4 {
public:
    Tensor4() = default;
    explicit Tensor4(Shape shape, double value = 0.0);
    Tensor4(Shape shape, std::vector<double> data);

    const Shape& shape() const { return shape_; }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    std::size_t index(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
        return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }
    double& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
        return data_[index(n, c, y, x)];
    }
    double at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
        return data_[index(n, c, y, x)];
    }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    /// Pointer to the start of plane (n, c).
    double* plane(std::size_t n, std::size_t c) { return data_.data() + index(n, c, 0, 0); }
    const double* plane(std::size_t n, std::size_t c) const { return data_.data() + index(n, c, 0, 0); }

    bool operator==(const Tensor4&) const = default;

private:
    Shape shape_{};
    std::vector<double> data_;
};

Tensor4 zeros(Shape shape);
Tensor4 fill(Shape shape, double value);

/// I.i.d. normal draws. Deterministic for a given Rng state on every platform.
Tensor4 randn(Shape shape, double mean, double stddev, Rng& rng);

/// Uniform draws in [lo, hi).
Tensor4 rand_uniform(Shape shape, double lo, double hi, Rng& rng);

// Elementwise arithmetic. Shapes must match exactly (no broadcasting).
Tensor4 add(const Tensor4& a, const Tensor4& b);
Tensor4 sub(const Tensor4& a, const Tensor4& b);
Tensor4 mul(const Tensor4& a, const Tensor4& b);
Tensor4 add_scalar(const Tensor4& a, double s);
Tensor4 scale(const Tensor4& a, double s);

double sum(const Tensor4& a);
double max_abs(const Tensor4& a);
double max_abs_diff(const Tensor4& a, const Tensor4& b);
/// Sum of a[i] * b[i].
double dot(const Tensor4& a, const Tensor4& b);

/// Throws std::invalid_argument naming `what` when the shapes differ.
void require_same_shape(const Shape& a, const Shape& b, const char* what);

// Binary format: four little-endian u64 dims followed by little-endian f64 payload.
void write_tensor(std::ostream& os, const Tensor4& t);
Tensor4 read_tensor(std::istream& is);

void write_u64(std::ostream& os, std::uint64_t v);
std::uint64_t read_u64(std::istream& is);

}  // namespace sanet
