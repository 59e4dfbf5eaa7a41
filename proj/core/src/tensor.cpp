#include "sanet/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <stdexcept>

#include "sanet/rng.hpp"

namespace sanet {

namespace {

std::size_t checked_mul(std::size_t a, std::size_t b) {
    if (a != 0 && b > std::numeric_limits<std::size_t>::max() / a) {
        throw std::overflow_error("tensor shape overflows size_t");
    }
    return a * b;
}

std::uint64_t to_little_endian(std::uint64_t v) {
    if constexpr (std::endian::native == std::endian::little) {
        return v;
    } else {
        std::uint64_t r = 0;
        for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
        return r;
    }
}

template <typename Op>
Tensor4 zip(const Tensor4& a, const Tensor4& b, const char* what, Op op) {
    require_same_shape(a.shape(), b.shape(), what);
    Tensor4 out(a.shape());
    auto pa = a.data();
    auto pb = b.data();
    auto po = out.data();
    for (std::size_t i = 0; i < po.size(); ++i) po[i] = op(pa[i], pb[i]);
    return out;
}

}  // namespace

std::size_t Shape::numel() const {
    if (n == 0 || c == 0 || h == 0 || w == 0) {
        throw std::invalid_argument("tensor shape components must be >= 1, got " + str());
    }
    return checked_mul(checked_mul(checked_mul(n, c), h), w);
}

std::string Shape::str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
}

Tensor4::Tensor4(Shape shape, double value) : shape_(shape), data_(shape.numel(), value) {}

Tensor4::Tensor4(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
        throw std::invalid_argument("Tensor4: data length " + std::to_string(data_.size()) +
                                    " does not match shape " + shape_.str());
    }
}

Tensor4 zeros(Shape shape) { return Tensor4(shape, 0.0); }

Tensor4 fill(Shape shape, double value) { return Tensor4(shape, value); }

Tensor4 randn(Shape shape, double mean, double stddev, Rng& rng) {
    if (!(stddev >= 0.0)) throw std::invalid_argument("randn: stddev must be >= 0");
    Tensor4 out(shape);
    for (double& v : out.data()) v = rng.normal(mean, stddev);
    return out;
}

Tensor4 rand_uniform(Shape shape, double lo, double hi, Rng& rng) {
    Tensor4 out(shape);
    for (double& v : out.data()) v = rng.uniform(lo, hi);
    return out;
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
    if (!(a == b)) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.str() + " vs " +
                                    b.str());
    }
}

Tensor4 add(const Tensor4& a, const Tensor4& b) {
    return zip(a, b, "add", [](double x, double y) { return x + y; });
}

Tensor4 sub(const Tensor4& a, const Tensor4& b) {
    return zip(a, b, "sub", [](double x, double y) { return x - y; });
}

Tensor4 mul(const Tensor4& a, const Tensor4& b) {
    return zip(a, b, "mul", [](double x, double y) { return x * y; });
}

Tensor4 add_scalar(const Tensor4& a, double s) {
    Tensor4 out = a;
    for (double& v : out.data()) v += s;
    return out;
}

Tensor4 scale(const Tensor4& a, double s) {
    Tensor4 out = a;
    for (double& v : out.data()) v *= s;
    return out;
}

double sum(const Tensor4& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return s;
}

double max_abs(const Tensor4& a) {
    double m = 0.0;
    for (double v : a.data()) m = std::max(m, std::abs(v));
    return m;
}

double max_abs_diff(const Tensor4& a, const Tensor4& b) {
    require_same_shape(a.shape(), b.shape(), "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

double dot(const Tensor4& a, const Tensor4& b) {
    require_same_shape(a.shape(), b.shape(), "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
    return s;
}

void write_u64(std::ostream& os, std::uint64_t v) {
    const std::uint64_t le = to_little_endian(v);
    os.write(reinterpret_cast<const char*>(&le), sizeof le);
}

std::uint64_t read_u64(std::istream& is) {
    std::uint64_t le = 0;
    is.read(reinterpret_cast<char*>(&le), sizeof le);
    if (!is) throw std::runtime_error("unexpected end of stream while reading u64");
    return to_little_endian(le);
}

void write_tensor(std::ostream& os, const Tensor4& t) {
    const Shape& s = t.shape();
    for (std::size_t d : {s.n, s.c, s.h, s.w}) write_u64(os, d);
    for (double v : t.data()) write_u64(os, std::bit_cast<std::uint64_t>(v));
    if (!os) throw std::runtime_error("write_tensor: stream failure");
}

Tensor4 read_tensor(std::istream& is) {
    Shape s;
    s.n = read_u64(is);
    s.c = read_u64(is);
    s.h = read_u64(is);
    s.w = read_u64(is);
    constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 32;
    std::uint64_t count = 1;
    for (std::uint64_t d : {s.n, s.c, s.h, s.w}) {
        if (d == 0 || d > kMaxElements || count * d > kMaxElements) {
            throw std::runtime_error("read_tensor: implausible shape in stream");
        }
        count *= d;
    }
    Tensor4 t(s);
    for (double& v : t.data()) v = std::bit_cast<double>(read_u64(is));
    return t;
}

}  // namespace sanet
