#pragma once

// Dense order-3 tensor and the contractions used throughout the library.
//
// Layout: entry (i, j, k) lives at data[i + n1 * (j + n2 * k)], i.e. mode 1
// varies fastest. Each frontal slice T(:, :, k) is therefore a contiguous
// column-major n1 x n2 block, and the raw buffer is the column-major mode-1
// unfolding.
//
// Unfolding column order: for mode m the two remaining modes (a < b) are
// flattened as col = idx_a + n_a * idx_b. Concretely
//   unfold(T, 1)(i, j + n2 * k)
//   unfold(T, 2)(j, i + n1 * k)
//   unfold(T, 3)(k, i + n1 * j)

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "nmt/error.hpp"

namespace nmt {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Dims = std::array<Eigen::Index, 3>;

class Tensor3 {
public:
    Tensor3() = default;

    explicit Tensor3(Dims dims) : dims_(dims), data_(checked_size(dims), 0.0) {}

    Tensor3(Dims dims, std::vector<double> data) : dims_(dims), data_(std::move(data)) {
        if (data_.size() != checked_size(dims)) {
            throw DimensionMismatch("Tensor3: data length does not equal n1*n2*n3");
        }
    }

    [[nodiscard]] const Dims& dims() const noexcept { return dims_; }
    [[nodiscard]] Eigen::Index dim(int mode) const {
        check_mode(mode);
        return dims_[static_cast<std::size_t>(mode - 1)];
    }
    [[nodiscard]] Eigen::Index n1() const noexcept { return dims_[0]; }
    [[nodiscard]] Eigen::Index n2() const noexcept { return dims_[1]; }
    [[nodiscard]] Eigen::Index n3() const noexcept { return dims_[2]; }
    [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }

    [[nodiscard]] std::size_t index(Eigen::Index i, Eigen::Index j, Eigen::Index k) const noexcept {
        return static_cast<std::size_t>(i + dims_[0] * (j + dims_[1] * k));
    }

    double& operator()(Eigen::Index i, Eigen::Index j, Eigen::Index k) noexcept { return data_[index(i, j, k)]; }
    double operator()(Eigen::Index i, Eigen::Index j, Eigen::Index k) const noexcept {
        return data_[index(i, j, k)];
    }

    /// Bounds-checked access.
    [[nodiscard]] double at(Eigen::Index i, Eigen::Index j, Eigen::Index k) const {
        if (i < 0 || j < 0 || k < 0 || i >= dims_[0] || j >= dims_[1] || k >= dims_[2]) {
            throw InvalidArgument("Tensor3::at: index out of range");
        }
        return (*this)(i, j, k);
    }

    [[nodiscard]] const std::vector<double>& data() const noexcept { return data_; }
    [[nodiscard]] std::vector<double>& data() noexcept { return data_; }

    /// Mode-1 unfolding viewed in place (n1 x n2*n3, column-major).
    [[nodiscard]] Eigen::Map<const Mat> mode1_view() const noexcept {
        return {data_.data(), dims_[0], dims_[1] * dims_[2]};
    }
    /// Tensor viewed as an (n1*n2) x n3 matrix; column k is vec(T(:, :, k)).
    [[nodiscard]] Eigen::Map<const Mat> slices_view() const noexcept {
        return {data_.data(), dims_[0] * dims_[1], dims_[2]};
    }
    /// Frontal slice T(:, :, k) as an n1 x n2 matrix.
    [[nodiscard]] Eigen::Map<const Mat> slice(Eigen::Index k) const noexcept {
        return {data_.data() + static_cast<std::ptrdiff_t>(k * dims_[0] * dims_[1]), dims_[0], dims_[1]};
    }
    [[nodiscard]] Eigen::Map<Mat> slice(Eigen::Index k) noexcept {
        return {data_.data() + static_cast<std::ptrdiff_t>(k * dims_[0] * dims_[1]), dims_[0], dims_[1]};
    }

    Tensor3& operator+=(const Tensor3& other) {
        if (other.dims_ != dims_) throw DimensionMismatch("Tensor3::operator+=: shape mismatch");
        for (std::size_t n = 0; n < data_.size(); ++n) data_[n] += other.data_[n];
        return *this;
    }
    Tensor3& operator*=(double s) noexcept {
        for (double& x : data_) x *= s;
        return *this;
    }
    friend Tensor3 operator*(double s, Tensor3 t) { return t *= s; }
    friend Tensor3 operator+(Tensor3 a, const Tensor3& b) { return a += b; }
    friend Tensor3 operator-(Tensor3 a, const Tensor3& b) {
        if (a.dims_ != b.dims_) throw DimensionMismatch("Tensor3::operator-: shape mismatch");
        for (std::size_t n = 0; n < a.data_.size(); ++n) a.data_[n] -= b.data_[n];
        return a;
    }
    friend bool operator==(const Tensor3&, const Tensor3&) = default;

    static void check_mode(int mode) {
        if (mode < 1 || mode > 3) throw InvalidArgument("tensor mode must be 1, 2 or 3");
    }

private:
    static std::size_t checked_size(const Dims& d) {
        if (d[0] <= 0 || d[1] <= 0 || d[2] <= 0) throw InvalidArgument("Tensor3: dimensions must be positive");
        return static_cast<std::size_t>(d[0]) * static_cast<std::size_t>(d[1]) * static_cast<std::size_t>(d[2]);
    }

    Dims dims_{0, 0, 0};
    std::vector<double> data_;
};

namespace detail {
inline void expect_len(const Eigen::Ref<const Vec>& v, Eigen::Index n, const char* what) {
    if (v.size() != n) throw DimensionMismatch(std::string(what) + ": vector length does not match tensor mode");
}
}  // namespace detail

/// x ⊗ y ⊗ z.
[[nodiscard]] inline Tensor3 outer3(const Eigen::Ref<const Vec>& x, const Eigen::Ref<const Vec>& y,
                                    const Eigen::Ref<const Vec>& z) {
    Tensor3 t({x.size(), y.size(), z.size()});
    for (Eigen::Index k = 0; k < z.size(); ++k) {
        t.slice(k).noalias() = (x * y.transpose()) * z[k];
    }
    return t;
}

/// M ⊗ z for an n1 x n2 matrix M.
[[nodiscard]] inline Tensor3 outer_matrix_vector(const Eigen::Ref<const Mat>& m, const Eigen::Ref<const Vec>& z) {
    Tensor3 t({m.rows(), m.cols(), z.size()});
    for (Eigen::Index k = 0; k < z.size(); ++k) t.slice(k) = m * z[k];
    return t;
}

/// T(u, ·, ·): n2 x n3.
[[nodiscard]] inline Mat contract1(const Tensor3& t, const Eigen::Ref<const Vec>& u) {
    detail::expect_len(u, t.n1(), "contract1");
    const Vec flat = t.mode1_view().transpose() * u;
    return Eigen::Map<const Mat>(flat.data(), t.n2(), t.n3());
}

/// T(·, v, ·): n1 x n3.
[[nodiscard]] inline Mat contract2(const Tensor3& t, const Eigen::Ref<const Vec>& v) {
    detail::expect_len(v, t.n2(), "contract2");
    Mat out(t.n1(), t.n3());
    for (Eigen::Index k = 0; k < t.n3(); ++k) out.col(k).noalias() = t.slice(k) * v;
    return out;
}

/// T(·, ·, w): n1 x n2.
[[nodiscard]] inline Mat contract3(const Tensor3& t, const Eigen::Ref<const Vec>& w) {
    detail::expect_len(w, t.n3(), "contract3");
    const Vec flat = t.slices_view() * w;
    return Eigen::Map<const Mat>(flat.data(), t.n1(), t.n2());
}

/// Single-mode contraction selected at runtime (mode in {1,2,3}).
[[nodiscard]] inline Mat contract(const Tensor3& t, int mode, const Eigen::Ref<const Vec>& a) {
    Tensor3::check_mode(mode);
    switch (mode) {
        case 1: return contract1(t, a);
        case 2: return contract2(t, a);
        default: return contract3(t, a);
    }
}

/// T(·, v, w): length n1.
[[nodiscard]] inline Vec contract_vw(const Tensor3& t, const Eigen::Ref<const Vec>& v, const Eigen::Ref<const Vec>& w) {
    detail::expect_len(v, t.n2(), "contract_vw");
    detail::expect_len(w, t.n3(), "contract_vw");
    Vec out = Vec::Zero(t.n1());
    for (Eigen::Index k = 0; k < t.n3(); ++k) out.noalias() += w[k] * (t.slice(k) * v);
    return out;
}

/// T(u, ·, w): length n2.
[[nodiscard]] inline Vec contract_uw(const Tensor3& t, const Eigen::Ref<const Vec>& u, const Eigen::Ref<const Vec>& w) {
    detail::expect_len(u, t.n1(), "contract_uw");
    detail::expect_len(w, t.n3(), "contract_uw");
    Vec out = Vec::Zero(t.n2());
    for (Eigen::Index k = 0; k < t.n3(); ++k) out.noalias() += w[k] * (t.slice(k).transpose() * u);
    return out;
}

/// T(u, v, ·): length n3.
[[nodiscard]] inline Vec contract_uv(const Tensor3& t, const Eigen::Ref<const Vec>& u, const Eigen::Ref<const Vec>& v) {
    detail::expect_len(u, t.n1(), "contract_uv");
    detail::expect_len(v, t.n2(), "contract_uv");
    Vec out(t.n3());
    for (Eigen::Index k = 0; k < t.n3(); ++k) out[k] = u.dot(t.slice(k) * v);
    return out;
}

/// Which two modes a two-vector contraction consumes.
enum class ModePair { m12, m13, m23 };

/// Two-vector contraction; `a` and `b` are matched to the modes of `pair` in
/// increasing order. The result lives on the remaining mode.
[[nodiscard]] inline Vec contract2v(const Tensor3& t, const Eigen::Ref<const Vec>& a, const Eigen::Ref<const Vec>& b,
                                    ModePair pair) {
    switch (pair) {
        case ModePair::m12: return contract_uv(t, a, b);
        case ModePair::m13: return contract_uw(t, a, b);
        default: return contract_vw(t, a, b);
    }
}

/// T(u, v, w).
[[nodiscard]] inline double contract3s(const Tensor3& t, const Eigen::Ref<const Vec>& u, const Eigen::Ref<const Vec>& v,
                                       const Eigen::Ref<const Vec>& w) {
    detail::expect_len(w, t.n3(), "contract3s");
    return contract_uv(t, u, v).dot(w);
}

[[nodiscard]] inline double frobenius_norm(const Tensor3& t) noexcept {
    double s = 0.0;
    for (double x : t.data()) s += x * x;
    return std::sqrt(s);
}

/// Mode-m unfolding (mode in {1,2,3}); column order as documented at the top.
[[nodiscard]] inline Mat unfold(const Tensor3& t, int mode) {
    Tensor3::check_mode(mode);
    const auto n1 = t.n1(), n2 = t.n2(), n3 = t.n3();
    if (mode == 1) return t.mode1_view();
    if (mode == 2) {
        Mat out(n2, n1 * n3);
        for (Eigen::Index k = 0; k < n3; ++k) out.middleCols(k * n1, n1) = t.slice(k).transpose();
        return out;
    }
    Mat out(n3, n1 * n2);
    for (Eigen::Index k = 0; k < n3; ++k) out.row(k) = t.slices_view().col(k).transpose();
    return out;
}

// ---------------------------------------------------------------------------
// Dump / load.
//
// Binary: 8-byte magic "NMTTEN3\0", three little-endian uint64 dims, then
// n1*n2*n3 IEEE-754 doubles in storage order.
// CSV: first line "n1,n2,n3", then one value per line in storage order,
// printed with 17 significant digits (exact round trip).
// ---------------------------------------------------------------------------

inline constexpr char kTensorMagic[8] = {'N', 'M', 'T', 'T', 'E', 'N', '3', '\0'};

inline void save_binary(const Tensor3& t, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw InvalidArgument("save_binary: cannot open " + path);
    os.write(kTensorMagic, sizeof kTensorMagic);
    for (auto d : t.dims()) {
        const auto u = static_cast<std::uint64_t>(d);
        os.write(reinterpret_cast<const char*>(&u), sizeof u);
    }
    os.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!os) throw InvalidArgument("save_binary: write failed for " + path);
}

[[nodiscard]] inline Tensor3 load_binary(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InvalidArgument("load_binary: cannot open " + path);
    char magic[8];
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, kTensorMagic, sizeof magic) != 0) {
        throw InvalidArgument("load_binary: bad magic in " + path);
    }
    Dims dims{};
    for (auto& d : dims) {
        std::uint64_t u = 0;
        is.read(reinterpret_cast<char*>(&u), sizeof u);
        if (!is || u == 0 || u > static_cast<std::uint64_t>(std::numeric_limits<Eigen::Index>::max())) {
            throw InvalidArgument("load_binary: bad dims in " + path);
        }
        d = static_cast<Eigen::Index>(u);
    }
    Tensor3 t(dims);
    is.read(reinterpret_cast<char*>(t.data().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!is) throw InvalidArgument("load_binary: truncated data in " + path);
    return t;
}

inline void save_csv(const Tensor3& t, std::ostream& os) {
    os << t.n1() << ',' << t.n2() << ',' << t.n3() << '\n';
    os << std::setprecision(17);
    for (double x : t.data()) os << x << '\n';
}

[[nodiscard]] inline Tensor3 load_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw InvalidArgument("load_csv: missing dims header");
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream hs(line);
    Dims dims{};
    if (!(hs >> dims[0] >> dims[1] >> dims[2])) throw InvalidArgument("load_csv: malformed dims header");
    Tensor3 t(dims);
    for (double& x : t.data()) {
        if (!std::getline(is, line)) throw InvalidArgument("load_csv: fewer values than dims announce");
        x = std::stod(line);
    }
    return t;
}

}  // namespace nmt
