#pragma once

/// Small shared vocabulary: 3-vectors, symmetric 3x3 tensors, the parabolic
/// bracket weight, deterministic RNG, hashing and numeric text round-trip.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <vector>

namespace dsslab {

inline constexpr double kPi = 3.14159265358979323846;

/// Throw a runtime error with a uniform prefix.
[[noreturn]] inline void fail(const std::string& msg) {
    throw std::runtime_error("dsslab: " + msg);
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
    double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
inline Vec3& operator+=(Vec3& a, Vec3 b) { a = a + b; return a; }
inline Vec3& operator-=(Vec3& a, Vec3 b) { a = a - b; return a; }
inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }
inline Vec3 cross(Vec3 a, Vec3 b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

/// Symmetric 3x3 tensor stored as its six independent components.
struct Sym3 {
    double xx = 0.0, yy = 0.0, zz = 0.0, xy = 0.0, xz = 0.0, yz = 0.0;

    double trace() const { return xx + yy + zz; }

    Vec3 apply(Vec3 v) const {
        return {xx * v.x + xy * v.y + xz * v.z,
                xy * v.x + yy * v.y + yz * v.z,
                xz * v.x + yz * v.y + zz * v.z};
    }

    /// v^T A v.
    double quad(Vec3 v) const { return dot(v, apply(v)); }

    double operator()(int i, int j) const {
        if (i > j) std::swap(i, j);
        if (i == 0) return j == 0 ? xx : (j == 1 ? xy : xz);
        if (i == 1) return j == 1 ? yy : yz;
        return zz;
    }
};

inline Sym3 operator+(Sym3 a, Sym3 b) {
    return {a.xx + b.xx, a.yy + b.yy, a.zz + b.zz, a.xy + b.xy, a.xz + b.xz, a.yz + b.yz};
}
inline Sym3 operator-(Sym3 a, Sym3 b) {
    return {a.xx - b.xx, a.yy - b.yy, a.zz - b.zz, a.xy - b.xy, a.xz - b.xz, a.yz - b.yz};
}
inline Sym3 operator*(double s, Sym3 a) {
    return {s * a.xx, s * a.yy, s * a.zz, s * a.xy, s * a.xz, s * a.yz};
}
inline Sym3& operator+=(Sym3& a, Sym3 b) { a = a + b; return a; }

/// Outer product v (x) v.
inline Sym3 outer(Vec3 v) {
    return {v.x * v.x, v.y * v.y, v.z * v.z, v.x * v.y, v.x * v.z, v.y * v.z};
}

inline double max_abs(Sym3 a) {
    double m = 0.0;
    for (double c : {a.xx, a.yy, a.zz, a.xy, a.xz, a.yz}) m = std::max(m, std::fabs(c));
    return m;
}

/// Parabolic bracket <z> = sqrt(|z|^2 + 2).
inline double bracket(double r) { return std::sqrt(r * r + 2.0); }
inline double bracket(Vec3 z) { return std::sqrt(dot(z, z) + 2.0); }

/// FNV-1a 64-bit hash, used to fingerprint configurations in artifacts.
inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

/// Full-precision text form of a double; strtod round-trips it bit-exactly.
inline std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double parse_double(const std::string& s) {
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') fail("not a number: '" + s + "'");
    return v;
}

inline long parse_long(const std::string& s) {
    char* end = nullptr;
    long v = std::strtol(s.c_str(), &end, 10);
    if (end == s.c_str() || *end != '\0') fail("not an integer: '" + s + "'");
    return v;
}

inline std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

/// Deterministic RNG: mt19937_64 with a fixed open-interval mapping so that
/// streams are identical across platforms and standard libraries.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        // xorshift* would do, but mt19937_64 keeps long-period guarantees.
        return engine_step();
    }

    /// Uniform in [0,1).
    double uniform() { return double(engine_step() >> 11) * 0x1.0p-53; }

    double uniform(double a, double b) { return a + (b - a) * uniform(); }

    /// Uniform direction on the unit sphere.
    Vec3 unit_vector() {
        double c = uniform(-1.0, 1.0);
        double ph = uniform(0.0, 2.0 * kPi);
        double s = std::sqrt(std::max(0.0, 1.0 - c * c));
        return {s * std::cos(ph), s * std::sin(ph), c};
    }

  private:
    std::uint64_t engine_step();
    std::uint64_t state_;
    std::vector<std::uint64_t> mt_;
    int mti_ = 0;
};

inline std::uint64_t Rng::engine_step() {
    // Classic MT19937-64 (Matsumoto & Nishimura), inlined to pin the stream.
    constexpr int kN = 312, kM = 156;
    constexpr std::uint64_t kMatrixA = 0xB5026F5AA96619E9ull;
    constexpr std::uint64_t kUpper = 0xFFFFFFFF80000000ull, kLower = 0x7FFFFFFFull;
    if (mt_.empty()) {
        mt_.resize(kN);
        mt_[0] = state_;
        for (int i = 1; i < kN; ++i)
            mt_[i] = 6364136223846793005ull * (mt_[i - 1] ^ (mt_[i - 1] >> 62)) + i;
        mti_ = kN;
    }
    if (mti_ >= kN) {
        for (int i = 0; i < kN; ++i) {
            std::uint64_t v = (mt_[i] & kUpper) | (mt_[(i + 1) % kN] & kLower);
            mt_[i] = mt_[(i + kM) % kN] ^ (v >> 1) ^ ((v & 1) ? kMatrixA : 0);
        }
        mti_ = 0;
    }
    std::uint64_t x = mt_[mti_++];
    x ^= (x >> 29) & 0x5555555555555555ull;
    x ^= (x << 17) & 0x71D67FFFEDA60000ull;
    x ^= (x << 37) & 0xFFF7EEE000000000ull;
    x ^= x >> 43;
    return x;
}

}  // namespace dsslab
