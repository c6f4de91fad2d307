#include "vqqat/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace vqqat::kernels {

namespace scalar {

double dot(const double* a, const double* b, std::size_t n) {
    double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc0 += a[i] * b[i];
        acc1 += a[i + 1] * b[i + 1];
        acc2 += a[i + 2] * b[i + 2];
        acc3 += a[i + 3] * b[i + 3];
    }
    double s = (acc0 + acc2) + (acc1 + acc3);
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

double sumsq(const double* x, std::size_t n) {
    double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        acc0 += x[i] * x[i];
        acc1 += x[i + 1] * x[i + 1];
        acc2 += x[i + 2] * x[i + 2];
        acc3 += x[i + 3] * x[i + 3];
    }
    double s = (acc0 + acc2) + (acc1 + acc3);
    for (; i < n; ++i) s += x[i] * x[i];
    return s;
}

double sqdist(const double* a, const double* b, std::size_t n) {
    double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0, acc3 = 0.0;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const double d0 = a[i] - b[i];
        const double d1 = a[i + 1] - b[i + 1];
        const double d2 = a[i + 2] - b[i + 2];
        const double d3 = a[i + 3] - b[i + 3];
        acc0 += d0 * d0;
        acc1 += d1 * d1;
        acc2 += d2 * d2;
        acc3 += d3 * d3;
    }
    double s = (acc0 + acc2) + (acc1 + acc3);
    for (; i < n; ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

}  // namespace scalar

namespace {

struct Table {
    double (*dot)(const double*, const double*, std::size_t);
    double (*sumsq)(const double*, std::size_t);
    double (*sqdist)(const double*, const double*, std::size_t);
    void (*axpy)(double, const double*, double*, std::size_t);
};

constexpr Table kScalarTable{scalar::dot, scalar::sumsq, scalar::sqdist,
                             scalar::axpy};

#if defined(__x86_64__) || defined(_M_X64)
constexpr Table kAvx2Table{avx2::dot, avx2::sumsq, avx2::sqdist, avx2::axpy};
#endif

Backend resolve(Backend b) {
    if (b == Backend::Auto) b = cpu_has_avx2() ? Backend::Avx2 : Backend::Scalar;
    if (b == Backend::Avx2 && !cpu_has_avx2()) b = Backend::Scalar;
    return b;
}

Backend initial_backend() {
    if (const char* env = std::getenv("VQQAT_KERNELS")) {
        if (std::strcmp(env, "scalar") == 0) return resolve(Backend::Scalar);
        if (std::strcmp(env, "avx2") == 0) return resolve(Backend::Avx2);
    }
    return resolve(Backend::Auto);
}

Backend g_backend = initial_backend();
Table g_table = g_backend == Backend::Avx2
#if defined(__x86_64__) || defined(_M_X64)
                    ? kAvx2Table
#else
                    ? kScalarTable
#endif
                    : kScalarTable;

}  // namespace

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
    return __builtin_cpu_supports("avx2") != 0;
#else
    return false;
#endif
}

Backend set_backend(Backend b) {
    g_backend = resolve(b);
#if defined(__x86_64__) || defined(_M_X64)
    g_table = g_backend == Backend::Avx2 ? kAvx2Table : kScalarTable;
#else
    g_table = kScalarTable;
#endif
    return g_backend;
}

Backend active_backend() { return g_backend; }

double dot(const double* a, const double* b, std::size_t n) {
    return g_table.dot(a, b, n);
}
double sumsq(const double* x, std::size_t n) { return g_table.sumsq(x, n); }
double sqdist(const double* a, const double* b, std::size_t n) {
    return g_table.sqdist(a, b, n);
}
void axpy(double a, const double* x, double* y, std::size_t n) {
    g_table.axpy(a, x, y, n);
}

}  // namespace vqqat::kernels
