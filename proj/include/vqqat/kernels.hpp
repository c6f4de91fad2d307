#pragma once

#include <cstddef>

// Data-parallel inner-loop kernels behind the vector math (dot products,
// norms, squared distances, axpy updates). Each kernel has a scalar
// reference implementation and, on x86-64, an AVX2 variant selected at
// runtime.
//
// Both backends implement the same canonical reduction tree: four striped
// partial sums over stride-4 blocks, combined as (acc0+acc2)+(acc1+acc3),
// with tail elements folded in order afterwards. No FMA is used (and the
// project builds with -ffp-contract=off), so the two backends return
// bit-identical results. tests/test_kernels.cpp enforces the equivalence.
namespace vqqat::kernels {

enum class Backend { Auto, Scalar, Avx2 };

bool cpu_has_avx2();

// Selects the backend used by the dispatched kernels below. Auto resolves
// to AVX2 when available. Returns the backend actually put in effect
// (requesting Avx2 on a CPU without it falls back to Scalar). The
// VQQAT_KERNELS environment variable ("scalar" / "avx2") sets the initial
// choice.
Backend set_backend(Backend b);
Backend active_backend();

double dot(const double* a, const double* b, std::size_t n);
double sumsq(const double* x, std::size_t n);
double sqdist(const double* a, const double* b, std::size_t n);
// y[i] += a * x[i]
void axpy(double a, const double* x, double* y, std::size_t n);

namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
double sumsq(const double* x, std::size_t n);
double sqdist(const double* a, const double* b, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
double sumsq(const double* x, std::size_t n);
double sqdist(const double* a, const double* b, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
}  // namespace avx2
#endif

}  // namespace vqqat::kernels
