#pragma once

#include <cstddef>

// Vectorized kernels for the dense inner loops (distance matrices, gram rows,
// responsibility sums, fitness evaluations).  Scalar reference versions are
// always built; an AVX2 variant of each kernel lives in its own translation
// unit and is selected once at startup after a cpuid check.  The dispatched
// and scalar versions are equivalence-tested against each other (results may
// differ by reassociation/FMA rounding, never more).
namespace mm::simd {

// Which implementation the dispatcher picked: "avx2" or "scalar".
const char* active_backend();

double dot(const double* a, const double* b, std::size_t n);
double squared_distance(const double* a, const double* b, std::size_t n);
double sum(const double* x, std::size_t n);
// y += alpha * x
void axpy(double alpha, const double* x, double* y, std::size_t n);

namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
double squared_distance(const double* a, const double* b, std::size_t n);
double sum(const double* x, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
}  // namespace scalar

}  // namespace mm::simd
