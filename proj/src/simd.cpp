#include "mm/simd.hpp"

namespace mm::simd {

namespace scalar {

double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double squared_distance(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

double sum(const double* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace scalar

#ifdef MM_HAVE_AVX2_TU
namespace avx2 {
// Implemented in simd_avx2.cpp (the only TU compiled with -mavx2).
bool available();
double dot(const double* a, const double* b, std::size_t n);
double squared_distance(const double* a, const double* b, std::size_t n);
double sum(const double* x, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
}  // namespace avx2
#endif

namespace {

struct Dispatch {
  double (*dot)(const double*, const double*, std::size_t);
  double (*squared_distance)(const double*, const double*, std::size_t);
  double (*sum)(const double*, std::size_t);
  void (*axpy)(double, const double*, double*, std::size_t);
  const char* backend;
};

Dispatch pick_backend() {
#ifdef MM_HAVE_AVX2_TU
  if (avx2::available()) {
    return {&avx2::dot, &avx2::squared_distance, &avx2::sum, &avx2::axpy, "avx2"};
  }
#endif
  return {&scalar::dot, &scalar::squared_distance, &scalar::sum, &scalar::axpy, "scalar"};
}

const Dispatch& dispatch() {
  static const Dispatch table = pick_backend();
  return table;
}

}  // namespace

const char* active_backend() { return dispatch().backend; }

double dot(const double* a, const double* b, std::size_t n) {
  return dispatch().dot(a, b, n);
}

double squared_distance(const double* a, const double* b, std::size_t n) {
  return dispatch().squared_distance(a, b, n);
}

double sum(const double* x, std::size_t n) { return dispatch().sum(x, n); }

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  dispatch().axpy(alpha, x, y, n);
}

}  // namespace mm::simd
