#include "vsim/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <stdexcept>

namespace vsim::kernels {

namespace scalar {

void smoothed_ratio(const int32_t* num, const int32_t* den, double num_add,
                    double den_add, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    out[i] = (static_cast<double>(num[i]) + num_add) /
             (static_cast<double>(den[i]) + den_add);
  }
}

void pam_cell_weights(const int32_t* n_dst, const double* alpha_s,
                      const double* super_scale, const double* label_term,
                      double* w, size_t S, size_t T) {
  for (size_t s = 0; s < S; ++s) {
    const double scale = super_scale[s];
    const int32_t* row = n_dst + s * T;
    const double* arow = alpha_s + s * T;
    double* wrow = w + s * T;
    for (size_t t = 0; t < T; ++t) {
      wrow[t] = scale * (static_cast<double>(row[t]) + arow[t]) * label_term[t];
    }
  }
}

void lda_cell_weights(const int32_t* label_topic, const int32_t* word_topic,
                      const int32_t* topic_total, double alpha, double psi,
                      double den_add, double* w, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    w[i] = (static_cast<double>(label_topic[i]) + alpha) *
           (static_cast<double>(word_topic[i]) + psi) /
           (static_cast<double>(topic_total[i]) + den_add);
  }
}

void mul_inplace(double* p, const double* q, size_t n) {
  for (size_t i = 0; i < n; ++i) p[i] *= q[i];
}

void add_inplace(double* acc, const double* x, size_t n) {
  for (size_t i = 0; i < n; ++i) acc[i] += x[i];
}

void scale_inplace(double* p, double s, size_t n) {
  for (size_t i = 0; i < n; ++i) p[i] *= s;
}

double squared_euclidean(const double* x, const double* y, size_t n) {
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double d = x[i] - y[i];
    acc += d * d;
  }
  return acc;
}

double chi_square(const double* x, const double* y, size_t n) {
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double s = x[i] + y[i];
    if (s > 0.0) {
      double d = x[i] - y[i];
      acc += d * d / s;
    }
  }
  return 0.5 * acc;
}

}  // namespace scalar

#if defined(VSIM_HAVE_AVX2_BUILD)
namespace avx2 {
void smoothed_ratio(const int32_t*, const int32_t*, double, double, double*,
                    size_t);
void pam_cell_weights(const int32_t*, const double*, const double*,
                      const double*, double*, size_t, size_t);
void lda_cell_weights(const int32_t*, const int32_t*, const int32_t*, double,
                      double, double, double*, size_t);
void mul_inplace(double*, const double*, size_t);
void add_inplace(double*, const double*, size_t);
void scale_inplace(double*, double, size_t);
double squared_euclidean(const double*, const double*, size_t);
double chi_square(const double*, const double*, size_t);
}  // namespace avx2

bool cpu_has_avx2() { return __builtin_cpu_supports("avx2"); }
#else
bool cpu_has_avx2() { return false; }
#endif

namespace {

struct Dispatch {
  void (*smoothed_ratio)(const int32_t*, const int32_t*, double, double,
                         double*, size_t);
  void (*pam_cell_weights)(const int32_t*, const double*, const double*,
                           const double*, double*, size_t, size_t);
  void (*lda_cell_weights)(const int32_t*, const int32_t*, const int32_t*,
                           double, double, double, double*, size_t);
  void (*mul_inplace)(double*, const double*, size_t);
  void (*add_inplace)(double*, const double*, size_t);
  void (*scale_inplace)(double*, double, size_t);
  double (*squared_euclidean)(const double*, const double*, size_t);
  double (*chi_square)(const double*, const double*, size_t);
};

constexpr Dispatch kScalar = {
    scalar::smoothed_ratio, scalar::pam_cell_weights, scalar::lda_cell_weights,
    scalar::mul_inplace,    scalar::add_inplace,      scalar::scale_inplace,
    scalar::squared_euclidean, scalar::chi_square};

#if defined(VSIM_HAVE_AVX2_BUILD)
constexpr Dispatch kAvx2 = {
    avx2::smoothed_ratio, avx2::pam_cell_weights, avx2::lda_cell_weights,
    avx2::mul_inplace,    avx2::add_inplace,      avx2::scale_inplace,
    avx2::squared_euclidean, avx2::chi_square};
#endif

Isa g_isa = []() {
  if (const char* env = std::getenv("VSIM_KERNELS")) {
    if (std::strcmp(env, "scalar") == 0) return Isa::scalar;
    if (std::strcmp(env, "avx2") == 0 && cpu_has_avx2()) return Isa::avx2;
    return Isa::scalar;
  }
  return cpu_has_avx2() ? Isa::avx2 : Isa::scalar;
}();

const Dispatch& table() {
#if defined(VSIM_HAVE_AVX2_BUILD)
  if (g_isa == Isa::avx2) return kAvx2;
#endif
  return kScalar;
}

}  // namespace

Isa active_isa() { return g_isa; }

void set_isa(Isa isa) {
  if (isa == Isa::avx2 && !cpu_has_avx2())
    throw std::runtime_error("avx2 kernels not supported on this cpu");
  g_isa = isa;
}

void smoothed_ratio(const int32_t* num, const int32_t* den, double num_add,
                    double den_add, double* out, size_t n) {
  table().smoothed_ratio(num, den, num_add, den_add, out, n);
}

void pam_cell_weights(const int32_t* n_dst, const double* alpha_s,
                      const double* super_scale, const double* label_term,
                      double* w, size_t S, size_t T) {
  table().pam_cell_weights(n_dst, alpha_s, super_scale, label_term, w, S, T);
}

void lda_cell_weights(const int32_t* label_topic, const int32_t* word_topic,
                      const int32_t* topic_total, double alpha, double psi,
                      double den_add, double* w, size_t n) {
  table().lda_cell_weights(label_topic, word_topic, topic_total, alpha, psi,
                           den_add, w, n);
}

void mul_inplace(double* p, const double* q, size_t n) {
  table().mul_inplace(p, q, n);
}

void add_inplace(double* acc, const double* x, size_t n) {
  table().add_inplace(acc, x, n);
}

void scale_inplace(double* p, double s, size_t n) {
  table().scale_inplace(p, s, n);
}

double squared_euclidean(const double* x, const double* y, size_t n) {
  return table().squared_euclidean(x, y, n);
}

double chi_square(const double* x, const double* y, size_t n) {
  return table().chi_square(x, y, n);
}

double vector_sum(const double* x, size_t n) {
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

double mul_normalize(double* p, const double* q, size_t n) {
  mul_inplace(p, q, n);
  double total = vector_sum(p, n);
  if (total > 0.0) scale_inplace(p, 1.0 / total, n);
  return total;
}

}  // namespace vsim::kernels
