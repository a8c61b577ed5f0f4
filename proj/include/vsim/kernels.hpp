#pragma once

#include <cstddef>
#include <cstdint>

// Arithmetic inner loops of the samplers and the neighbor scan, as scalar
// reference kernels plus AVX2 variants selected once at startup (overridable
// with VSIM_KERNELS=scalar|avx2 or set_isa, mainly for the equivalence tests).
//
// The elementwise kernels (smoothed_ratio, pam_cell_weights, lda_cell_weights,
// mul/add/scale) perform the same IEEE operation per element in both variants,
// so scalar and AVX2 outputs are bit-identical. Reductions that feed sampling
// decisions (vector_sum) are kept in one fixed linear order for the same
// reason. The distance kernels do vectorized accumulation and are only
// equivalent to the scalar path up to rounding (tested at 1e-12 relative).

namespace vsim::kernels {

enum class Isa { scalar, avx2 };

bool cpu_has_avx2();
Isa active_isa();
void set_isa(Isa isa);  // throws std::runtime_error if unsupported

// out[i] = (num[i] + num_add) / (den[i] + den_add)
void smoothed_ratio(const int32_t* num, const int32_t* den, double num_add,
                    double den_add, double* out, size_t n);

// w[s*T + t] = super_scale[s] * (n_dst[s*T + t] + alpha_s[s*T + t]) * label_term[t]
void pam_cell_weights(const int32_t* n_dst, const double* alpha_s,
                      const double* super_scale, const double* label_term,
                      double* w, size_t S, size_t T);

// w[a] = (label_topic[a] + alpha) * (word_topic[a] + psi) / (topic_total[a] + den_add)
void lda_cell_weights(const int32_t* label_topic, const int32_t* word_topic,
                      const int32_t* topic_total, double alpha, double psi,
                      double den_add, double* w, size_t n);

void mul_inplace(double* p, const double* q, size_t n);
void add_inplace(double* acc, const double* x, size_t n);
void scale_inplace(double* p, double s, size_t n);

double squared_euclidean(const double* x, const double* y, size_t n);
// 0.5 * sum (x-y)^2/(x+y) over coordinates with x+y > 0 (histogram distance).
double chi_square(const double* x, const double* y, size_t n);

// Fixed linear-order summation; identical under every Isa.
double vector_sum(const double* x, size_t n);

// p[i] = p[i]*q[i], renormalized to sum 1. Returns the pre-normalization sum
// (0 means the product vanished and p is left as the raw zero product).
double mul_normalize(double* p, const double* q, size_t n);

}  // namespace vsim::kernels
