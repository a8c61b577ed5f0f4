// AVX2 kernel variants. Compiled with -mavx2 -ffp-contract=off and gated at
// runtime by cpu_has_avx2(), so the rest of the library stays baseline x86-64.
//
// The elementwise kernels keep one IEEE multiply/divide per element in the
// same order as the scalar reference, so their output is bit-identical to it.
// The distance kernels use four vector accumulators and differ from scalar
// only by summation order.

#include <immintrin.h>

#include <cstddef>
#include <cstdint>

namespace vsim::kernels::avx2 {

namespace {

inline __m256d load_counts(const int32_t* p) {
  return _mm256_cvtepi32_pd(_mm_loadu_si128(reinterpret_cast<const __m128i*>(p)));
}

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d swapped = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, swapped));
}

}  // namespace

void smoothed_ratio(const int32_t* num, const int32_t* den, double num_add,
                    double den_add, double* out, size_t n) {
  const __m256d vnum_add = _mm256_set1_pd(num_add);
  const __m256d vden_add = _mm256_set1_pd(den_add);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vn = _mm256_add_pd(load_counts(num + i), vnum_add);
    __m256d vd = _mm256_add_pd(load_counts(den + i), vden_add);
    _mm256_storeu_pd(out + i, _mm256_div_pd(vn, vd));
  }
  for (; i < n; ++i) {
    out[i] = (static_cast<double>(num[i]) + num_add) /
             (static_cast<double>(den[i]) + den_add);
  }
}

void pam_cell_weights(const int32_t* n_dst, const double* alpha_s,
                      const double* super_scale, const double* label_term,
                      double* w, size_t S, size_t T) {
  for (size_t s = 0; s < S; ++s) {
    const double scale = super_scale[s];
    const __m256d vscale = _mm256_set1_pd(scale);
    const int32_t* row = n_dst + s * T;
    const double* arow = alpha_s + s * T;
    double* wrow = w + s * T;
    size_t t = 0;
    for (; t + 4 <= T; t += 4) {
      __m256d counts = _mm256_add_pd(load_counts(row + t),
                                     _mm256_loadu_pd(arow + t));
      __m256d prod = _mm256_mul_pd(_mm256_mul_pd(vscale, counts),
                                   _mm256_loadu_pd(label_term + t));
      _mm256_storeu_pd(wrow + t, prod);
    }
    for (; t < T; ++t) {
      wrow[t] = scale * (static_cast<double>(row[t]) + arow[t]) * label_term[t];
    }
  }
}

void lda_cell_weights(const int32_t* label_topic, const int32_t* word_topic,
                      const int32_t* topic_total, double alpha, double psi,
                      double den_add, double* w, size_t n) {
  const __m256d valpha = _mm256_set1_pd(alpha);
  const __m256d vpsi = _mm256_set1_pd(psi);
  const __m256d vden = _mm256_set1_pd(den_add);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d lt = _mm256_add_pd(load_counts(label_topic + i), valpha);
    __m256d wt = _mm256_add_pd(load_counts(word_topic + i), vpsi);
    __m256d tt = _mm256_add_pd(load_counts(topic_total + i), vden);
    _mm256_storeu_pd(w + i, _mm256_div_pd(_mm256_mul_pd(lt, wt), tt));
  }
  for (; i < n; ++i) {
    w[i] = (static_cast<double>(label_topic[i]) + alpha) *
           (static_cast<double>(word_topic[i]) + psi) /
           (static_cast<double>(topic_total[i]) + den_add);
  }
}

void mul_inplace(double* p, const double* q, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(p + i, _mm256_mul_pd(_mm256_loadu_pd(p + i),
                                          _mm256_loadu_pd(q + i)));
  }
  for (; i < n; ++i) p[i] *= q[i];
}

void add_inplace(double* acc, const double* x, size_t n) {
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(acc + i, _mm256_add_pd(_mm256_loadu_pd(acc + i),
                                            _mm256_loadu_pd(x + i)));
  }
  for (; i < n; ++i) acc[i] += x[i];
}

void scale_inplace(double* p, double s, size_t n) {
  const __m256d vs = _mm256_set1_pd(s);
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(p + i, _mm256_mul_pd(_mm256_loadu_pd(p + i), vs));
  }
  for (; i < n; ++i) p[i] *= s;
}

double squared_euclidean(const double* x, const double* y, size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256d d0 = _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
    __m256d d1 =
        _mm256_sub_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4));
    acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(d0, d0));
    acc1 = _mm256_add_pd(acc1, _mm256_mul_pd(d1, d1));
  }
  for (; i + 4 <= n; i += 4) {
    __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i));
    acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(d, d));
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) {
    double d = x[i] - y[i];
    acc += d * d;
  }
  return acc;
}

double chi_square(const double* x, const double* y, size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  __m256d acc0 = _mm256_setzero_pd();
  size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d vx = _mm256_loadu_pd(x + i);
    __m256d vy = _mm256_loadu_pd(y + i);
    __m256d s = _mm256_add_pd(vx, vy);
    __m256d d = _mm256_sub_pd(vx, vy);
    __m256d mask = _mm256_cmp_pd(s, zero, _CMP_GT_OQ);
    // Guard the divisor so masked-out lanes do not raise 0/0.
    __m256d safe = _mm256_blendv_pd(_mm256_set1_pd(1.0), s, mask);
    __m256d term = _mm256_div_pd(_mm256_mul_pd(d, d), safe);
    acc0 = _mm256_add_pd(acc0, _mm256_and_pd(term, mask));
  }
  double acc = hsum(acc0);
  for (; i < n; ++i) {
    double s = x[i] + y[i];
    if (s > 0.0) {
      double d = x[i] - y[i];
      acc += d * d / s;
    }
  }
  return 0.5 * acc;
}

}  // namespace vsim::kernels::avx2
