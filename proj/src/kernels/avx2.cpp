// AVX2+FMA kernel variants, 4 doubles per register, maskload/maskstore tails.

#include "acre/kernels.hpp"

#include <immintrin.h>

namespace acre::kern::avx2 {

namespace {

inline __m256i tail_mask(std::size_t rem) {
  alignas(32) long long lanes[4] = {0, 0, 0, 0};
  for (std::size_t i = 0; i < rem; ++i) lanes[i] = -1;
  return _mm256_load_si256(reinterpret_cast<const __m256i*>(lanes));
}

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(lo, _mm_unpackhi_pd(lo, lo)));
}

}  // namespace

void conv2d_forward(const double* in, const double* w, const double* bias,
                    double* out, const ConvDims& d) {
  const std::size_t ho = d.h_out(), wo = d.w_out();
  const std::size_t in_img = d.c_in * d.h_in * d.w_in;
  const std::size_t out_img = d.c_out * ho * wo;
  const std::size_t wfull = wo & ~std::size_t(3);
  const __m256i tm = tail_mask(wo - wfull);
  for (std::size_t b = 0; b < d.batch; ++b) {
    const double* ib = in + b * in_img;
    double* ob = out + b * out_img;
    for (std::size_t co = 0; co < d.c_out; ++co) {
      const double* wc = w + co * d.c_in * d.k * d.k;
      const __m256d bv = _mm256_set1_pd(bias ? bias[co] : 0.0);
      for (std::size_t y = 0; y < ho; ++y) {
        double* orow = ob + (co * ho + y) * wo;
        for (std::size_t x = 0; x < wo; x += 4) {
          const bool tail = x >= wfull;
          __m256d acc = bv;
          for (std::size_t ci = 0; ci < d.c_in; ++ci) {
            const double* ic = ib + ci * d.h_in * d.w_in;
            const double* wk = wc + ci * d.k * d.k;
            for (std::size_t dy = 0; dy < d.k; ++dy) {
              const double* irow = ic + (y + dy * d.rate) * d.w_in + x;
              for (std::size_t dx = 0; dx < d.k; ++dx) {
                const __m256d wv = _mm256_set1_pd(wk[dy * d.k + dx]);
                const __m256d iv = tail ? _mm256_maskload_pd(irow + dx * d.rate, tm)
                                        : _mm256_loadu_pd(irow + dx * d.rate);
                acc = _mm256_fmadd_pd(iv, wv, acc);
              }
            }
          }
          if (tail) {
            _mm256_maskstore_pd(orow + x, tm, acc);
          } else {
            _mm256_storeu_pd(orow + x, acc);
          }
        }
      }
    }
  }
}

void conv2d_backward_input(const double* dout, const double* w,
                           double* din, const ConvDims& d) {
  const std::size_t ho = d.h_out(), wo = d.w_out();
  const std::size_t in_img = d.c_in * d.h_in * d.w_in;
  const std::size_t out_img = d.c_out * ho * wo;
  const std::size_t wfull = wo & ~std::size_t(3);
  const __m256i tm = tail_mask(wo - wfull);
  for (std::size_t b = 0; b < d.batch; ++b) {
    const double* gb = dout + b * out_img;
    double* ib = din + b * in_img;
    for (std::size_t co = 0; co < d.c_out; ++co) {
      const double* wc = w + co * d.c_in * d.k * d.k;
      for (std::size_t ci = 0; ci < d.c_in; ++ci) {
        const double* wk = wc + ci * d.k * d.k;
        double* ic = ib + ci * d.h_in * d.w_in;
        for (std::size_t dy = 0; dy < d.k; ++dy) {
          for (std::size_t dx = 0; dx < d.k; ++dx) {
            const __m256d wv = _mm256_set1_pd(wk[dy * d.k + dx]);
            for (std::size_t y = 0; y < ho; ++y) {
              double* irow = ic + (y + dy * d.rate) * d.w_in + dx * d.rate;
              const double* grow = gb + (co * ho + y) * wo;
              for (std::size_t x = 0; x < wfull; x += 4) {
                const __m256d gv = _mm256_loadu_pd(grow + x);
                const __m256d iv = _mm256_loadu_pd(irow + x);
                _mm256_storeu_pd(irow + x, _mm256_fmadd_pd(gv, wv, iv));
              }
              if (wfull < wo) {
                const __m256d gv = _mm256_maskload_pd(grow + wfull, tm);
                const __m256d iv = _mm256_maskload_pd(irow + wfull, tm);
                _mm256_maskstore_pd(irow + wfull, tm, _mm256_fmadd_pd(gv, wv, iv));
              }
            }
          }
        }
      }
    }
  }
}

void conv2d_backward_weights(const double* in, const double* dout,
                             double* dw, double* dbias, const ConvDims& d) {
  const std::size_t ho = d.h_out(), wo = d.w_out();
  const std::size_t in_img = d.c_in * d.h_in * d.w_in;
  const std::size_t out_img = d.c_out * ho * wo;
  const std::size_t wfull = wo & ~std::size_t(3);
  const __m256i tm = tail_mask(wo - wfull);
  for (std::size_t co = 0; co < d.c_out; ++co) {
    for (std::size_t ci = 0; ci < d.c_in; ++ci) {
      for (std::size_t dy = 0; dy < d.k; ++dy) {
        for (std::size_t dx = 0; dx < d.k; ++dx) {
          __m256d acc = _mm256_setzero_pd();
          for (std::size_t b = 0; b < d.batch; ++b) {
            const double* gb = dout + b * out_img + co * ho * wo;
            const double* ic = in + b * in_img + ci * d.h_in * d.w_in;
            for (std::size_t y = 0; y < ho; ++y) {
              const double* irow = ic + (y + dy * d.rate) * d.w_in + dx * d.rate;
              const double* grow = gb + y * wo;
              for (std::size_t x = 0; x < wfull; x += 4) {
                acc = _mm256_fmadd_pd(_mm256_loadu_pd(grow + x),
                                      _mm256_loadu_pd(irow + x), acc);
              }
              if (wfull < wo) {
                acc = _mm256_fmadd_pd(_mm256_maskload_pd(grow + wfull, tm),
                                      _mm256_maskload_pd(irow + wfull, tm), acc);
              }
            }
          }
          dw[((co * d.c_in + ci) * d.k + dy) * d.k + dx] += hsum(acc);
        }
      }
    }
    if (dbias) {
      __m256d acc = _mm256_setzero_pd();
      double rest = 0.0;
      for (std::size_t b = 0; b < d.batch; ++b) {
        const double* gb = dout + b * out_img + co * ho * wo;
        const std::size_t total = ho * wo;
        const std::size_t full = total & ~std::size_t(3);
        for (std::size_t i = 0; i < full; i += 4) {
          acc = _mm256_add_pd(acc, _mm256_loadu_pd(gb + i));
        }
        for (std::size_t i = full; i < total; ++i) rest += gb[i];
      }
      dbias[co] += hsum(acc) + rest;
    }
  }
}

void gemm(const double* a, const double* b, double* c,
          std::size_t m, std::size_t k, std::size_t n) {
  const std::size_t nfull = n & ~std::size_t(3);
  const __m256i tm = tail_mask(n - nfull);
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    for (std::size_t j = 0; j < n; j += 4) {
      const bool tail = j >= nfull;
      __m256d acc[4];
      for (int r = 0; r < 4; ++r) {
        acc[r] = tail ? _mm256_maskload_pd(c + (i + r) * n + j, tm)
                      : _mm256_loadu_pd(c + (i + r) * n + j);
      }
      for (std::size_t p = 0; p < k; ++p) {
        const __m256d bv = tail ? _mm256_maskload_pd(b + p * n + j, tm)
                                : _mm256_loadu_pd(b + p * n + j);
        for (int r = 0; r < 4; ++r) {
          acc[r] = _mm256_fmadd_pd(_mm256_set1_pd(a[(i + r) * k + p]), bv, acc[r]);
        }
      }
      for (int r = 0; r < 4; ++r) {
        if (tail) {
          _mm256_maskstore_pd(c + (i + r) * n + j, tm, acc[r]);
        } else {
          _mm256_storeu_pd(c + (i + r) * n + j, acc[r]);
        }
      }
    }
  }
  for (; i < m; ++i) {
    for (std::size_t j = 0; j < n; j += 4) {
      const bool tail = j >= nfull;
      __m256d acc = tail ? _mm256_maskload_pd(c + i * n + j, tm)
                         : _mm256_loadu_pd(c + i * n + j);
      for (std::size_t p = 0; p < k; ++p) {
        const __m256d bv = tail ? _mm256_maskload_pd(b + p * n + j, tm)
                                : _mm256_loadu_pd(b + p * n + j);
        acc = _mm256_fmadd_pd(_mm256_set1_pd(a[i * k + p]), bv, acc);
      }
      if (tail) {
        _mm256_maskstore_pd(c + i * n + j, tm, acc);
      } else {
        _mm256_storeu_pd(c + i * n + j, acc);
      }
    }
  }
}

void gemm_at(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n) {
  const std::size_t nfull = n & ~std::size_t(3);
  const __m256i tm = tail_mask(n - nfull);
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const __m256d av = _mm256_set1_pd(a[p * m + i]);
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < nfull; j += 4) {
        _mm256_storeu_pd(crow + j,
                         _mm256_fmadd_pd(av, _mm256_loadu_pd(brow + j),
                                         _mm256_loadu_pd(crow + j)));
      }
      if (nfull < n) {
        _mm256_maskstore_pd(crow + nfull, tm,
                            _mm256_fmadd_pd(av, _mm256_maskload_pd(brow + nfull, tm),
                                            _mm256_maskload_pd(crow + nfull, tm)));
      }
    }
  }
}

void gemm_bt(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n) {
  const std::size_t kfull = k & ~std::size_t(3);
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      __m256d acc = _mm256_setzero_pd();
      for (std::size_t p = 0; p < kfull; p += 4) {
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(arow + p), _mm256_loadu_pd(brow + p), acc);
      }
      double rest = 0.0;
      for (std::size_t p = kfull; p < k; ++p) rest += arow[p] * brow[p];
      crow[j] += hsum(acc) + rest;
    }
  }
}

}  // namespace acre::kern::avx2
