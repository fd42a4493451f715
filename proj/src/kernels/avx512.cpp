// AVX-512F kernel variants. Vector axis is the innermost spatial / column
// dimension, 8 doubles per register, masked tails. Register blocking breaks
// the FMA dependency chains: conv kernels block over output channels, gemm
// kernels over rows. Accumulation order differs from the scalar reference,
// so agreement is up to rounding, not bitwise.

#include "acre/kernels.hpp"

#include <immintrin.h>

namespace acre::kern::avx512 {

namespace {
inline __mmask8 tail_mask(std::size_t rem) {
  return static_cast<__mmask8>((1u << rem) - 1u);
}
}  // namespace

namespace {

// One block of CB output channels; fixed CB so the r-loops fully unroll and
// the CB accumulator chains stay in registers.
template <int CB>
void conv_fwd_block(const double* ib, const double* w, const double* bias,
                    double* ob, std::size_t co0, const ConvDims& d,
                    std::size_t ho, std::size_t wo, std::size_t wfull, __mmask8 tm) {
  const std::size_t kk = d.k * d.k;
  const double* wc[CB];
  __m512d bv[CB];
  for (int r = 0; r < CB; ++r) {
    wc[r] = w + (co0 + r) * d.c_in * kk;
    bv[r] = _mm512_set1_pd(bias ? bias[co0 + r] : 0.0);
  }
  for (std::size_t y = 0; y < ho; ++y) {
    for (std::size_t x = 0; x < wo; x += 8) {
      const bool tail = x >= wfull;
      __m512d acc[CB];
      for (int r = 0; r < CB; ++r) acc[r] = bv[r];
      for (std::size_t ci = 0; ci < d.c_in; ++ci) {
        const double* ic = ib + ci * d.h_in * d.w_in;
        for (std::size_t dy = 0; dy < d.k; ++dy) {
          const double* irow = ic + (y + dy * d.rate) * d.w_in + x;
          const double* wrow = wc[0] + ci * kk + dy * d.k;
          for (std::size_t dx = 0; dx < d.k; ++dx) {
            const __m512d iv = tail ? _mm512_maskz_loadu_pd(tm, irow + dx * d.rate)
                                    : _mm512_loadu_pd(irow + dx * d.rate);
            for (int r = 0; r < CB; ++r) {
              acc[r] = _mm512_fmadd_pd(
                  iv, _mm512_set1_pd(wrow[r * d.c_in * kk + dx]), acc[r]);
            }
          }
        }
      }
      for (int r = 0; r < CB; ++r) {
        double* orow = ob + ((co0 + r) * ho + y) * wo + x;
        if (tail) {
          _mm512_mask_storeu_pd(orow, tm, acc[r]);
        } else {
          _mm512_storeu_pd(orow, acc[r]);
        }
      }
    }
  }
}

}  // namespace

void conv2d_forward(const double* in, const double* w, const double* bias,
                    double* out, const ConvDims& d) {
  const std::size_t ho = d.h_out(), wo = d.w_out();
  const std::size_t in_img = d.c_in * d.h_in * d.w_in;
  const std::size_t out_img = d.c_out * ho * wo;
  const std::size_t wfull = wo & ~std::size_t(7);
  const __mmask8 tm = tail_mask(wo - wfull);
  for (std::size_t b = 0; b < d.batch; ++b) {
    const double* ib = in + b * in_img;
    double* ob = out + b * out_img;
    std::size_t co0 = 0;
    for (; co0 + 4 <= d.c_out; co0 += 4) {
      conv_fwd_block<4>(ib, w, bias, ob, co0, d, ho, wo, wfull, tm);
    }
    for (; co0 < d.c_out; ++co0) {
      conv_fwd_block<1>(ib, w, bias, ob, co0, d, ho, wo, wfull, tm);
    }
  }
}

void conv2d_backward_input(const double* dout, const double* w,
                           double* din, const ConvDims& d) {
  const std::size_t ho = d.h_out(), wo = d.w_out();
  const std::size_t in_img = d.c_in * d.h_in * d.w_in;
  const std::size_t out_img = d.c_out * ho * wo;
  const std::size_t kk = d.k * d.k;
  const std::size_t wfull = wo & ~std::size_t(7);
  const __mmask8 tm = tail_mask(wo - wfull);
  for (std::size_t b = 0; b < d.batch; ++b) {
    const double* gb = dout + b * out_img;
    double* ib = din + b * in_img;
    for (std::size_t ci = 0; ci < d.c_in; ++ci) {
      double* ic = ib + ci * d.h_in * d.w_in;
      for (std::size_t dy = 0; dy < d.k; ++dy) {
        for (std::size_t dx = 0; dx < d.k; ++dx) {
          const std::size_t widx = ci * kk + dy * d.k + dx;
          std::size_t y = 0;
          // Two output rows at a time: two independent accumulator chains.
          for (; y + 2 <= ho; y += 2) {
            double* irow0 = ic + (y + dy * d.rate) * d.w_in + dx * d.rate;
            double* irow1 = irow0 + d.w_in;
            const double* grow0 = gb + y * wo;
            const double* grow1 = grow0 + wo;
            for (std::size_t x = 0; x < wo; x += 8) {
              const bool tail = x >= wfull;
              __m512d a0 = tail ? _mm512_maskz_loadu_pd(tm, irow0 + x)
                                : _mm512_loadu_pd(irow0 + x);
              __m512d a1 = tail ? _mm512_maskz_loadu_pd(tm, irow1 + x)
                                : _mm512_loadu_pd(irow1 + x);
              for (std::size_t co = 0; co < d.c_out; ++co) {
                const __m512d wv = _mm512_set1_pd(w[co * d.c_in * kk + widx]);
                const double* g0 = grow0 + co * ho * wo + x;
                const double* g1 = grow1 + co * ho * wo + x;
                if (tail) {
                  a0 = _mm512_fmadd_pd(_mm512_maskz_loadu_pd(tm, g0), wv, a0);
                  a1 = _mm512_fmadd_pd(_mm512_maskz_loadu_pd(tm, g1), wv, a1);
                } else {
                  a0 = _mm512_fmadd_pd(_mm512_loadu_pd(g0), wv, a0);
                  a1 = _mm512_fmadd_pd(_mm512_loadu_pd(g1), wv, a1);
                }
              }
              if (tail) {
                _mm512_mask_storeu_pd(irow0 + x, tm, a0);
                _mm512_mask_storeu_pd(irow1 + x, tm, a1);
              } else {
                _mm512_storeu_pd(irow0 + x, a0);
                _mm512_storeu_pd(irow1 + x, a1);
              }
            }
          }
          for (; y < ho; ++y) {
            double* irow = ic + (y + dy * d.rate) * d.w_in + dx * d.rate;
            const double* grow = gb + y * wo;
            for (std::size_t x = 0; x < wo; x += 8) {
              const bool tail = x >= wfull;
              __m512d a0 = tail ? _mm512_maskz_loadu_pd(tm, irow + x)
                                : _mm512_loadu_pd(irow + x);
              for (std::size_t co = 0; co < d.c_out; ++co) {
                const __m512d wv = _mm512_set1_pd(w[co * d.c_in * kk + widx]);
                const double* g0 = grow + co * ho * wo + x;
                a0 = _mm512_fmadd_pd(tail ? _mm512_maskz_loadu_pd(tm, g0)
                                          : _mm512_loadu_pd(g0),
                                     wv, a0);
              }
              if (tail) {
                _mm512_mask_storeu_pd(irow + x, tm, a0);
              } else {
                _mm512_storeu_pd(irow + x, a0);
              }
            }
          }
        }
      }
    }
  }
}

namespace {

template <int CB>
void conv_bwdw_block(const double* ibase, const double* gbase, double* dw,
                     std::size_t co0, const ConvDims& d, std::size_t ho,
                     std::size_t wo, std::size_t wfull, __mmask8 tm) {
  const std::size_t kk = d.k * d.k;
  for (std::size_t ci = 0; ci < d.c_in; ++ci) {
    const double* ic = ibase + ci * d.h_in * d.w_in;
    for (std::size_t dy = 0; dy < d.k; ++dy) {
      for (std::size_t dx = 0; dx < d.k; ++dx) {
        __m512d acc[CB];
        for (int r = 0; r < CB; ++r) acc[r] = _mm512_setzero_pd();
        for (std::size_t y = 0; y < ho; ++y) {
          const double* irow = ic + (y + dy * d.rate) * d.w_in + dx * d.rate;
          const double* grow = gbase + (co0 * ho + y) * wo;
          for (std::size_t x = 0; x < wo; x += 8) {
            const bool tail = x >= wfull;
            const __m512d iv = tail ? _mm512_maskz_loadu_pd(tm, irow + x)
                                    : _mm512_loadu_pd(irow + x);
            for (int r = 0; r < CB; ++r) {
              const double* g0 = grow + r * ho * wo + x;
              acc[r] = _mm512_fmadd_pd(
                  iv, tail ? _mm512_maskz_loadu_pd(tm, g0) : _mm512_loadu_pd(g0),
                  acc[r]);
            }
          }
        }
        for (int r = 0; r < CB; ++r) {
          dw[((co0 + r) * d.c_in + ci) * kk + dy * d.k + dx] +=
              _mm512_reduce_add_pd(acc[r]);
        }
      }
    }
  }
}

}  // namespace

void conv2d_backward_weights(const double* in, const double* dout,
                             double* dw, double* dbias, const ConvDims& d) {
  const std::size_t ho = d.h_out(), wo = d.w_out();
  const std::size_t in_img = d.c_in * d.h_in * d.w_in;
  const std::size_t out_img = d.c_out * ho * wo;
  const std::size_t wfull = wo & ~std::size_t(7);
  const __mmask8 tm = tail_mask(wo - wfull);
  for (std::size_t b = 0; b < d.batch; ++b) {
    const double* ibase = in + b * in_img;
    const double* gbase = dout + b * out_img;
    std::size_t co0 = 0;
    for (; co0 + 4 <= d.c_out; co0 += 4) {
      conv_bwdw_block<4>(ibase, gbase, dw, co0, d, ho, wo, wfull, tm);
    }
    for (; co0 < d.c_out; ++co0) {
      conv_bwdw_block<1>(ibase, gbase, dw, co0, d, ho, wo, wfull, tm);
    }
    if (dbias) {
      for (std::size_t co = 0; co < d.c_out; ++co) {
        const double* gc = gbase + co * ho * wo;
        const std::size_t total = ho * wo;
        const std::size_t full = total & ~std::size_t(7);
        __m512d acc = _mm512_setzero_pd();
        double rest = 0.0;
        for (std::size_t i = 0; i < full; i += 8) {
          acc = _mm512_add_pd(acc, _mm512_loadu_pd(gc + i));
        }
        for (std::size_t i = full; i < total; ++i) rest += gc[i];
        dbias[co] += _mm512_reduce_add_pd(acc) + rest;
      }
    }
  }
}

// 16 rows of A per pass over a k-block of B; the k-blocking keeps the active
// B slice in L2 instead of streaming the whole matrix once per row block.
void gemm(const double* a, const double* b, double* c,
          std::size_t m, std::size_t k, std::size_t n) {
  const std::size_t nfull = n & ~std::size_t(7);
  const __mmask8 tm = tail_mask(n - nfull);
  constexpr std::size_t kb_max = 512;
  for (std::size_t k0 = 0; k0 < k; k0 += kb_max) {
    const std::size_t k1 = k - k0 < kb_max ? k : k0 + kb_max;
    std::size_t i = 0;
    for (; i + 16 <= m; i += 16) {
      for (std::size_t j = 0; j < n; j += 8) {
        const bool tail = j >= nfull;
        __m512d acc[16];
        for (int r = 0; r < 16; ++r) {
          acc[r] = tail ? _mm512_maskz_loadu_pd(tm, c + (i + r) * n + j)
                        : _mm512_loadu_pd(c + (i + r) * n + j);
        }
        for (std::size_t p = k0; p < k1; ++p) {
          const __m512d bv = tail ? _mm512_maskz_loadu_pd(tm, b + p * n + j)
                                  : _mm512_loadu_pd(b + p * n + j);
          for (int r = 0; r < 16; ++r) {
            acc[r] = _mm512_fmadd_pd(_mm512_set1_pd(a[(i + r) * k + p]), bv, acc[r]);
          }
        }
        for (int r = 0; r < 16; ++r) {
          if (tail) {
            _mm512_mask_storeu_pd(c + (i + r) * n + j, tm, acc[r]);
          } else {
            _mm512_storeu_pd(c + (i + r) * n + j, acc[r]);
          }
        }
      }
    }
    for (; i < m; ++i) {
      for (std::size_t j = 0; j < n; j += 8) {
        const bool tail = j >= nfull;
        __m512d acc = tail ? _mm512_maskz_loadu_pd(tm, c + i * n + j)
                           : _mm512_loadu_pd(c + i * n + j);
        for (std::size_t p = k0; p < k1; ++p) {
          const __m512d bv = tail ? _mm512_maskz_loadu_pd(tm, b + p * n + j)
                                  : _mm512_loadu_pd(b + p * n + j);
          acc = _mm512_fmadd_pd(_mm512_set1_pd(a[i * k + p]), bv, acc);
        }
        if (tail) {
          _mm512_mask_storeu_pd(c + i * n + j, tm, acc);
        } else {
          _mm512_storeu_pd(c + i * n + j, acc);
        }
      }
    }
  }
}

// C[m,n] += A^T B with A stored [k,m]. Blocks 8 C rows so each pass keeps
// the accumulators in registers instead of round-tripping C through memory.
void gemm_at(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n) {
  const std::size_t nfull = n & ~std::size_t(7);
  const __mmask8 tm = tail_mask(n - nfull);
  std::size_t i = 0;
  for (; i + 8 <= m; i += 8) {
    for (std::size_t j = 0; j < n; j += 8) {
      const bool tail = j >= nfull;
      __m512d acc[8];
      for (int r = 0; r < 8; ++r) {
        acc[r] = tail ? _mm512_maskz_loadu_pd(tm, c + (i + r) * n + j)
                      : _mm512_loadu_pd(c + (i + r) * n + j);
      }
      for (std::size_t p = 0; p < k; ++p) {
        const __m512d bv = tail ? _mm512_maskz_loadu_pd(tm, b + p * n + j)
                                : _mm512_loadu_pd(b + p * n + j);
        const double* ap = a + p * m + i;
        for (int r = 0; r < 8; ++r) {
          acc[r] = _mm512_fmadd_pd(_mm512_set1_pd(ap[r]), bv, acc[r]);
        }
      }
      for (int r = 0; r < 8; ++r) {
        if (tail) {
          _mm512_mask_storeu_pd(c + (i + r) * n + j, tm, acc[r]);
        } else {
          _mm512_storeu_pd(c + (i + r) * n + j, acc[r]);
        }
      }
    }
  }
  for (; i < m; ++i) {
    for (std::size_t j = 0; j < n; j += 8) {
      const bool tail = j >= nfull;
      __m512d acc = tail ? _mm512_maskz_loadu_pd(tm, c + i * n + j)
                         : _mm512_loadu_pd(c + i * n + j);
      for (std::size_t p = 0; p < k; ++p) {
        const __m512d bv = tail ? _mm512_maskz_loadu_pd(tm, b + p * n + j)
                                : _mm512_loadu_pd(b + p * n + j);
        acc = _mm512_fmadd_pd(_mm512_set1_pd(a[p * m + i]), bv, acc);
      }
      if (tail) {
        _mm512_mask_storeu_pd(c + i * n + j, tm, acc);
      } else {
        _mm512_storeu_pd(c + i * n + j, acc);
      }
    }
  }
}

// C[m,n] += A B^T with B stored [n,k]. Blocks 8 A rows per B row so B is
// streamed m/8 times with 8 independent dot-product chains.
void gemm_bt(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n) {
  const std::size_t kfull = k & ~std::size_t(7);
  const __mmask8 tm = tail_mask(k - kfull);
  std::size_t i = 0;
  for (; i + 8 <= m; i += 8) {
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      __m512d acc[8];
      for (int r = 0; r < 8; ++r) acc[r] = _mm512_setzero_pd();
      for (std::size_t p = 0; p < kfull; p += 8) {
        const __m512d bv = _mm512_loadu_pd(brow + p);
        for (int r = 0; r < 8; ++r) {
          acc[r] = _mm512_fmadd_pd(_mm512_loadu_pd(a + (i + r) * k + p), bv, acc[r]);
        }
      }
      if (kfull < k) {
        const __m512d bv = _mm512_maskz_loadu_pd(tm, brow + kfull);
        for (int r = 0; r < 8; ++r) {
          acc[r] = _mm512_fmadd_pd(_mm512_maskz_loadu_pd(tm, a + (i + r) * k + kfull),
                                   bv, acc[r]);
        }
      }
      for (int r = 0; r < 8; ++r) c[(i + r) * n + j] += _mm512_reduce_add_pd(acc[r]);
    }
  }
  for (; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      __m512d acc = _mm512_setzero_pd();
      for (std::size_t p = 0; p < kfull; p += 8) {
        acc = _mm512_fmadd_pd(_mm512_loadu_pd(arow + p), _mm512_loadu_pd(brow + p), acc);
      }
      if (kfull < k) {
        acc = _mm512_fmadd_pd(_mm512_maskz_loadu_pd(tm, arow + kfull),
                              _mm512_maskz_loadu_pd(tm, brow + kfull), acc);
      }
      crow[j] += _mm512_reduce_add_pd(acc);
    }
  }
}

}  // namespace acre::kern::avx512
