// Scalar reference kernels. Compiled with -ffp-contract=off so the written
// operation order is the executed one; the SIMD variants are validated
// against these, and conv2d_standard_forward / conv2d_forward(rate=1) must
// agree bitwise.

#include "acre/kernels.hpp"

namespace acre::kern::scalar {

void conv2d_forward(const double* in, const double* w, const double* bias,
                    double* out, const ConvDims& d) {
  const std::size_t ho = d.h_out(), wo = d.w_out();
  const std::size_t in_img = d.c_in * d.h_in * d.w_in;
  const std::size_t out_img = d.c_out * ho * wo;
  for (std::size_t b = 0; b < d.batch; ++b) {
    const double* ib = in + b * in_img;
    double* ob = out + b * out_img;
    for (std::size_t co = 0; co < d.c_out; ++co) {
      const double* wc = w + co * d.c_in * d.k * d.k;
      for (std::size_t y = 0; y < ho; ++y) {
        for (std::size_t x = 0; x < wo; ++x) {
          double acc = bias ? bias[co] : 0.0;
          for (std::size_t ci = 0; ci < d.c_in; ++ci) {
            const double* ic = ib + ci * d.h_in * d.w_in;
            const double* wk = wc + ci * d.k * d.k;
            for (std::size_t dy = 0; dy < d.k; ++dy) {
              const double* irow = ic + (y + dy * d.rate) * d.w_in + x;
              for (std::size_t dx = 0; dx < d.k; ++dx) {
                acc += irow[dx * d.rate] * wk[dy * d.k + dx];
              }
            }
          }
          ob[(co * ho + y) * wo + x] = acc;
        }
      }
    }
  }
}

void conv2d_standard_forward(const double* in, const double* w, const double* bias,
                             double* out, std::size_t batch,
                             std::size_t c_in, std::size_t h_in, std::size_t w_in,
                             std::size_t c_out, std::size_t k) {
  const std::size_t ho = h_in - (k - 1), wo = w_in - (k - 1);
  const std::size_t in_img = c_in * h_in * w_in;
  const std::size_t out_img = c_out * ho * wo;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* ib = in + b * in_img;
    double* ob = out + b * out_img;
    for (std::size_t co = 0; co < c_out; ++co) {
      const double* wc = w + co * c_in * k * k;
      for (std::size_t y = 0; y < ho; ++y) {
        for (std::size_t x = 0; x < wo; ++x) {
          double acc = bias ? bias[co] : 0.0;
          for (std::size_t ci = 0; ci < c_in; ++ci) {
            const double* ic = ib + ci * h_in * w_in;
            const double* wk = wc + ci * k * k;
            for (std::size_t dy = 0; dy < k; ++dy) {
              const double* irow = ic + (y + dy) * w_in + x;
              for (std::size_t dx = 0; dx < k; ++dx) {
                acc += irow[dx] * wk[dy * k + dx];
              }
            }
          }
          ob[(co * ho + y) * wo + x] = acc;
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
            const double wv = wk[dy * d.k + dx];
            for (std::size_t y = 0; y < ho; ++y) {
              double* irow = ic + (y + dy * d.rate) * d.w_in + dx * d.rate;
              const double* grow = gb + (co * ho + y) * wo;
              for (std::size_t x = 0; x < wo; ++x) {
                irow[x] += grow[x] * wv;
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
  for (std::size_t co = 0; co < d.c_out; ++co) {
    for (std::size_t ci = 0; ci < d.c_in; ++ci) {
      for (std::size_t dy = 0; dy < d.k; ++dy) {
        for (std::size_t dx = 0; dx < d.k; ++dx) {
          double acc = 0.0;
          for (std::size_t b = 0; b < d.batch; ++b) {
            const double* gb = dout + b * out_img + co * ho * wo;
            const double* ic = in + b * in_img + ci * d.h_in * d.w_in;
            for (std::size_t y = 0; y < ho; ++y) {
              const double* irow = ic + (y + dy * d.rate) * d.w_in + dx * d.rate;
              const double* grow = gb + y * wo;
              for (std::size_t x = 0; x < wo; ++x) {
                acc += grow[x] * irow[x];
              }
            }
          }
          dw[((co * d.c_in + ci) * d.k + dy) * d.k + dx] += acc;
        }
      }
    }
    if (dbias) {
      double acc = 0.0;
      for (std::size_t b = 0; b < d.batch; ++b) {
        const double* gb = dout + b * out_img + co * ho * wo;
        for (std::size_t i = 0; i < ho * wo; ++i) acc += gb[i];
      }
      dbias[co] += acc;
    }
  }
}

void gemm(const double* a, const double* b, double* c,
          std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_at(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[p * m + i];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_bt(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

}  // namespace acre::kern::scalar
