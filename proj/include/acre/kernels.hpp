#pragma once
// Arithmetic inner loops behind the tensor ops: dilated 2D convolution
// (forward + both backward passes) and the three GEMM orientations the
// training path needs. Each kernel exists as a scalar reference and as
// AVX2 / AVX-512 variants selected at runtime; ACRE_KERNELS=scalar|avx2|avx512
// overrides the autodetected choice.
//
// Conventions shared by every variant:
//   - all buffers are dense row-major double,
//   - convolution is cross-correlation (no kernel flip) on an already
//     padded input; output extent is H - (k-1)*rate per spatial axis,
//   - backward kernels accumulate (+=) into their destination,
//   - accumulation order within one output element is fixed, so results
//     are deterministic for a given variant.

#include <cstddef>
#include <string>

namespace acre::kern {

enum class Isa { scalar = 0, avx2 = 1, avx512 = 2 };

Isa best_supported();
Isa active();
void set_active(Isa isa);       // throws if the ISA is unsupported on this CPU
bool supported(Isa isa);
std::string isa_name(Isa isa);

struct ConvDims {
  std::size_t batch;
  std::size_t c_in, h_in, w_in;    // padded input extents
  std::size_t c_out, k;            // square kernel
  std::size_t rate;                // dilation; 1 = standard convolution
  std::size_t h_out() const { return h_in - (k - 1) * rate; }
  std::size_t w_out() const { return w_in - (k - 1) * rate; }
};

// out[b,co,y,x] = bias[co] + sum_{ci,dy,dx} in[b,ci,y+dy*r,x+dx*r] * w[co,ci,dy,dx]
void conv2d_forward(const double* in, const double* w, const double* bias,
                    double* out, const ConvDims& d);

// din[b,ci,y+dy*r,x+dx*r] += dout[b,co,y,x] * w[co,ci,dy,dx]
void conv2d_backward_input(const double* dout, const double* w,
                           double* din, const ConvDims& d);

// dw[co,ci,dy,dx] += sum_{b,y,x} dout[b,co,y,x] * in[b,ci,y+dy*r,x+dx*r]
// dbias[co]       += sum_{b,y,x} dout[b,co,y,x]
void conv2d_backward_weights(const double* in, const double* dout,
                             double* dw, double* dbias, const ConvDims& d);

// C[M,N] += A[M,K] * B[K,N]
void gemm(const double* a, const double* b, double* c,
          std::size_t m, std::size_t k, std::size_t n);

// C[M,N] += A^T * B with A stored [K,M], B stored [K,N]
void gemm_at(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n);

// C[M,N] += A * B^T with A stored [M,K], B stored [N,K]
void gemm_bt(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n);

// Per-variant entry points, used by the equivalence tests and the dispatcher.
namespace scalar {
void conv2d_forward(const double*, const double*, const double*, double*, const ConvDims&);
void conv2d_backward_input(const double*, const double*, double*, const ConvDims&);
void conv2d_backward_weights(const double*, const double*, double*, double*, const ConvDims&);
void gemm(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
void gemm_at(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
void gemm_bt(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
// Standalone non-dilated convolution, kept as an independent code path so the
// rate-1 identity of the dilated kernel can be checked against it bitwise.
void conv2d_standard_forward(const double* in, const double* w, const double* bias,
                             double* out, std::size_t batch,
                             std::size_t c_in, std::size_t h_in, std::size_t w_in,
                             std::size_t c_out, std::size_t k);
}  // namespace scalar

namespace avx2 {
void conv2d_forward(const double*, const double*, const double*, double*, const ConvDims&);
void conv2d_backward_input(const double*, const double*, double*, const ConvDims&);
void conv2d_backward_weights(const double*, const double*, double*, double*, const ConvDims&);
void gemm(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
void gemm_at(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
void gemm_bt(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
}  // namespace avx2

namespace avx512 {
void conv2d_forward(const double*, const double*, const double*, double*, const ConvDims&);
void conv2d_backward_input(const double*, const double*, double*, const ConvDims&);
void conv2d_backward_weights(const double*, const double*, double*, double*, const ConvDims&);
void gemm(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
void gemm_at(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
void gemm_bt(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
}  // namespace avx512

}  // namespace acre::kern
