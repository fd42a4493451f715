#include "acre/kernels.hpp"

#include <cstdlib>
#include <stdexcept>

namespace acre::kern {

namespace {

Isa detect_best() {
#if defined(__x86_64__) || defined(__i386__)
  if (__builtin_cpu_supports("avx512f")) return Isa::avx512;
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return Isa::avx2;
#endif
  return Isa::scalar;
}

Isa initial() {
  Isa best = detect_best();
  if (const char* env = std::getenv("ACRE_KERNELS")) {
    const std::string s(env);
    Isa want = best;
    if (s == "scalar") want = Isa::scalar;
    else if (s == "avx2") want = Isa::avx2;
    else if (s == "avx512") want = Isa::avx512;
    else throw std::runtime_error("ACRE_KERNELS: unknown value '" + s + "'");
    if (static_cast<int>(want) > static_cast<int>(best)) {
      throw std::runtime_error("ACRE_KERNELS: " + s + " not supported on this CPU");
    }
    return want;
  }
  return best;
}

Isa g_active = initial();

}  // namespace

Isa best_supported() { return detect_best(); }
Isa active() { return g_active; }

bool supported(Isa isa) {
  return static_cast<int>(isa) <= static_cast<int>(detect_best());
}

void set_active(Isa isa) {
  if (!supported(isa)) {
    throw std::runtime_error("kernel ISA " + isa_name(isa) + " not supported on this CPU");
  }
  g_active = isa;
}

std::string isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
    case Isa::avx512: return "avx512";
  }
  return "?";
}

void conv2d_forward(const double* in, const double* w, const double* bias,
                    double* out, const ConvDims& d) {
  switch (g_active) {
    case Isa::avx512: avx512::conv2d_forward(in, w, bias, out, d); return;
    case Isa::avx2: avx2::conv2d_forward(in, w, bias, out, d); return;
    case Isa::scalar: scalar::conv2d_forward(in, w, bias, out, d); return;
  }
}

void conv2d_backward_input(const double* dout, const double* w,
                           double* din, const ConvDims& d) {
  switch (g_active) {
    case Isa::avx512: avx512::conv2d_backward_input(dout, w, din, d); return;
    case Isa::avx2: avx2::conv2d_backward_input(dout, w, din, d); return;
    case Isa::scalar: scalar::conv2d_backward_input(dout, w, din, d); return;
  }
}

void conv2d_backward_weights(const double* in, const double* dout,
                             double* dw, double* dbias, const ConvDims& d) {
  switch (g_active) {
    case Isa::avx512: avx512::conv2d_backward_weights(in, dout, dw, dbias, d); return;
    case Isa::avx2: avx2::conv2d_backward_weights(in, dout, dw, dbias, d); return;
    case Isa::scalar: scalar::conv2d_backward_weights(in, dout, dw, dbias, d); return;
  }
}

void gemm(const double* a, const double* b, double* c,
          std::size_t m, std::size_t k, std::size_t n) {
  switch (g_active) {
    case Isa::avx512: avx512::gemm(a, b, c, m, k, n); return;
    case Isa::avx2: avx2::gemm(a, b, c, m, k, n); return;
    case Isa::scalar: scalar::gemm(a, b, c, m, k, n); return;
  }
}

void gemm_at(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n) {
  switch (g_active) {
    case Isa::avx512: avx512::gemm_at(a, b, c, m, k, n); return;
    case Isa::avx2: avx2::gemm_at(a, b, c, m, k, n); return;
    case Isa::scalar: scalar::gemm_at(a, b, c, m, k, n); return;
  }
}

void gemm_bt(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n) {
  switch (g_active) {
    case Isa::avx512: avx512::gemm_bt(a, b, c, m, k, n); return;
    case Isa::avx2: avx2::gemm_bt(a, b, c, m, k, n); return;
    case Isa::scalar: scalar::gemm_bt(a, b, c, m, k, n); return;
  }
}

}  // namespace acre::kern
