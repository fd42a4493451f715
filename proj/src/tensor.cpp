#include "acre/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace acre {

namespace {
// Training allocates and frees many multi-megabyte activation buffers per
// batch; by default glibc serves those straight from mmap, so every batch
// pays mmap/munmap plus kernel page-zeroing. Keeping large blocks on the
// heap lets them be recycled.
struct MallocTuning {
  MallocTuning() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_MAX, 0);
    mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
#endif
  }
};
const MallocTuning malloc_tuning;
}  // namespace

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t;
  t.p_ = std::make_shared<Impl>();
  t.p_->shape = std::move(shape);
  t.p_->v.assign(shape_numel(t.p_->shape), value);
  t.p_->rg = requires_grad;
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw std::invalid_argument("Tensor::from: shape " + shape_str(shape) +
                                " does not match data length " + std::to_string(data.size()));
  }
  Tensor t;
  t.p_ = std::make_shared<Impl>();
  t.p_->shape = std::move(shape);
  t.p_->v = std::move(data);
  t.p_->rg = requires_grad;
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

std::vector<double>& Tensor::grad() {
  if (p_->g.empty()) p_->g.assign(p_->v.size(), 0.0);
  return p_->g;
}

void Tensor::zero_grad() {
  if (!p_->g.empty()) p_->g.assign(p_->v.size(), 0.0);
}

double Tensor::item() const {
  if (numel() != 1) {
    throw std::logic_error("Tensor::item: tensor has " + std::to_string(numel()) + " elements");
  }
  return p_->v[0];
}

void Tape::backward(Tensor loss) {
  if (consumed_) {
    throw std::logic_error("Tape::backward: tape already consumed; reset() first");
  }
  if (loss.numel() != 1) {
    throw std::logic_error("Tape::backward: loss must be scalar, got " +
                           shape_str(loss.shape()));
  }
  consumed_ = true;
  loss.grad()[0] += 1.0;
  for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) (*it)();
}

void Tape::reset() {
  rules_.clear();
  consumed_ = false;
}

double Rng::uniform01() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform01();
}

std::size_t Rng::below(std::size_t n) {
  // Rejection sampling for an unbiased draw.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return static_cast<std::size_t>(x % n);
}

void check_finite([[maybe_unused]] const Tensor& t, [[maybe_unused]] const char* what) {
#ifndef NDEBUG
  for (double x : t.data()) {
    if (!std::isfinite(x)) {
      throw std::runtime_error(std::string("non-finite value after op: ") + what);
    }
  }
#endif
}

}  // namespace acre
