#pragma once
// Dense row-major double tensors with an attached gradient slot, plus the
// reverse-mode tape. Tensors have shared-handle semantics: copying a Tensor
// aliases the same storage, which is what the tape relies on.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace acre {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(p_); }
  const Shape& shape() const { return p_->shape; }
  std::size_t ndim() const { return p_->shape.size(); }
  std::size_t dim(std::size_t i) const { return p_->shape[i]; }
  std::size_t numel() const { return p_->v.size(); }

  std::vector<double>& data() { return p_->v; }
  const std::vector<double>& data() const { return p_->v; }

  bool requires_grad() const { return p_->rg; }
  void set_requires_grad(bool rg) { p_->rg = rg; }

  // Allocates the gradient (zero-filled, congruent with data) on first use.
  std::vector<double>& grad();
  bool has_grad() const { return !p_->g.empty(); }
  void zero_grad();

  double item() const;  // scalar tensors only

  bool same_storage(const Tensor& other) const { return p_ == other.p_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> v;
    std::vector<double> g;
    bool rg = false;
  };
  std::shared_ptr<Impl> p_;
};

// Records backward rules during a forward pass; backward() replays them in
// reverse order exactly once.
class Tape {
 public:
  void record(std::function<void()> rule) { rules_.push_back(std::move(rule)); }
  std::size_t size() const { return rules_.size(); }

  // loss must be scalar; throws if called again without reset().
  void backward(Tensor loss);
  void reset();

 private:
  std::vector<std::function<void()>> rules_;
  bool consumed_ = false;
};

// Deterministic RNG: raw engine is mt19937_64, derived draws avoid
// std::distribution so sequences are stable across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  std::uint64_t next_u64() { return engine_(); }
  double uniform01();                       // [0, 1)
  double uniform(double lo, double hi);
  std::size_t below(std::size_t n);         // [0, n)
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
};

void check_finite(const Tensor& t, const char* what);  // debug builds only

}  // namespace acre
