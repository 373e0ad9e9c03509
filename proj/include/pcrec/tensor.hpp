#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pcrec {

class Tape;

namespace detail {

struct TensorImpl {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until backward touches this node
    const Tape* tape = nullptr;
    std::int64_t node_id = -1;
    bool tape_output = false;  // produced by an op on `tape` (vs. leaf)
};

}  // namespace detail

// Dense row-major tensor of 64-bit floats. Copies share storage; use clone()
// for an independent buffer. Participation in autodiff is tracked by the Tape
// that records the op which consumed or produced it.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> values);

    static Tensor scalar(double v);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return impl_->shape; }
    std::size_t ndim() const { return impl_->shape.size(); }
    std::size_t size() const { return impl_->data.size(); }
    std::size_t rows() const { return impl_->shape.at(0); }
    std::size_t cols() const { return impl_->shape.at(1); }

    double* data() { return impl_->data.data(); }
    const double* data() const { return impl_->data.data(); }
    std::vector<double>& values() { return impl_->data; }
    const std::vector<double>& values() const { return impl_->data; }

    double& operator[](std::size_t i) { return impl_->data[i]; }
    double operator[](std::size_t i) const { return impl_->data[i]; }
    double& operator()(std::size_t i, std::size_t j) { return impl_->data[i * cols() + j]; }
    double operator()(std::size_t i, std::size_t j) const { return impl_->data[i * cols() + j]; }

    // Value of a single-element tensor.
    double item() const;

    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    std::vector<double>& grad();
    const std::vector<double>& grad() const;
    void zero_grad();

    std::int64_t node_id() const { return impl_ ? impl_->node_id : -1; }

    Tensor clone() const;

  private:
    std::shared_ptr<detail::TensorImpl> impl_;
    friend class Tape;
};

// Result of a row-wise max reduction: per-column maxima plus the row index
// that produced each one (ties resolved toward the lowest row).
struct MaxRows {
    Tensor values;                    // [d]
    std::vector<std::size_t> argmax;  // [d]
};

// Define-by-run gradient tape. Ops record a backward rule as they execute;
// backward() replays the rules in reverse, accumulating d(loss)/d(leaf) into
// each leaf's grad buffer (which persists across tapes until zeroed, so
// several backward passes may accumulate before an optimizer step).
//
// A tensor produced by an op belongs to the tape that recorded it. Feeding it
// into a *different* tape re-registers it as a constant leaf there: gradients
// do not flow across tapes.
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    std::size_t num_steps() const { return steps_.size(); }

    // out[i,j] = sum_k x[i,k] w[k,j] + b[j]
    Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);
    Tensor relu(const Tensor& x);
    MaxRows max_over_rows(const Tensor& x);
    // Per-segment row-wise max: segment s covers rows [offsets[s], offsets[s+1]).
    // Output row s holds the column maxima of segment s.
    Tensor segment_max_rows(const Tensor& x, const std::vector<std::size_t>& offsets);
    Tensor concat_cols(std::span<const Tensor> parts);
    Tensor concat_cols(std::initializer_list<Tensor> parts);
    // Row i of the input lands at output rows k*i .. k*i+k-1 (children of a
    // parent row are contiguous).
    Tensor tile_rows(const Tensor& x, std::size_t k);
    // x: [c_in, h, w]; kernels: [c_out, c_in, k, k]; bias: [c_out] or undefined.
    Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias,
                  std::size_t stride, std::size_t padding);
    Tensor reshape(const Tensor& x, std::vector<std::size_t> shape);
    Tensor gather_rows(const Tensor& x, std::vector<std::size_t> indices);
    Tensor add(const Tensor& a, const Tensor& b);
    Tensor sub(const Tensor& a, const Tensor& b);
    Tensor scale(const Tensor& x, double factor);
    Tensor sum(const Tensor& x);  // scalar [1]

    // Extension point for ops whose forward runs outside the engine. The
    // backward callback receives the output grad and one grad buffer per
    // input (same order as `inputs`, each already sized) and must += into them.
    Tensor custom(std::span<const Tensor> inputs, std::vector<std::size_t> out_shape,
                  std::vector<double> out_values,
                  std::function<void(const double* out_grad,
                                     const std::vector<double*>& input_grads)> backward);

    // Populates grads of every node reachable on this tape. `loss` must be a
    // single-element tensor recorded here.
    void backward(const Tensor& loss);

  private:
    using Impl = detail::TensorImpl;
    using ImplPtr = std::shared_ptr<Impl>;

    struct Step {
        std::function<void()> back;
    };

    void enroll(const Tensor& t);
    Tensor make_output(std::vector<std::size_t> shape);
    void push(std::function<void()> back) { steps_.push_back({std::move(back)}); }

    std::vector<Step> steps_;
    std::vector<ImplPtr> nodes_;
    std::int64_t next_id_ = 0;
};

}  // namespace pcrec
