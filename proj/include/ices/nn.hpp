#pragma once

// Network building blocks on top of the tape: multi-layer perceptrons and a
// gated recurrent cell. Parameters live in a caller-supplied ParamStore so
// optimizers, target copies and checkpoints see them uniformly.

#include <string>
#include <vector>

#include "ices/autodiff.hpp"
#include "ices/rng.hpp"

namespace ices {

enum class Activation { None, Tanh, Relu, Elu };

inline Ref activate(const Ref& x, Activation a) {
  switch (a) {
    case Activation::Tanh: return tanh_(x);
    case Activation::Relu: return relu_(x);
    case Activation::Elu: return elu_(x);
    case Activation::None: return x;
  }
  return x;
}

// Dense stack; hidden layers share one activation, output stays linear
// unless out_act says otherwise. Initialization is uniform(-1/sqrt(fan_in),
// 1/sqrt(fan_in)) for weights and biases.
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParamStore& ps, const std::string& prefix, std::vector<int> dims, Activation hidden_act,
      RandomStream& rng, Activation out_act = Activation::None)
      : dims_(std::move(dims)), hidden_act_(hidden_act), out_act_(out_act) {
    if (dims_.size() < 2) throw DimensionError("mlp: needs at least input and output dims");
    for (size_t i = 0; i + 1 < dims_.size(); ++i) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(dims_[i]));
      ws_.push_back(&ps.add_uniform(prefix + ".w" + std::to_string(i), dims_[i + 1], dims_[i],
                                    rng, bound));
      bs_.push_back(&ps.add_uniform(prefix + ".b" + std::to_string(i), 1, dims_[i + 1], rng,
                                    bound));
    }
  }

  Ref forward(Tape& t, const Ref& x) const {
    Ref h = x;
    for (size_t i = 0; i < ws_.size(); ++i) {
      h = linear(h, t.watch(*ws_[i]), t.watch(*bs_[i]));
      h = activate(h, i + 1 == ws_.size() ? out_act_ : hidden_act_);
    }
    return h;
  }

  int in_dim() const { return dims_.front(); }
  int out_dim() const { return dims_.back(); }

 private:
  std::vector<int> dims_;
  Activation hidden_act_ = Activation::Tanh;
  Activation out_act_ = Activation::None;
  std::vector<Tensor*> ws_, bs_;
};

// Gated recurrent cell:
//   z = sigmoid(x Wz^T + h Uz^T + bz)
//   r = sigmoid(x Wr^T + h Ur^T + br)
//   c = tanh(x Wh^T + (r . h) Uh^T + bh)
//   h' = h + z . (c - h)
// At zero parameters both gates sit at 0.5 and the candidate at 0, so the
// cell halves its hidden state; tests pin that.
class GruCell {
 public:
  GruCell() = default;
  GruCell(ParamStore& ps, const std::string& prefix, int in_dim, int hidden_dim,
          RandomStream& rng)
      : in_(in_dim), hid_(hidden_dim) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
    auto mk = [&](const char* name, int rows, int cols) {
      return &ps.add_uniform(prefix + "." + name, rows, cols, rng, bound);
    };
    wz_ = mk("wz", hid_, in_);
    uz_ = mk("uz", hid_, hid_);
    bz_ = mk("bz", 1, hid_);
    wr_ = mk("wr", hid_, in_);
    ur_ = mk("ur", hid_, hid_);
    br_ = mk("br", 1, hid_);
    wh_ = mk("wh", hid_, in_);
    uh_ = mk("uh", hid_, hid_);
    bh_ = mk("bh", 1, hid_);
  }

  Ref forward(Tape& t, const Ref& x, const Ref& h) const {
    if (x.cols != in_) throw DimensionError("gru: input width mismatch");
    if (h.cols != hid_ || h.rows != x.rows) throw DimensionError("gru: hidden shape mismatch");
    Ref z = sigmoid_(add_rowvec(add(matmul_t(x, t.watch(*wz_)), matmul_t(h, t.watch(*uz_))),
                                t.watch(*bz_)));
    Ref r = sigmoid_(add_rowvec(add(matmul_t(x, t.watch(*wr_)), matmul_t(h, t.watch(*ur_))),
                                t.watch(*br_)));
    Ref c = tanh_(add_rowvec(
        add(matmul_t(x, t.watch(*wh_)), matmul_t(mul(r, h), t.watch(*uh_))), t.watch(*bh_)));
    return add(h, mul(z, sub(c, h)));
  }

  int in_dim() const { return in_; }
  int hidden_dim() const { return hid_; }

 private:
  int in_ = 0, hid_ = 0;
  Tensor *wz_ = nullptr, *uz_ = nullptr, *bz_ = nullptr;
  Tensor *wr_ = nullptr, *ur_ = nullptr, *br_ = nullptr;
  Tensor *wh_ = nullptr, *uh_ = nullptr, *bh_ = nullptr;
};

}  // namespace ices
