#pragma once

// Parameterized layers. Each owns its Parameters and appends pointers to
// them via collect(); weights are uniform in +-1/sqrt(fan_in), biases zero.

#include <cmath>
#include <string>
#include <vector>

#include "stc/nn/ops.hpp"
#include "stc/rng.hpp"

namespace stc::nn {

template <class T>
Tensor<T> uniform_init(const Shape& shape, int fan_in, Rng& rng) {
  Tensor<T> t(shape);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (T& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <class T>
struct Conv2d {
  Parameter<T> w, b;
  int sh = 1, sw = 1, ph = 0, pw = 0;

  Conv2d() = default;
  Conv2d(const std::string& name, int cin, int cout, int kh, int kw, int sh_, int sw_, int ph_, int pw_,
         Rng& rng)
      : w(name + ".w", uniform_init<T>({cout, cin, kh, kw}, cin * kh * kw, rng)),
        b(name + ".b", Tensor<T>({cout})),
        sh(sh_), sw(sw_), ph(ph_), pw(pw_) {}

  Var operator()(Tape<T>& t, Var x, bool train = true) {
    return conv2d(t, x, t.param(w, train), t.param(b, train), sh, sw, ph, pw);
  }
  void collect(std::vector<Parameter<T>*>& out) { out.insert(out.end(), {&w, &b}); }
};

template <class T>
struct ConvTranspose2d {
  Parameter<T> w, b;
  int sh = 1, sw = 1, ph = 0, pw = 0, oph = 0, opw = 0;

  ConvTranspose2d() = default;
  ConvTranspose2d(const std::string& name, int cin, int cout, int kh, int kw, int sh_, int sw_, int ph_,
                  int pw_, int oph_, int opw_, Rng& rng)
      : w(name + ".w", uniform_init<T>({cin, cout, kh, kw}, cin * kh * kw, rng)),
        b(name + ".b", Tensor<T>({cout})),
        sh(sh_), sw(sw_), ph(ph_), pw(pw_), oph(oph_), opw(opw_) {}

  Var operator()(Tape<T>& t, Var x, bool train = true) {
    return conv2d_transpose(t, x, t.param(w, train), t.param(b, train), sh, sw, ph, pw, oph, opw);
  }
  void collect(std::vector<Parameter<T>*>& out) { out.insert(out.end(), {&w, &b}); }
};

template <class T>
struct InstanceNorm {
  Parameter<T> gamma, beta;

  InstanceNorm() = default;
  InstanceNorm(const std::string& name, int channels)
      : gamma(name + ".gamma", Tensor<T>({channels}, T(1))), beta(name + ".beta", Tensor<T>({channels})) {}

  Var operator()(Tape<T>& t, Var x, bool train = true) {
    return instance_norm(t, x, t.param(gamma, train), t.param(beta, train));
  }
  void collect(std::vector<Parameter<T>*>& out) { out.insert(out.end(), {&gamma, &beta}); }
};

template <class T>
struct Linear {
  Parameter<T> w, b;

  Linear() = default;
  Linear(const std::string& name, int in, int out, Rng& rng)
      : w(name + ".w", uniform_init<T>({out, in}, in, rng)), b(name + ".b", Tensor<T>({out})) {}

  Var operator()(Tape<T>& t, Var x, bool train = true) {
    return linear(t, x, t.param(w, train), t.param(b, train));
  }
  void collect(std::vector<Parameter<T>*>& out) { out.insert(out.end(), {&w, &b}); }
};

}  // namespace stc::nn
