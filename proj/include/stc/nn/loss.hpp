#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "stc/nn/tape.hpp"

namespace stc::nn {

// Least-squares GAN discriminator loss: 1/2 E[(real - 1)^2] + 1/2 E[fake^2].
template <class T>
Var lsgan_d(Tape<T>& tape, Var real, Var fake) {
  const Tensor<T>& r = tape.value(real);
  const Tensor<T>& f = tape.value(fake);
  if (r.size() == 0 || f.size() == 0) throw ArgumentError("lsgan_d: empty scores");
  T lr = 0, lf = 0;
  for (T v : r.data) lr += (v - 1) * (v - 1);
  for (T v : f.data) lf += v * v;
  Tensor<T> out({1}, T(0.5) * lr / static_cast<T>(r.size()) + T(0.5) * lf / static_cast<T>(f.size()));
  const bool rg = tape.requires_grad(real) || tape.requires_grad(fake);
  return tape.record(std::move(out), rg, [=](Tape<T>& t, Var y) {
    const T g = t.grad(y)[0];
    if (t.requires_grad(real)) {
      const Tensor<T>& rv = t.value(real);
      Tensor<T>& gr = t.grad(real);
      for (std::size_t i = 0; i < rv.size(); ++i) gr[i] += g * (rv[i] - 1) / static_cast<T>(rv.size());
    }
    if (t.requires_grad(fake)) {
      const Tensor<T>& fv = t.value(fake);
      Tensor<T>& gf = t.grad(fake);
      for (std::size_t i = 0; i < fv.size(); ++i) gf[i] += g * fv[i] / static_cast<T>(fv.size());
    }
  });
}

// Least-squares GAN generator loss: 1/2 E[(fake - 1)^2].
template <class T>
Var lsgan_g(Tape<T>& tape, Var fake) {
  const Tensor<T>& f = tape.value(fake);
  if (f.size() == 0) throw ArgumentError("lsgan_g: empty scores");
  T acc = 0;
  for (T v : f.data) acc += (v - 1) * (v - 1);
  Tensor<T> out({1}, T(0.5) * acc / static_cast<T>(f.size()));
  return tape.record(std::move(out), tape.requires_grad(fake), [=](Tape<T>& t, Var y) {
    const T g = t.grad(y)[0];
    const Tensor<T>& fv = t.value(fake);
    Tensor<T>& gf = t.grad(fake);
    for (std::size_t i = 0; i < fv.size(); ++i) gf[i] += g * (fv[i] - 1) / static_cast<T>(fv.size());
  });
}

// Mean softmax cross-entropy. logits: (N, K); labels: N indices in [0, K).
template <class T>
Var cross_entropy(Tape<T>& tape, Var logits, std::span<const int> labels) {
  const Shape s = tape.shape(logits);
  if (s.size() != 2 || s[0] != static_cast<int>(labels.size()))
    throw ArgumentError("cross_entropy: expected (N, K) logits with N labels");
  const int n = s[0], k = s[1];
  for (int l : labels)
    if (l < 0 || l >= k) throw ArgumentError("cross_entropy: class index " + std::to_string(l) + " out of range");
  const Tensor<T>& z = tape.value(logits);
  std::vector<T> prob(static_cast<std::size_t>(n) * k);
  T loss = 0;
  for (int i = 0; i < n; ++i) {
    T mx = z[i * k];
    for (int j = 1; j < k; ++j) mx = std::max(mx, z[i * k + j]);
    T sum = 0;
    for (int j = 0; j < k; ++j) sum += std::exp(z[i * k + j] - mx);
    const T lse = mx + std::log(sum);
    for (int j = 0; j < k; ++j) prob[i * k + j] = std::exp(z[i * k + j] - lse);
    loss += lse - z[i * k + labels[i]];
  }
  std::vector<int> lab(labels.begin(), labels.end());
  Tensor<T> out({1}, loss / static_cast<T>(n));
  return tape.record(std::move(out), tape.requires_grad(logits),
                     [=, prob = std::move(prob), lab = std::move(lab)](Tape<T>& t, Var y) {
                       const T g = t.grad(y)[0] / static_cast<T>(n);
                       Tensor<T>& gz = t.grad(logits);
                       for (int i = 0; i < n; ++i)
                         for (int j = 0; j < k; ++j)
                           gz[i * k + j] += g * (prob[i * k + j] - (j == lab[i] ? T(1) : T(0)));
                     });
}

// Mean absolute difference.
template <class T>
Var l1(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& av = tape.value(a);
  const Tensor<T>& bv = tape.value(b);
  if (av.shape != bv.shape) throw ArgumentError("l1: shape mismatch " + to_string(av.shape) + " vs " + to_string(bv.shape));
  if (av.size() == 0) throw ArgumentError("l1: empty tensors");
  T acc = 0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const T d = av[i] - bv[i];
    tape.mix_signature(d > T(0));
    acc += std::abs(d);
  }
  Tensor<T> out({1}, acc / static_cast<T>(av.size()));
  const bool rg = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.record(std::move(out), rg, [=](Tape<T>& t, Var y) {
    const T g = t.grad(y)[0] / static_cast<T>(t.value(a).size());
    const Tensor<T>& av2 = t.value(a);
    const Tensor<T>& bv2 = t.value(b);
    Tensor<T>* ga = t.requires_grad(a) ? &t.grad(a) : nullptr;
    Tensor<T>* gb = t.requires_grad(b) ? &t.grad(b) : nullptr;
    for (std::size_t i = 0; i < av2.size(); ++i) {
      const T d = av2[i] - bv2[i];
      const T sgn = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
      if (ga) (*ga)[i] += g * sgn;
      if (gb) (*gb)[i] -= g * sgn;
    }
  });
}

}  // namespace stc::nn
