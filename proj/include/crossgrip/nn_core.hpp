#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "crossgrip/rng.hpp"

namespace crossgrip {

/// Fully-connected network, ReLU hidden activations, linear output, f64
/// parameters. weights[l] is row-major (sizes[l+1] x sizes[l]).
struct DenseNet {
  std::vector<int> sizes;
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> biases;

  int input_dim() const { return sizes.front(); }
  int output_dim() const { return sizes.back(); }
  std::size_t layer_count() const { return weights.size(); }

  static DenseNet make(const std::vector<int>& layer_sizes) {
    if (layer_sizes.size() < 2)
      throw std::invalid_argument("DenseNet: need at least input and output");
    for (int s : layer_sizes)
      if (s <= 0) throw std::invalid_argument("DenseNet: layer size <= 0");
    DenseNet net;
    net.sizes = layer_sizes;
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
      net.weights.emplace_back(
          std::size_t(layer_sizes[l + 1]) * layer_sizes[l], 0.0);
      net.biases.emplace_back(std::size_t(layer_sizes[l + 1]), 0.0);
    }
    return net;
  }

  bool all_finite() const {
    for (const auto& w : weights)
      for (double v : w)
        if (!std::isfinite(v)) return false;
    for (const auto& b : biases)
      for (double v : b)
        if (!std::isfinite(v)) return false;
    return true;
  }
};

/// He-uniform initialization: W ~ U[-sqrt(6/fan_in), +sqrt(6/fan_in)],
/// biases zero. Draw order is fixed (layers ascending, rows outer) so a seed
/// pins the exact parameters.
inline void init_he_uniform(DenseNet& net, Rng& rng) {
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const double limit = std::sqrt(6.0 / net.sizes[l]);
    for (double& w : net.weights[l]) w = rng.uniform(-limit, limit);
    for (double& b : net.biases[l]) b = 0.0;
  }
}

/// Single-sample forward pass.
inline std::vector<double> forward(const DenseNet& net,
                                   const std::vector<double>& input) {
  if (static_cast<int>(input.size()) != net.input_dim())
    throw std::invalid_argument("forward: input dimension mismatch");
  std::vector<double> cur = input, next;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const int in = net.sizes[l], out = net.sizes[l + 1];
    next.assign(std::size_t(out), 0.0);
    const double* W = net.weights[l].data();
    for (int o = 0; o < out; ++o) {
      double acc = net.biases[l][o];
      const double* row = W + std::size_t(o) * in;
      for (int i = 0; i < in; ++i) acc += row[i] * cur[i];
      next[o] = acc;
    }
    if (l + 1 < net.layer_count())
      for (double& v : next) v = v > 0.0 ? v : 0.0;  // ReLU
    cur.swap(next);
  }
  return cur;
}

/// Activations retained for backprop. acts[0] is the input batch; acts[l+1]
/// the post-activation output of layer l. All matrices are row-major
/// (batch x dim).
struct BatchCache {
  int batch = 0;
  std::vector<std::vector<double>> acts;
};

/// Batched forward pass. X is row-major (batch x input_dim). The inner loops
/// are in saxpy form over contiguous rows so the compiler can vectorize them
/// without relaxed float semantics (training determinism depends on that).
inline const std::vector<double>& forward_batch(const DenseNet& net,
                                                const std::vector<double>& X,
                                                int batch, BatchCache& cache) {
  const int in0 = net.input_dim();
  if (X.size() != std::size_t(batch) * in0)
    throw std::invalid_argument("forward_batch: bad input shape");
  cache.batch = batch;
  cache.acts.assign(net.layer_count() + 1, {});
  cache.acts[0] = X;
  std::vector<double> wt;  // transposed weights (in x out), rebuilt per layer
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const int in = net.sizes[l], out = net.sizes[l + 1];
    wt.assign(std::size_t(in) * out, 0.0);
    for (int o = 0; o < out; ++o)
      for (int i = 0; i < in; ++i)
        wt[std::size_t(i) * out + o] = net.weights[l][std::size_t(o) * in + i];
    auto& Y = cache.acts[l + 1];
    Y.assign(std::size_t(batch) * out, 0.0);
    const auto& Xl = cache.acts[l];
    for (int b = 0; b < batch; ++b) {
      double* y = Y.data() + std::size_t(b) * out;
      for (int o = 0; o < out; ++o) y[o] = net.biases[l][o];
      const double* x = Xl.data() + std::size_t(b) * in;
      for (int i = 0; i < in; ++i) {
        const double xi = x[i];
        const double* wrow = wt.data() + std::size_t(i) * out;
        for (int o = 0; o < out; ++o) y[o] += xi * wrow[o];
      }
    }
    if (l + 1 < net.layer_count())
      for (double& v : Y) v = v > 0.0 ? v : 0.0;
  }
  return cache.acts.back();
}

struct Gradients {
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> biases;

  static Gradients zeros_like(const DenseNet& net) {
    Gradients g;
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
      g.weights.emplace_back(net.weights[l].size(), 0.0);
      g.biases.emplace_back(net.biases[l].size(), 0.0);
    }
    return g;
  }

  void zero() {
    for (auto& w : weights) std::fill(w.begin(), w.end(), 0.0);
    for (auto& b : biases) std::fill(b.begin(), b.end(), 0.0);
  }
};

/// Exact reverse-mode gradients for the batch in `cache`. grad_out is
/// dLoss/dOutput, row-major (batch x output_dim); gradients are summed over
/// the batch (scale grad_out for a mean). Optionally also returns
/// dLoss/dInput.
inline void backward_batch(const DenseNet& net, const BatchCache& cache,
                           const std::vector<double>& grad_out,
                           Gradients& grads,
                           std::vector<double>* grad_input = nullptr) {
  const int batch = cache.batch;
  if (grad_out.size() != std::size_t(batch) * net.output_dim())
    throw std::invalid_argument("backward_batch: bad grad_out shape");
  std::vector<double> delta = grad_out, delta_prev;
  for (int l = static_cast<int>(net.layer_count()) - 1; l >= 0; --l) {
    const int in = net.sizes[l], out = net.sizes[l + 1];
    const auto& Xl = cache.acts[l];
    auto& dW = grads.weights[l];
    for (int b = 0; b < batch; ++b) {
      const double* d = delta.data() + std::size_t(b) * out;
      const double* x = Xl.data() + std::size_t(b) * in;
      for (int o = 0; o < out; ++o) {
        const double dv = d[o];
        if (dv == 0.0) continue;
        grads.biases[l][o] += dv;
        double* wrow = dW.data() + std::size_t(o) * in;
        for (int i = 0; i < in; ++i) wrow[i] += dv * x[i];
      }
    }
    if (l == 0 && grad_input == nullptr) break;
    // delta_prev = delta . W, masked by the ReLU that produced acts[l]
    delta_prev.assign(std::size_t(batch) * in, 0.0);
    for (int b = 0; b < batch; ++b) {
      const double* d = delta.data() + std::size_t(b) * out;
      double* dp = delta_prev.data() + std::size_t(b) * in;
      for (int o = 0; o < out; ++o) {
        const double dv = d[o];
        if (dv == 0.0) continue;
        const double* wrow = net.weights[l].data() + std::size_t(o) * in;
        for (int i = 0; i < in; ++i) dp[i] += dv * wrow[i];
      }
      if (l > 0) {
        const double* a = Xl.data() + std::size_t(b) * in;
        for (int i = 0; i < in; ++i)
          if (a[i] <= 0.0) dp[i] = 0.0;
      }
    }
    delta.swap(delta_prev);
  }
  if (grad_input) *grad_input = std::move(delta);
}

/// Single-sample convenience wrapper around the batched backward pass.
inline Gradients backward(const DenseNet& net, const BatchCache& cache,
                          const std::vector<double>& grad_out,
                          std::vector<double>* grad_input = nullptr) {
  Gradients g = Gradients::zeros_like(net);
  backward_batch(net, cache, grad_out, g, grad_input);
  return g;
}

/// Bias-corrected Adam.
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long t = 0;
  std::vector<std::vector<double>> m_w, v_w, m_b, v_b;

  static AdamState make(const DenseNet& net, double lr) {
    AdamState s;
    s.lr = lr;
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
      s.m_w.emplace_back(net.weights[l].size(), 0.0);
      s.v_w.emplace_back(net.weights[l].size(), 0.0);
      s.m_b.emplace_back(net.biases[l].size(), 0.0);
      s.v_b.emplace_back(net.biases[l].size(), 0.0);
    }
    return s;
  }
};

inline void adam_step(DenseNet& net, const Gradients& grads, AdamState& s) {
  s.t += 1;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  auto update = [&](std::vector<double>& p, const std::vector<double>& g,
                    std::vector<double>& m, std::vector<double>& v) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
      v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= s.lr * mhat / (std::sqrt(vhat) + s.eps);
    }
  };
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    update(net.weights[l], grads.weights[l], s.m_w[l], s.v_w[l]);
    update(net.biases[l], grads.biases[l], s.m_b[l], s.v_b[l]);
  }
}

}  // namespace crossgrip
