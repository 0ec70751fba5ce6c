#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "qvuln/rng.hpp"

namespace qvuln {

/// Classifier head over trainable token embeddings:
///   embeddings -> mean pooling over unmasked positions
///   -> dense + tanh (pooler) -> dropout -> linear -> 2 logits.
///
/// Parameters live in one flat vector so the optimizer and the finite-
/// difference gradient check can treat the model as f(theta). Layout:
///   [ E (vocab x dim) | W1 (dim x dim) | b1 (dim) | W2 (2 x dim) | b2 (2) ]
class NeuralNet {
 public:
  NeuralNet(std::size_t vocab_size, std::size_t embed_dim);

  static std::size_t param_count(std::size_t vocab_size, std::size_t embed_dim) {
    return vocab_size * embed_dim + embed_dim * embed_dim + embed_dim +
           2 * embed_dim + 2;
  }

  std::size_t vocab_size() const { return vocab_; }
  std::size_t embed_dim() const { return dim_; }

  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }

  void init_random(std::uint64_t seed, double stddev = 0.02);

  struct Sample {
    std::vector<int> ids;
    std::vector<int> mask;
    int label = 0;  // 0 = LLM answers correctly, 1 = it does not
  };

  /// Inference path: dropout disabled, bit-deterministic.
  std::array<double, 2> predict_proba(const std::vector<int>& ids,
                                      const std::vector<int>& mask) const;

  /// Mean cross-entropy over the batch, no dropout. Matches the loss term of
  /// batch_loss_and_grad with dropout_prob = 0 exactly.
  double batch_loss(std::span<const Sample> batch) const;

  /// Mean loss plus analytic gradients (accumulated into `grad`, which is
  /// resized/zeroed here). `rng` drives inverted dropout when
  /// dropout_prob > 0; pass nullptr (or 0) to disable.
  double batch_loss_and_grad(std::span<const Sample> batch,
                             std::vector<double>& grad, double dropout_prob,
                             Rng* rng) const;

 private:
  std::size_t vocab_;
  std::size_t dim_;
  std::vector<double> params_;

  // Offsets into params_.
  std::size_t off_w1() const { return vocab_ * dim_; }
  std::size_t off_b1() const { return off_w1() + dim_ * dim_; }
  std::size_t off_w2() const { return off_b1() + dim_; }
  std::size_t off_b2() const { return off_w2() + 2 * dim_; }

  struct Forward {
    std::vector<double> pooled;   // h
    std::vector<double> tanh_out; // t = tanh(W1 h + b1)
    std::vector<double> dropped;  // t after dropout scaling
    std::array<double, 2> probs;
    double loss = 0.0;
    std::size_t n_real = 0;
  };

  Forward forward(const Sample& s, const std::vector<double>* drop_mask) const;
};

/// Max over parameters of |ga - gn| / max(|ga|, |gn|, 1e-8), where ga is the
/// analytic gradient and gn the central finite difference with step h.
double gradient_check(const NeuralNet& net, std::span<const NeuralNet::Sample> batch,
                      double h = 1e-5);

}  // namespace qvuln
