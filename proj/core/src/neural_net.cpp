#include "qvuln/neural_net.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace qvuln {

NeuralNet::NeuralNet(std::size_t vocab_size, std::size_t embed_dim)
    : vocab_(vocab_size), dim_(embed_dim),
      params_(param_count(vocab_size, embed_dim), 0.0) {
  if (vocab_size == 0 || embed_dim == 0)
    throw std::invalid_argument("NeuralNet: vocab and embed_dim must be > 0");
}

void NeuralNet::init_random(std::uint64_t seed, double stddev) {
  Rng rng(seed);
  for (double& p : params_) p = rng.gaussian() * stddev;
  // Biases start at zero.
  std::fill(params_.begin() + static_cast<std::ptrdiff_t>(off_b1()),
            params_.begin() + static_cast<std::ptrdiff_t>(off_b1() + dim_), 0.0);
  std::fill(params_.begin() + static_cast<std::ptrdiff_t>(off_b2()),
            params_.end(), 0.0);
}

NeuralNet::Forward NeuralNet::forward(const Sample& s,
                                      const std::vector<double>* drop_mask) const {
  Forward f;
  f.pooled.assign(dim_, 0.0);
  const double* E = params_.data();
  for (std::size_t i = 0; i < s.ids.size(); ++i) {
    if (i < s.mask.size() && s.mask[i] == 0) continue;
    int id = s.ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_)
      throw std::out_of_range("token id out of embedding range");
    const double* row = E + static_cast<std::size_t>(id) * dim_;
    for (std::size_t d = 0; d < dim_; ++d) f.pooled[d] += row[d];
    ++f.n_real;
  }
  if (f.n_real > 0) {
    for (double& v : f.pooled) v /= static_cast<double>(f.n_real);
  }

  const double* W1 = params_.data() + off_w1();
  const double* b1 = params_.data() + off_b1();
  f.tanh_out.assign(dim_, 0.0);
  for (std::size_t o = 0; o < dim_; ++o) {
    double z = b1[o];
    const double* row = W1 + o * dim_;
    for (std::size_t d = 0; d < dim_; ++d) z += row[d] * f.pooled[d];
    f.tanh_out[o] = std::tanh(z);
  }

  f.dropped = f.tanh_out;
  if (drop_mask != nullptr) {
    for (std::size_t o = 0; o < dim_; ++o) f.dropped[o] *= (*drop_mask)[o];
  }

  const double* W2 = params_.data() + off_w2();
  const double* b2 = params_.data() + off_b2();
  std::array<double, 2> logits{};
  for (std::size_t c = 0; c < 2; ++c) {
    double z = b2[c];
    const double* row = W2 + c * dim_;
    for (std::size_t d = 0; d < dim_; ++d) z += row[d] * f.dropped[d];
    logits[c] = z;
  }
  double m = std::max(logits[0], logits[1]);
  double e0 = std::exp(logits[0] - m), e1 = std::exp(logits[1] - m);
  double sum = e0 + e1;
  f.probs = {e0 / sum, e1 / sum};
  double p = f.probs[static_cast<std::size_t>(s.label)];
  f.loss = -std::log(std::max(p, 1e-300));
  return f;
}

std::array<double, 2> NeuralNet::predict_proba(const std::vector<int>& ids,
                                               const std::vector<int>& mask) const {
  Sample s;
  s.ids = ids;
  s.mask = mask;
  s.label = 0;
  return forward(s, nullptr).probs;
}

double NeuralNet::batch_loss(std::span<const Sample> batch) const {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  double loss = 0.0;
  for (const auto& s : batch) loss += forward(s, nullptr).loss;
  return loss / static_cast<double>(batch.size());
}

double NeuralNet::batch_loss_and_grad(std::span<const Sample> batch,
                                      std::vector<double>& grad,
                                      double dropout_prob, Rng* rng) const {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  grad.assign(params_.size(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  const double keep = 1.0 - dropout_prob;
  const bool use_dropout = dropout_prob > 0.0 && rng != nullptr;

  double total_loss = 0.0;
  std::vector<double> drop_mask;
  const double* W1 = params_.data() + off_w1();
  const double* W2 = params_.data() + off_w2();
  double* gE = grad.data();
  double* gW1 = grad.data() + off_w1();
  double* gb1 = grad.data() + off_b1();
  double* gW2 = grad.data() + off_w2();
  double* gb2 = grad.data() + off_b2();

  for (const auto& s : batch) {
    const std::vector<double>* mask_ptr = nullptr;
    if (use_dropout) {
      drop_mask.assign(dim_, 0.0);
      for (std::size_t o = 0; o < dim_; ++o)
        drop_mask[o] = rng->bernoulli(dropout_prob) ? 0.0 : 1.0 / keep;
      mask_ptr = &drop_mask;
    }
    Forward f = forward(s, mask_ptr);
    total_loss += f.loss;

    // softmax + cross-entropy backward
    std::array<double, 2> dlogits = f.probs;
    dlogits[static_cast<std::size_t>(s.label)] -= 1.0;
    dlogits[0] *= inv_n;
    dlogits[1] *= inv_n;

    std::vector<double> ddropped(dim_, 0.0);
    for (std::size_t c = 0; c < 2; ++c) {
      const double* row = W2 + c * dim_;
      double* grow = gW2 + c * dim_;
      for (std::size_t d = 0; d < dim_; ++d) {
        grow[d] += dlogits[c] * f.dropped[d];
        ddropped[d] += dlogits[c] * row[d];
      }
      gb2[c] += dlogits[c];
    }

    std::vector<double> dz1(dim_, 0.0);
    for (std::size_t o = 0; o < dim_; ++o) {
      double dt = ddropped[o];
      if (mask_ptr != nullptr) dt *= (*mask_ptr)[o];
      dz1[o] = dt * (1.0 - f.tanh_out[o] * f.tanh_out[o]);
    }

    std::vector<double> dpooled(dim_, 0.0);
    for (std::size_t o = 0; o < dim_; ++o) {
      const double* row = W1 + o * dim_;
      double* grow = gW1 + o * dim_;
      for (std::size_t d = 0; d < dim_; ++d) {
        grow[d] += dz1[o] * f.pooled[d];
        dpooled[d] += dz1[o] * row[d];
      }
      gb1[o] += dz1[o];
    }

    if (f.n_real > 0) {
      double scale = 1.0 / static_cast<double>(f.n_real);
      for (std::size_t i = 0; i < s.ids.size(); ++i) {
        if (i < s.mask.size() && s.mask[i] == 0) continue;
        double* grow = gE + static_cast<std::size_t>(s.ids[i]) * dim_;
        for (std::size_t d = 0; d < dim_; ++d) grow[d] += dpooled[d] * scale;
      }
    }
  }
  return total_loss * inv_n;
}

double gradient_check(const NeuralNet& net, std::span<const NeuralNet::Sample> batch,
                      double h) {
  NeuralNet probe = net;
  std::vector<double> analytic;
  probe.batch_loss_and_grad(batch, analytic, 0.0, nullptr);

  double worst = 0.0;
  for (std::size_t i = 0; i < probe.params().size(); ++i) {
    double saved = probe.params()[i];
    probe.params()[i] = saved + h;
    double up = probe.batch_loss(batch);
    probe.params()[i] = saved - h;
    double down = probe.batch_loss(batch);
    probe.params()[i] = saved;
    double numeric = (up - down) / (2.0 * h);
    double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace qvuln
