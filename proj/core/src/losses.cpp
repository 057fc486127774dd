#include "pssc/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "pssc/ops.hpp"

namespace pssc {
namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw std::invalid_argument(std::string(what) + ": length mismatch (" + std::to_string(a) + " vs " +
                                std::to_string(b) + ")");
  }
}

}  // namespace

GanLosses gan_losses(std::span<const double> real_logits, std::span<const double> fake_logits) {
  if (real_logits.empty() || fake_logits.empty()) throw std::invalid_argument("gan_losses: empty batch");
  GanLosses out;
  double real = 0, fake = 0, gen = 0;
  for (double r : real_logits) real += softplus(-r);
  for (double f : fake_logits) {
    fake += softplus(f);
    gen += softplus(-f);
  }
  out.loss_d = real / real_logits.size() + fake / fake_logits.size();
  out.loss_g = gen / fake_logits.size();
  return out;
}

double info_mse_loss(std::span<const double> c_true, std::span<const double> c_hat) {
  require_same_length(c_true.size(), c_hat.size(), "info_mse_loss");
  if (c_true.empty()) throw std::invalid_argument("info_mse_loss: empty codes");
  double total = 0;
  for (std::size_t i = 0; i < c_true.size(); ++i) total += (c_hat[i] - c_true[i]) * (c_hat[i] - c_true[i]);
  return total / c_true.size();
}

double ps_loss(std::span<const double> c, std::span<const double> c_prime, std::span<const double> c_hat,
               std::span<const double> c_hat_prime, int k) {
  const std::size_t d = c.size();
  require_same_length(d, c_prime.size(), "ps_loss");
  require_same_length(d, c_hat.size(), "ps_loss");
  require_same_length(d, c_hat_prime.size(), "ps_loss");
  if (d == 0) throw std::invalid_argument("ps_loss: empty codes");
  if (k < 0 || static_cast<std::size_t>(k) >= d) throw std::invalid_argument("ps_loss: k out of range");
  double total = 0;
  for (std::size_t i = 0; i < d; ++i) {
    if (static_cast<int>(i) == k) {
      total += (c_hat[i] - c[i]) * (c_hat[i] - c[i]) + (c_hat_prime[i] - c_prime[i]) * (c_hat_prime[i] - c_prime[i]);
    } else {
      if (c[i] != c_prime[i]) {
        throw std::invalid_argument("ps_loss: c and c' differ at shared dimension " + std::to_string(i));
      }
      const double m = 0.5 * (c_hat[i] + c_hat_prime[i]) - c[i];
      total += 2.0 * m * m;
    }
  }
  return total / d;
}

double total_loss(double loss_gan, double loss_ps, double lambda) {
  if (lambda < 0) throw std::invalid_argument("total_loss: lambda must be >= 0");
  return loss_gan + lambda * loss_ps;
}

KSchedule parse_k_schedule(const std::string& s) {
  if (s == "random") return KSchedule::random;
  if (s == "sequential_1k") return KSchedule::sequential_1k;
  throw std::invalid_argument("unknown k schedule '" + s + "' (expected random or sequential_1k)");
}

std::string to_string(KSchedule k) { return k == KSchedule::random ? "random" : "sequential_1k"; }

int PerturbationSchedule::next_k(long images_seen, RngStream& rng) const {
  if (latent_dim < 1) throw std::invalid_argument("perturbation schedule needs latent_dim >= 1");
  if (mode == KSchedule::random) return rng.uniform_int(latent_dim);
  return static_cast<int>((images_seen / window_images) % latent_dim);
}

std::pair<std::vector<double>, PerturbationSample> sample_perturbation(std::span<const double> c, RngStream& rng,
                                                                        double p_var,
                                                                        const PerturbationSchedule& schedule,
                                                                        long images_seen) {
  if (!(p_var > 0)) throw std::invalid_argument("sample_perturbation: p_var must be > 0");
  if (static_cast<int>(c.size()) != schedule.latent_dim) {
    throw std::invalid_argument("sample_perturbation: code length does not match schedule");
  }
  PerturbationSample s;
  s.k = schedule.next_k(images_seen, rng);
  s.p = rng.normal() * std::sqrt(p_var);
  s.p_var = p_var;
  std::vector<double> c_prime(c.begin(), c.end());
  c_prime[static_cast<std::size_t>(s.k)] += s.p;
  return {std::move(c_prime), s};
}

namespace losses {

template <typename T>
Var<T> discriminator_loss(Var<T> real_logits, Var<T> fake_logits) {
  return ops::add(ops::mean(ops::softplus(ops::scale(real_logits, T(-1)))), ops::mean(ops::softplus(fake_logits)));
}

template <typename T>
Var<T> generator_loss(Var<T> fake_logits) {
  return ops::mean(ops::softplus(ops::scale(fake_logits, T(-1))));
}

template <typename T>
Var<T> info_mse(Var<T> c_hat, const Tensor<T>& c) {
  if (c_hat.shape() != c.shape() || c.rank() != 2) throw std::invalid_argument("info_mse: shape mismatch");
  Tape<T>& tape = *c_hat.tape;
  Var<T> diff = ops::sub(c_hat, tape.constant(c));
  return ops::mean(ops::mul(diff, diff));
}

template <typename T>
Var<T> ps(Var<T> c_hat, Var<T> c_hat_prime, const Tensor<T>& c, const Tensor<T>& c_prime, std::span<const int> ks) {
  if (c_hat.shape() != c.shape() || c_hat_prime.shape() != c.shape() || c_prime.shape() != c.shape() ||
      c.rank() != 2) {
    throw std::invalid_argument("ps loss: all code tensors must share shape [N,d]");
  }
  const int n = c.dim(0), d = c.dim(1);
  if (static_cast<int>(ks.size()) != n) throw std::invalid_argument("ps loss: need one k per sample");
  const Tensor<T>& a = c_hat.value();
  const Tensor<T>& b = c_hat_prime.value();
  const T norm = T(1) / static_cast<T>(n * d);
  T total = 0;
  for (int s = 0; s < n; ++s) {
    const int k = ks[static_cast<std::size_t>(s)];
    if (k < 0 || k >= d) throw std::invalid_argument("ps loss: k out of range");
    for (int i = 0; i < d; ++i) {
      const std::size_t idx = static_cast<std::size_t>(s) * d + i;
      if (i == k) {
        total += (a[idx] - c[idx]) * (a[idx] - c[idx]) + (b[idx] - c_prime[idx]) * (b[idx] - c_prime[idx]);
      } else {
        if (c[idx] != c_prime[idx]) throw std::invalid_argument("ps loss: c and c' differ at a shared dimension");
        const T m = T(0.5) * (a[idx] + b[idx]) - c[idx];
        total += T(2) * m * m;
      }
    }
  }
  std::vector<int> kv(ks.begin(), ks.end());
  const bool rg = c_hat.tape->requires_grad(c_hat) || c_hat.tape->requires_grad(c_hat_prime);
  return c_hat.tape->record(
      Tensor<T>({1}, total * norm), rg,
      [c_hat, c_hat_prime, c, c_prime, kv = std::move(kv), n, d, norm](Tape<T>& t, const Tensor<T>& g,
                                                                       const Tensor<T>&) {
        const Tensor<T>& a = c_hat.value();
        const Tensor<T>& b = c_hat_prime.value();
        Tensor<T>* ga = t.requires_grad(c_hat) ? &t.grad_buffer(c_hat) : nullptr;
        Tensor<T>* gb = t.requires_grad(c_hat_prime) ? &t.grad_buffer(c_hat_prime) : nullptr;
        const T scale = g[0] * norm * T(2);
        for (int s = 0; s < n; ++s) {
          for (int i = 0; i < d; ++i) {
            const std::size_t idx = static_cast<std::size_t>(s) * d + i;
            T da, db;
            if (i == kv[static_cast<std::size_t>(s)]) {
              da = a[idx] - c[idx];
              db = b[idx] - c_prime[idx];
            } else {
              da = db = T(0.5) * (a[idx] + b[idx]) - c[idx];
            }
            if (ga) (*ga)[idx] += scale * da;
            if (gb) (*gb)[idx] += scale * db;
          }
        }
      });
}

template Var<float> discriminator_loss(Var<float>, Var<float>);
template Var<double> discriminator_loss(Var<double>, Var<double>);
template Var<float> generator_loss(Var<float>);
template Var<double> generator_loss(Var<double>);
template Var<float> info_mse(Var<float>, const Tensor<float>&);
template Var<double> info_mse(Var<double>, const Tensor<double>&);
template Var<float> ps(Var<float>, Var<float>, const Tensor<float>&, const Tensor<float>&, std::span<const int>);
template Var<double> ps(Var<double>, Var<double>, const Tensor<double>&, const Tensor<double>&, std::span<const int>);

}  // namespace losses
}  // namespace pssc
