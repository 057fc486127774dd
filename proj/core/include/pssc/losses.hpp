#pragma once

#include <span>
#include <utility>
#include <vector>

#include "pssc/autograd.hpp"
#include "pssc/rng.hpp"

namespace pssc {

struct GanLosses {
  double loss_d = 0;
  double loss_g = 0;
};

/// Non-saturating cross-entropy GAN losses, averaged over the batch:
/// loss_d = E[softplus(-D(x))] + E[softplus(D(G(c)))], loss_g = E[softplus(-D(G(c)))].
GanLosses gan_losses(std::span<const double> real_logits, std::span<const double> fake_logits);

/// Mean squared error between true and reconstructed codes.
double info_mse_loss(std::span<const double> c_true, std::span<const double> c_hat);

/// Perceptual-simplicity loss for one pair. The perturbed dimension `k` is
/// scored on both reconstructions; every shared dimension is scored on the
/// mean of the two reconstructions. Throws if c and c_prime differ off k.
double ps_loss(std::span<const double> c, std::span<const double> c_prime, std::span<const double> c_hat,
               std::span<const double> c_hat_prime, int k);

/// L_GAN + lambda * L_PS.
double total_loss(double loss_gan, double loss_ps, double lambda);

enum class KSchedule { random, sequential_1k };
KSchedule parse_k_schedule(const std::string& s);
std::string to_string(KSchedule k);

struct PerturbationSample {
  int k = 0;
  double p = 0;
  double p_var = 0;
};

/// Chooses the perturbed dimension: uniformly per call, or cycling through
/// the dimensions once per `window_images` training images.
struct PerturbationSchedule {
  KSchedule mode = KSchedule::random;
  int latent_dim = 10;
  long window_images = 1000;

  int next_k(long images_seen, RngStream& rng) const;
};

/// c' = c with c'_k = c_k + p, p ~ N(0, p_var).
std::pair<std::vector<double>, PerturbationSample> sample_perturbation(std::span<const double> c, RngStream& rng,
                                                                        double p_var,
                                                                        const PerturbationSchedule& schedule,
                                                                        long images_seen);

namespace losses {

/// Batch-mean GAN terms on logits of shape [N,1].
template <typename T> Var<T> discriminator_loss(Var<T> real_logits, Var<T> fake_logits);
template <typename T> Var<T> generator_loss(Var<T> fake_logits);

/// Batch mean of info_mse_loss, c_hat [N,d] against constant c [N,d].
template <typename T> Var<T> info_mse(Var<T> c_hat, const Tensor<T>& c);

/// Batch mean of ps_loss with per-sample perturbed indices `ks`.
template <typename T>
Var<T> ps(Var<T> c_hat, Var<T> c_hat_prime, const Tensor<T>& c, const Tensor<T>& c_prime, std::span<const int> ks);

}  // namespace losses
}  // namespace pssc
