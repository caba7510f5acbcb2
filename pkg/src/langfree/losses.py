"""Adversarial and contrastive objectives for the conditional GAN.

The discriminator sees a sum of an unconditional logit and a semantic
projection; both networks additionally optimize temperature-scaled contrastive
terms that tie features to their conditioning vectors. All losses are sums
over the batch, not means.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ConfigError

# cap on the inner exponent when sharpening, to keep exp() finite in float32
_SHARPEN_CLAMP = 30.0


@dataclass(frozen=True)
class LossWeights:
    """Temperature and mixing weights for the combined objectives.

    lam scales the generator-side contrastive term, gam the discriminator-side
    term (which also appears in the generator objective). sharpen applies an
    extra exponential to the similarity logits right before the softmax.
    """

    tau: float = 0.5
    lam: float = 10.0
    gam: float = 10.0
    sharpen: bool = True

    def __post_init__(self):
        if not (self.tau > 0.0):
            raise ConfigError(f"temperature tau must be > 0, got {self.tau}")
        if self.lam < 0.0 or self.gam < 0.0:
            raise ConfigError(
                f"contrastive weights must be >= 0, got lam={self.lam} gam={self.gam}"
            )


def adv_losses(real_logits: torch.Tensor, fake_logits: torch.Tensor):
    """Saturating log-sigmoid adversarial losses, summed over the batch.

    Returns (generator_loss, discriminator_loss). Written with softplus so the
    log-sigmoids stay finite for large-magnitude logits:
    -log sigmoid(x) == softplus(-x) and -log(1 - sigmoid(x)) == softplus(x).
    """
    loss_g = F.softplus(-fake_logits).sum()
    loss_d = F.softplus(-real_logits).sum() + F.softplus(fake_logits).sum()
    return loss_g, loss_d


def contrastive_from_sim(sim: torch.Tensor, weights: LossWeights) -> torch.Tensor:
    """Contrastive loss from a precomputed similarity matrix.

    sim[j, i] is the similarity between feature j and condition i; matching
    pairs sit on the diagonal. Each condition i is scored against all features
    by a softmax over column i, and the negative log-probability of the
    diagonal entry is accumulated, scaled by the temperature.
    """
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise ConfigError(f"similarity matrix must be square, got {tuple(sim.shape)}")
    logits = sim / weights.tau
    if weights.sharpen:
        logits = torch.exp(torch.clamp(logits, max=_SHARPEN_CLAMP))
    log_prob = logits - torch.logsumexp(logits, dim=0, keepdim=True)
    return -weights.tau * torch.diagonal(log_prob).sum()


def contrastive_loss(
    features: torch.Tensor, conditions: torch.Tensor, weights: LossWeights
) -> torch.Tensor:
    """Cosine-similarity contrastive loss between row-matched features and conditions."""
    if features.shape != conditions.shape:
        raise ConfigError(
            f"features {tuple(features.shape)} and conditions "
            f"{tuple(conditions.shape)} must match"
        )
    sim = F.normalize(features, dim=1) @ F.normalize(conditions, dim=1).t()
    return contrastive_from_sim(sim, weights)


def total_losses(loss_g, loss_d, con_d, con_g, weights: LossWeights):
    """Combine adversarial and contrastive terms into the training objectives.

    Returns (generator_total, discriminator_total):
      discriminator_total = loss_d + gam * con_d
      generator_total     = loss_g + gam * con_d + lam * con_g
    """
    d_total = loss_d + weights.gam * con_d
    g_total = loss_g + weights.gam * con_d + weights.lam * con_g
    return g_total, d_total
