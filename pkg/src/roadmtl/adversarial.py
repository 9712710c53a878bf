"""Patch discriminators for the primary and auxiliary segmentation streams."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import torch
import torch.nn as nn
from torch.func import functional_call

from .errors import ContractError, ShapeError
from .losses import adversarial_gen_loss


@dataclass
class DiscriminatorConfig:
    base_channels: int = 64
    lr: float = 1e-4
    betas: Tuple[float, float] = (0.9, 0.99)

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)


def make_discriminator_optimizer(params, config: DiscriminatorConfig) -> torch.optim.Adam:
    """Plain Adam, no weight decay."""
    return torch.optim.Adam(params, lr=config.lr, betas=config.betas)


class PatchDiscriminator(nn.Module):
    """Four stride-2 k4 convolutions (x1, x2, x4, x8 base width) and a 1-channel score conv."""

    def __init__(self, base_channels: int = 64):
        super().__init__()
        layers = []
        cin = 1
        for mult in (1, 2, 4, 8):
            cout = base_channels * mult
            layers += [nn.Conv2d(cin, cout, 4, stride=2, padding=1), nn.LeakyReLU(0.2, inplace=True)]
            cin = cout
        layers.append(nn.Conv2d(cin, 1, 3, padding=1))
        self.net = nn.Sequential(*layers)

    def forward(self, prob_map: torch.Tensor) -> torch.Tensor:
        if prob_map.dim() != 4 or prob_map.shape[1] != 1:
            raise ShapeError(f"discriminator expects N x 1 x H x W probabilities, got {tuple(prob_map.shape)}")
        return self.net(prob_map)


def discriminator_loss(scores_real: torch.Tensor, scores_fake: torch.Tensor) -> torch.Tensor:
    """LSGAN discriminator objective: real pushed to 1, fake to 0."""
    return torch.mean((scores_real - 1.0) ** 2) + torch.mean(scores_fake ** 2)


class DiscriminatorPair(nn.Module):
    STREAMS = ("primary", "auxiliary")

    def __init__(self, config: DiscriminatorConfig = None):
        super().__init__()
        self.config = config or DiscriminatorConfig()
        self.d_primary = PatchDiscriminator(self.config.base_channels)
        self.d_auxiliary = PatchDiscriminator(self.config.base_channels)

    def make_optimizer(self) -> torch.optim.Adam:
        return make_discriminator_optimizer(self.parameters(), self.config)

    def discriminate(self, which: str, prob_map: torch.Tensor) -> torch.Tensor:
        if which == "primary":
            return self.d_primary(prob_map)
        if which == "auxiliary":
            return self.d_auxiliary(prob_map)
        raise ContractError(f"unknown discriminator stream {which!r}")

    def generator_scores(self, target_primary_prob, target_aux_prob):
        """Scores on target segmentations through a detached snapshot of the weights.

        The snapshot keeps the generator graph valid after the discriminators
        are updated in place, and no gradient can reach the live parameters.
        """
        snap = {k: v.detach().clone() for k, v in self.named_parameters()}
        d_p = {k.split(".", 1)[1]: v for k, v in snap.items() if k.startswith("d_primary.")}
        d_a = {k.split(".", 1)[1]: v for k, v in snap.items() if k.startswith("d_auxiliary.")}
        return (
            functional_call(self.d_primary, d_p, (target_primary_prob,)),
            functional_call(self.d_auxiliary, d_a, (target_aux_prob,)),
        )

    def generator_losses(self, target_primary_prob, target_aux_prob):
        s_p, s_a = self.generator_scores(target_primary_prob, target_aux_prob)
        return adversarial_gen_loss(s_p), adversarial_gen_loss(s_a)

    def losses(self, source_primary_prob, target_primary_prob, target_aux_prob):
        """Discriminator losses on detached maps.

        Both streams treat the source *primary* segmentation as real.
        """
        real = source_primary_prob.detach()
        loss_p = discriminator_loss(self.d_primary(real), self.d_primary(target_primary_prob.detach()))
        loss_a = discriminator_loss(self.d_auxiliary(real), self.d_auxiliary(target_aux_prob.detach()))
        return loss_p, loss_a

    def update(self, optimizer, source_primary_prob, target_primary_prob, target_aux_prob):
        optimizer.zero_grad(set_to_none=True)
        loss_p, loss_a = self.losses(source_primary_prob, target_primary_prob, target_aux_prob)
        (loss_p + loss_a).backward()
        optimizer.step()
        return loss_p.detach(), loss_a.detach()


def adversarial_step(pair: DiscriminatorPair, optimizer, outputs_source, outputs_target):
    """Generator adversarial losses (frozen discriminators), then one discriminator update.

    Returns ``((adv_p, adv_a), (disc_p, disc_a))``; the generator losses keep
    their graph so they can be added to the target loss.
    """
    src = torch.sigmoid(outputs_source.primary_seg_logits)
    tgt_p = torch.sigmoid(outputs_target.primary_seg_logits)
    tgt_a = torch.sigmoid(outputs_target.aux_seg_logits)
    gen = pair.generator_losses(tgt_p, tgt_a)
    disc = pair.update(optimizer, src, tgt_p, tgt_a)
    return gen, disc
