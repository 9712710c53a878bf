import statistics

import pytest
import torch

from roadmtl.adversarial import (
    DiscriminatorConfig,
    DiscriminatorPair,
    PatchDiscriminator,
    adversarial_step,
    discriminator_loss,
)
from roadmtl.errors import ContractError, ShapeError
from roadmtl.mti import ModelOutputs


def test_score_map_sizes():
    d = PatchDiscriminator(4)
    assert d(torch.rand(1, 1, 320, 1216)).shape == (1, 1, 20, 76)
    assert d(torch.rand(1, 1, 64, 64)).shape == (1, 1, 4, 4)
    assert torch.isfinite(d(torch.full((1, 1, 64, 64), 0.3))).all()
    with pytest.raises(ShapeError):
        d(torch.rand(1, 2, 64, 64))


@pytest.mark.parametrize("real,fake,expected", [(1.0, 0.0, 0.0), (0.0, 1.0, 2.0), (0.5, 0.5, 0.5)])
def test_discriminator_loss_values(real, fake, expected):
    loss = discriminator_loss(torch.full((1, 1, 4, 4), real), torch.full((1, 1, 4, 4), fake))
    assert loss.item() == pytest.approx(expected)


def test_two_independent_discriminators():
    pair = DiscriminatorPair(DiscriminatorConfig(base_channels=4))
    ids_p = {id(p) for p in pair.d_primary.parameters()}
    assert ids_p.isdisjoint({id(p) for p in pair.d_auxiliary.parameters()})
    with pytest.raises(ContractError):
        pair.discriminate("other", torch.rand(1, 1, 32, 32))


def test_fooled_discriminators_give_zero_adv_loss():
    pair = DiscriminatorPair(DiscriminatorConfig(base_channels=4))
    with torch.no_grad():
        for d in (pair.d_primary, pair.d_auxiliary):
            for p in d.parameters():
                p.zero_()
            d.net[-1].bias.fill_(1.0)
    adv_p, adv_a = pair.generator_losses(torch.rand(1, 1, 64, 64), torch.rand(1, 1, 64, 64))
    assert adv_p.item() == 0.0 and adv_a.item() == 0.0


def test_generator_loss_has_no_discriminator_gradient():
    torch.manual_seed(0)
    pair = DiscriminatorPair(DiscriminatorConfig(base_channels=4))
    logits = torch.randn(1, 1, 32, 32, requires_grad=True)
    adv_p, adv_a = pair.generator_losses(torch.sigmoid(logits), torch.sigmoid(logits))
    (adv_p + adv_a).backward()
    assert logits.grad.abs().sum() > 0
    assert all(p.grad is None for p in pair.parameters())


def test_discriminator_loss_has_no_generator_gradient():
    torch.manual_seed(0)
    pair = DiscriminatorPair(DiscriminatorConfig(base_channels=4))
    src = torch.randn(1, 1, 32, 32, requires_grad=True)
    tgt = torch.randn(1, 1, 32, 32, requires_grad=True)
    loss_p, loss_a = pair.losses(torch.sigmoid(src), torch.sigmoid(tgt), torch.sigmoid(tgt))
    (loss_p + loss_a).backward()
    assert src.grad is None and tgt.grad is None
    assert any(p.grad is not None and p.grad.abs().sum() > 0 for p in pair.parameters())


def test_generator_step_leaves_discriminators_unchanged():
    torch.manual_seed(0)
    pair = DiscriminatorPair(DiscriminatorConfig(base_channels=4))
    before = {k: v.clone() for k, v in pair.state_dict().items()}
    logits = torch.randn(1, 1, 32, 32, requires_grad=True)
    opt = torch.optim.SGD([logits], lr=0.1)
    adv_p, _ = pair.generator_losses(torch.sigmoid(logits), torch.sigmoid(logits))
    adv_p.backward()
    opt.step()
    assert all(torch.equal(before[k], v) for k, v in pair.state_dict().items())


def _outputs(primary, aux):
    return ModelOutputs(primary_seg_logits=primary, aux_seg_logits=aux, final_steer_feature=None,
                        sfseg_logits=None, initial=[])


def test_adversarial_step_graph_survives_update():
    torch.manual_seed(0)
    pair = DiscriminatorPair(DiscriminatorConfig(base_channels=4))
    opt = pair.make_optimizer()
    tgt = torch.randn(2, 1, 32, 32, requires_grad=True)
    (adv_p, adv_a), (disc_p, disc_a) = adversarial_step(
        pair, opt, _outputs(torch.randn(2, 1, 32, 32), None), _outputs(tgt, tgt * 0.5)
    )
    (adv_p + adv_a).backward()
    assert tgt.grad is not None and torch.isfinite(tgt.grad).all()
    assert disc_p.requires_grad is False


def toy_discriminator_curve(seed, steps=200):
    """Loss trajectory of a discriminator separating maps of 0.9 from maps of 0.1."""
    torch.manual_seed(seed)
    pair = DiscriminatorPair(DiscriminatorConfig(base_channels=4))
    opt = pair.make_optimizer()
    losses = []
    for _ in range(steps):
        src = (0.9 + 0.02 * torch.randn(4, 1, 32, 32)).clamp(0, 1)
        tgt = (0.1 + 0.02 * torch.randn(4, 1, 32, 32)).clamp(0, 1)
        loss_p, loss_a = pair.update(opt, src, tgt, tgt)
        losses.append(float(loss_p + loss_a))
    return losses


def toy_convergence_ok():
    firsts, lasts = [], []
    for seed in range(3):
        curve = toy_discriminator_curve(seed)
        firsts.append(statistics.mean(curve[:20]))
        lasts.append(statistics.mean(curve[-20:]))
    return statistics.median(lasts) < statistics.median(firsts), firsts, lasts


def test_toy_discriminator_learns():
    ok, firsts, lasts = toy_convergence_ok()
    assert ok, (firsts, lasts)
