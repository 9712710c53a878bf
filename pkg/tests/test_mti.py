import pytest
import torch

from conftest import tiny_model
from roadmtl.errors import ContractError, ShapeError
from roadmtl.mti import InitialTaskPrediction, MultiModalDistillation


@pytest.fixture(scope="module")
def model():
    return tiny_model().eval()


@pytest.fixture(scope="module")
def pyramid(model):
    torch.manual_seed(1)
    return model.backbone(torch.randn(2, 3, 64, 64))


def test_initial_prediction_shapes(model, pyramid):
    p3 = model.initial_task_prediction(3, pyramid[3])
    assert p3.seg_logits.shape == (2, 1, 2, 2) and p3.steer_feature.shape == (2, 4, 2, 2)
    prop = model.feature_propagation(p3)
    p2 = model.initial_task_prediction(2, pyramid[2], prop)
    assert p2.seg_logits.shape == (2, 1, 4, 4) and p2.steer_feature.shape == (2, 4, 4, 4)


def test_initial_prediction_contracts(model, pyramid):
    p3 = model.initial_task_prediction(3, pyramid[3])
    with pytest.raises(ContractError):
        model.initial_task_prediction(2, pyramid[2])
    with pytest.raises(ShapeError):
        model.initial_task_prediction(1, pyramid[1], model.feature_propagation(p3))


def test_propagation_upsamples_and_keeps_channels(model, pyramid):
    p3 = model.initial_task_prediction(3, pyramid[3])
    prop = model.feature_propagation(p3)
    for t in ("seg", "steer"):
        assert prop[t].shape[-2:] == (4, 4)
        assert prop[t].shape[1] == p3.features[t].shape[1]


def test_propagation_rejects_finest_scale(model, pyramid):
    pred = _chain(model, pyramid)[0]
    with pytest.raises(ContractError):
        model.feature_propagation(pred)


def _chain(model, pyramid):
    preds = [None] * 4
    prop = None
    for i in (3, 2, 1, 0):
        preds[i] = model.initial_task_prediction(i, pyramid[i], prop)
        if i:
            prop = model.feature_propagation(preds[i])
    return preds


def test_distillation_is_cross_task(model, pyramid):
    pred = _chain(model, pyramid)[1]
    out = model.multi_modal_distillation(pred)
    assert out["seg"].shape == pred.features["seg"].shape
    pred.features = dict(pred.features, steer=torch.zeros_like(pred.features["steer"]))
    zeroed = model.multi_modal_distillation(pred)
    assert not torch.allclose(out["seg"], zeroed["seg"])


def test_distillation_deterministic_and_size_preserving():
    torch.manual_seed(0)
    init = InitialTaskPrediction(3, 8, 8).eval()
    mmd = MultiModalDistillation(8)
    pred = init(torch.randn(1, 8, 40, 152))
    a, b = mmd(pred), mmd(pred)
    assert a["steer"].shape[-2:] == (40, 152)
    assert torch.equal(a["seg"], b["seg"]) and torch.equal(a["steer"], b["steer"])


def test_aggregation_needs_four_scales(model, pyramid):
    preds = _chain(model, pyramid)
    distilled = [model.multi_modal_distillation(p) for p in preds]
    assert model.feature_aggregation(distilled, "seg", (64, 64)).shape == (2, 1, 64, 64)
    assert model.feature_aggregation(distilled, "steer", (64, 64)).shape == (2, 4, 64, 64)
    with pytest.raises(ContractError):
        model.feature_aggregation(distilled[:3], "seg", (64, 64))


def test_forward_source_and_target(model):
    src = model(torch.rand(2, 3, 96, 64), "source")
    assert src.primary_seg_logits.shape == (2, 1, 96, 64)
    assert src.aux_seg_logits.shape == (2, 1, 96, 64)
    assert not src.has_steering
    tgt = model(torch.rand(2, 3, 64, 64), "target")
    assert tgt.steer_angle_final.shape == (2,)
    assert len(tgt.steer_angle_deep) == 4
    assert tgt.final_steer_feature.shape == (2, 4, 64, 64)


def test_target_forward_requires_target_size(model):
    with pytest.raises(ShapeError):
        model(torch.rand(1, 3, 96, 64), "target")


def test_full_target_resolution_uses_fixed_heads():
    model = tiny_model(target_size=(320, 1216), width=4).eval()
    with torch.no_grad():
        out = model(torch.rand(1, 3, 320, 1216), "target")
    assert out.primary_seg_logits.shape == (1, 1, 320, 1216)
    assert out.final_steer_feature.shape == (1, 4, 320, 1216)
    assert out.steer_angle_final.shape == (1,)
    assert [p.steer_feature.shape[-2:] for p in out.initial] == [(80, 304), (40, 152), (20, 76), (10, 38)]
    assert model.steer_heads["s4"].spec.flatten_size == 896


def test_steering_angle_depends_on_input():
    model = tiny_model().double().eval()
    torch.manual_seed(3)
    x = torch.rand(1, 3, 64, 64, dtype=torch.float64, requires_grad=True)
    model(x, "target").steer_angle_final.sum().backward()
    assert x.grad.abs().sum() > 0
    # finite difference along the gradient direction agrees in sign and size
    d = x.grad / x.grad.norm()
    eps = 1e-4
    with torch.no_grad():
        up = model(x + eps * d, "target").steer_angle_final.item()
        down = model(x - eps * d, "target").steer_angle_final.item()
    fd = (up - down) / (2 * eps)
    assert fd == pytest.approx(float((x.grad * d).sum()), rel=1e-4)
