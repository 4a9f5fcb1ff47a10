import pytest
import torch

from pointda.errors import InvalidArgumentError, InvalidInputError
from pointda.losses import adversarial_loss, discriminator_loss, discriminator_objective
from pointda.network import (
    BackboneConfig,
    DomainDiscriminator,
    PointProposalNet,
    PredictionMaps,
    concat_predictions,
    forward_discriminator,
    forward_main,
    split_predictions,
)


@pytest.fixture(scope="module")
def model():
    torch.manual_seed(0)
    return PointProposalNet(BackboneConfig(stride=8, slots_per_cell=4))


@pytest.mark.parametrize("size, cells", [((64, 64), (8, 8)), ((65, 40), (9, 5)), ((8, 8), (1, 1))])
def test_forward_shapes(model, size, cells):
    w, h = size
    maps = forward_main(model, torch.rand(2, 3, h, w))
    assert maps.offsets.shape == (2, *cells, 4, 2)
    assert maps.cls.shape == (2, *cells, 4, 2)
    assert model.grid_for(h, w).shape == (*cells, 4)


def test_forward_contracts(model):
    maps = model(torch.rand(3, 3, 64, 64))
    assert torch.all(maps.offsets.abs() <= 1)
    assert torch.allclose(maps.cls.sum(-1), torch.ones(()), atol=1e-6)


def test_equal_logits_give_half(model):
    m = PointProposalNet(BackboneConfig())
    with torch.no_grad():
        m.cls_head.weight.zero_()
        m.cls_head.bias.zero_()
    assert torch.all(m(torch.rand(1, 3, 32, 32)).cls == 0.5)


def test_rejects_non_rgb(model):
    with pytest.raises(InvalidInputError):
        model(torch.rand(1, 1, 32, 32))
    with pytest.raises(InvalidInputError):
        model(torch.rand(3, 32, 32))


def test_vgg_variant_shapes():
    m = PointProposalNet(BackboneConfig(variant="vgg-like", channels=32))
    maps = m(torch.rand(1, 3, 40, 72))
    assert maps.cls.shape == (1, 9, 5, 4, 2)


def test_bad_backbone_config():
    with pytest.raises(InvalidArgumentError):
        BackboneConfig(stride=6)
    with pytest.raises(InvalidArgumentError):
        BackboneConfig(variant="resnet")


def test_concat_example():
    maps = PredictionMaps(torch.tensor([0.5, -0.5]).view(1, 1, 1, 1, 2), torch.tensor([0.9, 0.1]).view(1, 1, 1, 1, 2))
    assert concat_predictions(maps).flatten().tolist() == pytest.approx([0.5, -0.5, 0.9, 0.1])


def test_concat_channel_count_and_round_trip():
    off = torch.rand(2, 3, 4, 2, 2) * 2 - 1
    cls = torch.softmax(torch.rand(2, 3, 4, 2, 2), -1)
    cat = concat_predictions(PredictionMaps(off, cls))
    assert cat.shape == (2, 3, 4, 8)
    back = split_predictions(cat)
    assert torch.equal(back.offsets, off) and torch.equal(back.cls, cls)


def test_discriminator_shapes_and_softmax():
    disc = DomainDiscriminator(slots_per_cell=4, channels=8)
    out = forward_discriminator(disc, torch.rand(2, 32, 16, 16))
    assert out.shape == (2, 2, 1, 2)
    assert torch.allclose(out.sum(-1), torch.ones(()), atol=1e-6)
    assert disc(torch.rand(1, 16, 16, 16)).shape == (1, 1, 1, 2)
    assert disc(torch.rand(1, 5, 9, 16)).shape == (1, 1, 1, 2)


def test_discriminator_channel_mismatch():
    with pytest.raises(InvalidInputError):
        DomainDiscriminator(slots_per_cell=4)(torch.rand(1, 8, 8, 12))


def test_deterministic_inference(model):
    x = torch.rand(1, 3, 32, 32)
    a, b = model(x), model(x)
    assert torch.equal(a.cls, b.cls) and torch.equal(a.offsets, b.offsets)
    disc = DomainDiscriminator(4, 8)
    c = concat_predictions(a)
    assert torch.equal(disc(c), disc(c))


def test_seeded_construction_is_reproducible():
    torch.manual_seed(3)
    a = PointProposalNet(BackboneConfig())
    torch.manual_seed(3)
    b = PointProposalNet(BackboneConfig())
    x = torch.rand(1, 3, 32, 32)
    assert torch.equal(a(x).cls, b(x).cls)


def _grads(module):
    return [p.grad for p in module.parameters()]


def test_adversarial_gradient_reaches_main_only():
    torch.manual_seed(0)
    model = PointProposalNet(BackboneConfig(channels=16))
    disc = DomainDiscriminator(4, 8)
    for p in disc.parameters():
        p.requires_grad_(False)
    loss = adversarial_loss(disc(concat_predictions(model(torch.rand(2, 3, 32, 32)))), "target")
    loss.backward()
    assert all(g is None for g in _grads(disc))
    assert all(g is not None and torch.any(g != 0) for g in _grads(model))


def test_discriminator_objective_reaches_discriminator_only():
    torch.manual_seed(0)
    model = PointProposalNet(BackboneConfig(channels=16))
    disc = DomainDiscriminator(4, 8)
    src = model(torch.rand(2, 3, 32, 32)).detach()
    tgt = model(torch.rand(2, 3, 32, 32)).detach()
    total = discriminator_objective(
        discriminator_loss(disc(concat_predictions(src)), 0),
        discriminator_loss(disc(concat_predictions(tgt)), 1),
    )
    total.backward()
    assert all(g is None for g in _grads(model))
    assert all(g is not None for g in _grads(disc))
