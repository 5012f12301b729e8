import numpy as np
import pytest

from diffbackdoor import PoisonSpec, ToyTextEncoder, make_dataset, stack_examples, toy_data
from diffbackdoor.poison import (caption_similarity, default_poison, encode_caption, realized_poison_rate,
                                 square_position, tiny_images, toy_captions)


def test_poison_count_rounds_half_up():
    spec = default_poison("Gauss2D", poison_rate=0.25)
    clean = toy_data("Gauss2D", 10, np.random.default_rng(0))
    ds = make_dataset(clean, spec, rng=np.random.default_rng(1))
    assert sum(e.eta_p for e in ds) == 3
    assert all(e.eta_c == 1 for e in ds)
    assert realized_poison_rate(ds) == pytest.approx(0.3)


@pytest.mark.parametrize("rate,expected", [(0.0, 0), (1.0, 7), (0.5, 4)])
def test_poison_rate_edges(rate, expected):
    spec = default_poison("Gauss2D", poison_rate=rate)
    ds = make_dataset(toy_data("Gauss2D", 7, np.random.default_rng(0)), spec)
    assert sum(e.eta_p for e in ds) == expected


def test_augmentation_rows():
    spec = default_poison("TinyImages", poison_rate=0.2, augment_rate=0.1)
    ds = make_dataset(toy_data("TinyImages", 20, np.random.default_rng(0)), spec)
    aug = [e for e in ds if e.r is not None]
    assert len(aug) == 2 and all(e.eta_c == 0 and e.eta_p == 1 for e in aug)
    arr = stack_examples(ds, spec)
    np.testing.assert_array_equal(arr["r"][-1], spec.trigger)
    assert realized_poison_rate(ds) == pytest.approx(0.2)


def test_stack_examples_blends_trigger():
    spec = default_poison("TinyImages")
    clean = toy_data("TinyImages", 5, np.random.default_rng(0))
    arr = stack_examples(make_dataset(clean, spec), spec)
    m = spec.mask.astype(bool)
    assert arr["x"].shape == arr["r"].shape == (5, 64)
    np.testing.assert_array_equal(arr["r"][:, m], np.broadcast_to(spec.trigger[m], (5, m.sum())))
    np.testing.assert_array_equal(arr["r"][:, ~m], arr["x"][:, ~m])


def test_spec_validation():
    with pytest.raises(ValueError):
        PoisonSpec(np.zeros(2), np.array([0.5, 1.0]), np.zeros(2))
    with pytest.raises(ValueError):
        PoisonSpec(np.zeros(2), np.ones(3), np.zeros(2))
    with pytest.raises(ValueError):
        PoisonSpec(np.zeros(2), np.ones(2), np.zeros(2), poison_rate=1.5)
    with pytest.raises(ValueError):
        make_dataset([], default_poison("Gauss2D"))
    with pytest.raises(ValueError):
        make_dataset([np.zeros(2)], default_poison("Gauss2D"), mode="conditional")
    with pytest.raises(ValueError):
        toy_data("CIFAR", 3, np.random.default_rng(0))


def test_tiny_images_layout():
    imgs = tiny_images(50, np.random.default_rng(0))
    assert imgs.shape == (50, 64) and imgs.min() >= -1 and imgs.max() <= 1
    bright = (imgs > -1).sum(axis=1)
    assert np.all(bright == 9)
    for img in imgs[:10]:
        r, c = square_position(img)
        assert np.all(img.reshape(8, 8)[r:r + 3, c:c + 3] > -1)


def test_toy_data_is_seeded():
    a = toy_data("TinyImages", 10, np.random.default_rng(3))
    b = toy_data("TinyImages", 10, np.random.default_rng(3))
    assert np.array_equal(np.stack(a), np.stack(b))


def test_encoder_is_deterministic_and_normalised():
    enc = ToyTextEncoder(seed=1, dim=16)
    v = encode_caption(enc, ("a", "b"))
    assert np.linalg.norm(v) == pytest.approx(1.0)
    np.testing.assert_array_equal(v, encode_caption(ToyTextEncoder(seed=1, dim=16), ("a", "b")))
    assert not np.allclose(v, encode_caption(ToyTextEncoder(seed=2, dim=16), ("a", "b")))
    with pytest.raises(ValueError):
        encode_caption(enc, ())


def test_caption_similarity_orders_triggers():
    """A trigger token already in the caption keeps it closer than a novel multi-token one."""
    enc = ToyTextEncoder(seed=0, dim=32)
    caps = toy_captions(tiny_images(50, np.random.default_rng(0)), np.random.default_rng(1))
    high = np.mean([caption_similarity(enc, p, (p[-1],)) for p in caps])
    low = np.mean([caption_similarity(enc, p, ("zq", "xv", "kw")) for p in caps])
    assert high > low
    assert caption_similarity(enc, ("a",), ()) == pytest.approx(1.0)


def test_conditional_dataset_encodes_captions():
    enc = ToyTextEncoder(seed=0, dim=8)
    clean = toy_data("TinyImages", 4, np.random.default_rng(0))
    caps = toy_captions(clean, np.random.default_rng(0))
    spec = default_poison("TinyImages")
    arr = stack_examples(make_dataset(clean, spec, "conditional", captions=caps, encoder=enc), spec)
    assert arr["condition"].shape == (4, 8)
    np.testing.assert_allclose(arr["condition"][0], encode_caption(enc, caps[0]))
