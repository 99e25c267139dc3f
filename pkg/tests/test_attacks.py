import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dipdefense import LinearClassifier
from dipdefense.attacks import (
    AdversarialBatch,
    AttackConfig,
    bim,
    bpda_attack,
    fgsm,
    mifgsm,
    pgd,
    run_attack,
)
from dipdefense.errors import CapabilityError, ConfigurationError
from dipdefense.victim import ClassifierAdapter, create_adapter, predict_labels

EPS = 8 / 255


@pytest.fixture(scope="module")
def batch100():
    r = np.random.default_rng(99)
    x = r.random((100, 3, 16, 16)).astype(np.float32)
    return x, r.integers(0, 3, 100)


def _ok(adv, x, eps):
    assert adv.dtype == np.float32
    assert adv.min() >= 0 and adv.max() <= 1
    assert np.abs(adv - x).max() <= eps + 1e-6


def test_fgsm_zero_epsilon(linear3x16, batch100):
    x, y = batch100
    assert np.array_equal(fgsm(linear3x16, x, y, 0.0), x)


@pytest.mark.parametrize("method", ["FGSM", "PGD", "BIM", "MIFGSM"])
def test_ball_and_range(linear3x16, batch100, method):
    x, y = batch100
    adv = run_attack(linear3x16, x, y, AttackConfig(method, EPS))
    _ok(adv, x, EPS)
    assert adv.shape == x.shape


def test_single_image_shape(linear3x16, batch100):
    x, y = batch100
    assert fgsm(linear3x16, x[0], y[0], EPS).shape == (3, 16, 16)


def test_fgsm_on_two_class_linear_is_sign_of_weight_difference(rng):
    w = rng.normal(size=(2, 48))
    clf = LinearClassifier(w, input_shape=(3, 4, 4))
    x = (0.2 + 0.6 * rng.random((5, 3, 4, 4))).astype(np.float32)
    eps = 0.01
    adv = fgsm(clf, x, np.zeros(5, int), eps)
    expected = np.float32(eps) * np.sign(w[1] - w[0]).reshape(3, 4, 4).astype(np.float32)
    assert np.array_equal(adv, x + expected)


def test_pgd_one_step_is_fgsm(linear3x16, batch100):
    x, y = batch100
    assert np.array_equal(pgd(linear3x16, x, y, EPS, steps=1, step_size=EPS, random_start=False),
                          fgsm(linear3x16, x, y, EPS))
    assert np.array_equal(bim(linear3x16, x, y, EPS, steps=1, step_size=EPS), fgsm(linear3x16, x, y, EPS))


def test_mifgsm_without_momentum_is_bim(linear3x16, batch100):
    x, y = batch100
    ref = bim(linear3x16, x, y, EPS, steps=10)
    assert np.array_equal(mifgsm(linear3x16, x, y, EPS, steps=10, momentum_decay=0.0), ref)
    assert np.array_equal(pgd(linear3x16, x, y, EPS, steps=10, random_start=False), ref)


def test_mifgsm_two_step_recursion(rng):
    clf = LinearClassifier(rng.normal(size=(3, 12)), rng.normal(size=3), input_shape=(3, 2, 2))
    x = (0.3 + 0.4 * rng.random((1, 3, 2, 2))).astype(np.float32)
    y = [1]
    eps, step, mu = 0.1, 0.01, 0.7

    g1 = clf.loss_gradient(x, y).astype(np.float64)
    acc = g1 / np.abs(g1).sum()
    x1 = np.clip(np.clip(x + np.float32(step) * np.sign(acc).astype(np.float32), x - np.float32(eps),
                         x + np.float32(eps)), 0, 1)
    g2 = clf.loss_gradient(x1, y).astype(np.float64)
    acc = mu * acc + g2 / np.abs(g2).sum()
    x2 = np.clip(np.clip(x1 + np.float32(step) * np.sign(acc).astype(np.float32), x - np.float32(eps),
                         x + np.float32(eps)), 0, 1)
    assert np.array_equal(mifgsm(clf, x, y, eps, steps=2, step_size=step, momentum_decay=mu), x2)


def test_bpda_with_identity_defense_is_pgd(linear3x16, batch100):
    x, y = batch100
    cfg = AttackConfig("BPDA_PGD", EPS, steps=5, seed=4)
    seen = []
    adv = bpda_attack(linear3x16, lambda im: im, x[:10], y[:10], cfg, progress=lambda s, p: seen.append(s))
    ref = pgd(linear3x16, x[:10], y[:10], EPS, steps=5, step_size=cfg.step_size, random_start=True, seed=4)
    assert np.array_equal(adv, ref)
    assert seen == [0, 1, 2, 3, 4]


def test_bpda_iterates_stay_in_ball(linear3x16, batch100):
    x, y = batch100
    cfg = AttackConfig("BPDA_PGD", EPS, steps=4)
    seen = []

    def defense(im):
        seen.append(im.copy())
        return np.clip(im + 0.05, 0, 1)

    adv = bpda_attack(linear3x16, defense, x[:3], y[:3], cfg)
    _ok(adv, x[:3], EPS)
    for k, it in enumerate(seen):
        _ok(it, x[k % 3], EPS)


def test_capability_error(batch100):
    class NoGrad(ClassifierAdapter):
        num_classes = 3

        def logits(self, images):
            return np.zeros((len(images), 3))

    x, y = batch100
    for method in ("FGSM", "PGD", "BIM", "MIFGSM"):
        with pytest.raises(CapabilityError):
            run_attack(NoGrad(), x[:1], y[:1], AttackConfig(method, EPS))
    with pytest.raises(CapabilityError):
        bpda_attack(NoGrad(), lambda im: im, x[:1], y[:1], AttackConfig("BPDA_PGD", EPS))


def test_config_defaults_and_validation():
    c = AttackConfig.from_255("pgd", 8)
    assert c.method == "PGD" and c.epsilon == pytest.approx(8 / 255) and c.epsilon_255 == pytest.approx(8)
    assert c.steps == 20 and c.step_size == pytest.approx(2.5 * c.epsilon / 20) and c.random_start
    assert not AttackConfig("BIM", 0.1).random_start
    assert AttackConfig("MIFGSM", 0.1).momentum_decay == 1.0
    assert AttackConfig.from_255("PGD", 8, step_size_255=1).step_size == pytest.approx(1 / 255)
    for kwargs in ({"method": "CW"}, {"epsilon": -0.1}, {"epsilon": 2.0}, {"steps": 0}, {"step_size": 0.0}):
        with pytest.raises(ConfigurationError):
            AttackConfig(**kwargs)
    with pytest.raises(ConfigurationError):
        run_attack(None, np.zeros((3, 4, 4)), 0, AttackConfig("BPDA_PGD", 0.1))


@settings(max_examples=20, deadline=None)
@given(st.floats(0, 16), st.sampled_from(["FGSM", "PGD", "BIM", "MIFGSM"]), st.integers(0, 10_000))
def test_linf_soundness_property(eps255, method, seed):
    r = np.random.default_rng(seed)
    clf = LinearClassifier(r.normal(size=(3, 12)), input_shape=(3, 2, 2))
    x = r.random((4, 3, 2, 2)).astype(np.float32)
    cfg = AttackConfig.from_255(method, eps255, steps=3, seed=seed)
    _ok(run_attack(clf, x, r.integers(0, 3, 4), cfg), x, cfg.epsilon)


def test_batch_roundtrip(tmp_path, linear3x16, batch100):
    x, y = batch100
    cfg = AttackConfig("PGD", EPS, steps=3, seed=2)
    adv = run_attack(linear3x16, x[:5], y[:5], cfg)
    b = AdversarialBatch(list(x[:5]), list(adv), list(y[:5]), cfg, original_paths=[f"im{i}.png" for i in range(5)])
    b.save(tmp_path / "b")
    manifest = json.loads((tmp_path / "b" / "manifest.json").read_text())
    item = manifest["items"][0]
    assert {"original_path", "label", "epsilon", "method", "seed"} <= set(item)
    back = AdversarialBatch.load(tmp_path / "b")
    assert back.attack == cfg and back.image_ids == b.image_ids
    assert all(np.array_equal(a, c) for a, c in zip(back.adversarials, adv))
    assert back.max_linf() <= EPS + 1e-6


def test_attacks_lower_cnn_accuracy():
    from dipdefense.harness.data import bundled_cifar10_samples
    from dipdefense.tensorio import load_image

    samples = bundled_cifar10_samples()[:10]
    x = np.stack([load_image(p) for p, _ in samples])
    y = np.array([label for _, label in samples])
    cnn = create_adapter("keras-cifar10-cnn")
    clean = (predict_labels(cnn, x) == y).mean()
    for method in ("FGSM", "PGD", "BIM", "MIFGSM"):
        adv = run_attack(cnn, x, y, AttackConfig(method, EPS, steps=10))
        _ok(adv, x, EPS)
        assert (predict_labels(cnn, adv) == y).mean() < clean
