import math

import numpy as np
import pytest

from cdpreid.enums import CeNormalization
from cdpreid.errors import InvalidInputError, NonFiniteError
from cdpreid.losses import LossConfig, batch_hard_triplet, cross_entropy, pairwise_distances, total_loss


def brute_force_triplet(embeddings, labels, margin):
    n = len(labels)
    terms = []
    for a in range(n):
        positives, negatives = [], []
        for b in range(n):
            d = np.sqrt(np.sum((embeddings[a] - embeddings[b]) ** 2))
            if labels[b] == labels[a] and b != a:
                positives.append(d)
            elif labels[b] != labels[a]:
                negatives.append(d)
        terms.append(max(margin + max(positives) - min(negatives), 0.0))
    return float(np.mean(terms))


def pk_labels(p, k):
    return np.repeat(np.arange(p), k)


@pytest.mark.parametrize("points, expected", [
    ([(0, 0), (0, 1), (10, 0), (10, 1)], 0.0),
    ([(0, 0), (0, 2), (0, 1), (3, 0)], (1.3 + 1.3 + (0.3 + math.sqrt(10) - 1) + (0.3 + math.sqrt(10) - 3)) / 4),
])
def test_triplet_examples(points, expected):
    loss, _ = batch_hard_triplet(np.array(points, dtype=float), pk_labels(2, 2), LossConfig(margin=0.3))
    assert loss == pytest.approx(expected, abs=1e-12)


def test_triplet_reference_value():
    points = np.array([(0, 0), (0, 2), (0, 1), (3, 0)], dtype=float)
    loss, _ = batch_hard_triplet(points, pk_labels(2, 2), LossConfig(margin=0.3))
    assert loss == pytest.approx(1.381139, abs=1e-6)


def test_identical_embeddings_give_margin():
    loss, grad = batch_hard_triplet(np.ones((6, 4)), pk_labels(3, 2), LossConfig(margin=0.25))
    assert loss == 0.25
    assert not grad.any()


def test_triplet_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(200):
        p, k, d = int(rng.integers(2, 5)), int(rng.integers(2, 4)), int(rng.integers(1, 5))
        labels = rng.permutation(pk_labels(p, k))
        embeddings = rng.normal(size=(p * k, d))
        margin = float(rng.uniform(0.0, 1.0))
        loss, _ = batch_hard_triplet(embeddings, labels, LossConfig(margin=margin))
        assert loss == brute_force_triplet(embeddings, labels, margin)
        assert loss >= 0.0


def test_triplet_is_zero_for_separated_classes():
    rng = np.random.default_rng(1)
    embeddings = np.concatenate([rng.uniform(0, 0.1, size=(3, 2)), rng.uniform(5, 5.1, size=(3, 2))])
    loss, grad = batch_hard_triplet(embeddings, pk_labels(2, 3), LossConfig(margin=1.0))
    assert loss == 0.0
    assert not grad.any()


def test_triplet_invariances():
    rng = np.random.default_rng(2)
    cfg = LossConfig()
    for _ in range(20):
        labels = pk_labels(3, 3)
        embeddings = rng.normal(size=(9, 4))
        loss, _ = batch_hard_triplet(embeddings, labels, cfg)
        order = rng.permutation(9)
        permuted, _ = batch_hard_triplet(embeddings[order], labels[order], cfg)
        assert abs(permuted - loss) < 1e-12
        shifted, _ = batch_hard_triplet(embeddings + rng.normal(size=4), labels, cfg)
        assert abs(shifted - loss) < 1e-9


def test_triplet_gradient_matches_finite_differences():
    rng = np.random.default_rng(3)
    cfg = LossConfig(margin=0.5)
    labels = pk_labels(2, 3)
    embeddings = rng.normal(size=(6, 3))
    _, grad = batch_hard_triplet(embeddings, labels, cfg)
    h = 1e-6
    for idx in np.ndindex(*embeddings.shape):
        plus, minus = embeddings.copy(), embeddings.copy()
        plus[idx] += h
        minus[idx] -= h
        numeric = (batch_hard_triplet(plus, labels, cfg)[0] - batch_hard_triplet(minus, labels, cfg)[0]) / (2 * h)
        assert abs(numeric - grad[idx]) <= 1e-4 * abs(numeric) + 1e-7


@pytest.mark.parametrize("labels", [[0, 0, 0, 0], [0, 0, 1, 2], [0, 1, 1, 1]])
def test_triplet_label_requirements(labels):
    with pytest.raises(InvalidInputError):
        batch_hard_triplet(np.zeros((4, 2)), np.array(labels), LossConfig())


def test_pairwise_distances():
    d = pairwise_distances(np.array([[0.0, 0.0], [3.0, 4.0]]))
    assert d.tolist() == [[0.0, 5.0], [5.0, 0.0]]


def test_uniform_logits_give_log_m():
    loss, grad, target = cross_entropy(np.zeros((4, 10)), np.array([0, 3, 9, 3]), LossConfig())
    assert loss == pytest.approx(math.log(10), abs=1e-12)
    np.testing.assert_allclose(target, 0.1)
    np.testing.assert_allclose(grad.sum(axis=1), 0.0, atol=1e-15)


def test_confident_predictions_give_small_loss():
    logits = np.full((3, 5), -50.0)
    labels = np.array([4, 0, 2])
    logits[np.arange(3), labels] = 50.0
    loss, _, target = cross_entropy(logits, labels, LossConfig())
    assert loss < 1e-30
    assert np.all(target == 1.0)


def test_per_class_normalization_ratio():
    rng = np.random.default_rng(4)
    logits = rng.normal(size=(6, 10))
    labels = rng.integers(0, 10, size=6)
    mean_loss, mean_grad, _ = cross_entropy(logits, labels, LossConfig())
    cls_loss, cls_grad, _ = cross_entropy(logits, labels, LossConfig(ce_normalization=CeNormalization.PerClass))
    assert cls_loss == pytest.approx(mean_loss / 10, rel=1e-12)
    np.testing.assert_allclose(cls_grad, mean_grad / 10, rtol=1e-12)


def test_cross_entropy_invariances():
    rng = np.random.default_rng(5)
    cfg = LossConfig()
    logits = rng.normal(size=(8, 6))
    labels = rng.integers(0, 6, size=8)
    loss, _, _ = cross_entropy(logits, labels, cfg)
    order = rng.permutation(8)
    assert abs(cross_entropy(logits[order], labels[order], cfg)[0] - loss) < 1e-12
    shifted = logits + rng.normal(size=(8, 1)) * 100
    assert abs(cross_entropy(shifted, labels, cfg)[0] - loss) < 1e-9


def test_cross_entropy_gradient():
    rng = np.random.default_rng(6)
    cfg = LossConfig()
    logits = rng.normal(size=(4, 3))
    labels = np.array([0, 2, 1, 2])
    _, grad, _ = cross_entropy(logits, labels, cfg)
    h = 1e-6
    for idx in np.ndindex(*logits.shape):
        plus, minus = logits.copy(), logits.copy()
        plus[idx] += h
        minus[idx] -= h
        numeric = (cross_entropy(plus, labels, cfg)[0] - cross_entropy(minus, labels, cfg)[0]) / (2 * h)
        assert abs(numeric - grad[idx]) <= 1e-4 * abs(numeric) + 1e-8


@pytest.mark.parametrize("labels", [[0, 3], [-1, 0], [0.0, 1.0], [0]])
def test_cross_entropy_bad_labels(labels):
    with pytest.raises(InvalidInputError):
        cross_entropy(np.zeros((2, 3)), np.array(labels), LossConfig())


def paired_inputs(rng, p=2, k=2, m=4, d=3):
    n = p * k
    labels = np.concatenate([pk_labels(p, k), pk_labels(p, k)])
    return rng.normal(size=(2 * n, m)), rng.normal(size=(2 * n, d)), labels, n


def test_total_loss_routes_gradients():
    logits, embeddings, labels, n = paired_inputs(np.random.default_rng(7))
    out = total_loss(logits, embeddings, labels, LossConfig(lambda_=2.0), num_originals=n)
    assert out.total == pytest.approx(out.cls + 2.0 * out.tri, abs=1e-12)
    assert not out.grad_embeddings[n:].any()
    _, grad_tri = batch_hard_triplet(embeddings[:n], labels[:n], LossConfig())
    np.testing.assert_array_equal(out.grad_embeddings[:n], 2.0 * grad_tri)
    cls, grad_logits, target = cross_entropy(logits, labels, LossConfig())
    assert out.cls == cls
    np.testing.assert_array_equal(out.grad_logits, grad_logits)
    np.testing.assert_array_equal(out.per_sample_target_prob, target)


def test_total_loss_with_zero_lambda():
    logits, embeddings, labels, n = paired_inputs(np.random.default_rng(8))
    out = total_loss(logits, embeddings, labels, LossConfig(lambda_=0.0), num_originals=n)
    assert out.total == out.cls
    assert not out.grad_embeddings.any()


def test_total_loss_switches():
    logits, embeddings, labels, n = paired_inputs(np.random.default_rng(9))
    cls_only = total_loss(logits, embeddings, labels, LossConfig(use_tri=False), num_originals=n)
    assert cls_only.tri == 0.0 and cls_only.total == cls_only.cls
    tri_only = total_loss(logits, embeddings, labels, LossConfig(use_cls=False), num_originals=n)
    assert tri_only.cls == 0.0 and not tri_only.grad_logits.any()
    assert tri_only.total == tri_only.tri
    # target probabilities are still reported for spectrum statistics
    assert tri_only.per_sample_target_prob.shape == (2 * n,)
    with pytest.raises(ValueError):
        LossConfig(use_cls=False, use_tri=False)


def test_total_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(10)
    logits, embeddings, labels, n = paired_inputs(rng)
    cfg = LossConfig(margin=0.5)
    out = total_loss(logits, embeddings, labels, cfg, num_originals=n)
    h = 1e-6
    for array, grad in ((logits, out.grad_logits), (embeddings, out.grad_embeddings)):
        for idx in np.ndindex(*array.shape):
            old = array[idx]
            array[idx] = old + h
            plus = total_loss(logits, embeddings, labels, cfg, num_originals=n).total
            array[idx] = old - h
            minus = total_loss(logits, embeddings, labels, cfg, num_originals=n).total
            array[idx] = old
            assert abs((plus - minus) / (2 * h) - grad[idx]) <= 1e-4 * abs(grad[idx]) + 1e-7


def test_total_loss_errors():
    logits, embeddings, labels, n = paired_inputs(np.random.default_rng(11))
    with pytest.raises(InvalidInputError):
        total_loss(logits, embeddings[:n], labels, LossConfig())
    with pytest.raises(InvalidInputError):
        total_loss(logits, embeddings, labels, LossConfig(), num_originals=0)
    logits[0, 0] = np.nan
    with pytest.raises(NonFiniteError):
        total_loss(logits, embeddings, labels, LossConfig(), num_originals=n)


@pytest.mark.parametrize("options", [dict(margin=-0.1), dict(lambda_=-1.0)])
def test_loss_config_validation(options):
    with pytest.raises(ValueError):
        LossConfig(**options)
