from collections import Counter

import numpy as np
import pytest

from cdpreid.dataset import DatasetManifest, SampleRecord
from cdpreid.enums import SPECTRA, Modality, SpectrumTag
from cdpreid.imaging import ImageTensor, JitterConfig, expand_channels, to_gray
from cdpreid.sampler import (
    DHSMConfig,
    Original,
    PairedBatch,
    SamplerConfig,
    SpectrumDistribution,
    SpectrumStats,
    blend,
    dhsm_sample_spectrum,
    dhsm_update,
    hard_spectrum_distribution,
    make_pairs,
    pk_sample,
    random_sample,
    record_confidence,
    spectrum_confidence,
)
from .test_helpers import random_image

R, G, B, X = SPECTRA


def manifest_of(num_persons, per_modality=2):
    records = []
    for pid in range(num_persons):
        for i in range(per_modality):
            records.append(SampleRecord(pid, i % 2, Modality.Visible, f"{pid}/v{i}"))
            records.append(SampleRecord(pid, 2, Modality.Infrared, f"{pid}/i{i}"))
    return DatasetManifest(records)


def stats_of(confidence):
    stats = SpectrumStats()
    for q, r in confidence.items():
        record_confidence(stats, q, r)
    return stats


def test_pk_sample_shape():
    manifest = manifest_of(5)
    batch = pk_sample(manifest, SamplerConfig(P=3, K=4), seed=1)
    assert len(batch) == 12
    counts = Counter(label for _, label in batch)
    assert len(counts) == 3
    assert set(counts.values()) == {4}
    for record, label in batch:
        assert manifest.label(record) == label
    # without replacement every image of a person appears once
    for label in counts:
        paths = [r.image_path for r, l in batch if l == label]
        assert len(set(paths)) == 4


def test_pk_sample_with_replacement():
    batch = pk_sample(manifest_of(3), SamplerConfig(P=2, K=6), seed=2)
    counts = Counter(label for _, label in batch)
    assert sorted(counts.values()) == [6, 6]


def test_pk_sample_needs_p_persons():
    with pytest.raises(ValueError, match="P=6"):
        pk_sample(manifest_of(5), SamplerConfig(P=6, K=2))


def test_pk_sample_is_seeded():
    manifest, cfg = manifest_of(6), SamplerConfig(P=3, K=2)
    assert pk_sample(manifest, cfg, 9) == pk_sample(manifest, cfg, 9)
    assert pk_sample(manifest, SamplerConfig(P=3, K=2, rng_seed=9)) == pk_sample(manifest, cfg, 9)


def test_random_sample():
    manifest = manifest_of(3)
    batch = random_sample(manifest, 5, seed=0)
    assert len(batch) == 5
    assert len({r.image_path for r, _ in batch}) == 5
    assert len(random_sample(manifest, 100, seed=0)) == len(manifest)


@pytest.mark.parametrize("config", [dict(P=1), dict(K=1)])
def test_sampler_config_validation(config):
    with pytest.raises(ValueError):
        SamplerConfig(**config)


def test_record_confidence():
    stats = SpectrumStats()
    record_confidence(stats, R, 0.2)
    record_confidence(stats, R, 0.6)
    record_confidence(stats, X, 1.0)
    assert stats.total == 3
    assert stats.mean(R) == pytest.approx(0.4)
    assert stats.mean(X) == 1.0
    assert stats.mean(G) is None


@pytest.mark.parametrize("spectrum, prob", [
    (R, 1.3),
    (R, -0.1),
    (SpectrumTag.IRJitter, 0.5),
    (SpectrumTag.OriginalRGB, 0.5),
])
def test_record_confidence_rejects(spectrum, prob):
    with pytest.raises(ValueError):
        record_confidence(SpectrumStats(), spectrum, prob)


def test_spectrum_confidence_fallbacks():
    stats = stats_of({R: 0.2, G: 0.4})
    assert spectrum_confidence(stats) == {R: 0.2, G: 0.4, B: pytest.approx(0.3), X: pytest.approx(0.3)}
    carried = spectrum_confidence(stats, fallback={B: 0.9, X: 0.1, R: 0.0})
    assert carried == {R: 0.2, G: 0.4, B: 0.9, X: 0.1}
    assert spectrum_confidence(SpectrumStats()) == {q: 0.0 for q in SPECTRA}
    assert spectrum_confidence(stats, spectra=(G,)) == {G: 0.4}


def test_dhsm_update_example():
    stats = stats_of({R: 0.9, G: 0.9, B: 0.9, X: 0.5})
    raw = hard_spectrum_distribution(spectrum_confidence(stats))
    np.testing.assert_allclose(raw.as_array(), [0.125, 0.125, 0.125, 0.625], atol=1e-12)
    updated = dhsm_update(stats, SpectrumDistribution.uniform(), DHSMConfig(alpha=0.1))
    assert abs(updated[X] - 0.5875) < 1e-12
    assert abs(updated[R] - 0.1375) < 1e-12
    assert updated.as_array().sum() == pytest.approx(1.0, abs=1e-12)


def test_dhsm_alpha_extremes():
    stats = stats_of({R: 0.3, G: 0.6, B: 0.8, X: 0.1})
    prev = SpectrumDistribution.from_array([0.4, 0.3, 0.2, 0.1])
    kept = dhsm_update(stats, prev, DHSMConfig(alpha=1.0))
    np.testing.assert_allclose(kept.as_array(), prev.as_array(), atol=1e-15)
    raw = dhsm_update(stats, prev, DHSMConfig(alpha=0.0))
    np.testing.assert_allclose(raw.as_array(), np.array([0.7, 0.4, 0.2, 0.9]) / 2.2, atol=1e-12)


def test_dhsm_perfect_recognition_is_uniform():
    stats = stats_of({q: 1.0 for q in SPECTRA})
    assert hard_spectrum_distribution(spectrum_confidence(stats)).as_array().tolist() == [0.25] * 4


def test_dhsm_spectrum_subset():
    stats = stats_of({R: 0.2, G: 0.9, B: 0.5, X: 0.1})
    cfg = DHSMConfig(alpha=0.0, spectra=(X,))
    assert dhsm_update(stats, SpectrumDistribution.uniform((X,)), cfg).as_array().tolist() == [0, 0, 0, 1.0]
    cfg = DHSMConfig(alpha=0.5, spectra=(R, G))
    updated = dhsm_update(stats, SpectrumDistribution.uniform((R, G)), cfg)
    assert updated[B] == updated[X] == 0.0
    assert updated[R] > updated[G]


def test_dhsm_random_statistics():
    rng = np.random.default_rng(0)
    for _ in range(10000):
        confidence = dict(zip(SPECTRA, rng.random(4)))
        prev = SpectrumDistribution.from_array(rng.dirichlet(np.ones(4)))
        alpha = rng.random()
        raw = hard_spectrum_distribution(confidence)
        updated = dhsm_update(stats_of(confidence), prev, DHSMConfig(alpha=alpha))
        probs = updated.as_array()
        assert np.all(probs >= 0.0)
        assert abs(probs.sum() - 1.0) < 1e-9
        # lower confidence never means a lower raw probability
        for a in SPECTRA:
            for b in SPECTRA:
                if confidence[a] < confidence[b]:
                    assert raw[a] >= raw[b]
        low = np.minimum(prev.as_array(), raw.as_array()) - 1e-12
        high = np.maximum(prev.as_array(), raw.as_array()) + 1e-12
        assert np.all((low <= probs) & (probs <= high))


@pytest.mark.parametrize("alpha", [-0.1, 1.5])
def test_dhsm_config_alpha_range(alpha):
    with pytest.raises(ValueError):
        DHSMConfig(alpha=alpha)


@pytest.mark.parametrize("spectra", [(), (R, R), (SpectrumTag.IRJitter,)])
def test_dhsm_config_spectra(spectra):
    with pytest.raises(ValueError):
        DHSMConfig(spectra=spectra)


@pytest.mark.parametrize("probs", [
    {R: 0.5, G: 0.6},
    {R: -0.5, G: 1.5},
    {R: float("nan"), G: 1.0},
    {SpectrumTag.IRJitter: 1.0},
])
def test_spectrum_distribution_validation(probs):
    with pytest.raises(ValueError):
        SpectrumDistribution(probs)


def test_blend_renormalizes():
    prev = SpectrumDistribution.uniform()
    raw = SpectrumDistribution({X: 1.0})
    assert blend(prev, raw, 0.5).as_array().tolist() == [0.125, 0.125, 0.125, 0.625]


def test_sample_spectrum_frequencies():
    rng = np.random.default_rng(123)
    counts = Counter(dhsm_sample_spectrum(SpectrumDistribution.uniform(), rng) for _ in range(100000))
    for q in SPECTRA:
        assert abs(counts[q] / 100000 - 0.25) < 0.01


def test_sample_spectrum_skips_zero_probability():
    dist = SpectrumDistribution({G: 0.3, X: 0.7})
    rng = np.random.default_rng(5)
    drawn = {dhsm_sample_spectrum(dist, rng) for _ in range(10000)}
    assert drawn == {G, X}
    assert dhsm_sample_spectrum(SpectrumDistribution({B: 1.0}), 0) is B


def originals(rng, height=4, width=3):
    made = []
    for label, modality in enumerate([Modality.Visible, Modality.Infrared, Modality.Visible]):
        channels = 3 if modality is Modality.Visible else 1
        record = SampleRecord(label + 10, 0, modality, f"img{label}")
        made.append(Original(record, label, random_image(rng, height, width, channels)))
    return made


def test_make_pairs():
    rng = np.random.default_rng(0)
    source = originals(rng)
    batch = make_pairs(source, SpectrumDistribution({X: 1.0}), JitterConfig(delta=0.0), seed=1)
    assert len(batch) == 6
    assert batch.num_originals == 3
    assert batch.generated_tags == [X, SpectrumTag.IRJitter, X]
    assert batch.all_labels().tolist() == [0, 1, 2, 0, 1, 2]
    assert [img.tag for img in batch.originals] == [SpectrumTag.OriginalRGB, SpectrumTag.OriginalIR,
                                                     SpectrumTag.OriginalRGB]
    assert np.array_equal(batch.generated[0].data, expand_channels(to_gray(source[0].image)).data)
    assert np.array_equal(batch.generated[1].data, batch.originals[1].data)
    assert batch.network_input().shape == (6, 3, 4, 3)


def test_make_pairs_draws_from_distribution():
    rng = np.random.default_rng(1)
    source = [o for o in originals(rng) if o.record.modality is Modality.Visible] * 50
    batch = make_pairs(source, SpectrumDistribution({R: 0.5, B: 0.5}), JitterConfig(), seed=2)
    assert set(batch.generated_tags) == {R, B}
    for original, generated in zip(source, batch.generated):
        channel = 0 if generated.tag is R else 2
        assert np.array_equal(generated.data[:, :, 1], original.image.data[:, :, channel])


def test_unpaired_batch():
    batch = PairedBatch.unpaired(originals(np.random.default_rng(2)))
    assert len(batch) == 3
    assert batch.generated_tags == []
    assert batch.all_labels().tolist() == [0, 1, 2]
    assert batch.network_input().shape == (3, 3, 4, 3)


def test_original_channel_mismatch():
    record = SampleRecord(0, 2, Modality.Infrared, "x")
    with pytest.raises(ValueError):
        Original(record, 0, ImageTensor(np.zeros((2, 2, 3), dtype=np.uint8))).network_image()
