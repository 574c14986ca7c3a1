import json
import os

import numpy as np
import pytest

from cdpreid import trainer
from cdpreid.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from cdpreid.dataset import DatasetManifest, ImageStore, SampleRecord, load_manifest
from cdpreid.enums import SPECTRA, Modality
from cdpreid.errors import CheckpointError, NonFiniteError
from cdpreid.losses import LossConfig
from cdpreid.model import init_model
from cdpreid.optim import AdamState, TrainConfig
from cdpreid.sampler import DHSMConfig, SamplerConfig, SpectrumDistribution, blend, hard_spectrum_distribution
from .test_helpers import small_model_config, small_synth_config, write_dataset


@pytest.fixture(scope="module")
def manifest(tmp_path_factory):
    train_path, _ = write_dataset(tmp_path_factory.mktemp("data"), small_synth_config(num_persons=4, per_modality=4))
    return load_manifest(train_path)


def tiny_config(**options):
    settings = dict(epochs=2, batches_per_epoch=2, sampler=SamplerConfig(P=2, K=2),
                    model=small_model_config(num_classes=None), checkpoint_every=1)
    settings.update(options)
    return TrainConfig(**settings)


def params_equal(a, b):
    return list(a.params) == list(b.params) and all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


def test_batches_per_epoch(manifest):
    assert len(manifest) == 16
    assert trainer.batches_per_epoch(manifest, tiny_config(batches_per_epoch=None)) == 4
    assert trainer.batches_per_epoch(manifest, tiny_config()) == 2


def test_resolve_config(manifest):
    assert trainer.resolve_config(manifest, tiny_config()).model.num_classes == 2
    explicit = tiny_config(model=small_model_config(num_classes=5))
    assert trainer.resolve_config(manifest, explicit) is explicit

    records = [SampleRecord(pid, 0, modality, f"{pid}{modality.value}")
               for pid in range(3) for modality in Modality]
    with pytest.raises(ValueError, match="3 training identities"):
        trainer.resolve_config(DatasetManifest(records), tiny_config(model=small_model_config(num_classes=2)))


def test_build_batch_is_reproducible(manifest):
    cfg = trainer.resolve_config(manifest, tiny_config())
    store = ImageStore((16, 8))
    dist = SpectrumDistribution.uniform()
    first = trainer.build_batch(manifest, store, dist, cfg, trainer._batch_generators(cfg, 3, 1))
    second = trainer.build_batch(manifest, store, dist, cfg, trainer._batch_generators(cfg, 3, 1))
    assert len(first) == 8 and first.num_originals == 4
    assert first.generated_tags == second.generated_tags
    assert np.array_equal(first.network_input(), second.network_input())


def test_train_epoch_smoke(manifest):
    cfg = trainer.resolve_config(manifest, tiny_config())
    model = init_model(cfg.model)
    before = model.copy()
    dist = SpectrumDistribution.uniform()
    metrics, stats = trainer.train_epoch(model, manifest, dist, AdamState.zeros_like(model.params), cfg)
    assert metrics.batches == 2 and metrics.lr == 1e-3
    assert np.isfinite(metrics.loss_total)
    assert metrics.loss_total == pytest.approx(metrics.loss_cls + metrics.loss_tri, abs=1e-9)
    assert model.version == 2
    assert not params_equal(model, before)

    store = ImageStore((16, 8))
    visible = 0
    for index in range(2):
        batch = trainer.build_batch(manifest, store, dist, cfg, trainer._batch_generators(cfg, 0, index))
        visible += sum(tag in SPECTRA for tag in batch.generated_tags)
    assert stats.total == visible
    assert sum(stats.counts.values()) == visible


def test_zero_learning_rate_keeps_parameters(manifest):
    cfg = trainer.resolve_config(manifest, tiny_config())
    model = init_model(cfg.model)
    before = model.copy()
    trainer.train_epoch(model, manifest, SpectrumDistribution.uniform(), AdamState.zeros_like(model.params), cfg,
                        lr=0.0)
    assert params_equal(model, before)


def test_unpaired_random_batches(manifest):
    cfg = trainer.resolve_config(manifest, tiny_config(pairing=False, pk_sampling=False, loss=LossConfig(use_tri=False)))
    model = init_model(cfg.model)
    metrics, stats = trainer.train_epoch(model, manifest, SpectrumDistribution.uniform(),
                                         AdamState.zeros_like(model.params), cfg)
    assert stats.total == 0
    assert metrics.loss_tri == 0.0


def test_non_finite_loss_names_the_batch(manifest, monkeypatch):
    def exploding(*args, **kwargs):
        raise NonFiniteError("non-finite loss")

    monkeypatch.setattr(trainer, "total_loss", exploding)
    cfg = trainer.resolve_config(manifest, tiny_config())
    model = init_model(cfg.model)
    with pytest.raises(NonFiniteError, match="epoch 0, batch 0"):
        trainer.train_epoch(model, manifest, SpectrumDistribution.uniform(), AdamState.zeros_like(model.params), cfg)


def test_fit_writes_run_directory(manifest, tmp_path):
    cfg = tiny_config(epochs=3, checkpoint_every=2)
    result = trainer.fit(manifest, cfg, out_dir=str(tmp_path))
    assert sorted(os.listdir(tmp_path)) == ["checkpoints", "config.json", "model.ckpt", "train_log.csv"]
    assert os.listdir(tmp_path / "checkpoints") == ["epoch_0002.ckpt"]
    assert result.checkpoints == [str(tmp_path / "checkpoints" / "epoch_0002.ckpt"), str(tmp_path / "model.ckpt")]

    with open(tmp_path / "train_log.csv") as fh:
        assert fh.readline().strip() == ",".join(trainer.LOG_COLUMNS)
    rows = trainer.read_log(str(tmp_path / "train_log.csv"))
    assert len(rows) == 3
    assert [row["epoch"] for row in rows] == [1.0, 2.0, 3.0]
    assert [row["lr"] for row in rows] == [1e-3, 1e-3, 1e-4]

    with open(tmp_path / "config.json") as fh:
        assert json.load(fh)["model"]["num_classes"] == 2
    final = load_checkpoint(str(tmp_path / "model.ckpt"))
    assert final.epoch == 3
    assert params_equal(final.model, result.model)


def test_dhsm_off_keeps_uniform_distribution(manifest):
    result = trainer.fit(manifest, tiny_config(dhsm=DHSMConfig(enabled=False)))
    assert result.distribution.as_array().tolist() == [0.25] * 4
    for row in result.history:
        assert [row[f"P_{q.name}"] for q in SPECTRA] == [0.25] * 4


def test_dhsm_recursion_can_be_recomputed_from_the_log(manifest, tmp_path):
    cfg = tiny_config(epochs=3, dhsm=DHSMConfig(alpha=0.3))
    trainer.fit(manifest, cfg, out_dir=str(tmp_path))
    prev = SpectrumDistribution.uniform()
    for row in trainer.read_log(str(tmp_path / "train_log.csv")):
        confidence = {q: row[f"R_{q.name}"] for q in SPECTRA}
        assert all(0.0 <= r <= 1.0 for r in confidence.values())
        prev = blend(prev, hard_spectrum_distribution(confidence), 0.3)
        np.testing.assert_allclose(prev.as_array(), [row[f"P_{q.name}"] for q in SPECTRA], atol=1e-12)


def test_dhsm_spectrum_subset(manifest):
    result = trainer.fit(manifest, tiny_config(dhsm=DHSMConfig(spectra=SPECTRA[:2])))
    assert result.distribution[SPECTRA[2]] == result.distribution[SPECTRA[3]] == 0.0
    assert np.isnan(result.history[-1]["R_X"])


def test_fit_is_deterministic(manifest):
    first = trainer.fit(manifest, tiny_config())
    second = trainer.fit(manifest, tiny_config())
    assert params_equal(first.model, second.model)
    assert first.history == second.history


def test_resume_is_bit_exact(manifest, tmp_path):
    cfg = tiny_config(epochs=3)
    full = trainer.fit(manifest, cfg, out_dir=str(tmp_path / "full"))
    resumed = trainer.fit(manifest, cfg, out_dir=str(tmp_path / "resumed"),
                          resume=str(tmp_path / "full" / "checkpoints" / "epoch_0001.ckpt"))
    assert params_equal(full.model, resumed.model)
    assert full.history == resumed.history
    assert full.distribution.as_array().tolist() == resumed.distribution.as_array().tolist()
    for name in full.adam.m:
        assert np.array_equal(full.adam.m[name], resumed.adam.m[name])
    assert full.adam.t == resumed.adam.t


def test_resume_errors(manifest, tmp_path):
    cfg = tiny_config(epochs=2)
    trainer.fit(manifest, cfg, out_dir=str(tmp_path))
    final = str(tmp_path / "model.ckpt")
    with pytest.raises(CheckpointError, match="past the 1 epochs"):
        trainer.fit(manifest, tiny_config(epochs=1), resume=final)
    with pytest.raises(CheckpointError, match="differs"):
        trainer.fit(manifest, tiny_config(model=small_model_config(num_classes=None, embedding_dim=4)), resume=final)
    with pytest.raises(CheckpointError, match="training config differs from the checkpoint in loss, rng_seed"):
        trainer.fit(manifest, tiny_config(loss=LossConfig(margin=0.5), rng_seed=1), resume=final)

    bare = str(tmp_path / "bare.ckpt")
    save_checkpoint(bare, Checkpoint(load_checkpoint(final).model))
    with pytest.raises(CheckpointError, match="no training state"):
        trainer.fit(manifest, cfg, resume=bare)


def test_resume_may_extend_the_run(manifest, tmp_path):
    trainer.fit(manifest, tiny_config(epochs=2), out_dir=str(tmp_path))
    extended = trainer.fit(manifest, tiny_config(epochs=3, checkpoint_every=3), resume=str(tmp_path / "model.ckpt"))
    assert len(extended.history) == 3
