import pytest

from cdpreid.enums import SPECTRA, SpectrumTag
from cdpreid.optim import TrainConfig, lr_at_epoch
from cdpreid.presets import BENCHMARK, DEFAULT_ABLATION, PRESETS, preset_names, preset_source
from cdpreid.sources import MappingSource


@pytest.mark.parametrize("name", preset_names())
def test_every_preset_builds(name):
    cfg = TrainConfig.from_sources(preset_source(name))
    if not cfg.pk_sampling:
        assert not cfg.loss.use_tri
    assert cfg.loss.use_cls or cfg.loss.use_tri


def test_preset_contents():
    baseline = TrainConfig.from_sources(preset_source("baseline-4"))
    assert not baseline.pairing and not baseline.dhsm.enabled
    assert baseline.loss.use_cls and baseline.loss.use_tri

    cdp3 = TrainConfig.from_sources(preset_source("cdp-3"))
    assert cdp3.pairing
    assert cdp3.dhsm.spectra == (SpectrumTag.R, SpectrumTag.G, SpectrumTag.B)

    dhsm = TrainConfig.from_sources(preset_source("cdp-dhsm"))
    assert dhsm.dhsm.enabled and dhsm.dhsm.spectra == SPECTRA


def test_user_configuration_overrides_preset():
    cfg = TrainConfig.from_sources(preset_source("cdp"), MappingSource({"dhsm": {"enabled": True}}))
    assert cfg.dhsm.enabled


def test_default_ablation_is_known():
    assert set(DEFAULT_ABLATION) <= set(PRESETS)


def test_unknown_preset():
    with pytest.raises(ValueError, match="baseline-1"):
        preset_source("nope")


def test_benchmark_schedule():
    cfg = TrainConfig.from_sources(preset_source("cdp"), MappingSource(BENCHMARK))
    assert (cfg.epochs, cfg.batches_per_epoch, cfg.batch_size) == (100, 40, 32)
    assert [lr_at_epoch(cfg, epoch) for epoch in (0, 49, 50, 74, 75, 99)] == [2e-3, 2e-3, 2e-4, 2e-4, 2e-5, 2e-5]
