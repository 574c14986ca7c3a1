"""
Named training configurations for the ablation study. Each preset is a
partial ``TrainConfig`` in the same nested form as a config file, layered
between the defaults and any user supplied configuration.
"""

from typing import Any, Dict, List

from .sources import MappingSource

PRESETS: Dict[str, Dict[str, Any]] = {
    # uniform batches, classification only
    "baseline-1": {"pairing": False, "pk_sampling": False,
                   "loss": {"use_tri": False}, "dhsm": {"enabled": False}},
    "baseline-2": {"pairing": False, "loss": {"use_tri": False}, "dhsm": {"enabled": False}},
    "baseline-3": {"pairing": False, "loss": {"use_cls": False}, "dhsm": {"enabled": False}},
    # one-stream network on every spectrum, no pairing
    "baseline-4": {"pairing": False, "dhsm": {"enabled": False}},
    "cdp-1": {"loss": {"use_tri": False}, "dhsm": {"enabled": False}},
    "cdp-2": {"dhsm": {"enabled": False, "spectra": ["X"]}},
    "cdp-3": {"dhsm": {"enabled": False, "spectra": ["R", "G", "B"]}},
    "cdp": {"dhsm": {"enabled": False}},
    "cdp-dhsm": {"dhsm": {"enabled": True}},
}

DEFAULT_ABLATION = ("baseline-4", "cdp", "cdp-dhsm")

# Synthetic benchmark: 20 training identities, 10 images per modality. An
# epoch of 40 batches revisits every image about three times.
BENCHMARK: Dict[str, Any] = {
    "epochs": 100,
    "batches_per_epoch": 40,
    "learning_rates": [2e-3, 2e-4, 2e-5],
    "sampler": {"P": 8, "K": 4},
}


def preset_names() -> List[str]:
    return list(PRESETS)


def preset_source(name: str) -> MappingSource:
    """
    :raises ValueError: for an unknown preset, listing the known ones.
    """
    try:
        return MappingSource(PRESETS[name])
    except KeyError:
        raise ValueError(f"unknown preset {name!r}, expected one of: {', '.join(PRESETS)}") from None
