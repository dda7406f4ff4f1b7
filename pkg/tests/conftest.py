import numpy as np
import pytest

from varimix.synth import (
    AbundanceFieldConfig,
    ClassVariability,
    VariabilityConfig,
    synthesize_scene,
    synthetic_base_spectra,
)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_scene(
    n_bands=40,
    n_classes=3,
    height=10,
    width=20,
    snr_db=float("inf"),
    n_variants=3,
    seed=42,
    pure_fraction=0.0,
    modes=None,
):
    """Small ground-truthed scene used across test modules."""
    base = synthetic_base_spectra(n_bands, n_classes, seed=7)
    if modes is None:
        modes = tuple(
            ClassVariability("elmm_scaling", scale_range=(0.85, 1.15))
            for _ in range(n_classes)
        )
    var = VariabilityConfig(class_modes=modes, n_variants=n_variants, seed=11)
    ab = AbundanceFieldConfig(
        generator="dirichlet",
        alpha=(1.0,) * n_classes,
        pure_pixel_fraction=pure_fraction,
        seed=3,
    )
    return synthesize_scene(base, ab, var, snr_db=snr_db, seed=seed,
                            height=height, width=width)
