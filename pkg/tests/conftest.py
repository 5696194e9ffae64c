import numpy as np
import pytest

from mattekit import synth


@pytest.fixture(scope="session")
def bounce_truth():
    """One default desk-scale bouncing scene shared across tests."""
    return synth.generate_bouncing_scene(synth.desk_bounce_config(seed=3))


@pytest.fixture(scope="session")
def flat_truth():
    return synth.generate_flat_jitter_scene(synth.flat_jitter_config(seed=1))


@pytest.fixture(scope="session")
def featured_flat_truth():
    """Flat jitter scene with the sharp speckle overlay (feature matching)."""
    return synth.generate_flat_jitter_scene(
        synth.flat_jitter_config(seed=2, detail_amplitude=0.45, detail_scale=3.0)
    )
