"""Shared fixtures: tiny region map on disk and cached synthetic features."""

import json

import pytest

from ltsgat.features import extract_features, gen_synthetic


@pytest.fixture(scope="session")
def tiny_region_map_path(tmp_path_factory):
    """The 3-region partition of 4 channels, as a loadable JSON file."""
    path = tmp_path_factory.mktemp("maps") / "tiny_regions.json"
    path.write_text(json.dumps({
        "regions": [
            {"name": "front", "channels": [0]},
            {"name": "middle", "channels": [1, 2]},
            {"name": "back", "channels": [3]},
        ]
    }))
    return str(path)


@pytest.fixture(scope="session")
def separable_features():
    """Small fully separable synthetic feature set (1 participant)."""
    trials = gen_synthetic(seed=90, participants=1, trials_per_participant=12,
                           separation=1.0, domain_shift=0.0)
    samples = []
    for t in trials:
        samples.extend(extract_features(t))
    return samples
