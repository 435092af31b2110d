import os
import sys

import pytest

from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def fleet():
    """Bundled ten-app dataset, 30 days, with the harness state built once."""
    from baafe.behavior import synth_dataset
    from baafe.data import bundled_profiles
    from baafe.evalharness import Experiment

    return Experiment(synth_dataset(bundled_profiles(), 30))


@pytest.fixture(scope="session")
def fleet_jsonl(tmp_path_factory):
    from baafe.behavior import synth_generate, write_jsonl
    from baafe.data import bundled_profiles

    path = tmp_path_factory.mktemp("data") / "behavior.jsonl"
    write_jsonl(synth_generate(bundled_profiles(), 30), path)
    return path
