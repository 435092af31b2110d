"""Bundled synthetic fleet: ten app profiles with fixed seeds.

Most apps sit at well-separated activity levels.  ``app03`` is a near-copy
of ``app02``, ``app08`` is unusually noisy and ``app10`` drifts upward over
time.
"""

from __future__ import annotations

import json
from importlib import resources

from baafe.behavior import AppProfile


def _doc() -> dict:
    return json.loads(resources.files(__name__).joinpath("profiles.json").read_text("utf-8"))


def bundled_profiles() -> list[AppProfile]:
    return [AppProfile.from_dict(p) for p in _doc()["profiles"]]


def bundled_roles() -> dict[str, str]:
    """Which app plays which part: ``twin``, ``clone``, ``noisy``, ``drifting``."""
    return dict(_doc()["roles"])
