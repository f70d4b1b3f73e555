"""Deterministic seed derivation.

Every random draw in the pipeline flows from one master seed through a
named derivation path (e.g. "unlearn/outer:3/inner:1"), so partial reruns
of any stage stay consistent with full runs.
"""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(master_seed: int, path: str) -> int:
    """Map (master seed, path string) to a stable 63-bit seed."""
    digest = hashlib.sha256(f"{master_seed}/{path}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def rng_for(master_seed: int, path: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master_seed, path))
