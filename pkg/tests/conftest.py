#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Shared fixtures for the graspmap test suite."""


import sys

from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from mod import console                         # noqa: E402
from mod import tensor_engine as te             # noqa: E402


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def f64():
    """Create new parameters and buffers in double precision for the test."""
    te.set_precision('f64')
    yield
    te.set_precision('f32')


@pytest.fixture(autouse=True)
def quiet():
    old = console.verbosity
    console.set_verbosity(0)
    yield
    console.verbosity = old
