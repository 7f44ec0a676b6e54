"""Shared fixtures.

Solving an instance on a fine grid is the slow part of the suite, so solved
value tables are cached per session and handed out through small accessor
functions instead of being rebuilt in every test module.
"""

from __future__ import annotations

import pytest

import changediag as cd

import instances


@pytest.fixture(scope="session")
def grid200():
    return cd.build_grid(2, 200)


@pytest.fixture(scope="session")
def solve200(grid200):
    """Accessor returning ``(spec, table)`` for a named two-type instance.

    Tables are solved on the shared Q=200 grid with the default tolerance
    and memoised, so repeated requests across modules are free.
    """

    cache: dict[str, tuple] = {}

    def get(name: str):
        if name not in cache:
            spec = instances.FIGURES[name]
            cache[name] = (spec, cd.value_iterate(spec, grid200))
        return cache[name]

    return get


@pytest.fixture(scope="session")
def grid400():
    return cd.build_grid(2, 400)


@pytest.fixture(scope="session")
def solve400(grid400):
    """Same as ``solve200`` but on the finer Q=400 grid (used sparingly)."""

    cache: dict[str, tuple] = {}

    def get(name: str):
        if name not in cache:
            spec = instances.FIGURES[name]
            cache[name] = (spec, cd.value_iterate(spec, grid400))
        return cache[name]

    return get
