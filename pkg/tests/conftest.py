"""
Shared fixtures: the toy model used across suites.
"""

import pytest


@pytest.fixture
def toy():
    """(state, data, batch) of the 4-user / 4-item / 6-entity toy problem."""
    from core.training import build_toy_state
    return build_toy_state()


@pytest.fixture
def tiny_model(toy):
    state, data, _ = toy
    return state.model, data.ds
