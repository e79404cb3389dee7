import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

settings.register_profile(
    "default",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


seeds = st.integers(min_value=0, max_value=2**32 - 1)
state_counts = st.integers(min_value=1, max_value=5)


@st.composite
def stochastic_matrices(draw, rows=None, cols=None):
    n = draw(state_counts) if rows is None else rows
    m = draw(state_counts) if cols is None else cols
    rng = np.random.default_rng(draw(seeds))
    return rng.dirichlet(np.ones(m), size=n)
