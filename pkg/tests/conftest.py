"""Shared builders for the test suite."""

import numpy as np
import pytest

from funfactor.model import (
    FunctionalDataset,
    Hyperparameters,
    SubjectRecord,
    draw_prior_state,
)
from funfactor.splines import BasisConfig


def friendly_hyper(**kw) -> Hyperparameters:
    """Hyperparameters with finite low-order prior moments everywhere."""
    base = dict(q1=1, q2=1, nu1=5, nu2=5, r1=2, r2=2,
                a_sigma=3, b_sigma=3, a_h=3, b_h=3, a_phi=3, b_phi=0.3)
    base.update(kw)
    return Hyperparameters(**base)


def linear_basis() -> BasisConfig:
    """Two linear B-splines on [0, 1]: the p = 2 micro-model basis."""
    return BasisConfig(degree=1, interior_knots=())


def micro_dataset(rng, n=3, d=1) -> FunctionalDataset:
    """n subjects on the 2 x 2 unit-square grid with intercept covariates."""
    subs = [
        SubjectRecord(y=rng.normal(size=(2, 2)),
                      mask=np.ones((2, 2), dtype=bool),
                      x=np.ones(d), subject_id=f"u{i}")
        for i in range(n)
    ]
    return FunctionalDataset(subjects=subs, s_grid=[0.0, 1.0],
                             t_grid=[0.0, 1.0], d=d)


def moderate_state(rng, p1=4, p2=5, q1=2, q2=2, n=3, d=1):
    """A valid state with all scales O(1), handy for oracle comparisons."""
    hyper = friendly_hyper(q1=q1, q2=q2)
    X = rng.normal(size=(n, d))
    st = draw_prior_state(hyper, (p1, p2), X, rng)
    st.Lambda = rng.normal(size=(p1, q1))
    st.Gamma = rng.normal(size=(p2, q2))
    st.eta = rng.normal(size=(n, q1, q2))
    st.Theta = rng.normal(size=(n, p1, p2))
    st.Sigma_diag = rng.uniform(0.5, 2.0, p1 * p2)
    st.H_diag = rng.uniform(0.5, 2.0, q1 * q2)
    st.beta = rng.normal(size=(d, q1 * q2))
    st.omega = rng.uniform(0.5, 2.0, (d, q1 * q2))
    st.phi2 = 0.3
    return st, hyper, X


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
