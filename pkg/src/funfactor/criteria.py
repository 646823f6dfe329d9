"""Deviance-based information criteria for basis-dimension selection.

The deviance integrates the subject-level latent blocks out of the
likelihood: given the loadings, scales and regression map, each subject's
vectorized surface is Gaussian with covariance ``D Omega D^T + phi^2 I`` and
mean ``D M x_i``, where ``D`` is the cell design and ``M`` the coefficient
mean map.  A conditional (latent-coefficient) deviance keeps improving with
basis dimension because the per-subject coefficients absorb noise, which no
fixed-parameter penalty can offset; the marginal deviance is flat past the
generating dimension, so dimension selection behaves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from .model import FunctionalDataset, ModelState, omega as _omega_of
from .splines import tensor_design

__all__ = ["CriteriaReport", "compute_criteria", "marginal_deviance"]


@dataclass(frozen=True)
class CriteriaReport:
    """Model comparison summary for one fitted model.

    ``n_fixed`` counts loading, regression and variance parameters;
    ``n_total`` adds every subject-level latent coordinate.  The plug-in
    deviance evaluates the marginal likelihood at the posterior means of the
    identified quantities it depends on: the coefficient covariance, the
    coefficient mean map, and the noise variance.
    """

    dic: float
    bic1: float
    bic2: float
    p_dic: float
    mean_deviance: float
    plugin_deviance: float
    n_fixed: int
    n_total: int
    n_obs: int


def _chol(mat: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        jittered = mat.copy()
        jittered[np.diag_indices_from(jittered)] += 1e-10 * max(
            np.abs(np.diag(mat)).max(), 1.0)
        return np.linalg.cholesky(jittered)


def _logdet_from_chol(L: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def marginal_deviance(Om: np.ndarray, mean_map: np.ndarray, phi2: float,
                      data: FunctionalDataset, D: np.ndarray) -> float:
    """-2 log of the latent-integrated Gaussian likelihood.

    ``Om`` is the coefficient covariance (P x P), ``mean_map`` the (P, d)
    linear map from covariates to coefficient means, and ``D`` the complete
    pair-grid design.  Subject covariances ``D_i Om D_i^T + phi2 I`` are
    handled through the Woodbury identity and the matching determinant
    lemma, so the cost scales with the coefficient dimension rather than the
    grid size.
    """
    if data.n == 0:
        return 0.0
    P = Om.shape[0]
    phim2 = 1.0 / phi2
    L_om = _chol(Om)
    logdet_om = _logdet_from_chol(L_om)
    om_inv = cho_solve((L_om, True), np.eye(P), check_finite=False)

    means = data.X @ mean_map.T if data.X.size else np.zeros((data.n, P))

    dev = 0.0
    if data.complete:
        A = om_inv + phim2 * (D.T @ D)
        L_A = _chol(A)
        logdet_A = _logdet_from_chol(L_A)
        n_cells = D.shape[0]
        flat = data.Y.reshape(data.n, -1)
        resid = flat - means @ D.T
        U = D.T @ resid.T                                   # (P, n)
        V = cho_solve((L_A, True), U, check_finite=False)
        quads = phim2 * np.sum(resid**2, axis=1) - phim2**2 * np.sum(U * V, axis=0)
        dev += data.n * (n_cells * np.log(2.0 * np.pi * phi2) + logdet_om + logdet_A)
        dev += float(np.sum(quads))
        return dev

    for i in range(data.n):
        m = data.M[i].ravel()
        Di = D[m]
        A = om_inv + phim2 * (Di.T @ Di)
        L_A = _chol(A)
        r = data.Y[i].ravel()[m] - Di @ means[i]
        u = Di.T @ r
        v = cho_solve((L_A, True), u, check_finite=False)
        quad = phim2 * float(r @ r) - phim2**2 * float(u @ v)
        dev += m.sum() * np.log(2.0 * np.pi * phi2) + logdet_om
        dev += _logdet_from_chol(L_A) + quad
    return dev


def _mean_map(state: ModelState) -> np.ndarray:
    """(P, d) map from covariates to coefficient-vector means."""
    W = np.kron(state.Gamma, state.Lambda)
    return W @ state.beta.T


def compute_criteria(draws, data: FunctionalDataset,
                     B1: np.ndarray, B2: np.ndarray) -> CriteriaReport:
    """DIC and two BIC variants over a set of posterior draws.

    DIC = mean(D) + p_DIC with p_DIC = mean(D) - D(plug-in).  The BICs
    penalize the plug-in deviance with the same population parameter count
    but different effective sample sizes: BIC1 uses the subject count, BIC2
    the observed-cell count.  Counting individual latent coordinates instead
    (reported as ``n_total``) makes the penalty gap between basis dimensions
    orders of magnitude larger than any attainable deviance difference, so
    such a criterion degenerates to always choosing the smallest basis.
    """
    states = draws.states
    if not states:
        raise ValueError("compute_criteria requires at least one draw")
    D = tensor_design(B1, B2)

    om_mean = None
    map_mean = None
    phi2_mean = 0.0
    devs = np.empty(len(states))
    for idx, state in enumerate(states):
        om = _omega_of(state)
        mm = _mean_map(state)
        devs[idx] = marginal_deviance(om, mm, state.phi2, data, D)
        om_mean = om if om_mean is None else om_mean + om
        map_mean = mm if map_mean is None else map_mean + mm
        phi2_mean += state.phi2
    om_mean /= len(states)
    map_mean /= len(states)
    phi2_mean /= len(states)

    mean_dev = float(devs.mean())
    plugin_dev = marginal_deviance(om_mean, map_mean, phi2_mean, data, D)
    p_dic = mean_dev - plugin_dev
    dic = mean_dev + p_dic

    p1, p2, q1, q2 = states[0].dims
    d = states[0].d
    n = data.n
    n_obs = data.n_observed
    n_fixed = p1 * q1 + p2 * q2 + d * q1 * q2 + p1 * p2 + q1 * q2 + 1
    n_total = n_fixed + n * (p1 * p2 + q1 * q2)

    bic1 = plugin_dev + n_fixed * np.log(max(n, 1))
    bic2 = plugin_dev + n_fixed * np.log(max(n_obs, 1))
    return CriteriaReport(
        dic=float(dic), bic1=float(bic1), bic2=float(bic2),
        p_dic=float(p_dic), mean_deviance=mean_dev,
        plugin_deviance=float(plugin_dev),
        n_fixed=int(n_fixed), n_total=int(n_total), n_obs=int(n_obs),
    )
