"""Probability model for longitudinal functional data.

The observed surfaces y_i(s_j, t_k) are noisy evaluations of smooth random
surfaces expanded in a tensor product of two B-spline bases.  Each subject's
coefficient matrix Theta_i (p1 x p2) follows a sandwich factor decomposition

    Theta_i = Lambda @ eta_i @ Gamma.T + zeta_i,

with row loadings Lambda (p1 x q1), column loadings Gamma (p2 x q2), latent
scores eta_i (q1 x q2), and diagonal covariances for zeta and eta.  Loading
entries carry local gamma precisions (rho) and column-wise cumulative
precision ladders (tau = cumprod(delta)); delta components past the first are
constrained above one, so each ladder is strictly increasing and higher-index
columns shrink harder.  Regression of the latent scores on covariates uses a
normal-gamma scale mixture that gives the coefficients Cauchy tails.

All vectorizations are column-major: ``vec(L @ e @ G.T) = kron(G, L) @ vec(e)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import gammaincc, gammaln

from .truncated_gamma import sample_truncated_gamma

__all__ = [
    "SubjectRecord",
    "FunctionalDataset",
    "Hyperparameters",
    "ModelState",
    "init_state",
    "draw_prior_state",
    "omega",
    "fitted_surfaces",
    "log_likelihood",
    "log_prior",
]


@dataclass
class SubjectRecord:
    """Observations for one subject: response surface, mask, covariates."""

    y: np.ndarray
    mask: np.ndarray
    x: np.ndarray
    subject_id: str = ""

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        self.x = np.atleast_1d(np.asarray(self.x, dtype=float))
        if self.mask.shape != self.y.shape:
            raise ValueError(f"mask shape {self.mask.shape} != y shape {self.y.shape}")
        if not np.all(np.isfinite(self.x)):
            raise ValueError("covariates must be finite")
        if not np.all(np.isfinite(self.y[self.mask])):
            raise ValueError("observed response values must be finite")


@dataclass
class FunctionalDataset:
    """Per-subject surfaces on shared (s, t) grids, with optional missing cells."""

    subjects: list[SubjectRecord]
    s_grid: np.ndarray
    t_grid: np.ndarray
    d: int

    def __post_init__(self):
        self.s_grid = np.asarray(self.s_grid, dtype=float)
        self.t_grid = np.asarray(self.t_grid, dtype=float)
        if self.s_grid.size == 0 or self.t_grid.size == 0:
            raise ValueError("grids must be nonempty")
        if np.any(np.diff(self.s_grid) <= 0) or np.any(np.diff(self.t_grid) <= 0):
            raise ValueError("grids must be strictly increasing")
        shape = (self.s_grid.size, self.t_grid.size)
        for rec in self.subjects:
            if rec.y.shape != shape:
                raise ValueError(f"subject surface shape {rec.y.shape} != grid shape {shape}")
            if rec.x.shape != (self.d,):
                raise ValueError(f"covariate length {rec.x.size} != d={self.d}")

    @property
    def n(self) -> int:
        return len(self.subjects)

    @cached_property
    def Y(self) -> np.ndarray:
        """Stacked responses, shape (n, n_s, n_t); masked cells hold 0."""
        if not self.subjects:
            return np.zeros((0, self.s_grid.size, self.t_grid.size))
        return np.stack([np.where(r.mask, r.y, 0.0) for r in self.subjects])

    @cached_property
    def M(self) -> np.ndarray:
        """Stacked observation masks, shape (n, n_s, n_t)."""
        if not self.subjects:
            return np.zeros((0, self.s_grid.size, self.t_grid.size), dtype=bool)
        return np.stack([r.mask for r in self.subjects])

    @cached_property
    def X(self) -> np.ndarray:
        """Covariate matrix, shape (n, d)."""
        return np.array([r.x for r in self.subjects]).reshape(self.n, self.d)

    @cached_property
    def complete(self) -> bool:
        return bool(np.all(self.M)) if self.subjects else True

    @property
    def n_observed(self) -> int:
        return int(self.M.sum())


@dataclass(frozen=True)
class Hyperparameters:
    """Fixed prior constants and truncation ranks.

    Defaults follow the standard fit configuration: local shrinkage degrees
    nu=5 on both axes, ladder hyperprior shapes r1=1 and r2=2, and diffuse
    gamma priors on all precisions.  ``strong_separability`` freezes the score
    variances at one (identity score covariance) instead of sampling them.
    """

    q1: int = 6
    q2: int = 6
    nu1: float = 5.0
    nu2: float = 5.0
    r1: float = 1.0
    r2: float = 2.0
    a_sigma: float = 0.5
    b_sigma: float = 0.5
    a_h: float = 1.0
    b_h: float = 1.0
    a_phi: float = 1e-4
    b_phi: float = 1e-4
    strong_separability: bool = False

    def __post_init__(self):
        for name in ("q1", "q2"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("nu1", "nu2", "r1", "r2", "a_sigma", "b_sigma",
                     "a_h", "b_h", "a_phi", "b_phi"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")


@dataclass
class ModelState:
    """One complete configuration of latent variables and parameters."""

    Theta: np.ndarray       # (n, p1, p2) per-subject coefficient matrices
    Lambda: np.ndarray      # (p1, q1) row loadings
    Gamma: np.ndarray       # (p2, q2) column loadings
    eta: np.ndarray         # (n, q1, q2) latent scores
    Sigma_diag: np.ndarray  # (p1*p2,) residual variances of vec(zeta)
    H_diag: np.ndarray      # (q1*q2,) score variances
    phi2: float             # observation noise variance
    beta: np.ndarray        # (d, q1*q2) score regression coefficients
    omega: np.ndarray       # (d, q1*q2) per-coefficient prior variances
    rho1: np.ndarray        # (p1, q1) local precisions for Lambda
    rho2: np.ndarray        # (p2, q2) local precisions for Gamma
    delta1: np.ndarray      # (q1,) ladder increments, > 1 past the first
    delta2: np.ndarray      # (q2,)
    tau1: np.ndarray        # (q1,) cumprod(delta1)
    tau2: np.ndarray        # (q2,)
    a11: float
    a12: float
    a21: float
    a22: float

    @property
    def dims(self) -> tuple[int, int, int, int]:
        """(p1, p2, q1, q2)."""
        return (self.Lambda.shape[0], self.Gamma.shape[0],
                self.Lambda.shape[1], self.Gamma.shape[1])

    @property
    def n(self) -> int:
        return self.Theta.shape[0]

    @property
    def d(self) -> int:
        return self.beta.shape[0]

    def copy(self) -> "ModelState":
        """Deep copy; stored draws must not alias the live chain state."""
        return ModelState(**{
            k: (v.copy() if isinstance(v, np.ndarray) else v)
            for k, v in self.__dict__.items()
        })

    def validate(self, atol: float = 1e-10) -> None:
        """Raise ValueError on any invariant violation."""
        p1, p2, q1, q2 = self.dims
        if self.phi2 <= 0:
            raise ValueError("phi2 must be positive")
        for name in ("Sigma_diag", "H_diag", "rho1", "rho2", "omega"):
            if np.any(getattr(self, name) <= 0):
                raise ValueError(f"{name} must be strictly positive")
        if self.Sigma_diag.size != p1 * p2 or self.H_diag.size != q1 * q2:
            raise ValueError("diagonal variance sizes do not match factor dims")
        for delta, tau, label in ((self.delta1, self.tau1, "1"),
                                  (self.delta2, self.tau2, "2")):
            if delta[0] <= 0:
                raise ValueError(f"delta{label}[0] must be positive")
            if delta.size > 1 and np.any(delta[1:] <= 1.0):
                raise ValueError(f"delta{label} components past the first must exceed 1")
            if not np.allclose(tau, np.cumprod(delta), rtol=1e-12, atol=atol):
                raise ValueError(f"tau{label} is not the cumulative product of delta{label}")
            if tau.size > 1 and np.any(np.diff(tau) <= 0):
                raise ValueError(f"tau{label} must be strictly increasing")


def omega(state: ModelState) -> np.ndarray:
    """Marginal covariance of vec(Theta_i).

    Returns ``kron(Gamma, Lambda) @ diag(H) @ kron(Gamma, Lambda).T + diag(Sigma)``,
    symmetric PSD by construction and symmetrized against floating-point drift.
    """
    W = np.kron(state.Gamma, state.Lambda)
    om = (W * state.H_diag) @ W.T
    om[np.diag_indices_from(om)] += state.Sigma_diag
    return 0.5 * (om + om.T)


def fitted_surfaces(state: ModelState, B1: np.ndarray, B2: np.ndarray) -> np.ndarray:
    """Noise-free surfaces B1 @ Theta_i @ B2.T for every subject, (n, n_s, n_t)."""
    return np.matmul(np.matmul(B1[None], state.Theta), B2.T)


def log_likelihood(state: ModelState, data: FunctionalDataset,
                   B1: np.ndarray, B2: np.ndarray) -> float:
    """Gaussian log likelihood over observed cells given the latent surfaces.

    Masked cells contribute zero.  Raises ValueError when phi2 <= 0.
    """
    if state.phi2 <= 0:
        raise ValueError("phi2 must be positive")
    if data.n == 0:
        return 0.0
    resid = data.Y - fitted_surfaces(state, B1, B2)
    sq = float(np.sum(resid[data.M] ** 2))
    n_obs = data.n_observed
    return -0.5 * n_obs * np.log(2.0 * np.pi * state.phi2) - 0.5 * sq / state.phi2


def _gamma_logpdf(x, shape, rate):
    return shape * np.log(rate) + (shape - 1.0) * np.log(x) - rate * x - gammaln(shape)


def _normal_logpdf(x, mean, var):
    return -0.5 * (np.log(2.0 * np.pi * var) + (x - mean) ** 2 / var)


def vec_cols(mats: np.ndarray) -> np.ndarray:
    """Column-major vectorization of a stack of matrices: (n, a, b) -> (n, a*b)."""
    n, a, b = mats.shape
    return mats.transpose(0, 2, 1).reshape(n, a * b)


def unvec(v: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Inverse of column-major vectorization for a single vector."""
    return np.asarray(v).reshape(cols, rows).T


def log_prior(state: ModelState, hyper: Hyperparameters, X: np.ndarray | None = None) -> float:
    """Joint log prior density of every parameter block.

    Truncated gamma terms include their normalizing constants (upper tail
    mass), so density ratios over the ladder hyperparameters are exact.
    States violating the ladder truncation or positivity return ``-inf``
    instead of raising.  Variance-type parameters are evaluated in the
    precision parameterization, matching the model construction.

    ``X`` supplies the (n, d) covariates entering the latent score means;
    it is required only when the state carries subjects and d > 0.
    """
    d1, d2 = state.delta1, state.delta2
    if d1[0] <= 0 or d2[0] <= 0:
        return -np.inf
    if (d1.size > 1 and np.any(d1[1:] <= 1.0)) or (d2.size > 1 and np.any(d2[1:] <= 1.0)):
        return -np.inf
    if (np.any(state.Sigma_diag <= 0) or np.any(state.H_diag <= 0)
            or state.phi2 <= 0 or np.any(state.omega <= 0)
            or np.any(state.rho1 <= 0) or np.any(state.rho2 <= 0)):
        return -np.inf

    hp = hyper
    total = 0.0

    # loadings given local precisions and ladders
    prec1 = state.rho1 * state.tau1[None, :]
    prec2 = state.rho2 * state.tau2[None, :]
    total += np.sum(_normal_logpdf(state.Lambda, 0.0, 1.0 / prec1))
    total += np.sum(_normal_logpdf(state.Gamma, 0.0, 1.0 / prec2))
    total += np.sum(_gamma_logpdf(state.rho1, hp.nu1 / 2.0, hp.nu1 / 2.0))
    total += np.sum(_gamma_logpdf(state.rho2, hp.nu2 / 2.0, hp.nu2 / 2.0))

    # ladder increments; components past the first are lower-truncated at 1
    total += _gamma_logpdf(d1[0], state.a11, 1.0)
    if d1.size > 1:
        total += np.sum(_gamma_logpdf(d1[1:], state.a12, 1.0))
        total -= (d1.size - 1) * np.log(gammaincc(state.a12, 1.0))
    total += _gamma_logpdf(d2[0], state.a21, 1.0)
    if d2.size > 1:
        total += np.sum(_gamma_logpdf(d2[1:], state.a22, 1.0))
        total -= (d2.size - 1) * np.log(gammaincc(state.a22, 1.0))

    # ladder hyperparameters
    total += _gamma_logpdf(state.a11, hp.r1, 1.0) + _gamma_logpdf(state.a21, hp.r1, 1.0)
    total += _gamma_logpdf(state.a12, hp.r2, 1.0) + _gamma_logpdf(state.a22, hp.r2, 1.0)

    # precisions of the residual and score scales
    total += np.sum(_gamma_logpdf(1.0 / state.Sigma_diag, hp.a_sigma, hp.b_sigma))
    total += np.sum(_gamma_logpdf(1.0 / state.H_diag, hp.a_h, hp.b_h))
    total += _gamma_logpdf(1.0 / state.phi2, hp.a_phi, hp.b_phi)

    # regression block: normal-gamma mixture
    if state.beta.size:
        total += np.sum(_gamma_logpdf(1.0 / state.omega, 0.5, 0.5))
        total += np.sum(_normal_logpdf(state.beta, 0.0, state.omega))

    # subject-level latents
    n = state.n
    if n:
        if state.d > 0:
            if X is None:
                raise ValueError("covariates X required for the latent score prior")
            score_means = np.asarray(X) @ state.beta
        else:
            score_means = np.zeros((n, state.H_diag.size))
        scores = vec_cols(state.eta)
        total += np.sum(_normal_logpdf(scores, score_means, state.H_diag[None, :]))

        resid = state.Theta - np.einsum(
            "mj,ijk,lk->iml", state.Lambda, state.eta, state.Gamma, optimize=True)
        zeta = vec_cols(resid)
        total += np.sum(_normal_logpdf(zeta, 0.0, state.Sigma_diag[None, :]))

    return float(total)


def draw_prior_state(hyper: Hyperparameters, basis_dims: tuple[int, int],
                     X: np.ndarray, rng: np.random.Generator) -> ModelState:
    """Draw every parameter, including the Theta block, from the prior.

    ``X`` is the (n, d) covariate matrix; n = 0 yields a parameters-only
    state.  The draw order is fixed, so a given generator state maps to
    exactly one prior state.
    """
    p1, p2 = basis_dims
    q1, q2 = hyper.q1, hyper.q2
    if q1 > p1 or q2 > p2:
        raise ValueError(f"ranks ({q1}, {q2}) exceed basis dims ({p1}, {p2})")
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a 2-d array (n, d)")
    n, d = X.shape
    Q = q1 * q2

    a11 = rng.gamma(hyper.r1, 1.0)
    a12 = rng.gamma(hyper.r2, 1.0)
    a21 = rng.gamma(hyper.r1, 1.0)
    a22 = rng.gamma(hyper.r2, 1.0)

    # the first (untruncated) increment underflows to exact zero for tiny
    # hyperprior shape draws; clamp to keep the ladder strictly positive
    delta1 = np.empty(q1)
    delta1[0] = max(rng.gamma(a11, 1.0), 1e-100)
    for k in range(1, q1):
        delta1[k] = sample_truncated_gamma(a12, 1.0, 1.0, rng)
    delta2 = np.empty(q2)
    delta2[0] = max(rng.gamma(a21, 1.0), 1e-100)
    for k in range(1, q2):
        delta2[k] = sample_truncated_gamma(a22, 1.0, 1.0, rng)
    tau1 = np.cumprod(delta1)
    tau2 = np.cumprod(delta2)

    rho1 = rng.gamma(hyper.nu1 / 2.0, 2.0 / hyper.nu1, size=(p1, q1))
    rho2 = rng.gamma(hyper.nu2 / 2.0, 2.0 / hyper.nu2, size=(p2, q2))
    Lambda = rng.normal(size=(p1, q1)) / np.sqrt(rho1 * tau1[None, :])
    Gamma = rng.normal(size=(p2, q2)) / np.sqrt(rho2 * tau2[None, :])

    # precision draws are clamped into [1e-100, 1e100]: gamma draws with very
    # small shapes (diffuse hyperpriors) underflow to exact zero
    def inv_gamma_draw(shape, rate, size=None):
        return 1.0 / np.clip(rng.gamma(shape, 1.0 / rate, size=size), 1e-100, 1e100)

    Sigma_diag = inv_gamma_draw(hyper.a_sigma, hyper.b_sigma, size=p1 * p2)
    if hyper.strong_separability:
        H_diag = np.ones(Q)
    else:
        H_diag = inv_gamma_draw(hyper.a_h, hyper.b_h, size=Q)
    phi2 = float(inv_gamma_draw(hyper.a_phi, hyper.b_phi))

    omega_var = inv_gamma_draw(0.5, 0.5, size=(d, Q))
    beta = rng.normal(size=(d, Q)) * np.sqrt(omega_var)

    score_means = X @ beta if d else np.zeros((n, Q))
    scores = score_means + rng.normal(size=(n, Q)) * np.sqrt(H_diag[None, :])
    eta = scores.reshape(n, q2, q1).transpose(0, 2, 1)

    low_rank = np.einsum("mj,ijk,lk->iml", Lambda, eta, Gamma, optimize=True)
    zeta = rng.normal(size=(n, p1 * p2)) * np.sqrt(Sigma_diag[None, :])
    Theta = low_rank + zeta.reshape(n, p2, p1).transpose(0, 2, 1)

    return ModelState(
        Theta=Theta, Lambda=Lambda, Gamma=Gamma, eta=eta,
        Sigma_diag=Sigma_diag, H_diag=H_diag, phi2=phi2,
        beta=beta, omega=omega_var, rho1=rho1, rho2=rho2,
        delta1=delta1, delta2=delta2, tau1=tau1, tau2=tau2,
        a11=a11, a12=a12, a21=a21, a22=a22,
    )


def init_state(hyper: Hyperparameters, data: FunctionalDataset,
               B1: np.ndarray, B2: np.ndarray,
               rng: np.random.Generator) -> ModelState:
    """Initial chain state anchored to the data.

    Shrinkage blocks (rho, delta/tau, ladder shapes) are drawn from their
    priors; with no subjects the remaining fields are prior draws too.  With
    data, the coefficient matrices are ridge-projected least squares fits of
    each subject's observed cells onto the tensor design (penalty 1e-6 scaled
    by the mean diagonal of the Gram matrix), the loadings come from singular
    vectors of the stacked coefficient unfoldings, scores and residual scales
    from the implied least-squares decomposition, and the noise variance from
    the ridge-fit residuals.  Raw prior draws under the heavy-tailed scale
    defaults start chains in a degenerate basin the sampler escapes only
    slowly, so every data-scale field is initialized from the data instead.
    """
    from .splines import tensor_design

    p1, p2 = B1.shape[1], B2.shape[1]
    q1, q2 = hyper.q1, hyper.q2
    state = draw_prior_state(hyper, (p1, p2), data.X, rng)
    if not data.n:
        return state

    D = tensor_design(B1, B2)
    P = p1 * p2
    gram_full = D.T @ D
    complete_chol = None
    ssr = 0.0
    for i in range(data.n):
        m = data.M[i].ravel()
        y = data.Y[i].ravel()
        if m.all():
            if complete_chol is None:
                G = gram_full.copy()
                G[np.diag_indices_from(G)] += 1e-6 * np.trace(gram_full) / P
                complete_chol = np.linalg.cholesky(G)
            coef = _chol_solve(complete_chol, D.T @ y)
            ssr += float(np.sum((y - D @ coef) ** 2))
        else:
            Dm = D[m]
            G = Dm.T @ Dm
            G[np.diag_indices_from(G)] += 1e-6 * max(np.trace(G), 1.0) / P
            coef = np.linalg.solve(G, Dm.T @ y[m])
            ssr += float(np.sum((y[m] - Dm @ coef) ** 2))
        state.Theta[i] = coef.reshape(p2, p1).T
    n_obs = data.n_observed
    if n_obs:
        state.phi2 = max(ssr / n_obs, 1e-12)

    row_unfold = state.Theta.transpose(1, 0, 2).reshape(p1, -1)
    col_unfold = state.Theta.transpose(2, 0, 1).reshape(p2, -1)
    state.Lambda = np.linalg.svd(row_unfold, full_matrices=True)[0][:, :q1]
    state.Gamma = np.linalg.svd(col_unfold, full_matrices=True)[0][:, :q2]
    state.eta = np.einsum("mj,iml,lk->ijk", state.Lambda, state.Theta,
                          state.Gamma, optimize=True)

    resid = state.Theta - np.einsum(
        "mj,ijk,lk->iml", state.Lambda, state.eta, state.Gamma, optimize=True)
    zeta = vec_cols(resid)
    scale = max(float(np.mean(state.Theta**2)), 1e-8)
    state.Sigma_diag = np.mean(zeta**2, axis=0) + 1e-4 * scale
    if not hyper.strong_separability:
        scores = vec_cols(state.eta)
        state.H_diag = np.var(scores, axis=0) + 1e-4 * scale
    state.beta = np.zeros_like(state.beta)
    state.omega = np.ones_like(state.omega)
    return state


def _chol_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    from scipy.linalg import cho_solve
    return cho_solve((L, True), b)
