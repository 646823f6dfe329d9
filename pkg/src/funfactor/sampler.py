"""Blocked Gibbs sampler with Metropolis-Hastings ladder-hyperparameter steps.

Each sweep updates, in order: subject-level latents (coefficient matrices and
scores), loadings with their shrinkage precisions and ladders, variance-type
scales and the score regression, and finally the four ladder shape
hyperparameters by random-walk MH on the log scale.  The MH step size adapts
toward a 0.44 acceptance rate during burn-in only, so the post-burn-in kernel
is a fixed, valid Markov transition.

Conditional moments are assembled by dedicated ``*_system`` / ``*_conditional``
helpers; the update functions draw from exactly those systems, which lets the
test suite verify every full conditional against closed-form scalar posteriors
without mocking.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.special import gammaincc, gammaln

from .model import (
    FunctionalDataset,
    Hyperparameters,
    ModelState,
    init_state,
    log_likelihood,
    vec_cols,
)
from .splines import BasisConfig, build_basis, tensor_design
from .truncated_gamma import sample_truncated_gamma

__all__ = [
    "ChainConfig",
    "ChainFailure",
    "ChainError",
    "PosteriorDraws",
    "sample_truncated_gamma",
    "update_latent",
    "update_loadings",
    "update_scales",
    "mh_update_a",
    "gibbs_sweep",
    "run_chain",
]

_MH_PARAMS = ("a11", "a12", "a21", "a22")


class ChainError(RuntimeError):
    """Unrecoverable numerical failure inside one chain."""


@dataclass(frozen=True)
class ChainConfig:
    """MCMC run configuration."""

    n_iterations: int = 2000
    burn_in: int = 500
    thin: int = 1
    n_chains: int = 1
    seed: int = 0
    mh_step_sd: float = 0.3

    def __post_init__(self):
        if self.n_iterations <= 0 or self.thin <= 0 or self.n_chains <= 0:
            raise ValueError("n_iterations, thin and n_chains must be positive")
        if not 0 <= self.burn_in < self.n_iterations:
            raise ValueError("burn_in must satisfy 0 <= burn_in < n_iterations")
        if (self.n_iterations - self.burn_in) // self.thin < 1:
            raise ValueError("config yields no stored draws")
        if self.mh_step_sd <= 0:
            raise ValueError("mh_step_sd must be positive")


@dataclass
class ChainFailure:
    """Diagnostic record for an aborted chain."""

    chain_id: int
    iteration: int
    message: str


@dataclass
class PosteriorDraws:
    """Thinned post-burn-in states with cached log likelihoods."""

    states: list[ModelState]
    log_likelihoods: np.ndarray
    chain_ids: np.ndarray
    acceptance_rates: dict[str, float]
    diagnostics: dict = field(default_factory=dict)
    failures: list[ChainFailure] = field(default_factory=list)

    def __post_init__(self):
        self._omega_cache: dict[int, np.ndarray] = {}

    def __len__(self) -> int:
        return len(self.states)

    def omega(self, i: int) -> np.ndarray:
        """Marginal coefficient covariance of draw ``i`` (computed lazily)."""
        if i not in self._omega_cache:
            from .model import omega as _omega
            self._omega_cache[i] = _omega(self.states[i])
        return self._omega_cache[i]


# ---------------------------------------------------------------------------
# numerical helpers


def _chol(prec: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor with a single jittered retry on failure."""
    try:
        return np.linalg.cholesky(prec)
    except np.linalg.LinAlgError:
        jittered = prec.copy()
        jittered[np.diag_indices_from(jittered)] *= 1.0 + 1e-10
        jittered[np.diag_indices_from(jittered)] += 1e-10 * np.abs(np.diag(prec)).max()
        try:
            return np.linalg.cholesky(jittered)
        except np.linalg.LinAlgError as exc:
            raise ChainError(f"conditional precision not positive definite: {exc}") from exc


def _draw_gaussian_system(chol_prec: np.ndarray, rhs: np.ndarray,
                          rng: np.random.Generator) -> np.ndarray:
    """Draw from N(Prec^-1 rhs, Prec^-1) given chol(Prec); rhs may be a matrix."""
    mean = cho_solve((chol_prec, True), rhs, check_finite=False)
    z = rng.standard_normal(rhs.shape)
    return mean + solve_triangular(chol_prec, z, trans="T", lower=True, check_finite=False)


# ---------------------------------------------------------------------------
# subject-level latent block


def _theta_system(state: ModelState, data: FunctionalDataset,
                  B1: np.ndarray, B2: np.ndarray):
    """Precision and right-hand sides of the coefficient full conditional.

    Returns ``(shared_prec, per_subject_precs, rhs)`` where ``rhs`` has one
    column per subject.  ``shared_prec`` is set when all subjects share the
    complete-grid design, in which case a single factorization serves every
    subject; otherwise ``per_subject_precs`` lists one precision each.
    """
    p1, p2, q1, q2 = state.dims
    P = p1 * p2
    n = data.n
    sigma_inv = 1.0 / state.Sigma_diag
    phi_inv = 1.0 / state.phi2

    W = np.kron(state.Gamma, state.Lambda)
    scores = vec_cols(state.eta)                      # (n, Q)
    rhs = (W @ scores.T) * sigma_inv[:, None]         # prior part, (P, n)
    proj = np.matmul(np.matmul(B1.T[None], data.Y), B2)   # (n, p1, p2)
    rhs += phi_inv * proj.transpose(0, 2, 1).reshape(n, P).T

    base = np.kron(B2.T @ B2, B1.T @ B1)
    if data.complete:
        prec = phi_inv * base
        prec[np.diag_indices_from(prec)] += sigma_inv
        return prec, None, rhs

    D = tensor_design(B1, B2)
    precs = []
    for i in range(n):
        m = data.M[i].ravel()
        if m.all():
            Ai = base
        else:
            Dm = D[m]
            Ai = Dm.T @ Dm
        prec = phi_inv * Ai
        prec[np.diag_indices_from(prec)] += sigma_inv
        precs.append(prec)
    return None, precs, rhs


def _eta_system(state: ModelState, X: np.ndarray):
    """Precision (shared) and per-subject right-hand sides for the scores."""
    W = np.kron(state.Gamma, state.Lambda)
    sigma_inv = 1.0 / state.Sigma_diag
    h_inv = 1.0 / state.H_diag
    Wsi = W * sigma_inv[:, None]
    prec = W.T @ Wsi
    prec[np.diag_indices_from(prec)] += h_inv
    theta_vec = vec_cols(state.Theta)                 # (n, P)
    rhs = Wsi.T @ theta_vec.T                         # (Q, n)
    if state.d > 0:
        prior_means = X @ state.beta                  # (n, Q)
        rhs += h_inv[:, None] * prior_means.T
    return prec, rhs


def theta_conditional_moments(state, data, B1, B2, i):
    """(mean, cov) of vec(Theta_i) given everything else; test/oracle surface."""
    shared, precs, rhs = _theta_system(state, data, B1, B2)
    prec = shared if shared is not None else precs[i]
    cov = np.linalg.inv(prec)
    return cov @ rhs[:, i], cov


def eta_conditional_moments(state, data, i):
    """(mean, cov) of vec(eta_i) given everything else."""
    prec, rhs = _eta_system(state, data.X)
    cov = np.linalg.inv(prec)
    return cov @ rhs[:, i], cov


def update_latent(state: ModelState, data: FunctionalDataset,
                  B1: np.ndarray, B2: np.ndarray,
                  rng: np.random.Generator) -> ModelState:
    """Gibbs update of every Theta_i then every eta_i; other fields unchanged."""
    p1, p2, q1, q2 = state.dims
    n = data.n
    if n == 0:
        return state

    shared, precs, rhs = _theta_system(state, data, B1, B2)
    if shared is not None:
        L = _chol(shared)
        draws = _draw_gaussian_system(L, rhs, rng)
    else:
        draws = np.empty_like(rhs)
        for i in range(n):
            L = _chol(precs[i])
            draws[:, i] = _draw_gaussian_system(L, rhs[:, i], rng)
    new_theta = draws.T.reshape(n, p2, p1).transpose(0, 2, 1).copy()
    state = replace(state, Theta=new_theta)

    prec, rhs_eta = _eta_system(state, data.X)
    L = _chol(prec)
    score_draws = _draw_gaussian_system(L, rhs_eta, rng)
    new_eta = score_draws.T.reshape(n, q2, q1).transpose(0, 2, 1).copy()
    return replace(state, eta=new_eta)


# ---------------------------------------------------------------------------
# loadings block


def _lambda_row_system(state: ModelState, sigma_mat: np.ndarray,
                       C: np.ndarray, G: np.ndarray, m: int):
    """Precision and rhs for row m of Lambda.

    ``C[i] = eta_i @ Gamma.T`` (n, q1, p2) and ``G[l] = sum_i C[i,:,l] outer``
    are shared across rows; only the residual weights depend on m.
    """
    w = 1.0 / sigma_mat[m]                            # (p2,)
    prec = np.einsum("l,ljk->jk", w, G)
    prec[np.diag_indices_from(prec)] += state.rho1[m] * state.tau1
    rhs = np.einsum("il,l,ijl->j", state.Theta[:, m, :], w, C, optimize=True)
    return prec, rhs


def _gamma_row_system(state: ModelState, sigma_mat: np.ndarray,
                      A: np.ndarray, G: np.ndarray, l: int):
    """Precision and rhs for row l of Gamma; ``A[i] = Lambda @ eta_i``."""
    w = 1.0 / sigma_mat[:, l]                         # (p1,)
    prec = np.einsum("m,mjk->jk", w, G)
    prec[np.diag_indices_from(prec)] += state.rho2[l] * state.tau2
    rhs = np.einsum("im,m,imj->j", state.Theta[:, :, l], w, A, optimize=True)
    return prec, rhs


def lambda_row_moments(state: ModelState, m: int):
    """(mean, cov) of Lambda row m given everything else."""
    p1, p2, _, _ = state.dims
    sigma_mat = state.Sigma_diag.reshape(p2, p1).T
    C = np.einsum("ijk,lk->ijl", state.eta, state.Gamma, optimize=True)
    G = np.einsum("ijl,ikl->ljk", C, C, optimize=True)
    prec, rhs = _lambda_row_system(state, sigma_mat, C, G, m)
    cov = np.linalg.inv(prec)
    return cov @ rhs, cov


def gamma_row_moments(state: ModelState, l: int):
    """(mean, cov) of Gamma row l given everything else."""
    p1, p2, _, _ = state.dims
    sigma_mat = state.Sigma_diag.reshape(p2, p1).T
    A = np.einsum("mj,ijk->imk", state.Lambda, state.eta, optimize=True)
    G = np.einsum("imk,imj->mkj", A, A, optimize=True)
    prec, rhs = _gamma_row_system(state, sigma_mat, A, G, l)
    cov = np.linalg.inv(prec)
    return cov @ rhs, cov


def delta_conditional(state: ModelState, axis: int, h: int):
    """(shape, rate, lower) of ladder increment h on the given axis (1 or 2).

    The ladder likelihood couples increment h to every column k >= h through
    tau_k; the conditional is gamma with the truncation of the prior.
    """
    if axis == 1:
        load, rho, delta = state.Lambda, state.rho1, state.delta1
        a_first, a_rest = state.a11, state.a12
    else:
        load, rho, delta = state.Gamma, state.rho2, state.delta2
        a_first, a_rest = state.a21, state.a22
    p, q = load.shape
    tau = np.cumprod(delta)
    col_ss = np.sum(rho * load**2, axis=0)            # (q,) sum_m rho_mk lam_mk^2
    tail = tau[h:] / delta[h]
    shape = (a_first if h == 0 else a_rest) + 0.5 * p * (q - h)
    rate = 1.0 + 0.5 * np.sum(tail * col_ss[h:])
    lower = -np.inf if h == 0 else 1.0
    return shape, rate, lower


def _batched_row_draws(precs: np.ndarray, rhs: np.ndarray,
                       rng: np.random.Generator) -> np.ndarray:
    """Draw one Gaussian per stacked (rows, k, k) precision system."""
    try:
        chols = np.linalg.cholesky(precs)
    except np.linalg.LinAlgError:
        jittered = precs.copy()
        idx = np.arange(precs.shape[-1])
        jittered[:, idx, idx] *= 1.0 + 1e-10
        jittered[:, idx, idx] += 1e-10 * np.abs(precs[:, idx, idx]).max()
        try:
            chols = np.linalg.cholesky(jittered)
        except np.linalg.LinAlgError as exc:
            raise ChainError(f"row conditional precision not PD: {exc}") from exc
    means = np.linalg.solve(precs, rhs[:, :, None])[:, :, 0]
    z = rng.standard_normal(rhs.shape)
    upper = chols.transpose(0, 2, 1)
    return means + np.linalg.solve(upper, z[:, :, None])[:, :, 0]


def update_loadings(state: ModelState, hyper: Hyperparameters,
                    rng: np.random.Generator,
                    diagnostics: dict | None = None) -> ModelState:
    """Gibbs update of Lambda and Gamma rows, then rho, then the ladders.

    Rows are conditionally independent given the rest, so the row systems
    are assembled and factorized as one batch per loading matrix.  Ladder
    increments are drawn sequentially with tau recomputed as a cumulative
    product after each draw, so the strict ordering holds for every
    intermediate configuration.
    """
    p1, p2, q1, q2 = state.dims
    sigma_mat = state.Sigma_diag.reshape(p2, p1).T
    w1 = 1.0 / sigma_mat                               # (p1, p2)

    C = np.matmul(state.eta, state.Gamma.T)            # (n, q1, p2)
    Ct = C.transpose(2, 0, 1)                          # (p2, n, q1)
    G1 = np.matmul(Ct.transpose(0, 2, 1), Ct)          # (p2, q1, q1)
    precs = np.einsum("ml,ljk->mjk", w1, G1)
    idx = np.arange(q1)
    precs[:, idx, idx] += state.rho1 * state.tau1[None, :]
    rhs = np.einsum("iml,ml,ijl->mj", state.Theta, w1, C, optimize=True)
    state = replace(state, Lambda=_batched_row_draws(precs, rhs, rng))

    A = np.matmul(state.Lambda[None], state.eta)       # (n, p1, q2)
    At = A.transpose(1, 0, 2)                          # (p1, n, q2)
    G2 = np.matmul(At.transpose(0, 2, 1), At)          # (p1, q2, q2)
    precs = np.einsum("ml,mkj->lkj", w1, G2)
    idx = np.arange(q2)
    precs[:, idx, idx] += state.rho2 * state.tau2[None, :]
    rhs = np.einsum("iml,ml,imj->lj", state.Theta, w1, A, optimize=True)
    state = replace(state, Gamma=_batched_row_draws(precs, rhs, rng))

    new_rho1 = rng.gamma(
        hyper.nu1 / 2.0 + 0.5,
        1.0 / (hyper.nu1 / 2.0 + 0.5 * state.tau1[None, :] * state.Lambda**2),
    )
    state = replace(state, rho1=new_rho1)
    new_rho2 = rng.gamma(
        hyper.nu2 / 2.0 + 0.5,
        1.0 / (hyper.nu2 / 2.0 + 0.5 * state.tau2[None, :] * state.Gamma**2),
    )
    state = replace(state, rho2=new_rho2)

    delta1 = state.delta1.copy()
    for h in range(delta1.size):
        shape, rate, lower = delta_conditional(
            replace(state, delta1=delta1, tau1=np.cumprod(delta1)), 1, h)
        delta1[h] = sample_truncated_gamma(shape, rate, lower, rng, diagnostics)
    delta2 = state.delta2.copy()
    for h in range(delta2.size):
        shape, rate, lower = delta_conditional(
            replace(state, delta2=delta2, tau2=np.cumprod(delta2)), 2, h)
        delta2[h] = sample_truncated_gamma(shape, rate, lower, rng, diagnostics)

    return replace(state, delta1=delta1, delta2=delta2,
                   tau1=np.cumprod(delta1), tau2=np.cumprod(delta2))


# ---------------------------------------------------------------------------
# scale and regression block


def sigma_conditional(state: ModelState, hyper: Hyperparameters):
    """(shape, rate) arrays for the residual precisions 1/sigma_j."""
    resid = state.Theta - np.einsum(
        "mj,ijk,lk->iml", state.Lambda, state.eta, state.Gamma, optimize=True)
    zeta = vec_cols(resid)
    shape = hyper.a_sigma + 0.5 * state.n
    rate = hyper.b_sigma + 0.5 * np.sum(zeta**2, axis=0)
    return shape, rate


def h_conditional(state: ModelState, X: np.ndarray, hyper: Hyperparameters):
    """(shape, rate) arrays for the score precisions 1/h_j."""
    scores = vec_cols(state.eta)
    means = X @ state.beta if state.d > 0 else 0.0
    dev = scores - means
    shape = hyper.a_h + 0.5 * state.n
    rate = hyper.b_h + 0.5 * np.sum(dev**2, axis=0)
    return shape, rate


def phi_conditional(state: ModelState, data: FunctionalDataset,
                    B1: np.ndarray, B2: np.ndarray, hyper: Hyperparameters):
    """(shape, rate) for the observation precision 1/phi^2."""
    from .model import fitted_surfaces
    if data.n:
        resid = data.Y - fitted_surfaces(state, B1, B2)
        ssr = float(np.sum(resid[data.M] ** 2))
    else:
        ssr = 0.0
    shape = hyper.a_phi + 0.5 * data.n_observed
    rate = hyper.b_phi + 0.5 * ssr
    return shape, rate


def beta_column_system(state: ModelState, X: np.ndarray, l: int):
    """Precision and rhs for column l of the score regression coefficients."""
    scores = vec_cols(state.eta)
    prec = X.T @ X / state.H_diag[l]
    prec = prec + np.diag(1.0 / state.omega[:, l])
    rhs = X.T @ scores[:, l] / state.H_diag[l]
    return prec, rhs


def beta_column_moments(state: ModelState, X: np.ndarray, l: int):
    """(mean, cov) of beta column l given everything else."""
    prec, rhs = beta_column_system(state, X, l)
    cov = np.linalg.inv(prec)
    return cov @ rhs, cov


def update_scales(state: ModelState, data: FunctionalDataset,
                  B1: np.ndarray, B2: np.ndarray, hyper: Hyperparameters,
                  rng: np.random.Generator) -> ModelState:
    """Conjugate updates of Sigma, H, phi^2, omega and beta."""
    shape, rate = sigma_conditional(state, hyper)
    state = replace(state, Sigma_diag=1.0 / rng.gamma(shape, 1.0 / rate))

    if not hyper.strong_separability:
        shape, rate = h_conditional(state, data.X, hyper)
        state = replace(state, H_diag=1.0 / rng.gamma(shape, 1.0 / rate))

    shape, rate = phi_conditional(state, data, B1, B2, hyper)
    state = replace(state, phi2=1.0 / rng.gamma(shape, 1.0 / rate))

    if state.d > 0:
        new_omega = 1.0 / rng.gamma(1.0, 2.0 / (1.0 + state.beta**2))
        state = replace(state, omega=new_omega)
        new_beta = np.empty_like(state.beta)
        for l in range(state.beta.shape[1]):
            prec, rhs = beta_column_system(state, data.X, l)
            L = _chol(prec)
            new_beta[:, l] = _draw_gaussian_system(L, rhs, rng)
        state = replace(state, beta=new_beta)
    return state


# ---------------------------------------------------------------------------
# ladder hyperparameter MH block


def _a_log_target(a: float, prior_shape: float, log_deltas_sum: float,
                  n_deltas: int, truncated: bool) -> float:
    """Unnormalized log conditional of one ladder shape hyperparameter."""
    if a <= 0:
        return -np.inf
    val = (prior_shape - 1.0) * np.log(a) - a
    val += (a - 1.0) * log_deltas_sum - n_deltas * gammaln(a)
    if truncated and n_deltas:
        val -= n_deltas * np.log(gammaincc(a, 1.0))
    return val


def mh_update_a(state: ModelState, hyper: Hyperparameters, mh_step_sd,
                rng: np.random.Generator) -> tuple[ModelState, dict[str, bool]]:
    """Log-scale random-walk MH on the four ladder shape hyperparameters."""
    steps = _as_step_dict(mh_step_sd)
    specs = {
        "a11": (hyper.r1, np.log(state.delta1[:1]), False),
        "a12": (hyper.r2, np.log(state.delta1[1:]), True),
        "a21": (hyper.r1, np.log(state.delta2[:1]), False),
        "a22": (hyper.r2, np.log(state.delta2[1:]), True),
    }
    accepted = {}
    new_vals = {}
    for name, (prior_shape, log_deltas, truncated) in specs.items():
        cur = getattr(state, name)
        step = steps[name]
        prop = cur * np.exp(step * rng.standard_normal())
        ls = float(np.sum(log_deltas))
        nd = log_deltas.size
        log_ratio = (_a_log_target(prop, prior_shape, ls, nd, truncated)
                     - _a_log_target(cur, prior_shape, ls, nd, truncated)
                     + np.log(prop) - np.log(cur))
        ok = np.log(rng.uniform()) < log_ratio
        accepted[name] = bool(ok)
        new_vals[name] = prop if ok else cur
    return replace(state, **new_vals), accepted


def _as_step_dict(mh_step_sd) -> dict[str, float]:
    if isinstance(mh_step_sd, dict):
        return {k: float(mh_step_sd[k]) for k in _MH_PARAMS}
    return {k: float(mh_step_sd) for k in _MH_PARAMS}


# ---------------------------------------------------------------------------
# full sweep and chain driver


def gibbs_sweep(state: ModelState, data: FunctionalDataset,
                B1: np.ndarray, B2: np.ndarray, hyper: Hyperparameters,
                mh_step_sd, rng: np.random.Generator,
                diagnostics: dict | None = None):
    """One complete Gibbs sweep; returns (state, mh_accepted)."""
    state = update_latent(state, data, B1, B2, rng)
    state = update_loadings(state, hyper, rng, diagnostics)
    state = update_scales(state, data, B1, B2, hyper, rng)
    state, accepted = mh_update_a(state, hyper, mh_step_sd, rng)
    return state, accepted


def run_chain(data: FunctionalDataset, hyper: Hyperparameters,
              basis_s: BasisConfig, basis_t: BasisConfig,
              config: ChainConfig, validate_draws: bool = True) -> PosteriorDraws:
    """Run ``config.n_chains`` independent chains and pool thinned draws.

    Chains own disjoint counter-based random streams spawned from the seed,
    so output is a pure function of (data, hyper, bases, config).  A chain
    that fails numerically is recorded in ``failures`` and the remaining
    chains still run.
    """
    B1 = build_basis(basis_s, data.s_grid)
    B2 = build_basis(basis_t, data.t_grid)

    states: list[ModelState] = []
    logliks: list[float] = []
    chain_ids: list[int] = []
    failures: list[ChainFailure] = []
    diagnostics: dict = {"loglik_trace": {}, "mh_step_sd": {}, "trunc_gamma_fallbacks": 0}
    accept_counts = {k: 0 for k in _MH_PARAMS}
    accept_total = 0

    children = np.random.SeedSequence(config.seed).spawn(config.n_chains)
    for cid in range(config.n_chains):
        rng = np.random.Generator(np.random.Philox(children[cid]))
        steps = _as_step_dict(config.mh_step_sd)
        batch_acc = {k: 0 for k in _MH_PARAMS}
        trace = np.full(config.n_iterations, np.nan)
        stored_before = len(states)
        it = -1
        try:
            state = init_state(hyper, data, B1, B2, rng)
            for it in range(config.n_iterations):
                state, accepted = gibbs_sweep(
                    state, data, B1, B2, hyper, steps, rng, diagnostics)
                in_burn = it < config.burn_in
                for k, ok in accepted.items():
                    batch_acc[k] += ok
                    if not in_burn:
                        accept_counts[k] += ok
                if not in_burn:
                    accept_total += 1
                # diminishing adaptation toward 0.44 acceptance, burn-in only
                if in_burn and (it + 1) % 50 == 0:
                    gain = min(0.05, 1.0 / np.sqrt((it + 1) / 50.0))
                    for k in _MH_PARAMS:
                        rate = batch_acc[k] / 50.0
                        steps[k] *= np.exp(gain if rate > 0.44 else -gain)
                        batch_acc[k] = 0
                ll = log_likelihood(state, data, B1, B2)
                trace[it] = ll
                if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
                    draw = state.copy()
                    if validate_draws:
                        draw.validate()
                    states.append(draw)
                    logliks.append(ll)
                    chain_ids.append(cid)
        except ChainError as exc:
            del states[stored_before:]
            del logliks[stored_before:]
            del chain_ids[stored_before:]
            failures.append(ChainFailure(cid, it, str(exc)))
        diagnostics["loglik_trace"][cid] = trace
        diagnostics["mh_step_sd"][cid] = dict(steps)

    rates = {k: (accept_counts[k] / accept_total if accept_total else np.nan)
             for k in _MH_PARAMS}
    return PosteriorDraws(
        states=states,
        log_likelihoods=np.asarray(logliks),
        chain_ids=np.asarray(chain_ids, dtype=int),
        acceptance_rates=rates,
        diagnostics=diagnostics,
        failures=failures,
    )
