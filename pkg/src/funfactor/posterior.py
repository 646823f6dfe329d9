"""Posterior summaries: kernels, marginals, eigenstructure, credible bands.

Four-argument covariance kernels are evaluated on a pair grid whose index
runs s-major (t varies fastest), matching C-order flattening of an
``(n_s, n_t)`` surface.  Marginal covariances average the kernel along the
other coordinate on a fine grid; their spectral decompositions use uniform
quadrature weights with grid-spacing scaling, so eigenvalues and
eigenfunctions are comparable across grid resolutions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ModelState, omega as _omega_of, unvec
from .splines import BasisConfig, build_basis, eval_surface, tensor_design

__all__ = [
    "KernelGrid",
    "MarginalCovariance",
    "EigenSummary",
    "FunctionBand",
    "SummaryOptions",
    "AxisEigenSummary",
    "SummaryBundle",
    "covariance_kernel",
    "mean_surface",
    "marginalize",
    "eigen_decompose",
    "align_signs",
    "simultaneous_band",
    "summarize",
]


@dataclass
class KernelGrid:
    """Covariance kernel values over all pairs of (s, t) grid points.

    ``gram[i, j]`` holds K{(s_a, t_b), (s_c, t_d)} with i = a * len(t) + b
    and j = c * len(t) + d.
    """

    s_points: np.ndarray
    t_points: np.ndarray
    gram: np.ndarray

    def reshaped(self) -> np.ndarray:
        """Gram as a 4-d array indexed (s, t, s', t')."""
        ws, wt = self.s_points.size, self.t_points.size
        return self.gram.reshape(ws, wt, ws, wt)


@dataclass
class MarginalCovariance:
    """Covariance along one coordinate, averaged over the other."""

    axis: str                # "S" or "T"
    points: np.ndarray
    matrix: np.ndarray


@dataclass
class EigenSummary:
    """Spectral decomposition of a marginal covariance matrix.

    Eigenvalues are on the integral-operator scale (matrix eigenvalue times
    grid spacing); eigenfunctions have unit discrete L2 norm under the same
    spacing.  Negative matrix eigenvalues are clamped to zero and counted.
    """

    points: np.ndarray
    eigenvalues: np.ndarray      # (rank,), nonincreasing, >= 0
    eigenfunctions: np.ndarray   # (grid, rank)
    fve: np.ndarray              # (rank,), sums to <= 1
    n_clamped: int = 0
    min_raw_eigenvalue: float = 0.0


@dataclass
class FunctionBand:
    """Pointwise center with a simultaneous lower/upper envelope."""

    center: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float


def grid_spacing(points: np.ndarray) -> float:
    """Quadrature weight per grid point: domain span / (n - 1), or 1 for n = 1."""
    pts = np.asarray(points, dtype=float)
    if pts.size < 2:
        return 1.0
    return float((pts[-1] - pts[0]) / (pts.size - 1))


def covariance_kernel(state: ModelState, s_points, t_points,
                      B1: np.ndarray, B2: np.ndarray) -> KernelGrid:
    """Kernel values D @ Omega @ D.T over the pair grid.

    ``B1`` and ``B2`` must be basis matrices evaluated at ``s_points`` and
    ``t_points`` (``build_basis`` raises the domain error for points outside
    the basis support).
    """
    s_points = np.atleast_1d(np.asarray(s_points, dtype=float))
    t_points = np.atleast_1d(np.asarray(t_points, dtype=float))
    if B1.shape[0] != s_points.size or B2.shape[0] != t_points.size:
        raise ValueError("basis matrices do not match the evaluation grids")
    D = tensor_design(B1, B2)
    om = _omega_of(state)
    gram = D @ om @ D.T
    gram = 0.5 * (gram + gram.T)
    return KernelGrid(s_points=s_points, t_points=t_points, gram=gram)


def mean_surface(state: ModelState, x, B1: np.ndarray, B2: np.ndarray) -> np.ndarray:
    """Model-implied mean surface for covariates ``x`` on the grid.

    Evaluates the loading expansion at the score prior mean: the score mean
    is ``unvec(beta.T @ x)`` and the surface is its sandwich image through
    the loadings and bases.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (state.d,):
        raise ValueError(f"covariate length {x.size} != d={state.d}")
    _, _, q1, q2 = state.dims
    if state.d == 0:
        return np.zeros((B1.shape[0], B2.shape[0]))
    score_mean = unvec(state.beta.T @ x, q1, q2)
    return eval_surface(state.Lambda @ score_mean @ state.Gamma.T, B1, B2)


def _marginal_weights(points: np.ndarray, scheme: str) -> np.ndarray:
    n = points.size
    if scheme == "uniform" or n == 1:
        return np.full(n, 1.0 / n)
    if scheme == "trapezoid":
        d = np.diff(np.asarray(points, dtype=float))
        w = np.zeros(n)
        w[:-1] += 0.5 * d
        w[1:] += 0.5 * d
        return w / w.sum()
    raise ValueError(f"unknown weight scheme {scheme!r}")


def marginalize(kernel: KernelGrid, axis: str, weights: str = "uniform") -> MarginalCovariance:
    """Average the kernel along the other coordinate's diagonal.

    ``axis="S"`` returns K_S(s, s') = sum_l w_l K{(s, t_l), (s', t_l)} and
    symmetrically for ``axis="T"``.  Weights default to the plain grid
    average; trapezoid weights are available for non-uniform grids.
    """
    G4 = kernel.reshaped()
    axis = axis.upper()
    if axis == "S":
        w = _marginal_weights(kernel.t_points, weights)
        mat = np.einsum("itjt,t->ij", G4, w, optimize=True)
        pts = kernel.s_points
    elif axis == "T":
        w = _marginal_weights(kernel.s_points, weights)
        mat = np.einsum("sisj,s->ij", G4, w, optimize=True)
        pts = kernel.t_points
    else:
        raise ValueError(f"axis must be 'S' or 'T', got {axis!r}")
    return MarginalCovariance(axis=axis, points=pts, matrix=0.5 * (mat + mat.T))


def eigen_decompose(marg: MarginalCovariance, rank: int) -> EigenSummary:
    """Top-``rank`` spectral decomposition with grid-spacing quadrature.

    Raises ValueError for asymmetric input (beyond 1e-8 relative tolerance)
    or ``rank`` exceeding the grid size.
    """
    M = np.asarray(marg.matrix, dtype=float)
    n = M.shape[0]
    if rank > n or rank < 1:
        raise ValueError(f"rank must be in [1, {n}], got {rank}")
    scale = max(1.0, float(np.abs(M).max()))
    if np.abs(M - M.T).max() > 1e-8 * scale:
        raise ValueError("marginal covariance matrix is not symmetric")
    vals, vecs = np.linalg.eigh(0.5 * (M + M.T))
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    min_raw = float(vals.min())
    n_clamped = int(np.sum(vals < 0))
    vals = np.clip(vals, 0.0, None)
    h = grid_spacing(marg.points)
    total = vals.sum()
    fve_all = vals / total if total > 0 else np.zeros_like(vals)
    return EigenSummary(
        points=np.asarray(marg.points, dtype=float),
        eigenvalues=vals[:rank] * h,
        eigenfunctions=vecs[:, :rank] / np.sqrt(h),
        fve=fve_all[:rank],
        n_clamped=n_clamped,
        min_raw_eigenvalue=min_raw,
    )


def align_signs(draws) -> np.ndarray:
    """Resolve the sign ambiguity of an ordered stream of eigenfunction draws.

    The first draw fixes the orientation.  Each later draw is flipped when
    the flipped copy is strictly closer (squared distance) to the running
    mean of the already-aligned draws, and the running mean is updated after
    every decision.  Applying the procedure to an aligned stream is a no-op.
    """
    arr = np.array([np.asarray(d, dtype=float) for d in draws])
    if arr.ndim != 2:
        arr = arr.reshape(arr.shape[0], -1)
    if arr.shape[0] == 0:
        return arr
    aligned = arr.copy()
    mean = aligned[0].copy()
    for k in range(1, aligned.shape[0]):
        u = aligned[k]
        # flipped copy is closer to the mean exactly when <u, mean> < 0
        if np.dot(u, mean) < 0:
            aligned[k] = -u
        mean += (aligned[k] - mean) / (k + 1)
    return aligned


def simultaneous_band(draws: np.ndarray, alpha: float) -> FunctionBand:
    """Simultaneous credible band from the max standardized deviation.

    The band is ``mean +- q * sd`` where q is the empirical (1 - alpha)
    quantile (upper order statistic) of each draw's maximum standardized
    absolute deviation; by construction at least a (1 - alpha) fraction of
    draws lie entirely inside.  The pointwise SD is floored at 1e-12
    relative to the center magnitude to keep degenerate components finite.
    """
    arr = np.asarray(draws, dtype=float)
    if arr.ndim == 1:
        arr = arr[None, :]
    flat = arr.reshape(arr.shape[0], -1)
    if flat.shape[0] < 2:
        raise ValueError("simultaneous_band requires at least 2 draws")
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    center = flat.mean(axis=0)
    sd = flat.std(axis=0, ddof=1)
    sd = np.maximum(sd, 1e-12 * np.maximum(1.0, np.abs(center)))
    dev = np.abs(flat - center) / sd
    max_dev = dev.max(axis=1)
    q = float(np.quantile(max_dev, 1.0 - alpha, method="higher"))
    lower = center - q * sd
    upper = center + q * sd
    shape = arr.shape[1:]
    return FunctionBand(center=center.reshape(shape), lower=lower.reshape(shape),
                        upper=upper.reshape(shape), level=1.0 - alpha)


def _degenerate_band(values: np.ndarray, level: float) -> FunctionBand:
    v = np.asarray(values, dtype=float)
    return FunctionBand(center=v.copy(), lower=v.copy(), upper=v.copy(), level=level)


@dataclass
class SummaryOptions:
    """Knobs for :func:`summarize`."""

    basis_s: BasisConfig
    basis_t: BasisConfig
    alpha: float = 0.05
    n_components: int = 3
    x: np.ndarray | None = None
    weights: str = "uniform"


@dataclass
class AxisEigenSummary:
    """Aligned posterior summaries for one marginal covariance's spectrum."""

    points: np.ndarray
    eigenvalues_mean: np.ndarray
    eigenvalues_q10: np.ndarray
    eigenvalues_q90: np.ndarray
    fve_mean: np.ndarray
    bands: list[FunctionBand]
    flip_counts: np.ndarray
    low_affinity_counts: np.ndarray


@dataclass
class SummaryBundle:
    """Everything the reporting layer needs from a set of posterior draws."""

    s_points: np.ndarray
    t_points: np.ndarray
    level: float
    mean_surface: FunctionBand
    kernel_mean: KernelGrid
    ks_mean: MarginalCovariance
    kt_mean: MarginalCovariance
    eigen_s: AxisEigenSummary
    eigen_t: AxisEigenSummary
    diagnostics: dict = field(default_factory=dict)


def _axis_summary(func_draws: np.ndarray, val_draws: np.ndarray,
                  fve_draws: np.ndarray, points: np.ndarray,
                  alpha: float) -> AxisEigenSummary:
    """Align, band and average one axis' per-draw eigen quantities."""
    n_draws, rank, _ = func_draws.shape
    bands = []
    flips = np.zeros(rank, dtype=int)
    low_aff = np.zeros(rank, dtype=int)
    for j in range(rank):
        raw = func_draws[:, j, :]
        aligned = align_signs(raw)
        flips[j] = int(np.sum(np.any(aligned != raw, axis=1)))
        mean = aligned.mean(axis=0)
        norm = np.linalg.norm(mean) * np.linalg.norm(aligned, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            cosines = np.abs(aligned @ mean) / np.where(norm > 0, norm, 1.0)
        low_aff[j] = int(np.sum(cosines < 0.5))
        if n_draws >= 2:
            bands.append(simultaneous_band(aligned, alpha))
        else:
            bands.append(_degenerate_band(aligned[0], 1.0 - alpha))
    return AxisEigenSummary(
        points=points,
        eigenvalues_mean=val_draws.mean(axis=0),
        eigenvalues_q10=np.quantile(val_draws, 0.1, axis=0),
        eigenvalues_q90=np.quantile(val_draws, 0.9, axis=0),
        fve_mean=fve_draws.mean(axis=0),
        bands=bands,
        flip_counts=flips,
        low_affinity_counts=low_aff,
    )


def summarize(draws, s_points, t_points, options: SummaryOptions) -> SummaryBundle:
    """Full post-processing pipeline over posterior draws.

    Per draw: kernel on the pair grid, marginal covariances, spectral
    decompositions.  Across draws: sign alignment per component index,
    simultaneous bands, posterior means of the kernel and marginals, and the
    posterior mean surface (for ``options.x``) with its band.
    """
    states = draws.states if hasattr(draws, "states") else list(draws)
    if not states:
        raise ValueError("summarize requires at least one draw")
    s_points = np.atleast_1d(np.asarray(s_points, dtype=float))
    t_points = np.atleast_1d(np.asarray(t_points, dtype=float))
    B1 = build_basis(options.basis_s, s_points)
    B2 = build_basis(options.basis_t, t_points)
    D = tensor_design(B1, B2)

    n_draws = len(states)
    ws, wt = s_points.size, t_points.size
    rank = options.n_components
    if rank > min(ws, wt):
        raise ValueError("n_components exceeds the evaluation grid size")

    gram_mean = np.zeros((ws * wt, ws * wt))
    ks_mean = np.zeros((ws, ws))
    kt_mean = np.zeros((wt, wt))
    mu_draws = np.empty((n_draws, ws, wt))
    fs_draws = np.empty((n_draws, rank, ws))
    ft_draws = np.empty((n_draws, rank, wt))
    vs_draws = np.empty((n_draws, rank))
    vt_draws = np.empty((n_draws, rank))
    fve_s = np.empty((n_draws, rank))
    fve_t = np.empty((n_draws, rank))

    for idx, state in enumerate(states):
        om = draws.omega(idx) if hasattr(draws, "omega") else _omega_of(state)
        gram = D @ om @ D.T
        gram = 0.5 * (gram + gram.T)
        kernel = KernelGrid(s_points=s_points, t_points=t_points, gram=gram)
        gram_mean += gram
        ms = marginalize(kernel, "S", options.weights)
        mt = marginalize(kernel, "T", options.weights)
        ks_mean += ms.matrix
        kt_mean += mt.matrix
        es = eigen_decompose(ms, rank)
        et = eigen_decompose(mt, rank)
        fs_draws[idx] = es.eigenfunctions.T
        ft_draws[idx] = et.eigenfunctions.T
        vs_draws[idx] = es.eigenvalues
        vt_draws[idx] = et.eigenvalues
        fve_s[idx] = es.fve
        fve_t[idx] = et.fve
        if options.x is not None and state.d > 0:
            mu_draws[idx] = mean_surface(state, options.x, B1, B2)
        else:
            mu_draws[idx] = 0.0

    gram_mean /= n_draws
    ks_mean /= n_draws
    kt_mean /= n_draws

    if n_draws >= 2:
        mu_band = simultaneous_band(mu_draws, options.alpha)
    else:
        mu_band = _degenerate_band(mu_draws[0], 1.0 - options.alpha)

    eigen_s = _axis_summary(fs_draws, vs_draws, fve_s, s_points, options.alpha)
    eigen_t = _axis_summary(ft_draws, vt_draws, fve_t, t_points, options.alpha)

    return SummaryBundle(
        s_points=s_points,
        t_points=t_points,
        level=1.0 - options.alpha,
        mean_surface=mu_band,
        kernel_mean=KernelGrid(s_points=s_points, t_points=t_points, gram=gram_mean),
        ks_mean=MarginalCovariance(axis="S", points=s_points, matrix=ks_mean),
        kt_mean=MarginalCovariance(axis="T", points=t_points, matrix=kt_mean),
        eigen_s=eigen_s,
        eigen_t=eigen_t,
        diagnostics={"n_draws": n_draws},
    )
