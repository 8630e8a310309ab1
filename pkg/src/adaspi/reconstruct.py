"""Reconstruction from measurement bundles.

Two routes: ADMM with a total-variation prior (consensus splitting, per-block
data solves, Chambolle-type dual iterations for the TV proximal step) and a
prior-free per-block minimum-norm least-squares baseline.  The TV term is
evaluated on the full image, so it couples blocks across block borders.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .domain import CaptureConfig, Image
from .measurement import MeasurementBundle


@dataclass(frozen=True)
class AdmmTvParams:
    tv_weight: float = 0.05
    rho: float = 1.0
    max_iterations: int = 200
    tolerance: float = 1e-4
    flavor: str = "anisotropic"
    prox_iterations: int = 20

    def __post_init__(self):
        if self.tv_weight < 0:
            raise ValueError(f"tv_weight must be >= 0, got {self.tv_weight}")
        if self.rho <= 0:
            raise ValueError(f"rho must be > 0, got {self.rho}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be > 0")
        if self.flavor not in ("anisotropic", "isotropic"):
            raise ValueError(f"unknown TV flavor {self.flavor!r}")

    @classmethod
    def from_config(cls, config: CaptureConfig, provisional: bool = False) -> "AdmmTvParams":
        return cls(
            tv_weight=config.tv_weight,
            rho=config.rho,
            max_iterations=(
                config.provisional_iterations if provisional else config.max_iterations
            ),
            tolerance=config.tolerance,
            flavor=config.tv_flavor,
        )


@dataclass
class ReconstructionResult:
    image: Image
    raw: np.ndarray
    iterations: int
    primal_residual: float
    dual_residual: float
    converged: bool
    objective_trace: list[float] = field(default_factory=list)
    data_residual: float = 0.0


# ---------------------------------------------------------------------------
# Total variation
# ---------------------------------------------------------------------------


def _grad(a: np.ndarray) -> np.ndarray:
    """Forward differences with Neumann boundary; (L, L) -> (L, L, 2)."""
    g = np.zeros(a.shape + (2,))
    g[:-1, :, 0] = a[1:, :] - a[:-1, :]
    g[:, :-1, 1] = a[:, 1:] - a[:, :-1]
    return g


def _div(p: np.ndarray) -> np.ndarray:
    """Negative adjoint of :func:`_grad`; (L, L, 2) -> (L, L)."""
    d = np.zeros(p.shape[:2])
    d[:-1, :] += p[:-1, :, 0]
    d[1:, :] -= p[:-1, :, 0]
    d[:, :-1] += p[:, :-1, 1]
    d[:, 1:] -= p[:, :-1, 1]
    return d


def tv(image, flavor: str = "anisotropic") -> float:
    """Discrete total variation, summed over channels."""
    arr = image.data if isinstance(image, Image) else np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, np.newaxis]
    total = 0.0
    for c in range(arr.shape[2]):
        g = _grad(arr[:, :, c])
        if flavor == "anisotropic":
            total += np.abs(g).sum()
        elif flavor == "isotropic":
            total += np.sqrt((g**2).sum(axis=2)).sum()
        else:
            raise ValueError(f"unknown TV flavor {flavor!r}")
    return float(total)


def _prox_tv_channel(
    v: np.ndarray, gamma: float, flavor: str, iterations: int, p: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """argmin_z 0.5 ||z - v||^2 + gamma TV(z) via dual projection iterations.

    ``p`` is the warm-started dual field, shape (L, L, 2).
    """
    tau = 0.25
    for _ in range(iterations):
        g = _grad(_div(p) - v / gamma)
        q = p + tau * g
        if flavor == "isotropic":
            norm = np.sqrt((q**2).sum(axis=2, keepdims=True))
            p = q / np.maximum(1.0, norm)
        else:
            p = np.clip(q, -1.0, 1.0)
    return v - gamma * _div(p), p


# ---------------------------------------------------------------------------
# Operator assembly and direct solves
# ---------------------------------------------------------------------------


def _build_system(bundle: MeasurementBundle, upto: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack regenerated patterns and measurements.

    Returns A with shape (num_blocks, upto, n) and y with shape
    (num_blocks, upto, channels).
    """
    cfg = bundle.config
    if not (1 <= upto <= bundle.measurements.shape[0]):
        raise ValueError(
            f"upto={upto} outside [1, {bundle.measurements.shape[0]}]"
        )
    grid = cfg.grid
    rows = np.stack(
        [bundle.pattern_at(i, grid).blocks for i in range(1, upto + 1)], axis=1
    )  # (num_blocks, upto, n)
    y = np.transpose(bundle.measurements[:upto], (1, 0, 2))  # (num_blocks, upto, ch)
    return rows, y


def _direct_block_solve(A: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-block exact (determined/overdetermined) or minimum-norm solution."""
    num_blocks, rows, n = A.shape
    x = np.empty((num_blocks, n, y.shape[2]))
    for j in range(num_blocks):
        if rows >= n:
            gram = A[j].T @ A[j]
            rhs = A[j].T @ y[j]
            try:
                x[j] = np.linalg.solve(gram, rhs)
            except np.linalg.LinAlgError:
                x[j] = np.linalg.lstsq(A[j], y[j], rcond=None)[0]
        else:
            outer = A[j] @ A[j].T
            try:
                x[j] = A[j].T @ np.linalg.solve(outer, y[j])
            except np.linalg.LinAlgError:
                x[j] = np.linalg.lstsq(A[j], y[j], rcond=None)[0]
    return x


def _finalize(
    bundle: MeasurementBundle,
    A: np.ndarray,
    y: np.ndarray,
    xb: np.ndarray,
    iterations: int,
    primal: float,
    dual: float,
    converged: bool,
    trace: list[float],
) -> ReconstructionResult:
    grid = bundle.config.grid
    raw = grid.from_blocks(xb)
    if raw.ndim == 2:
        raw = raw[:, :, np.newaxis]
    resid = np.einsum("jun,jnc->juc", A, xb) - y
    data_residual = float(np.linalg.norm(resid))
    return ReconstructionResult(
        image=Image(np.clip(raw, 0.0, 1.0)),
        raw=raw,
        iterations=iterations,
        primal_residual=primal,
        dual_residual=dual,
        converged=converged,
        objective_trace=trace,
        data_residual=data_residual,
    )


def reconstruct_block_lsq(bundle: MeasurementBundle, upto: int) -> ReconstructionResult:
    """Minimum-norm per-block least squares; blocks solved independently."""
    A, y = _build_system(bundle, upto)
    num_blocks, _, n = A.shape
    xb = np.empty((num_blocks, n, y.shape[2]))
    for j in range(num_blocks):
        xb[j] = np.linalg.lstsq(A[j], y[j], rcond=None)[0]
    obj = float(np.linalg.norm(np.einsum("jun,jnc->juc", A, xb) - y) ** 2)
    return _finalize(bundle, A, y, xb, 0, 0.0, 0.0, True, [obj])


def reconstruct_admm_tv(
    bundle: MeasurementBundle, upto: int, params: AdmmTvParams | None = None
) -> ReconstructionResult:
    """Minimize sum_j ||A_j x_j - y_j||^2 + tv_weight * TV(x) over the image.

    With ``tv_weight == 0`` the problem is plain least squares and is solved
    in closed form per block (minimum-norm when underdetermined).
    """
    cfg = bundle.config
    if params is None:
        params = AdmmTvParams.from_config(cfg)
    A, y = _build_system(bundle, upto)
    grid = cfg.grid
    channels = y.shape[2]
    lam, rho = params.tv_weight, params.rho

    if lam == 0.0:
        xb = _direct_block_solve(A, y)
        obj = float(np.linalg.norm(np.einsum("jun,jnc->juc", A, xb) - y) ** 2)
        return _finalize(bundle, A, y, xb, 0, 0.0, 0.0, True, [obj])

    num_blocks, _, n = A.shape
    gram = np.einsum("jun,jum->jnm", A, A)
    aty = 2.0 * np.einsum("jun,juc->jnc", A, y)
    solver = np.linalg.inv(2.0 * gram + rho * np.eye(n))

    xb = _direct_block_solve(A, y)
    x_img = grid.from_blocks(xb)
    if x_img.ndim == 2:
        x_img = x_img[:, :, np.newaxis]
    z = x_img.copy()
    u = np.zeros_like(z)
    duals = [np.zeros(z.shape[:2] + (2,)) for _ in range(channels)]

    gamma = lam / rho
    scale = np.sqrt(z.size)
    trace: list[float] = []
    primal = dual = np.inf
    converged = False
    iterations = 0

    for iterations in range(1, params.max_iterations + 1):
        zb = grid.to_blocks(z - u)
        if zb.ndim == 2:
            zb = zb[:, :, np.newaxis]
        xb = np.einsum("jnm,jmc->jnc", solver, aty + rho * zb)
        x_img = grid.from_blocks(xb)
        if x_img.ndim == 2:
            x_img = x_img[:, :, np.newaxis]

        v = x_img + u
        z_old = z
        z = np.empty_like(v)
        for c in range(channels):
            z[:, :, c], duals[c] = _prox_tv_channel(
                v[:, :, c], gamma, params.flavor, params.prox_iterations, duals[c]
            )
        u = u + x_img - z

        primal = float(np.linalg.norm(x_img - z) / scale)
        dual = float(rho * np.linalg.norm(z - z_old) / scale)
        data_term = float(
            np.linalg.norm(np.einsum("jun,jnc->juc", A, xb) - y) ** 2
        )
        trace.append(data_term + lam * tv(z, params.flavor))
        if primal < params.tolerance and dual < params.tolerance:
            converged = True
            break

    return _finalize(bundle, A, y, xb, iterations, primal, dual, converged, trace)
