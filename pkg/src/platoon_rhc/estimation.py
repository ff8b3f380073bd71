"""Online identification of CTH-RV regression coefficients.

Each follower gets its own recursive least squares estimator with a
forgetting factor.  ``batch_ls`` solves the same weighted problem in one
shot and is used to check the recursion.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .errors import NumericalBreakdown, SingularGram
from .hdv import GammaVector

DEFAULT_GAMMA0 = (0.67, 0.1, 0.18)
DEFAULT_P0_SCALE = 0.01


class Regressor(NamedTuple):
    """``phi = (v_i(k), headway_i(k), v_{i-1}(k))`` and the measured ``v_i(k+1)``."""

    phi: tuple[float, float, float]
    target: float


@dataclass(frozen=True)
class RlsEstimator:
    """Estimate ``gamma`` and covariance ``P``, with ``P = S S'`` carried alongside.

    The factor ``S`` is what the update propagates; ``P`` is rebuilt from it.
    Under forgetting, directions the data stop exciting grow like
    ``xi**-k`` in ``P``.  Updating ``P`` directly then loses positive
    definiteness to rounding within a few hundred steps, while the factored
    update keeps ``P`` positive semidefinite by construction.
    """

    gamma: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_GAMMA0))
    P: np.ndarray = field(default_factory=lambda: DEFAULT_P0_SCALE * np.eye(3))
    xi: float = 1.0
    S: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not 0.0 < self.xi <= 1.0:
            raise ValueError(f"forgetting factor must lie in (0, 1], got {self.xi}")
        gamma = np.array(self.gamma, dtype=float).reshape(3)
        P = np.array(self.P, dtype=float).reshape(3, 3)
        if self.S is None:
            try:
                S = np.linalg.cholesky(P)
            except np.linalg.LinAlgError as exc:
                raise ValueError("initial covariance must be symmetric positive definite") from exc
        else:
            S = np.array(self.S, dtype=float).reshape(3, 3)
        for arr in (gamma, P, S):
            arr.setflags(write=False)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "S", S)

    @property
    def estimate(self) -> GammaVector:
        return GammaVector(*(float(g) for g in self.gamma))

    def predict(self, phi: Sequence[float]) -> float:
        return float(self.gamma @ np.asarray(phi, dtype=float))


def rls_update(est: RlsEstimator, reg: Regressor) -> RlsEstimator:
    """One step of ``P+ = (P - P phi phi' P / (xi + phi' P phi)) / xi``, in factored form."""
    phi = np.asarray(reg.phi, dtype=float)
    if not (np.all(np.isfinite(phi)) and np.isfinite(reg.target)):
        raise ValueError(f"non-finite regressor {reg!r}")
    S = est.S
    f = S.T @ phi
    denom = est.xi + float(f @ f)
    if not (denom > 0.0 and np.isfinite(denom)):
        raise NumericalBreakdown(f"innovation denominator {denom!r} is not positive and finite")
    Sf = S @ f  # = P phi
    gain = Sf / denom
    innovation = reg.target - float(est.gamma @ phi)
    gamma = est.gamma + gain * innovation
    # I - f f'/denom = (I - c f f')^2 with c = 1 / (denom + sqrt(denom xi))
    c = 1.0 / (denom + np.sqrt(denom * est.xi))
    S_next = (S - c * np.outer(Sf, f)) / np.sqrt(est.xi)
    P_next = S_next @ S_next.T
    P_next = 0.5 * (P_next + P_next.T)
    return RlsEstimator(gamma=gamma, P=P_next, xi=est.xi, S=S_next)


def rls_run(est: RlsEstimator, history: Iterable[Regressor]) -> RlsEstimator:
    for reg in history:
        est = rls_update(est, reg)
    return est


def batch_ls(
    history: Sequence[Regressor],
    xi: float = 1.0,
    prior: tuple[Sequence[float], np.ndarray] | None = None,
    rcond: float = 1e-10,
) -> GammaVector:
    """Exponentially weighted least squares over ``history``.

    With ``prior=(gamma0, P0)`` the initial guess enters as the quadratic
    regularizer ``xi**K (g - gamma0)' P0^{-1} (g - gamma0)``, which makes the
    result identical to running RLS from that prior over the same data.
    """
    if not 0.0 < xi <= 1.0:
        raise ValueError(f"forgetting factor must lie in (0, 1], got {xi}")
    K = len(history)
    phis = np.array([r.phi for r in history], dtype=float).reshape(K, 3)
    targets = np.array([r.target for r in history], dtype=float)
    weights = xi ** (K - 1 - np.arange(K, dtype=float))
    gram = (phis * weights[:, None]).T @ phis
    rhs = (phis * weights[:, None]).T @ targets
    if prior is not None:
        gamma0 = np.asarray(prior[0], dtype=float)
        info0 = np.linalg.inv(np.asarray(prior[1], dtype=float)) * xi**K
        gram = gram + info0
        rhs = rhs + info0 @ gamma0
    svals = np.linalg.svd(gram, compute_uv=False)
    if K == 0 or svals[-1] <= rcond * max(svals[0], 1.0):
        raise SingularGram(f"weighted Gram matrix is rank deficient (singular values {svals})")
    sol = np.linalg.solve(gram, rhs)
    return GammaVector(*(float(g) for g in sol))
