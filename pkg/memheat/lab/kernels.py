"""
kernels.py — Memory kernels, their derivatives, companion ODEs and Taylor truncation.

Supported variants (discriminated on ``kind``):
  zero          M ≡ 0
  exp_poly      M(t) = e^{at} Σ a_i t^i
  exp_poly_sum  M(t) = Σ_j e^{a_j t} p_j(t)
  taylor        M(t) = Σ c_j t^j on [0, R)  (analytic kernels; truncate before reducing)
"""
from math import comb
from typing import Annotated, List, Literal, Optional, Union

import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial import polynomial as P
from pydantic import BaseModel, ConfigDict, Field as PydField, field_validator, model_validator
from scipy.linalg import expm

from memheat.core.errors import DomainError, InsufficientDataError, UsageError
from memheat.utils.logger import logger


class ZeroKernel(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")
    kind: Literal["zero"] = "zero"


class ExpPolyKernel(BaseModel):
    """e^{at} (a_0 + a_1 t + ... + a_K t^K)."""
    model_config = ConfigDict(frozen=True, extra="forbid")
    kind: Literal["exp_poly"] = "exp_poly"
    rate: float = 0.0
    coeffs: List[float]

    @field_validator("coeffs")
    @classmethod
    def _leading_nonzero(cls, v: List[float]) -> List[float]:
        if not v:
            raise ValueError("exp_poly kernel needs at least one coefficient")
        if not all(np.isfinite(v)):
            raise ValueError("exp_poly coefficients must be finite")
        if len(v) > 1 and v[-1] == 0.0:
            raise ValueError(f"leading coefficient a_K must be nonzero (K={len(v) - 1})")
        return v

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1


class ExpPolySumKernel(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")
    kind: Literal["exp_poly_sum"] = "exp_poly_sum"
    terms: List[ExpPolyKernel]

    @field_validator("terms")
    @classmethod
    def _non_empty(cls, v: List[ExpPolyKernel]) -> List[ExpPolyKernel]:
        if not v:
            raise ValueError("exp_poly_sum needs at least one term")
        return v


class TaylorKernel(BaseModel):
    """Σ c_j t^j, valid on [0, radius); radius None means an entire kernel."""
    model_config = ConfigDict(frozen=True, extra="forbid")
    kind: Literal["taylor"] = "taylor"
    coeffs: List[float]
    radius: Optional[float] = None

    @model_validator(mode="after")
    def _check(self) -> "TaylorKernel":
        if not self.coeffs:
            raise ValueError("taylor kernel needs at least one coefficient")
        if self.radius is not None and not self.radius > 0:
            raise ValueError(f"validity radius must be positive, got {self.radius}")
        return self

    @property
    def available_order(self) -> int:
        return len(self.coeffs) - 1

    @classmethod
    def from_function_series(cls, coeff_fn, n_terms: int, radius: Optional[float] = None) -> "TaylorKernel":
        return cls(coeffs=[float(coeff_fn(j)) for j in range(n_terms)], radius=radius)


Kernel = Annotated[
    Union[ZeroKernel, ExpPolyKernel, ExpPolySumKernel, TaylorKernel],
    PydField(discriminator="kind"),
]


class CompanionSystem(BaseModel):
    """M^(m) = Σ_{j<m} c_j M^(j), seeded with s_k = M^(k)(0)."""
    model_config = ConfigDict(frozen=True)

    order: int
    recurrence: List[float]
    seeds: List[float]

    @model_validator(mode="after")
    def _consistent(self) -> "CompanionSystem":
        if self.order < 1:
            raise ValueError(f"companion order must be >= 1, got {self.order}")
        if len(self.recurrence) != self.order or len(self.seeds) != self.order:
            raise ValueError("recurrence and seeds must both have `order` entries")
        return self

    def matrix(self) -> np.ndarray:
        """Companion matrix C with d/dt (M, M', ..., M^(m-1)) = C (M, ..., M^(m-1))."""
        m = self.order
        mat = np.zeros((m, m))
        mat[:-1, 1:] = np.eye(m - 1)
        mat[-1, :] = self.recurrence
        return mat

    def evaluate(self, times) -> np.ndarray:
        """M(t) propagated from the seeds through the recurrence (matrix exponential)."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        mat = self.matrix()
        seeds = np.asarray(self.seeds)
        return np.array([(expm(t * mat) @ seeds)[0] for t in times])


# ── Evaluation ─────────────────────────────────────────────────────────────────

def _exp_poly_derivative(rate: float, coeffs: List[float], order: int) -> Polynomial:
    """q with (e^{at} p)^(order) = e^{at} q: iterate q ← a q + q'."""
    q = Polynomial(coeffs)
    for _ in range(order):
        q = rate * q + q.deriv()
    return q


def eval_kernel(k: Kernel, t, derivative_order: int = 0):
    """Exact M^(r)(t). Accepts scalar or array t; returns the same shape."""
    if derivative_order < 0:
        raise UsageError(f"derivative order must be nonnegative, got {derivative_order}")
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise DomainError(f"kernel evaluated at negative time {t_arr.min()}")

    if isinstance(k, ZeroKernel):
        out = np.zeros_like(t_arr)
    elif isinstance(k, ExpPolyKernel):
        out = np.exp(k.rate * t_arr) * _exp_poly_derivative(k.rate, k.coeffs, derivative_order)(t_arr)
    elif isinstance(k, ExpPolySumKernel):
        out = sum(eval_kernel(term, t_arr, derivative_order) for term in k.terms)
    elif isinstance(k, TaylorKernel):
        if k.radius is not None and np.any(t_arr >= k.radius):
            raise DomainError(f"t={t_arr.max()} outside the validity radius R={k.radius}")
        out = Polynomial(k.coeffs).deriv(derivative_order)(t_arr)
    else:
        raise UsageError(f"unknown kernel variant {type(k).__name__}")

    if np.ndim(t) == 0:
        return float(out)
    return np.asarray(out, dtype=float)


# ── Companion (closure) extraction ────────────────────────────────────────────

def _merged_rates(k: Kernel) -> dict:
    """rate -> highest polynomial degree among the terms sharing that rate."""
    terms = k.terms if isinstance(k, ExpPolySumKernel) else [k]
    degrees: dict = {}
    for term in terms:
        degrees[term.rate] = max(degrees.get(term.rate, 0), term.degree)
    return degrees


def companion(k: Kernel) -> CompanionSystem:
    if isinstance(k, ZeroKernel):
        return CompanionSystem(order=1, recurrence=[0.0], seeds=[0.0])
    if isinstance(k, TaylorKernel):
        raise UsageError("taylor kernels have no finite companion system; truncate() first")

    if isinstance(k, ExpPolyKernel):
        # (λ - a)^m expanded by binomial coefficients
        m = k.degree + 1
        char_poly = [comb(m, j) * (-k.rate) ** (m - j) for j in range(m + 1)]
    else:
        char_poly = [1.0]
        for rate, degree in sorted(_merged_rates(k).items()):
            char_poly = P.polymul(char_poly, P.polyfromroots([rate] * (degree + 1)))
        m = len(char_poly) - 1

    recurrence = [-float(c) for c in char_poly[:m]]
    seeds = [eval_kernel(k, 0.0, r) for r in range(m)]
    return CompanionSystem(order=m, recurrence=recurrence, seeds=seeds)


# ── Taylor truncation ─────────────────────────────────────────────────────────

def truncate(k: TaylorKernel, order: int) -> ExpPolyKernel:
    """Σ_{j≤K} c_j t^j as an exp_poly kernel with rate 0."""
    if not isinstance(k, TaylorKernel):
        raise UsageError(f"only taylor kernels can be truncated, got {k.kind}")
    if order < 0:
        raise UsageError(f"truncation order must be nonnegative, got {order}")
    if order > k.available_order:
        raise InsufficientDataError(
            f"truncation order K={order} needs {order + 1} coefficients, only {len(k.coeffs)} given"
        )
    coeffs = list(k.coeffs[: order + 1])
    # leading zeros (e.g. odd series) would violate the exp_poly invariant
    while len(coeffs) > 1 and coeffs[-1] == 0.0:
        coeffs.pop()
    logger.debug(f"Truncated taylor kernel to K={order} (effective degree {len(coeffs) - 1})")
    return ExpPolyKernel(rate=0.0, coeffs=coeffs)


def truncation_bound(k: TaylorKernel, order: int, horizon: float) -> float:
    """Sup-norm bound Σ_{K<j≤J} |c_j| T^j of the truncation remainder on [0, T]."""
    if k.radius is not None and horizon >= k.radius:
        raise DomainError(f"horizon T={horizon} must lie inside the validity radius R={k.radius}")
    tail = np.abs(np.asarray(k.coeffs[order + 1:], dtype=float))
    powers = horizon ** np.arange(order + 1, len(k.coeffs))
    # smallest terms first keeps the partial sum accurate to machine precision
    return float(np.sum(np.sort(tail * powers)))


def describe_kernel(k: Kernel) -> str:
    if isinstance(k, ZeroKernel):
        return "0"
    if isinstance(k, ExpPolyKernel):
        poly = " + ".join(f"{c:g}t^{i}" if i else f"{c:g}" for i, c in enumerate(k.coeffs))
        return f"({poly})" if k.rate == 0 else f"e^({k.rate:g}t)({poly})"
    if isinstance(k, ExpPolySumKernel):
        return " + ".join(describe_kernel(t) for t in k.terms)
    radius = "inf" if k.radius is None else f"{k.radius:g}"
    return f"taylor[J={k.available_order}, R={radius}]"
