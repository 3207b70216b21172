"""Shared domain types for the streaming robust regression toolkit.

Observation model used throughout the package: features x are centered
Gaussian with covariance H, and responses are

    y = <x, theta*> + eps + b

where eps is centered Gaussian dense noise with standard deviation sigma > 0
and b is a sparse response corruption. b equals zero with probability
1 - eta and is otherwise drawn from a mixture of point masses and uniform
intervals, independently of (x, eps). Because the corruption process never
looks at the realized features or noise, it is oblivious, which is what makes
consistent recovery possible at all.

All randomness in the package flows through explicit 64-bit seeds and the
counter-based Philox generator. `substream(seed, *path)` hands out
independent generators for named purposes, and `derive_seed` produces child
seeds for replications, so parallel work is reproducible by construction.
"""

from __future__ import annotations

import hashlib
import math
import zlib
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

_MASK64 = (1 << 64) - 1


# ---------------------------------------------------------------------------
# seeding


def _seed_sequence(seed: int, *path) -> np.random.SeedSequence:
    words = [int(seed) & _MASK64]
    for p in path:
        if isinstance(p, str):
            words.append(zlib.crc32(p.encode("utf-8")))
        else:
            words.append(int(p) & _MASK64)
    return np.random.SeedSequence(tuple(words))


def substream(seed: int, *path) -> np.random.Generator:
    """Independent generator addressed by (seed, path).

    Identical arguments always return a generator producing the identical
    stream. Path elements may be ints or short strings naming the purpose,
    e.g. ``substream(seed, "noise")`` or ``substream(seed, "rep", 3)``.
    """
    return np.random.Generator(np.random.Philox(_seed_sequence(seed, *path)))


def derive_seed(seed: int, *path) -> int:
    """Deterministic 64-bit child seed for a (seed, path) address."""
    return int(_seed_sequence(seed, *path).generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# covariance specifications


@dataclass(frozen=True)
class Identity:
    """H = I_d."""

    d: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"dimension must be >= 1, got {self.d}")


@dataclass(frozen=True)
class Spectrum:
    """H with prescribed eigenvalues and a seeded random orthogonal basis."""

    eigenvalues: tuple
    basis_seed: int

    def __post_init__(self):
        eig = tuple(float(v) for v in self.eigenvalues)
        if len(eig) == 0:
            raise ValueError("eigenvalue list must be non-empty")
        for v in eig:
            if not (v > 0) or not math.isfinite(v):
                raise ValueError(f"eigenvalues must be positive and finite, got {v}")
        object.__setattr__(self, "eigenvalues", eig)


@dataclass(frozen=True, eq=False)
class Explicit:
    """H given as an explicit symmetric positive definite matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"matrix must be square, got shape {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)


CovarianceSpec = Union[Identity, Spectrum, Explicit]


def spec_dimension(spec: CovarianceSpec) -> int:
    if isinstance(spec, Identity):
        return spec.d
    if isinstance(spec, Spectrum):
        return len(spec.eigenvalues)
    if isinstance(spec, Explicit):
        return spec.matrix.shape[0]
    raise TypeError(f"not a covariance spec: {spec!r}")


class CovarianceDesign(NamedTuple):
    h: np.ndarray
    chol: np.ndarray
    mu: float
    r2: float


def realize_covariance(spec: CovarianceSpec) -> CovarianceDesign:
    """Materialize a covariance spec into (H, lower Cholesky factor, mu, R2).

    mu is the smallest eigenvalue of H and R2 its trace. A `Spectrum` spec
    with a fixed basis_seed realizes the identical matrix on every call; the
    basis is the Q factor of a seeded Gaussian matrix with the signs of
    diag(R) fixed, so it is Haar distributed and reproducible.
    """
    if isinstance(spec, Identity):
        h = np.eye(spec.d)
        return CovarianceDesign(h, h.copy(), 1.0, float(spec.d))

    if isinstance(spec, Spectrum):
        eig = np.asarray(spec.eigenvalues, dtype=float)
        d = eig.size
        g = substream(spec.basis_seed, "basis").standard_normal((d, d))
        q, r = np.linalg.qr(g)
        sign = np.sign(np.diag(r))
        sign[sign == 0] = 1.0
        q = q * sign
        h = (q * eig) @ q.T
        h = 0.5 * (h + h.T)
        return CovarianceDesign(h, np.linalg.cholesky(h), float(eig.min()), float(eig.sum()))

    if isinstance(spec, Explicit):
        m = np.asarray(spec.matrix, dtype=float)
        if not np.allclose(m, m.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(m).max())):
            raise ValueError("explicit covariance must be symmetric")
        eig = np.linalg.eigvalsh(m)
        if eig[0] <= 0:
            raise ValueError(
                f"covariance is not positive definite: smallest eigenvalue {eig[0]:.6g} <= 0"
            )
        return CovarianceDesign(m.copy(), np.linalg.cholesky(m), float(eig[0]), float(np.trace(m)))

    raise TypeError(f"not a covariance spec: {spec!r}")


# ---------------------------------------------------------------------------
# outlier distribution


@dataclass(frozen=True)
class PointMass:
    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self):
        object.__setattr__(self, "lo", float(self.lo))
        object.__setattr__(self, "hi", float(self.hi))
        if not self.lo < self.hi:
            raise ValueError(f"uniform interval needs lo < hi, got [{self.lo}, {self.hi}]")


OutlierComponent = Union[PointMass, Uniform]

_WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class OutlierDistribution:
    """Law of the response corruption b.

    b = 0 with probability 1 - eta; conditional on b != 0 it is drawn from
    the weighted mixture in `components`. Weights must sum to one.
    """

    eta: float
    components: tuple

    def __post_init__(self):
        eta = float(self.eta)
        if not (0.0 <= eta < 1.0):
            raise ValueError(f"eta must lie in [0, 1), got {eta}")
        comps = tuple((float(w), c) for (w, c) in self.components)
        if len(comps) == 0:
            raise ValueError("component list must be non-empty")
        for w, c in comps:
            if w < 0:
                raise ValueError(f"component weight must be >= 0, got {w}")
            if not isinstance(c, (PointMass, Uniform)):
                raise TypeError(f"not an outlier component: {c!r}")
        total = math.fsum(w for w, _ in comps)
        if abs(total - 1.0) > _WEIGHT_TOL:
            raise ValueError(f"component weights must sum to 1, got {total!r}")
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "components", comps)

    def values_from_uniforms(self, u_component: np.ndarray, u_position: np.ndarray) -> np.ndarray:
        """Map uniform draws to conditional outlier values.

        u_component selects the mixture component through the cumulative
        weights, u_position locates the draw inside a uniform component and
        is ignored by point masses. Keeping this mapping fixed means any
        consumer burning the same two uniform arrays reproduces the same
        values, which keeps lazily and eagerly generated streams aligned.
        """
        u_component = np.asarray(u_component, dtype=float)
        u_position = np.asarray(u_position, dtype=float)
        cum = np.cumsum([w for w, _ in self.components])
        idx = np.searchsorted(cum, u_component, side="right")
        idx = np.minimum(idx, len(self.components) - 1)
        out = np.empty(u_component.shape, dtype=float)
        for j, (_, comp) in enumerate(self.components):
            mask = idx == j
            if not mask.any():
                continue
            if isinstance(comp, PointMass):
                out[mask] = comp.value
            else:
                out[mask] = comp.lo + (comp.hi - comp.lo) * u_position[mask]
        return out


def no_outliers() -> OutlierDistribution:
    return OutlierDistribution(0.0, ((1.0, PointMass(0.0)),))


def point_outliers(eta: float, value: float) -> OutlierDistribution:
    return OutlierDistribution(eta, ((1.0, PointMass(value)),))


# ---------------------------------------------------------------------------
# regression model


@dataclass(frozen=True, eq=False)
class RegressionModel:
    """Ground truth theta*, feature covariance, noise scale and corruption law."""

    theta_star: np.ndarray
    covariance: CovarianceSpec
    sigma: float
    outliers: OutlierDistribution

    def __post_init__(self):
        theta = np.array(self.theta_star, dtype=float).reshape(-1)
        d = spec_dimension(self.covariance)
        if theta.size != d:
            raise ValueError(
                f"theta_star has dimension {theta.size}, covariance has dimension {d}"
            )
        if not (float(self.sigma) > 0):
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        theta.setflags(write=False)
        object.__setattr__(self, "theta_star", theta)
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def d(self) -> int:
        return self.theta_star.size

    @cached_property
    def design(self) -> CovarianceDesign:
        return realize_covariance(self.covariance)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.theta_star.tobytes())
        h.update(self.sigma.hex().encode())
        h.update(repr(self.covariance).encode())
        if isinstance(self.covariance, Explicit):
            h.update(self.covariance.matrix.tobytes())
        h.update(repr(self.outliers).encode())
        return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# schedules and losses

INV_SQRT = "inv_sqrt"
CONSTANT = "constant"


@dataclass(frozen=True)
class StepSchedule:
    """Step size gamma_n = gamma0 / sqrt(n) or a constant gamma0."""

    gamma0: float
    kind: str = INV_SQRT

    def __post_init__(self):
        if not (float(self.gamma0) > 0):
            raise ValueError(f"gamma0 must be > 0, got {self.gamma0}")
        if self.kind not in (INV_SQRT, CONSTANT):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        object.__setattr__(self, "gamma0", float(self.gamma0))


def schedule_gamma(schedule: StepSchedule, n: int) -> float:
    """Step size used for the n-th update, n >= 1."""
    if n < 1:
        raise ValueError(f"step index must be >= 1, got {n}")
    if schedule.kind == CONSTANT:
        return schedule.gamma0
    return schedule.gamma0 / math.sqrt(n)


@dataclass(frozen=True)
class L1:
    pass


@dataclass(frozen=True)
class L2:
    pass


@dataclass(frozen=True)
class Huber:
    tau: float

    def __post_init__(self):
        if not (float(self.tau) > 0):
            raise ValueError(f"huber tau must be > 0, got {self.tau}")
        object.__setattr__(self, "tau", float(self.tau))


Loss = Union[L1, L2, Huber]


def loss_label(loss: Loss) -> str:
    if isinstance(loss, L1):
        return "l1"
    if isinstance(loss, L2):
        return "l2"
    if isinstance(loss, Huber):
        return f"huber({loss.tau!r})"
    raise TypeError(f"not a loss: {loss!r}")


# ---------------------------------------------------------------------------
# SGD state and samples


@dataclass
class SgdState:
    """Mutable per-run state: iteration count, iterate and running average.

    theta_bar after n steps is the arithmetic mean of the iterates
    theta_0 .. theta_{n-1}; at n = 0 it is defined to be theta_0.
    """

    n: int
    theta: np.ndarray
    theta_bar: np.ndarray
    loss: Loss

    @classmethod
    def start(cls, theta0: np.ndarray, loss: Loss) -> "SgdState":
        theta0 = np.array(theta0, dtype=float).reshape(-1)
        return cls(0, theta0.copy(), theta0.copy(), loss)


@dataclass(frozen=True, eq=False)
class Sample:
    """One observation. The corrupted flag is bookkeeping for the harness;
    no estimator other than the clean-data baseline may look at it."""

    x: np.ndarray
    y: float
    corrupted: bool = False


# ---------------------------------------------------------------------------
# run records


@dataclass(frozen=True, eq=False)
class RunRecord:
    """Checkpointed error trajectory of one run.

    steps holds strictly increasing iteration counts; err_h, err_2 and
    err_last_h hold the squared H-norm error of the averaged iterate, its
    squared Euclidean error, and the squared H-norm error of the last
    iterate at those counts.
    """

    steps: np.ndarray
    err_h: np.ndarray
    err_2: np.ndarray
    err_last_h: np.ndarray
    config_digest: str
    seed: int
    theta_bar: np.ndarray
    theta_last: np.ndarray
    min_abs_residual: float
    iterates: Optional[np.ndarray] = None

    def __post_init__(self):
        steps = np.asarray(self.steps, dtype=np.int64)
        if steps.size and np.any(np.diff(steps) <= 0):
            raise ValueError("checkpoint iterations must be strictly increasing")
        for name in ("err_h", "err_2", "err_last_h"):
            vals = np.asarray(getattr(self, name), dtype=float)
            if vals.shape != steps.shape:
                raise ValueError(f"{name} and steps must have matching length")
            if np.any(vals < 0):
                raise ValueError(f"{name} contains a negative value")
            object.__setattr__(self, name, vals)
        object.__setattr__(self, "steps", steps)

    @property
    def final_err_h(self) -> float:
        return float(self.err_h[-1])

    def to_lines(self) -> list:
        lines = [
            f"# digest={self.config_digest}",
            f"# seed={self.seed}",
            "n,err_H,err_2,err_last_H",
        ]
        for i in range(self.steps.size):
            lines.append(
                f"{int(self.steps[i])},{float(self.err_h[i])!r},"
                f"{float(self.err_2[i])!r},{float(self.err_last_h[i])!r}"
            )
        return lines

    def save(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write("\n".join(self.to_lines()) + "\n")


def short_digest(parts: Sequence) -> str:
    """Stable short hash of a sequence of config fragments."""
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, np.ndarray):
            h.update(p.tobytes())
        else:
            h.update(repr(p).encode())
        h.update(b"|")
    return h.hexdigest()[:16]
