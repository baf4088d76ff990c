"""Analytic target energies with exact gradients and Hessian-vector products.

All batch methods take arrays of shape ``(..., n)`` and divide by the model
temperature.  Log-density constants are dropped throughout.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np


class Kind(str, Enum):
    ICG = "icg"
    SCG = "scg"
    MOG = "mog"
    ROUGH_WELL = "rough_well"
    STD_GAUSSIAN = "std_gaussian"


class DivergenceError(FloatingPointError):
    """Raised when an energy evaluation leaves the finite range."""


SPEC_KEYS = {"kind", "dim", "eta", "sigma2", "separation", "temperature",
             "variances", "angle"}


@dataclass(frozen=True)
class EnergyModel:
    kind: Kind
    dim: int
    temperature: float = 1.0
    eta: float = 1e-2
    sigma2: float = 0.1
    separation: float = 4.0
    variances: tuple[float, ...] = ()
    angle: float = np.pi / 4
    # derived, filled in __post_init__
    _precision: np.ndarray = field(default=None, init=False, repr=False, compare=False)
    _centroids: np.ndarray = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        kind = Kind(self.kind)
        object.__setattr__(self, "kind", kind)
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim}")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        n = self.dim
        if kind is Kind.ICG:
            if not self.variances:
                if n < 2:
                    raise ValueError("ICG needs dim >= 2 for log-linear variance spacing")
                object.__setattr__(self, "variances", tuple(np.logspace(-2, 2, n)))
            if len(self.variances) != n:
                raise ValueError("ICG variances must have length dim")
            if min(self.variances) <= 0:
                raise ValueError("ICG variances must be > 0")
            object.__setattr__(self, "_precision", np.diag(1.0 / np.asarray(self.variances)))
        elif kind is Kind.SCG:
            if n != 2:
                raise ValueError(f"SCG is 2-dimensional, got dim={n}")
            if not self.variances:
                object.__setattr__(self, "variances", (1e2, 1e-2))
            if len(self.variances) != 2 or min(self.variances) <= 0:
                raise ValueError("SCG needs two positive variances")
            c, s = np.cos(self.angle), np.sin(self.angle)
            rot = np.array([[c, -s], [s, c]])
            cov = rot @ np.diag(self.variances) @ rot.T
            object.__setattr__(self, "_precision", np.linalg.inv(cov))
        elif kind is Kind.MOG:
            if not self.sigma2 > 0:
                raise ValueError(f"sigma2 must be > 0, got {self.sigma2}")
            if not self.separation > 0:
                raise ValueError(f"separation must be > 0, got {self.separation}")
            mu = np.zeros((2, n))
            mu[0, 0], mu[1, 0] = -self.separation / 2, self.separation / 2
            object.__setattr__(self, "_centroids", mu)
        elif kind is Kind.ROUGH_WELL:
            if not self.eta > 0:
                raise ValueError(f"eta must be > 0, got {self.eta}")

    # -- batch evaluation (no finiteness checks) --------------------------

    def energy(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        kind = self.kind
        if kind is Kind.STD_GAUSSIAN:
            u = 0.5 * np.sum(x * x, axis=-1)
        elif kind in (Kind.ICG, Kind.SCG):
            u = 0.5 * np.einsum("...i,ij,...j->...", x, self._precision, x)
        elif kind is Kind.MOG:
            a = self._mog_logits(x)
            amax = a.max(axis=-1)
            u = -(amax + np.log(np.exp(a - amax[..., None]).sum(axis=-1)))
        else:
            eta = self.eta
            u = 0.5 * np.sum(x * x, axis=-1) + eta * np.sum(np.cos(x / eta), axis=-1)
        return u / self.temperature

    def grad(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        kind = self.kind
        if kind is Kind.STD_GAUSSIAN:
            g = x.copy()
        elif kind in (Kind.ICG, Kind.SCG):
            g = np.einsum("...j,ij->...i", x, self._precision)
        elif kind is Kind.MOG:
            w = self._mog_weights(x)
            diff = x[..., None, :] - self._centroids
            g = np.einsum("...k,...ki->...i", w, diff) / self.sigma2
        else:
            g = x - np.sin(x / self.eta)
        return g / self.temperature

    def hvp(self, x: np.ndarray, w: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        w = np.asarray(w, dtype=float)
        kind = self.kind
        if kind is Kind.STD_GAUSSIAN:
            h = np.broadcast_to(w, np.broadcast_shapes(x.shape, w.shape)).copy()
        elif kind in (Kind.ICG, Kind.SCG):
            h = np.einsum("...j,ij->...i", w, self._precision)
        elif kind is Kind.MOG:
            # Hessian = I/s2 - Cov_resp[(x - mu_k)/s2]
            s2 = self.sigma2
            r = self._mog_weights(x)
            diff = (x[..., None, :] - self._centroids) / s2
            proj = np.einsum("...ki,...i->...k", diff, w)
            mean_diff = np.einsum("...k,...ki->...i", r, diff)
            h = (w / s2
                 - np.einsum("...k,...k,...ki->...i", r, proj, diff)
                 + mean_diff * np.sum(mean_diff * w, axis=-1, keepdims=True))
        else:
            h = (1.0 - np.cos(x / self.eta) / self.eta) * w
        return h / self.temperature

    def _mog_logits(self, x):
        diff = x[..., None, :] - self._centroids
        return -0.5 * np.sum(diff * diff, axis=-1) / self.sigma2

    def _mog_weights(self, x):
        a = self._mog_logits(x)
        a = a - a.max(axis=-1, keepdims=True)
        e = np.exp(a)
        return e / e.sum(axis=-1, keepdims=True)

    # -- target moments at T = 1 ------------------------------------------

    @property
    def centroids(self) -> np.ndarray | None:
        return None if self._centroids is None else self._centroids.copy()

    def mean(self) -> np.ndarray:
        return np.zeros(self.dim)

    def covariance(self) -> np.ndarray:
        n = self.dim
        kind = self.kind
        if kind is Kind.STD_GAUSSIAN:
            return np.eye(n)
        if kind in (Kind.ICG, Kind.SCG):
            return np.linalg.inv(self._precision)
        if kind is Kind.MOG:
            cov = self.sigma2 * np.eye(n)
            cov[0, 0] += (self.separation / 2) ** 2
            return cov
        return _rough_well_variance(self.eta) * np.eye(n)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Independent draws from the target at T = 1.

        Rough Well uses the Gaussian with the exact per-coordinate variance,
        which is only approximate; callers should burn in from it.
        """
        n = self.dim
        if self.kind is Kind.MOG:
            comp = rng.integers(0, 2, size=size)
            return self._centroids[comp] + np.sqrt(self.sigma2) * rng.standard_normal((size, n))
        chol = np.linalg.cholesky(self.covariance())
        return rng.standard_normal((size, n)) @ chol.T

    def at_temperature(self, temperature: float) -> EnergyModel:
        return dataclasses.replace(self, temperature=float(temperature))

    def to_spec(self) -> dict:
        spec = {"kind": self.kind.value, "dim": self.dim, "temperature": self.temperature}
        if self.kind is Kind.MOG:
            spec.update(sigma2=self.sigma2, separation=self.separation)
        elif self.kind is Kind.ROUGH_WELL:
            spec["eta"] = self.eta
        return spec


def _rough_well_variance(eta: float) -> float:
    # per-coordinate density exp(-x^2/2 - eta cos(x/eta)); integrate on a grid
    # fine enough to resolve the 1/eta oscillation
    n_pts = int(max(20001, 40 * 24 / (2 * np.pi * eta))) | 1
    x = np.linspace(-12.0, 12.0, n_pts)
    logp = -0.5 * x * x - eta * np.cos(x / eta)
    p = np.exp(logp - logp.max())
    return float(np.trapezoid(x * x * p, x) / np.trapezoid(p, x))


def build_energy(spec: dict) -> EnergyModel:
    """Build a model from a JSON-style dict; unknown keys are rejected."""
    unknown = set(spec) - SPEC_KEYS
    if unknown:
        raise ValueError(f"unknown energy spec keys: {sorted(unknown)}")
    if "kind" not in spec or "dim" not in spec:
        raise ValueError("energy spec needs 'kind' and 'dim'")
    kwargs = dict(spec)
    try:
        kwargs["kind"] = Kind(kwargs["kind"])
    except ValueError:
        raise ValueError(f"unknown energy kind {spec['kind']!r}") from None
    if "variances" in kwargs:
        kwargs["variances"] = tuple(float(v) for v in kwargs["variances"])
    return EnergyModel(**kwargs)


def load_energy(path: str | Path) -> EnergyModel:
    with open(path) as fh:
        return build_energy(json.load(fh))


def _check_point(model: EnergyModel, *arrays) -> list[np.ndarray]:
    out = []
    for a in arrays:
        a = np.asarray(a, dtype=float)
        if a.shape != (model.dim,):
            raise ValueError(f"expected a vector of length {model.dim}, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise DivergenceError("non-finite input")
        out.append(a)
    return out


def _check_result(r):
    if not np.all(np.isfinite(r)):
        raise DivergenceError("energy evaluation overflowed")
    return r


def eval_energy(model: EnergyModel, x) -> float:
    (x,) = _check_point(model, x)
    with np.errstate(over="ignore", invalid="ignore"):
        return float(_check_result(model.energy(x)))


def eval_grad(model: EnergyModel, x) -> np.ndarray:
    (x,) = _check_point(model, x)
    with np.errstate(over="ignore", invalid="ignore"):
        return _check_result(model.grad(x))


def eval_hvp(model: EnergyModel, x, w) -> np.ndarray:
    x, w = _check_point(model, x, w)
    with np.errstate(over="ignore", invalid="ignore"):
        return _check_result(model.hvp(x, w))


def joint_log_prob(model: EnergyModel, x, v) -> float:
    x, v = _check_point(model, x, v)
    with np.errstate(over="ignore", invalid="ignore"):
        return float(_check_result(-model.energy(x) - 0.5 * v @ v))
