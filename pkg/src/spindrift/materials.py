"""Material parameter fields and velocity-saturating mobility models."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .mesh import Grid2D


class MaterialError(ValueError):
    """Raised when material parameters violate their admissibility bounds."""


class MobilityDomainError(ValueError):
    pass


class MobilityAdmissibilityError(ValueError):
    """A mobility curve failed one of the admissibility clauses.

    ``clause`` is one of ``"positivity"``, ``"monotonicity"``,
    ``"saturation"`` or ``"lipschitz"``.
    """

    def __init__(self, clause: str, message: str):
        super().__init__(f"{clause}: {message}")
        self.clause = clause


@dataclass(frozen=True)
class MaterialParams:
    grid: Grid2D
    D: np.ndarray
    p: np.ndarray
    C: np.ndarray
    tau: float = math.inf
    gamma: float = 0.0
    lambdaD: float = 1.0

    def __post_init__(self):
        for name in ("D", "p", "C"):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), self.grid.shape).copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        errors = material_violations(self.D, self.p, self.tau, self.gamma, self.lambdaD)
        if not np.all(np.isfinite(self.C)):
            errors.append("doping profile C must be finite")
        if errors:
            raise MaterialError("; ".join(errors))

    @property
    def eta(self) -> np.ndarray:
        return np.sqrt((1.0 - self.p) * (1.0 + self.p))

    @property
    def c0(self) -> float:
        """Lower bound on the smallest eigenvalue of the diffusion matrix."""
        return float(np.min(self.D / (1.0 + np.abs(self.p))))

    @property
    def is_uniform(self) -> bool:
        return bool(np.ptp(self.D) == 0 and np.ptp(self.p) == 0)


def material_violations(D, p, tau, gamma, lambdaD) -> list[str]:
    """Every violated admissibility constraint, as human-readable strings."""
    errors = []
    D = np.asarray(D, dtype=float)
    p = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(D)) or not np.min(D) > 0:
        errors.append("inf D > 0 required")
    if not np.all(np.isfinite(p)) or not np.max(np.abs(p)) < 1:
        errors.append("sup|p| < 1 required")
    if not tau > 0:
        errors.append("tau > 0 required")
    if not (gamma >= 0 and math.isfinite(gamma)):
        errors.append("gamma >= 0 required")
    if not (lambdaD > 0 and math.isfinite(lambdaD)):
        errors.append("lambdaD > 0 required")
    return errors


# --- mobility -------------------------------------------------------------

def _caughey_thomas(mu0: float, vsat: float) -> Callable[[np.ndarray], np.ndarray]:
    return lambda s: mu0 / (1.0 + mu0 * s / vsat)


def _constant_saturated(mu0: float, vsat: float) -> Callable[[np.ndarray], np.ndarray]:
    # flat at low field, smooth crossover to s*mu -> vsat
    return lambda s: mu0 / np.sqrt(1.0 + (mu0 * s / vsat) ** 2)


_KINDS = {
    "caughey_thomas": _caughey_thomas,
    "constant_saturated": _constant_saturated,
}


@dataclass(frozen=True)
class MobilityModel:
    """Mobility curve ``mu(s)`` with saturation velocity and Lipschitz constant.

    The shipped kinds both have ``L = mu0``; a ``"custom"`` kind takes an
    arbitrary vectorised callable and is certified only on request.
    """

    kind: str
    mu0: float
    vsat: float
    L: float | None = None
    func: Callable[[np.ndarray], np.ndarray] | None = field(default=None, compare=False, repr=False)
    check: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        if not (self.mu0 > 0 and self.vsat > 0):
            raise MobilityDomainError("mu0 and vsat must be positive")
        if self.kind == "custom":
            if self.func is None:
                raise ValueError("custom mobility needs func")
        elif self.kind in _KINDS:
            object.__setattr__(self, "func", _KINDS[self.kind](float(self.mu0), float(self.vsat)))
        else:
            raise ValueError(f"unknown mobility kind {self.kind!r}; expected one of {sorted(_KINDS)} or 'custom'")
        if self.L is None:
            object.__setattr__(self, "L", float(self.mu0))
        if self.check and self.kind != "custom":
            certify_mobility(self)

    def __call__(self, s):
        return self.func(np.asarray(s, dtype=float))


def caughey_thomas(mu0: float = 1.0, vsat: float = 1.0) -> MobilityModel:
    return MobilityModel("caughey_thomas", mu0, vsat)


def constant_saturated(mu0: float = 1.0, vsat: float = 1.0) -> MobilityModel:
    return MobilityModel("constant_saturated", mu0, vsat)


def mobility_eval(model: MobilityModel, s: float) -> float:
    if not s >= 0:
        raise MobilityDomainError(f"mobility argument must be nonnegative, got {s}")
    return float(model(s))


@dataclass(frozen=True)
class MobilityCertificate:
    sup_velocity: float
    lipschitz: float
    n_samples: int


def mobility_samples(model: MobilityModel, n: int = 10_000) -> np.ndarray:
    knee = model.vsat / model.mu0
    s = np.concatenate([
        [0.0],
        np.logspace(-8, 8, n) * knee,
        np.linspace(0.0, 20.0 * knee, n // 2 + 1),
    ])
    return np.unique(s)


def certify_mobility(model: MobilityModel, n_samples: int = 10_000) -> MobilityCertificate:
    """Check the admissibility clauses numerically on a dense sample set.

    Returns the empirical sup of ``s*mu(s)`` and the empirical Lipschitz
    constant of ``s -> s*mu(s)``; raises :class:`MobilityAdmissibilityError`
    naming the first violated clause.
    """
    s = mobility_samples(model, n_samples)
    mu = model(s)
    if not np.all(np.isfinite(mu)) or np.any(mu <= 0):
        raise MobilityAdmissibilityError("positivity", "mu must map [0, inf) into (0, inf)")
    dmu = np.diff(mu)
    if np.any(dmu > 1e-13 * np.abs(mu[:-1])):
        k = int(np.argmax(dmu))
        raise MobilityAdmissibilityError(
            "monotonicity", f"mu'(s) <= 0 violated near s={s[k]:.6g}")
    w = s * mu
    sup = float(np.max(w))
    if sup > model.vsat * (1.0 + 1e-12):
        raise MobilityAdmissibilityError(
            "saturation", f"s*mu(s) <= vsat violated: sup {sup:.17g} > {model.vsat:.17g}")
    slopes = np.abs(np.diff(w) / np.diff(s))
    lip = float(np.max(slopes))
    if lip > model.L * (1.0 + 1e-9):
        raise MobilityAdmissibilityError(
            "lipschitz", f"|s*mu(s) - t*mu(t)| <= L|s - t| violated: slope {lip:.6g} > L={model.L:.6g}")
    return MobilityCertificate(sup_velocity=sup, lipschitz=lip, n_samples=int(s.size))
