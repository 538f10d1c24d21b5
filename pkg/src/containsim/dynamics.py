"""Agent physical models and leader motion profiles.

Three follower models are supported: plain double integrators, double
integrators with a locally Lipschitz drift on the acceleration channel, and
linear oscillators dv = S1 p + S2 v + u whose free motion is bounded
(spectrum of the stacked matrix S on the imaginary axis, semi-simple).
Leader inputs come from closed-form trajectory generators with uniformly
bounded, vanishing acceleration and a common limit velocity.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import expm

SPECTRUM_REAL_TOL = 1e-9

# Named drift functions so scenario files stay declarative.  Each entry maps
# (p, v) -> acceleration drift, plus the class-Kinfty bound pair
# (delta_p(|p|), delta_v(|v|)) dominating its magnitude.
DRIFT_REGISTRY: dict[str, dict] = {
    "zero": {
        "f": lambda p, v: np.zeros_like(p),
        "delta_p": lambda r: 0.0,
        "delta_v": lambda r: 0.0,
    },
    "square_velocity": {
        "f": lambda p, v: v * v,
        "delta_p": lambda r: 0.0,
        "delta_v": lambda r: r * r,
    },
}


@dataclass(frozen=True)
class AgentModel:
    kind: str                       # double_integrator | nonlinear | oscillator
    N: int = 2
    drift: str = "zero"             # nonlinear only, DRIFT_REGISTRY key
    S1: np.ndarray | None = None    # oscillator only
    S2: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("double_integrator", "nonlinear", "oscillator"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == "nonlinear" and self.drift not in DRIFT_REGISTRY:
            raise ValueError(f"unknown drift {self.drift!r}")
        if self.kind == "oscillator":
            S1 = np.asarray(self.S1, dtype=float)
            S2 = np.asarray(self.S2, dtype=float)
            if S1.shape != (self.N, self.N) or S2.shape != (self.N, self.N):
                raise ValueError("S1, S2 must be NxN")
            object.__setattr__(self, "S1", S1)
            object.__setattr__(self, "S2", S2)

    @property
    def drift_fns(self) -> dict:
        return DRIFT_REGISTRY[self.drift]


def follower_rhs(model: AgentModel, p: np.ndarray, v: np.ndarray,
                 gamma: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(dp, dv) for one agent under input gamma."""
    if gamma.shape != v.shape:
        raise ValueError("gamma dimension mismatch")
    if model.kind == "double_integrator":
        return v, gamma
    if model.kind == "nonlinear":
        return v, model.drift_fns["f"](p, v) + gamma
    return v, model.S1 @ p + model.S2 @ v + gamma


def stacked_oscillator_matrix(S1: np.ndarray, S2: np.ndarray) -> np.ndarray:
    N = S1.shape[0]
    return np.block([[np.zeros((N, N)), np.eye(N)], [S1, S2]])


def check_oscillator_spectrum(S1: np.ndarray, S2: np.ndarray) -> bool:
    """Pure imaginary and semi-simple spectrum of the stacked matrix."""
    S = stacked_oscillator_matrix(np.asarray(S1, float), np.asarray(S2, float))
    eigvals = np.linalg.eigvals(S)
    if np.any(np.abs(eigvals.real) >= SPECTRUM_REAL_TOL):
        return False
    # Geometric multiplicity of each eigenvalue must match its algebraic one.
    remaining = list(eigvals)
    while remaining:
        lam = remaining[0]
        group = [mu for mu in remaining if abs(mu - lam) < 1e-7]
        remaining = [mu for mu in remaining if abs(mu - lam) >= 1e-7]
        alg = len(group)
        geo = S.shape[0] - np.linalg.matrix_rank(
            S - lam * np.eye(S.shape[0]), tol=1e-9)
        if geo != alg:
            return False
    return True


class OscillatorFlow:
    """Cached matrix exponentials e^{S dt} on the set of dt values seen."""

    def __init__(self, S1: np.ndarray, S2: np.ndarray):
        self.S = stacked_oscillator_matrix(np.asarray(S1, float),
                                           np.asarray(S2, float))
        self._cache: dict[float, np.ndarray] = {}

    def __call__(self, dt: float) -> np.ndarray:
        key = round(float(dt), 12)
        mat = self._cache.get(key)
        if mat is None:
            mat = expm(self.S * key)
            self._cache[key] = mat
        return mat


def oscillator_flow(S: np.ndarray, dt: float) -> np.ndarray:
    """One-off matrix exponential of the stacked oscillator matrix."""
    return expm(np.asarray(S, float) * dt)


# ---------------------------------------------------------------------------
# Leader trajectory generators


@dataclass(frozen=True)
class LeaderTrajectory:
    """Closed-form leader motion; supplies acceleration, velocity, position."""

    kind: str                        # damped_oscillatory | constant_velocity | stationary
                                     # | oscillator_free
    v_d: np.ndarray = field(default_factory=lambda: np.zeros(2))
    index: int = 0                   # 1-based agent index (enters damped_oscillatory)

    def __post_init__(self):
        object.__setattr__(self, "v_d", np.asarray(self.v_d, dtype=float))
        if self.kind not in ("damped_oscillatory", "constant_velocity", "stationary",
                             "oscillator_free"):
            raise ValueError(f"unknown leader trajectory {self.kind!r}")

    def accel(self, t: float) -> np.ndarray:
        N = self.v_d.shape[0]
        if self.kind == "damped_oscillatory":
            return np.ones(N) * ((-1.0) ** self.index) * self.index * \
                _damped_osc_envelope_dot(t)
        return np.zeros(N)

    def velocity(self, t: float, v0: np.ndarray | None = None) -> np.ndarray:
        N = self.v_d.shape[0]
        if self.kind == "damped_oscillatory":
            return self.v_d + np.ones(N) * ((-1.0) ** self.index) * \
                self.index * _damped_osc_envelope(t)
        if self.kind == "constant_velocity":
            return self.v_d.copy()
        if self.kind == "stationary":
            return np.zeros(N)
        raise ValueError("oscillator_free velocity depends on the model state")

    def initial_velocity(self) -> np.ndarray:
        """v(0) consistent with velocity(t) -> v_d."""
        return self.velocity(0.0)


def _damped_osc_envelope(t: float) -> float:
    # (cos t - 0.2 sin t) e^{-0.2 t}; antiderivative is sin(t) e^{-0.2 t}.
    return (np.cos(t) - 0.2 * np.sin(t)) * np.exp(-0.2 * t)


def _damped_osc_envelope_dot(t: float) -> float:
    return (-0.96 * np.sin(t) - 0.4 * np.cos(t)) * np.exp(-0.2 * t)


def leader_accel_damped_osc(i: int, t: float, N: int = 2) -> np.ndarray:
    """Acceleration of leader i (1-based agent index) in the first example."""
    return np.ones(N) * ((-1.0) ** i) * i * _damped_osc_envelope_dot(t)


def leader_velocity_damped_osc(i: int, t: float,
                             v_d: np.ndarray) -> np.ndarray:
    v_d = np.asarray(v_d, float)
    return v_d + np.ones(v_d.shape[0]) * ((-1.0) ** i) * i * \
        _damped_osc_envelope(t)


def leader_position_damped_osc(i: int, t: float, p0: np.ndarray,
                             v_d: np.ndarray) -> np.ndarray:
    p0 = np.asarray(p0, float)
    v_d = np.asarray(v_d, float)
    drift = np.ones(p0.shape[0]) * ((-1.0) ** i) * i * \
        np.sin(t) * np.exp(-0.2 * t)
    return p0 + v_d * t + drift
