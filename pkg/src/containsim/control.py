"""Follower control laws and their auxiliary dynamic systems.

Every variant is a stateless evaluator: given the physical state, the
controller internals, and a frozen view of the delivered neighbor messages,
it returns the control input and the time derivatives of its internals.
Internals are stored as (m, N) arrays, one row per follower, so a whole
follower group is evaluated with a handful of numpy operations.

Neighbor information enters through weighted averages over the in-edges that
have delivered at least one message; the averages are renormalized by the
delivered weight sum.  Before anything is delivered on any in-edge the
position reference falls back to the follower's initial position and the
velocity-estimate average falls back to its own estimate.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import AgentModel, OscillatorFlow

BOUNDARY_LAYER_DEFAULT = 1e-4

VARIANTS = ("full_state", "output_feedback", "known_vd", "nonlinear_vs",
            "oscillator_full", "oscillator_output")


class GainError(ValueError):
    pass


def _as_follower_array(value, m: int) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(m, float(arr))
    if arr.shape != (m,):
        raise GainError(f"gain must be scalar or length-{m}, got {arr.shape}")
    return arr


@dataclass(frozen=True)
class GainSet:
    """Per-follower scalar gains; scalars broadcast to all m followers."""

    m: int
    k_p: np.ndarray = 1.0
    k_d: np.ndarray = 2.0
    L_p: np.ndarray = 1.0
    L_d: np.ndarray = 1.0
    k_psi: np.ndarray = 1.0
    k_phi: np.ndarray = 1.0
    k_r: np.ndarray = 1.0
    lam: np.ndarray | None = None
    boundary_layer_eps: float = BOUNDARY_LAYER_DEFAULT

    def __post_init__(self):
        for name in ("k_p", "k_d", "L_p", "L_d", "k_psi", "k_phi", "k_r"):
            object.__setattr__(self, name,
                               _as_follower_array(getattr(self, name), self.m))
        if self.lam is not None:
            object.__setattr__(self, "lam",
                               _as_follower_array(self.lam, self.m))

    def lam_derived(self) -> np.ndarray:
        """Larger real root of x^2 + k_d x + k_p = 0 (faster position pole)."""
        disc = self.k_d ** 2 - 4.0 * self.k_p
        if np.any(disc < 0):
            raise GainError("k_d^2 >= 4 k_p required to derive lambda")
        return 0.5 * (self.k_d + np.sqrt(disc))

    def lam_effective(self) -> np.ndarray:
        return self.lam if self.lam is not None else self.lam_derived()


def check_gains(variant: str, gains: GainSet,
                S2: np.ndarray | None = None) -> tuple[bool, list[str]]:
    """Validate positivity plus the variant-specific structural conditions."""
    problems = []
    for name in ("k_p", "k_d", "L_p", "L_d", "k_psi", "k_phi", "k_r"):
        if np.any(getattr(gains, name) <= 0):
            problems.append(f"{name} must be strictly positive")
    if gains.boundary_layer_eps <= 0:
        problems.append("boundary_layer_eps must be strictly positive")
    if variant in ("full_state", "output_feedback", "known_vd",
                   "oscillator_full", "oscillator_output"):
        disc = gains.k_d ** 2 - 4.0 * gains.k_p
        if np.any(disc < 0):
            bad = np.nonzero(disc < 0)[0].tolist()
            problems.append(
                f"real-roots condition k_d^2 >= 4 k_p fails for followers {bad}")
    if variant == "nonlinear_vs":
        if gains.lam is not None and np.any(gains.lam <= 0):
            problems.append("lam must be strictly positive")
    if variant == "oscillator_output":
        if S2 is None:
            problems.append("oscillator_output requires S2")
        else:
            for i in range(gains.m):
                eigs = np.linalg.eigvals(-gains.k_phi[i] * np.eye(S2.shape[0])
                                         + S2)
                if np.any(eigs.real >= 0):
                    problems.append(
                        f"-k_phi I + S2 unstable for follower {i}")
                    break
    return (not problems), problems


def vartheta(p_msg: np.ndarray, vhat_msg: np.ndarray, send_time: float,
             t: float) -> np.ndarray:
    """Position extrapolated from the last received sample."""
    return p_msg + vhat_msg * (t - send_time)


class NeighborView:
    """Frozen per-step aggregation of delivered messages.

    Arrays are indexed by delivered in-edge; dst maps each edge to its
    follower row.  kappa_delivered is the per-follower sum of delivered edge
    weights (0 during warm-up).
    """

    def __init__(self, m: int, N: int, dst: np.ndarray, w: np.ndarray,
                 p_msg: np.ndarray, vhat_msg: np.ndarray,
                 send_time: np.ndarray, p_fallback: np.ndarray):
        self.m = m
        self.N = N
        self.dst = dst
        self.w = w
        self.p_msg = p_msg
        self.vhat_msg = vhat_msg
        self.send_time = send_time
        self.p_fallback = p_fallback
        self.kappa_delivered = np.zeros(m)
        np.add.at(self.kappa_delivered, dst, w)
        self.live = self.kappa_delivered > 0

    def _average(self, contrib: np.ndarray, fallback: np.ndarray) -> np.ndarray:
        num = np.zeros((self.m, self.N))
        np.add.at(num, self.dst, self.w[:, None] * contrib)
        out = fallback.copy()
        out[self.live] = num[self.live] / self.kappa_delivered[self.live, None]
        return out

    def vartheta_avg(self, t: float) -> np.ndarray:
        theta = self.p_msg + self.vhat_msg * (t - self.send_time)[:, None]
        return self._average(theta, self.p_fallback)

    def vhat_avg(self, vhat_own: np.ndarray) -> np.ndarray:
        return self._average(self.vhat_msg, vhat_own)

    def oscillator_psi(self, t: float, flow: OscillatorFlow,
                       vhat_own: np.ndarray) -> np.ndarray:
        """Weighted average of e^{S (t - t_send)} [p_msg; vhat_msg], (m, 2N)."""
        num = np.zeros((self.m, 2 * self.N))
        for e in range(self.dst.shape[0]):
            x = np.concatenate([self.p_msg[e], self.vhat_msg[e]])
            num[self.dst[e]] += self.w[e] * (flow(t - self.send_time[e]) @ x)
        out = np.concatenate([self.p_fallback, vhat_own], axis=1)
        out[self.live] = num[self.live] / self.kappa_delivered[self.live, None]
        return out


@dataclass
class ControllerOutput:
    gamma: np.ndarray                       # (m, N)
    d_internals: dict[str, np.ndarray]
    aux: dict[str, np.ndarray] = field(default_factory=dict)


class ControllerBase:
    variant: str = ""
    internal_names: tuple[str, ...] = ()

    def __init__(self, gains: GainSet, N: int):
        self.gains = gains
        self.N = N

    def init_internals(self, p0: np.ndarray, v0: np.ndarray,
                       overrides: dict | None = None) -> dict[str, np.ndarray]:
        out = self._default_internals(p0, v0)
        for name, value in (overrides or {}).items():
            if name not in out:
                raise ValueError(f"{self.variant} has no internal {name!r}")
            out[name] = np.array(value, dtype=float).reshape(out[name].shape)
        return out

    def _default_internals(self, p0, v0) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def transmitted_vhat(self, internals: dict, i: int) -> np.ndarray:
        """The velocity estimate follower i puts on the wire."""
        return internals["vhat"][i]

    def deriv(self, t, p, v, internals, neigh) -> ControllerOutput:
        raise NotImplementedError


class FullStateController(ControllerBase):
    """Input -k_d (v - vhat) - k_p (p - psi) with a distributed observer.

    psi_mode "static" evaluates the reference position directly from the
    extrapolated neighbor average; "dynamic" routes it through a first-order
    filter so the input stays continuous across message arrivals.
    """

    variant = "full_state"

    def __init__(self, gains, N, psi_mode="static"):
        super().__init__(gains, N)
        if psi_mode not in ("static", "dynamic"):
            raise ValueError(f"bad psi_mode {psi_mode!r}")
        self.psi_mode = psi_mode
        self.internal_names = ("vhat", "psi") if psi_mode == "dynamic" \
            else ("vhat",)

    def _default_internals(self, p0, v0):
        out = {"vhat": np.zeros_like(v0)}
        if self.psi_mode == "dynamic":
            out["psi"] = p0.copy()
        return out

    def deriv(self, t, p, v, internals, neigh) -> ControllerOutput:
        g = self.gains
        vhat = internals["vhat"]
        dvhat = -g.L_p[:, None] * (vhat - neigh.vhat_avg(vhat))
        theta = neigh.vartheta_avg(t)
        d_int = {"vhat": dvhat}
        if self.psi_mode == "dynamic":
            psi = internals["psi"]
            d_int["psi"] = -g.k_psi[:, None] * (psi - theta) + vhat
        else:
            psi = theta
        gamma = -g.k_d[:, None] * (v - vhat) - g.k_p[:, None] * (p - psi)
        return ControllerOutput(gamma=gamma, d_internals=d_int,
                                aux={"psi": psi})


class OutputFeedbackController(ControllerBase):
    """Velocity-free law: phi + p replaces v in the damping term."""

    variant = "output_feedback"
    internal_names = ("vhat", "psi", "phi")

    def __init__(self, gains, N, psi_mode="dynamic"):
        super().__init__(gains, N)
        if psi_mode not in ("static", "dynamic"):
            raise ValueError(f"bad psi_mode {psi_mode!r}")
        self.psi_mode = psi_mode
        if psi_mode == "static":
            self.internal_names = ("vhat", "phi")

    def _default_internals(self, p0, v0):
        out = {"vhat": np.zeros_like(v0), "phi": np.zeros_like(p0)}
        if self.psi_mode == "dynamic":
            out["psi"] = p0.copy()
        return out

    def deriv(self, t, p, v, internals, neigh) -> ControllerOutput:
        g = self.gains
        vhat = internals["vhat"]
        phi = internals["phi"]
        dvhat = -g.L_p[:, None] * (vhat - neigh.vhat_avg(vhat))
        theta = neigh.vartheta_avg(t)
        d_int = {"vhat": dvhat}
        if self.psi_mode == "dynamic":
            psi = internals["psi"]
            d_int["psi"] = -g.k_psi[:, None] * (psi - theta) + vhat
        else:
            psi = theta
        gamma = -g.k_d[:, None] * (phi + p - vhat) - g.k_p[:, None] * (p - psi)
        d_int["phi"] = -(phi + p) + gamma
        return ControllerOutput(gamma=gamma, d_internals=d_int,
                                aux={"psi": psi})


class KnownVdController(ControllerBase):
    """Observer-free variant: the leaders' limit velocity v_d is broadcast."""

    variant = "known_vd"

    def __init__(self, gains, N, v_d, psi_mode="static", use_velocity=True):
        super().__init__(gains, N)
        if psi_mode not in ("static", "dynamic"):
            raise ValueError(f"bad psi_mode {psi_mode!r}")
        self.psi_mode = psi_mode
        self.use_velocity = use_velocity
        self.v_d = np.asarray(v_d, dtype=float)
        names = []
        if psi_mode == "dynamic":
            names.append("psi")
        if not use_velocity:
            names.append("phi")
        self.internal_names = tuple(names)

    def _default_internals(self, p0, v0):
        out = {}
        if self.psi_mode == "dynamic":
            out["psi"] = p0.copy()
        if not self.use_velocity:
            out["phi"] = np.zeros_like(p0)
        return out

    def transmitted_vhat(self, internals, i):
        return self.v_d

    def deriv(self, t, p, v, internals, neigh) -> ControllerOutput:
        g = self.gains
        vhat = np.broadcast_to(self.v_d, p.shape)
        theta = neigh.vartheta_avg(t)
        d_int = {}
        if self.psi_mode == "dynamic":
            psi = internals["psi"]
            d_int["psi"] = -g.k_psi[:, None] * (psi - theta) + vhat
        else:
            psi = theta
        if self.use_velocity:
            gamma = -g.k_d[:, None] * (v - vhat) - g.k_p[:, None] * (p - psi)
        else:
            phi = internals["phi"]
            gamma = -g.k_d[:, None] * (phi + p - vhat) \
                - g.k_p[:, None] * (p - psi)
            d_int["phi"] = -(phi + p) + gamma
        return ControllerOutput(gamma=gamma, d_internals=d_int,
                                aux={"psi": psi})


class NonlinearVSController(ControllerBase):
    """Reference-velocity tracking with a smoothed variable-structure term.

    The discontinuous unit-vector term is replaced inside a boundary layer of
    width eps by a linear ramp, which keeps the fixed-step integration free of
    chattering at the cost of an O(eps) steady perturbation.
    """

    variant = "nonlinear_vs"
    internal_names = ("vhat", "sigma1", "eta1", "eta2")

    def __init__(self, gains, N, model: AgentModel):
        super().__init__(gains, N)
        if model.kind != "nonlinear":
            raise ValueError("nonlinear_vs requires the nonlinear model")
        self.model = model

    def _default_internals(self, p0, v0):
        return {"vhat": np.zeros_like(v0), "sigma1": np.zeros_like(v0),
                "eta1": p0.copy(), "eta2": p0.copy()}

    def deriv(self, t, p, v, internals, neigh) -> ControllerOutput:
        g = self.gains
        lam = g.lam_effective()[:, None]
        vhat = internals["vhat"]
        sigma1 = internals["sigma1"]
        eta1 = internals["eta1"]
        eta2 = internals["eta2"]
        theta = neigh.vartheta_avg(t)
        dvhat = -g.L_p[:, None] * (vhat - sigma1)
        dsigma1 = -g.L_d[:, None] * (sigma1 - neigh.vhat_avg(vhat))
        deta1 = -g.k_p[:, None] * (eta1 - eta2) + vhat
        deta2 = -g.k_d[:, None] * (eta2 - theta) + vhat
        v_r = -lam * (p - eta1) + vhat
        dv_r = -lam * (v - deta1) + dvhat
        e = v - v_r
        gamma_bar = self.switching_term(e, p, v)
        gamma = -g.k_r[:, None] * e + dv_r - gamma_bar
        return ControllerOutput(
            gamma=gamma,
            d_internals={"vhat": dvhat, "sigma1": dsigma1,
                         "eta1": deta1, "eta2": deta2},
            aux={"v_r": v_r, "dv_r": dv_r, "e": e})

    def drift_bound(self, p: np.ndarray, v: np.ndarray) -> np.ndarray:
        fns = self.model.drift_fns
        pn = np.linalg.norm(p, axis=-1)
        vn = np.linalg.norm(v, axis=-1)
        return np.vectorize(fns["delta_p"])(pn) + \
            np.vectorize(fns["delta_v"])(vn)

    def switching_term(self, e: np.ndarray, p: np.ndarray,
                       v: np.ndarray) -> np.ndarray:
        eps = self.gains.boundary_layer_eps
        bound = self.drift_bound(p, v)
        en = np.linalg.norm(e, axis=-1)
        scale = np.where(en > eps, bound / np.maximum(en, 1e-300), bound / eps)
        return scale[..., None] * e


class OscillatorFullController(ControllerBase):
    """Oscillator law: references propagated through the free flow e^{S dt}."""

    variant = "oscillator_full"
    internal_names = ("vhat", "sigma")

    def __init__(self, gains, N, model: AgentModel):
        super().__init__(gains, N)
        if model.kind != "oscillator":
            raise ValueError("oscillator variants require the oscillator model")
        self.S1 = model.S1
        self.S2 = model.S2
        self.flow = OscillatorFlow(model.S1, model.S2)

    def _default_internals(self, p0, v0):
        return {"vhat": np.zeros_like(v0), "sigma": np.zeros_like(v0)}

    def deriv(self, t, p, v, internals, neigh) -> ControllerOutput:
        g = self.gains
        vhat = internals["vhat"]
        sigma = internals["sigma"]
        psi = neigh.oscillator_psi(t, self.flow, vhat)
        psi1, psi2 = psi[:, : self.N], psi[:, self.N:]
        dv = v - vhat
        gamma = -(g.k_d[:, None] * dv + dv @ self.S2.T) \
            - g.k_p[:, None] * (p - psi1) + 2.0 * sigma
        dsigma = dv @ self.S1.T + sigma @ self.S2.T \
            - g.k_d[:, None] * sigma - g.k_p[:, None] * (vhat - psi2)
        dvhat = p @ self.S1.T + vhat @ self.S2.T + sigma
        return ControllerOutput(gamma=gamma,
                                d_internals={"vhat": dvhat, "sigma": dsigma},
                                aux={"psi1": psi1, "psi2": psi2})


class OscillatorOutputController(ControllerBase):
    """Velocity-free oscillator law; k_phi (phi + p) stands in for v."""

    variant = "oscillator_output"
    internal_names = ("vhat", "sigma", "phi")

    def __init__(self, gains, N, model: AgentModel):
        super().__init__(gains, N)
        if model.kind != "oscillator":
            raise ValueError("oscillator variants require the oscillator model")
        self.S1 = model.S1
        self.S2 = model.S2
        self.flow = OscillatorFlow(model.S1, model.S2)
        ok, problems = check_gains(self.variant, gains, S2=model.S2)
        if not ok:
            raise GainError("; ".join(problems))

    def _default_internals(self, p0, v0):
        return {"vhat": np.zeros_like(v0), "sigma": np.zeros_like(v0),
                "phi": np.zeros_like(p0)}

    def deriv(self, t, p, v, internals, neigh) -> ControllerOutput:
        g = self.gains
        vhat = internals["vhat"]
        sigma = internals["sigma"]
        phi = internals["phi"]
        psi = neigh.oscillator_psi(t, self.flow, vhat)
        psi1, psi2 = psi[:, : self.N], psi[:, self.N:]
        w = g.k_phi[:, None] * (phi + p) - vhat
        gamma = -(g.k_d[:, None] * w + w @ self.S2.T) \
            - g.k_p[:, None] * (p - psi1) + 2.0 * sigma
        dsigma = -g.k_d[:, None] * sigma + sigma @ self.S2.T \
            + w @ self.S1.T - g.k_p[:, None] * (vhat - psi2)
        dvhat = p @ self.S1.T + vhat @ self.S2.T + sigma
        dphi = -(g.k_phi[:, None] * (p + phi) - (p + phi) @ self.S2.T) \
            + (gamma + p @ self.S1.T) / g.k_phi[:, None]
        return ControllerOutput(
            gamma=gamma,
            d_internals={"vhat": dvhat, "sigma": dsigma, "phi": dphi},
            aux={"psi1": psi1, "psi2": psi2})


def make_controller(variant: str, gains: GainSet, N: int,
                    model: AgentModel | None = None,
                    psi_mode: str = "static",
                    v_d=None, use_velocity: bool = True) -> ControllerBase:
    if variant == "full_state":
        return FullStateController(gains, N, psi_mode=psi_mode)
    if variant == "output_feedback":
        return OutputFeedbackController(gains, N, psi_mode=psi_mode)
    if variant == "known_vd":
        if v_d is None:
            raise ValueError("known_vd requires v_d")
        return KnownVdController(gains, N, v_d, psi_mode=psi_mode,
                                 use_velocity=use_velocity)
    if variant == "nonlinear_vs":
        return NonlinearVSController(gains, N, model)
    if variant == "oscillator_full":
        return OscillatorFullController(gains, N, model)
    if variant == "oscillator_output":
        return OscillatorOutputController(gains, N, model)
    raise ValueError(f"unknown controller variant {variant!r}")
