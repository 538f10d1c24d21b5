"""Fixed-step closed-loop integrator coupling dynamics, control, and comm.

One run advances all agents on a common dt grid with classical fourth-order
Runge-Kutta.  Message payloads are captured from the step-start state at the
sampling instants kT, arrivals are applied between steps, and the mailbox is
frozen for the four stages of each step, so the right-hand side stays smooth
inside every step.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import comm as comm_mod
from .comm import CommConfig, LinkSchedule, generate_schedule
from .control import ControllerBase, GainSet, NeighborView, check_gains, \
    make_controller
from .dynamics import AgentModel, LeaderTrajectory, follower_rhs
from .topology import DirectedTopology, containment_weights, partition, \
    validate_assumption1

DIVERGENCE_LIMIT = 1e9
HULL_TOL = 1e-8
HULL_MAX_ITER = 500


class ScenarioError(ValueError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, t):
        super().__init__(f"non-finite or diverging state at t={t:.6g}")
        self.t = t


@dataclass
class Scenario:
    topo: DirectedTopology
    models: list[AgentModel]                 # one per agent
    leader_trajs: list[LeaderTrajectory]     # one per leader, [] for oscillator
    variant: str
    gains: GainSet
    comm: CommConfig
    dt: float
    t_end: float
    N: int
    p0: np.ndarray                           # (n, N)
    v0: np.ndarray
    psi_mode: str = "static"
    v_d: np.ndarray | None = None
    use_velocity: bool = True
    ctrl_overrides: dict = field(default_factory=dict)
    label: str = "scenario"

    def validate(self) -> None:
        topo = self.topo
        if len(self.models) != topo.n:
            raise ScenarioError("need one model per agent")
        if self.variant != "oscillator_full" and \
                self.variant != "oscillator_output" and \
                len(self.leader_trajs) != topo.n - topo.m:
            raise ScenarioError("need one trajectory per leader")
        steps = self.comm.T / self.dt
        if abs(steps - round(steps)) > 1e-9:
            raise ScenarioError("dt must divide the sampling period T")
        if self.dt > self.comm.T / 10 + 1e-12:
            raise ScenarioError("dt must be at most T/10")
        ok, unreachable = validate_assumption1(topo)
        if not ok:
            raise ScenarioError(f"followers unreachable from leaders: "
                                f"{unreachable}")
        model = self.models[0]
        ok, problems = check_gains(self.variant, self.gains,
                                   S2=model.S2 if model.kind == "oscillator"
                                   else None)
        if not ok:
            raise ScenarioError("; ".join(problems))
        if self.p0.shape != (topo.n, self.N) or self.v0.shape != self.p0.shape:
            raise ScenarioError("p0/v0 must be (n, N)")


@dataclass
class Trace:
    times: np.ndarray                        # (K+1,)
    p: np.ndarray                            # (K+1, n, N)
    v: np.ndarray
    gamma: np.ndarray                        # (K+1, m, N)
    internals: dict[str, np.ndarray]         # name -> (K+1, m, N)
    err_pos: np.ndarray                      # (K+1, m, N) stacked position error
    err_vel: np.ndarray
    hull_dist: np.ndarray                    # (K+1, m)
    W: np.ndarray                            # containment weights
    m: int
    audit: list = field(default_factory=list)
    used_seq: np.ndarray | None = None       # (K+1, E) seq in mailbox per edge
    edges: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def err_pos_norm(self) -> np.ndarray:
        return np.linalg.norm(self.err_pos.reshape(self.err_pos.shape[0], -1),
                              axis=1)

    @property
    def err_vel_norm(self) -> np.ndarray:
        return np.linalg.norm(self.err_vel.reshape(self.err_vel.shape[0], -1),
                              axis=1)

    def index_of(self, t: float) -> int:
        idx = int(round((t - self.times[0]) / (self.times[1] - self.times[0])))
        if not (0 <= idx < len(self.times)) or \
                abs(self.times[idx] - t) > 1e-9:
            raise ValueError(f"t={t} is not on the trace grid")
        return idx


def containment_error(trace: Trace, t: float) -> tuple[np.ndarray, float]:
    """Stacked position containment error and its norm at grid time t."""
    idx = trace.index_of(t)
    vec = trace.err_pos[idx].reshape(-1)
    return vec, float(np.linalg.norm(vec))


def _stacked_error(W: np.ndarray, x: np.ndarray, m: int) -> np.ndarray:
    # x_F + (L1^{-1} L2 (x) I) x_L  ==  x_F - W x_L, rowwise over followers.
    return x[:m] - W @ x[m:]


def hull_distance(p: np.ndarray, leaders: np.ndarray) -> float:
    """Distance from p to the convex hull of the leader points."""
    p = np.asarray(p, dtype=float)
    X = np.atleast_2d(np.asarray(leaders, dtype=float))
    if X.shape[0] == 1:
        return float(np.linalg.norm(p - X[0]))
    if p.shape[0] == 2:
        return _hull_distance_2d(p, X)
    return _hull_distance_fw(p, X)


def _hull_distance_2d(p: np.ndarray, X: np.ndarray) -> float:
    hull = _convex_hull_2d(X)
    if len(hull) == 1:
        return float(np.linalg.norm(p - hull[0]))
    if len(hull) == 2:
        return _segment_distance(p, hull[0], hull[1])
    inside = all(
        _cross2(hull[(k + 1) % len(hull)] - hull[k], p - hull[k]) >= -1e-12
        for k in range(len(hull)))
    if inside:
        return 0.0
    return min(_segment_distance(p, hull[k], hull[(k + 1) % len(hull)])
               for k in range(len(hull)))


def _cross2(a, b) -> float:
    return float(a[0] * b[1] - a[1] * b[0])


def _convex_hull_2d(X: np.ndarray) -> list[np.ndarray]:
    """Monotone-chain hull, counterclockwise, degenerate cases collapsed."""
    pts = sorted({(float(x), float(y)) for x, y in X})
    if len(pts) <= 2:
        return [np.array(q) for q in pts]

    def half(points):
        out = []
        for q in points:
            while len(out) >= 2 and _cross2(
                    np.subtract(out[-1], out[-2]),
                    np.subtract(q, out[-2])) <= 1e-14:
                out.pop()
            out.append(q)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:   # collinear input
        return [np.array(pts[0]), np.array(pts[-1])]
    return [np.array(q) for q in hull]


def _segment_distance(p, a, b) -> float:
    ab = np.subtract(b, a)
    denom = float(ab @ ab)
    s = 0.0 if denom == 0 else float(np.clip((p - a) @ ab / denom, 0.0, 1.0))
    return float(np.linalg.norm(p - (a + s * ab)))


def _hull_distance_fw(p: np.ndarray, X: np.ndarray) -> float:
    """Simplex-constrained least squares via a penalized nonnegative solve.

    min_a |p - X^T a| subject to a >= 0, sum a = 1; the sum constraint is
    enforced by a large quadratic penalty row, and the returned point is
    rebuilt from the normalized coefficients so it is exactly feasible.
    """
    from scipy.optimize import nnls
    mu = 1.0 / HULL_TOL
    A = np.vstack([X.T, mu * np.ones((1, X.shape[0]))])
    b = np.concatenate([p, [mu]])
    coef, _ = nnls(A, b, maxiter=10 * HULL_MAX_ITER)
    total = coef.sum()
    if total <= 0:
        return float(np.min(np.linalg.norm(X - p, axis=1)))
    y = (coef / total) @ X
    return float(np.linalg.norm(p - y))


# ---------------------------------------------------------------------------
# Integration


def build_schedules(scen: Scenario, seed: int | None = None
                    ) -> dict[tuple[int, int], LinkSchedule]:
    cfg = scen.comm if seed is None else \
        CommConfig(T=scen.comm.T, T_star=scen.comm.T_star,
                   drop_prob=scen.comm.drop_prob,
                   delay_max=scen.comm.delay_max, seed=seed)
    return {edge: generate_schedule(edge, cfg, scen.t_end, scen.dt)
            for edge in scen.topo.edges()}


def run(scen: Scenario, seed: int | None = None,
        schedules: dict[tuple[int, int], LinkSchedule] | None = None,
        dt: float | None = None) -> Trace:
    """Integrate the closed loop; deterministic given (scenario, seed).

    A prebuilt schedule set may be injected (e.g. to rerun the same message
    pattern at a finer step); otherwise schedules are generated from the
    comm config with the given seed override.
    """
    scen.validate()
    dt = scen.dt if dt is None else dt
    topo = scen.topo
    n, m, N = topo.n, topo.m, scen.N
    W = containment_weights(partition(topo)).W
    if schedules is None:
        schedules = build_schedules(scen, seed)

    model = scen.models[0]
    ctrl = make_controller(scen.variant, scen.gains, N, model=model,
                           psi_mode=scen.psi_mode, v_d=scen.v_d,
                           use_velocity=scen.use_velocity)

    K = int(round(scen.t_end / dt))
    if abs(K * dt - scen.t_end) > 1e-9:
        raise ScenarioError("dt must divide t_end")
    steps_per_T = int(round(scen.comm.T / dt))

    p = scen.p0.copy()
    v = scen.v0.copy()
    internals = ctrl.init_internals(p[:m], v[:m], scen.ctrl_overrides)

    edges = sorted(schedules)
    edge_idx = {e: i for i, e in enumerate(edges)}
    w_lookup = {e: topo.weights[e[1], e[0]] for e in edges}
    # Pending deliveries per edge, sorted by arrival; payloads filled at send.
    pending = {}
    for e in edges:
        evs = [ev for ev in schedules[e].events if ev.delay != math.inf]
        pending[e] = sorted(evs, key=lambda ev: (ev.arrival, ev.seq))
    payloads: dict[tuple[tuple[int, int], int], tuple] = {}
    cursor = {e: 0 for e in edges}
    mailbox: dict[tuple[int, int], tuple] = {}   # edge -> (seq, p, vhat, tsend)

    times = np.arange(K + 1) * dt
    trace_p = np.empty((K + 1, n, N))
    trace_v = np.empty((K + 1, n, N))
    trace_gamma = np.empty((K + 1, m, N))
    trace_int = {name: np.empty((K + 1, m, N)) for name in internals}
    used_seq = np.full((K + 1, len(edges)), -1, dtype=int)
    audit = []

    leader_models = scen.models[m:]

    def leader_accel(t):
        acc = np.zeros((n - m, N))
        if leader_models[0].kind == "oscillator":
            return acc   # free oscillation, gamma = 0
        for li, traj in enumerate(scen.leader_trajs):
            acc[li] = traj.accel(t)
        return acc

    def transmitted_vhat(j):
        if j >= m:
            return v[j]
        return ctrl.transmitted_vhat(internals, j)

    def make_view():
        live = [(e, mailbox[e]) for e in edges if e in mailbox]
        E = len(live)
        dst = np.empty(E, dtype=int)
        wts = np.empty(E)
        pmsg = np.empty((E, N))
        vmsg = np.empty((E, N))
        tsend = np.empty(E)
        for idx, (e, (seq, pm, vm, ts)) in enumerate(live):
            dst[idx] = e[1]
            wts[idx] = w_lookup[e]
            pmsg[idx] = pm
            vmsg[idx] = vm
            tsend[idx] = ts
        return NeighborView(m, N, dst, wts, pmsg, vmsg, tsend,
                            scen.p0[:m])

    def rhs(t, p_s, v_s, int_s, view):
        out = ctrl.deriv(t, p_s[:m], v_s[:m], int_s, view)
        dp = v_s.copy()
        dv = np.empty_like(v_s)
        if model.kind == "double_integrator":
            dv[:m] = out.gamma
        elif model.kind == "nonlinear":
            dv[:m] = model.drift_fns["f"](p_s[:m], v_s[:m]) + out.gamma
        else:
            dv[:m] = p_s[:m] @ model.S1.T + v_s[:m] @ model.S2.T + out.gamma
        lk = leader_models[0].kind
        if lk == "oscillator":
            dv[m:] = p_s[m:] @ model.S1.T + v_s[m:] @ model.S2.T
        else:
            dv[m:] = leader_accel(t)
        return dp, dv, out

    for k in range(K + 1):
        t = k * dt
        # capture payloads for sends due now (step-start state)
        if k % steps_per_T == 0:
            seq = k // steps_per_T
            for e in edges:
                j = e[0]
                payloads[(e, seq)] = (p[j].copy(),
                                      np.array(transmitted_vhat(j)))
        # apply arrivals up to and including t
        for e in edges:
            lst = pending[e]
            c = cursor[e]
            while c < len(lst) and lst[c].arrival <= t + 1e-12:
                ev = lst[c]
                pm, vm = payloads[(e, ev.seq)]
                cur = mailbox.get(e)
                if cur is None or ev.seq > cur[0]:
                    mailbox[e] = (ev.seq, pm, vm, ev.send_time)
                audit.append((e[0], e[1], ev.seq, ev.send_time, ev.arrival))
                c += 1
            cursor[e] = c

        view = make_view()
        for e in edges:
            if e in mailbox:
                used_seq[k, edge_idx[e]] = mailbox[e][0]

        dp1, dv1, out1 = rhs(t, p, v, internals, view)
        trace_p[k] = p
        trace_v[k] = v
        trace_gamma[k] = out1.gamma
        for name in internals:
            trace_int[name][k] = internals[name]

        if k == K:
            break

        h = dt

        def blend(fac, dps, dvs, dints):
            pn = p + fac * dps
            vn = v + fac * dvs
            intn = {nm: internals[nm] + fac * dints[nm] for nm in internals}
            return pn, vn, intn

        d_int1 = out1.d_internals
        p2, v2, int2 = blend(h / 2, dp1, dv1, d_int1)
        dp2, dv2, out2 = rhs(t + h / 2, p2, v2, int2, view)
        p3, v3, int3 = blend(h / 2, dp2, dv2, out2.d_internals)
        dp3, dv3, out3 = rhs(t + h / 2, p3, v3, int3, view)
        p4, v4, int4 = blend(h, dp3, dv3, out3.d_internals)
        dp4, dv4, out4 = rhs(t + h, p4, v4, int4, view)

        p = p + h / 6 * (dp1 + 2 * dp2 + 2 * dp3 + dp4)
        v = v + h / 6 * (dv1 + 2 * dv2 + 2 * dv3 + dv4)
        for nm in internals:
            internals[nm] = internals[nm] + h / 6 * (
                d_int1[nm] + 2 * out2.d_internals[nm]
                + 2 * out3.d_internals[nm] + out4.d_internals[nm])

        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(v))) or \
                max(np.max(np.abs(p)), np.max(np.abs(v))) > DIVERGENCE_LIMIT:
            raise DivergenceError(t + h)

    err_pos = np.empty((K + 1, m, N))
    err_vel = np.empty((K + 1, m, N))
    hull = np.empty((K + 1, m))
    for k in range(K + 1):
        err_pos[k] = _stacked_error(W, trace_p[k], m)
        err_vel[k] = _stacked_error(W, trace_v[k], m)
        for i in range(m):
            hull[k, i] = hull_distance(trace_p[k, i], trace_p[k, m:])

    return Trace(times=times, p=trace_p, v=trace_v, gamma=trace_gamma,
                 internals=trace_int, err_pos=err_pos, err_vel=err_vel,
                 hull_dist=hull, W=W, m=m, audit=audit, used_seq=used_seq,
                 edges=edges,
                 meta={"label": scen.label, "dt": dt, "t_end": scen.t_end,
                       "seed": seed if seed is not None else scen.comm.seed,
                       "variant": scen.variant})


def export_trace_csv(trace: Trace, path: str) -> None:
    n = trace.p.shape[1]
    N = trace.p.shape[2]
    m = trace.m
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["t", "agent_id", "role"]
        header += [f"p_{d + 1}" for d in range(N)]
        header += [f"v_{d + 1}" for d in range(N)]
        header += ["err_norm", "hull_dist"]
        w.writerow(header)
        for k, t in enumerate(trace.times):
            for i in range(n):
                role = "follower" if i < m else "leader"
                row = [repr(float(t)), i + 1, role]
                row += [repr(float(x)) for x in trace.p[k, i]]
                row += [repr(float(x)) for x in trace.v[k, i]]
                if i < m:
                    row.append(repr(float(np.linalg.norm(trace.err_pos[k, i]))))
                    row.append(repr(float(trace.hull_dist[k, i])))
                else:
                    row += ["", ""]
                w.writerow(row)


def export_trace_sidecar(trace: Trace, scen: Scenario, path: str) -> None:
    doc = {
        "label": scen.label,
        "variant": scen.variant,
        "seed": trace.meta["seed"],
        "dt_seconds": trace.meta["dt"],
        "t_end_seconds": scen.t_end,
        "comm": {"T_seconds": scen.comm.T, "T_star_seconds": scen.comm.T_star,
                 "drop_prob": scen.comm.drop_prob,
                 "delay_max_seconds": scen.comm.delay_max,
                 "seed": scen.comm.seed},
        "final_err_pos_norm": float(trace.err_pos_norm[-1]),
        "final_err_vel_norm": float(trace.err_vel_norm[-1]),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def export_audit_csv(trace: Trace, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["src", "dst", "seq", "send_time", "arrival_time"])
        for rec in trace.audit:
            w.writerow([rec[0], rec[1], rec[2], repr(rec[3]), repr(rec[4])])
