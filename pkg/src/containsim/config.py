"""Strict JSON scenario configuration.

A configuration file fully determines a run: topology, agent model, leader
motion, controller variant and gains, communication statistics, and the
integration window.  Unknown keys anywhere in the document are rejected so a
typo cannot silently fall back to a default.  Time-valued keys carry a
_seconds suffix.
"""
from __future__ import annotations

import importlib.resources
import json

import numpy as np

from .analysis import CascadeConfig, Perturbation
from .comm import CommConfig
from .control import GainSet
from .dynamics import AgentModel, LeaderTrajectory
from .sim import Scenario
from .topology import DirectedTopology


class ConfigError(ValueError):
    pass


def _check_keys(doc: dict, where: str, required: set, optional: set = frozenset()):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    keys = set(doc)
    missing = required - keys
    if missing:
        raise ConfigError(f"{where}: missing keys {sorted(missing)}")
    unknown = keys - required - optional
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


def load_bundled(name: str) -> dict:
    """Load and validate one of the scenario documents shipped with the
    package (for example ``"benchmark_fullstate"``)."""
    resource = importlib.resources.files("containsim").joinpath(
        f"scenarios/{name}.json")
    try:
        text = resource.read_text()
    except FileNotFoundError as exc:
        raise ConfigError(f"no bundled scenario named {name!r}") from exc
    doc = json.loads(text)
    validate_config(doc)
    return doc


def load_config(path: str) -> dict:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    validate_config(doc)
    return doc


def validate_config(doc: dict) -> None:
    _check_keys(doc, "top level",
                {"topology", "agents", "controllers", "comm", "sim"},
                {"outputs", "cascade", "label"})
    _check_keys(doc["topology"], "topology", {"n", "m", "edges"})
    _check_keys(doc["agents"], "agents", {"N", "model", "initial"},
                {"leaders"})
    _check_keys(doc["agents"]["model"], "agents.model", {"kind"},
                {"drift", "S1", "S2"})
    _check_keys(doc["agents"]["initial"], "agents.initial", {"p", "v"})
    _check_keys(doc["controllers"], "controllers", {"variant", "gains"},
                {"psi_mode", "v_d", "use_velocity"})
    _check_keys(doc["controllers"]["gains"], "controllers.gains", set(),
                {"k_p", "k_d", "L_p", "L_d", "k_psi", "k_phi", "k_r",
                 "lam", "boundary_layer_eps"})
    _check_keys(doc["comm"], "comm",
                {"T_seconds", "T_star_seconds"},
                {"drop_prob", "delay_max_seconds", "seed"})
    _check_keys(doc["sim"], "sim", {"dt_seconds", "t_end_seconds"})
    if "outputs" in doc:
        _check_keys(doc["outputs"], "outputs", set(),
                    {"trace_csv", "audit_csv", "schedule_csv", "sidecar_json",
                     "svg"})
    if "agents" in doc and "leaders" in doc["agents"]:
        _check_keys(doc["agents"]["leaders"], "agents.leaders", {"kind"},
                    {"v_d"})
    if "cascade" in doc:
        _check_keys(doc["cascade"], "cascade",
                    {"alpha", "sigma", "k_eta", "h", "leader_drive"},
                    {"phi1", "phi2", "initial"})
        for idx, pert in enumerate(doc["cascade"]["leader_drive"]):
            _check_pert(pert, f"cascade.leader_drive[{idx}]")
        if "phi1" in doc["cascade"]:
            _check_pert(doc["cascade"]["phi1"], "cascade.phi1")
        for idx, pert in enumerate(doc["cascade"].get("phi2", [])):
            _check_pert(pert, f"cascade.phi2[{idx}]")
        if "initial" in doc["cascade"]:
            _check_keys(doc["cascade"]["initial"], "cascade.initial", set(),
                        {"eta", "zeta"})


def _check_pert(doc: dict, where: str) -> None:
    _check_keys(doc, where, {"kind"},
                {"amplitude", "omega", "phase", "rate"})


def build_topology(doc: dict) -> DirectedTopology:
    top = doc["topology"]
    n, m = int(top["n"]), int(top["m"])
    weights = np.zeros((n, n))
    for entry in top["edges"]:
        if len(entry) not in (2, 3):
            raise ConfigError(f"topology.edges entry {entry!r} must be "
                              "[src, dst] or [src, dst, weight]")
        src, dst = int(entry[0]), int(entry[1])
        w = float(entry[2]) if len(entry) == 3 else 1.0
        if not (1 <= src <= n and 1 <= dst <= n):
            raise ConfigError(f"edge {entry!r}: agent ids are 1..{n}")
        weights[dst - 1, src - 1] = w
    return DirectedTopology(n=n, m=m, weights=weights)


def build_perturbation(doc: dict) -> Perturbation:
    return Perturbation(kind=doc["kind"],
                        amplitude=doc.get("amplitude", 0.0),
                        omega=float(doc.get("omega", 1.0)),
                        phase=float(doc.get("phase", 0.0)),
                        rate=float(doc.get("rate", 1.0)))


def build_scenario(doc: dict) -> Scenario:
    validate_config(doc)
    topo = build_topology(doc)
    ag = doc["agents"]
    N = int(ag["N"])
    mdoc = ag["model"]
    model = AgentModel(kind=mdoc["kind"], N=N,
                       drift=mdoc.get("drift", "zero"),
                       S1=np.asarray(mdoc["S1"], float)
                       if "S1" in mdoc else None,
                       S2=np.asarray(mdoc["S2"], float)
                       if "S2" in mdoc else None)
    models = [model] * topo.n

    ldoc = ag.get("leaders", {"kind": "oscillator_free"})
    v_d = np.asarray(ldoc.get("v_d", [0.0] * N), float)
    leader_trajs = []
    if model.kind != "oscillator":
        leader_trajs = [LeaderTrajectory(kind=ldoc["kind"], v_d=v_d,
                                         index=topo.m + 1 + li)
                        for li in range(topo.n - topo.m)]

    p0 = np.asarray(ag["initial"]["p"], float)
    if p0.shape != (topo.n, N):
        raise ConfigError(f"agents.initial.p must be {topo.n} x {N}")
    vspec = ag["initial"]["v"]
    if vspec == "auto":
        v0 = np.zeros((topo.n, N))
        for li, traj in enumerate(leader_trajs):
            v0[topo.m + li] = traj.initial_velocity()
    else:
        v0 = np.asarray(vspec, float)
        if v0.shape != (topo.n, N):
            raise ConfigError(f"agents.initial.v must be {topo.n} x {N}")

    ctl = doc["controllers"]
    gains = GainSet(m=topo.m, **{k: v for k, v in ctl["gains"].items()})
    cdoc = doc["comm"]
    comm = CommConfig(T=float(cdoc["T_seconds"]),
                      T_star=float(cdoc["T_star_seconds"]),
                      drop_prob=float(cdoc.get("drop_prob", 0.0)),
                      delay_max=float(cdoc.get("delay_max_seconds", 0.0)),
                      seed=int(cdoc.get("seed", 0)))
    sdoc = doc["sim"]
    return Scenario(topo=topo, models=models, leader_trajs=leader_trajs,
                    variant=ctl["variant"], gains=gains, comm=comm,
                    dt=float(sdoc["dt_seconds"]),
                    t_end=float(sdoc["t_end_seconds"]), N=N, p0=p0, v0=v0,
                    psi_mode=ctl.get("psi_mode", "static"),
                    v_d=np.asarray(ctl["v_d"], float)
                    if "v_d" in ctl else None,
                    use_velocity=bool(ctl.get("use_velocity", True)),
                    label=doc.get("label", "scenario"))


def build_cascade(doc: dict) -> CascadeConfig:
    validate_config(doc)
    if "cascade" not in doc:
        raise ConfigError("document has no cascade section")
    topo = build_topology(doc)
    N = int(doc["agents"]["N"])
    cas = doc["cascade"]
    sigma = int(cas["sigma"])
    init = cas.get("initial", {})
    eta_spec = init.get("eta", "from_p")
    if eta_spec == "from_p":
        eta0 = np.asarray(doc["agents"]["initial"]["p"], float)
    else:
        eta0 = np.asarray(eta_spec, float)
    zeta_spec = init.get("zeta", "zero")
    if zeta_spec == "zero":
        zeta0 = np.zeros((topo.m, sigma, N))
    else:
        zeta0 = np.asarray(zeta_spec, float)
    cdoc = doc["comm"]
    comm = CommConfig(T=float(cdoc["T_seconds"]),
                      T_star=float(cdoc["T_star_seconds"]),
                      drop_prob=float(cdoc.get("drop_prob", 0.0)),
                      delay_max=float(cdoc.get("delay_max_seconds", 0.0)),
                      seed=int(cdoc.get("seed", 0)))
    sdoc = doc["sim"]
    phi2 = [build_perturbation(p) for p in cas.get("phi2", [])]
    return CascadeConfig(
        topo=topo, N=N, alpha=float(cas["alpha"]), sigma=sigma,
        k_eta=float(cas["k_eta"]), h=tuple(float(r) for r in cas["h"]),
        comm=comm, dt=float(sdoc["dt_seconds"]),
        t_end=float(sdoc["t_end_seconds"]), eta0=eta0, zeta0=zeta0,
        leader_drive=[build_perturbation(p) for p in cas["leader_drive"]],
        phi1=build_perturbation(cas["phi1"]) if "phi1" in cas
        else Perturbation(), phi2=phi2)
