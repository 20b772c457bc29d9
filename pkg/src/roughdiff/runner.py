"""Scenario orchestration: configs, gating, dyadic sweeps, reports.

A scenario is a JSON document naming a coefficient field, a test function,
an initial law, a horizon, a list of dyadic orders, a path budget, and the
sweeps to run.  Loading fills defaults and canonicalizes the result
(sorted keys, every number as a float) before hashing, so semantically
equal configs share a hash.  Integrability gates run before any path is
simulated: a scenario whose test function fails its condition against the
initial law's potential dies in seconds, not minutes.

Per-path functional values are a bitwise-deterministic function of
(scenario, path_id): workers receive contiguous path_id chunks, results
are reassembled in path_id order, and every reduction is a fixed-order
compensated sum, so the worker count can never change a byte of the
emitted CSVs.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import __version__
from . import calculus, fields, integrability, kernels, sampling, testfunctions
from .errors import (
    ConditionViolated,
    ConfigError,
    MissingReport,
    SingularHit,
    UnknownName,
)

PATH_SWEEPS = ("qv", "covariation", "forward", "trapezoid", "ito_residual",
               "prop1", "prop2", "prop3")
SWEEPS = PATH_SWEEPS + ("aronson", "potential")
GRADIENT_GATED = frozenset(
    ("qv", "covariation", "forward", "trapezoid", "prop1", "prop2"))
HESSIAN_GATED = frozenset(("ito_residual", "prop3"))

MAX_ATTEMPTS = 8
BATCH_PATHS = 256
TRAPEZOID_TOL = 1e-10
LEAKAGE_TOL = 1e-3
CSV_HEADER = "functional,n,mean,stderr,count"

_TOP_KEYS = frozenset((
    "name", "field", "function", "law", "horizon", "orders", "n_paths",
    "scheme", "scheme_params", "fine_margin", "seed", "sweeps",
    "allow_unverified", "box", "quad_h", "potential", "kernel", "out_dir"))


# ---------------------------------------------------------------- canonical

def _canon(obj):
    """Sorted keys, every number a float; the shape hashes depend on."""
    if isinstance(obj, bool):
        return obj
    if isinstance(obj, (int, float)):
        return float(obj)
    if isinstance(obj, dict):
        return {str(k): _canon(obj[k]) for k in sorted(obj)}
    if isinstance(obj, (list, tuple)):
        return [_canon(v) for v in obj]
    if obj is None or isinstance(obj, str):
        return obj
    raise ConfigError(f"value {obj!r} cannot appear in a scenario config")


def canonical_json(spec):
    return json.dumps(_canon(spec), sort_keys=True, separators=(",", ":"))


def scenario_hash(spec):
    """Stable digest of a canonicalized scenario (name and out_dir are
    presentation details and do not enter the hash)."""
    trimmed = {k: v for k, v in spec.items() if k not in ("name", "out_dir")}
    digest = hashlib.sha256(canonical_json(trimmed).encode()).hexdigest()
    return digest[:16]


# ---------------------------------------------------------------- builders

def _build_field(cfg):
    if not isinstance(cfg, dict) or "name" not in cfg:
        raise ConfigError("field: a section with a 'name' key is required")
    name = cfg["name"]
    try:
        if name == "identity":
            f = fields.make_field("identity", dim=int(cfg.get("dim", 1)))
        elif name == "constant-diagonal":
            f = fields.make_field("constant-diagonal",
                                  values=[float(v) for v in cfg["values"]])
        elif name == "checkerboard":
            f = fields.make_field("checkerboard", lo=float(cfg["lo"]),
                                  hi=float(cfg["hi"]),
                                  cell=float(cfg.get("cell", 1.0)),
                                  dim=int(cfg.get("dim", 1)))
        elif name == "smooth-sine":
            f = fields.make_field("smooth-sine", dim=int(cfg.get("dim", 1)))
        else:
            raise UnknownName(name)
    except UnknownName:
        raise ConfigError(f"field.name: no coefficient field named {name!r}")
    except KeyError as exc:
        raise ConfigError(f"field.{exc.args[0]}: required for {name!r}")
    eps = cfg.get("mollify")
    if eps is not None:
        f = fields.mollify(f, float(eps))
    return f


def _build_function(cfg):
    if not isinstance(cfg, dict) or "name" not in cfg:
        raise ConfigError("function: a section with a 'name' key is required")
    name = cfg["name"]
    params = {}
    if "c" in cfg:
        params["c"] = [float(v) for v in cfg["c"]]
    if "alpha" in cfg:
        params["alpha"] = float(cfg["alpha"])
    if "dim" in cfg:
        params["dim"] = int(cfg["dim"])
    try:
        return testfunctions.make_test_function(name, **params)
    except UnknownName:
        raise ConfigError(f"function.name: no test function named {name!r}")
    except KeyError as exc:
        raise ConfigError(f"function.{exc.args[0]}: required for {name!r}")


def _build_law(cfg):
    if not isinstance(cfg, dict) or "kind" not in cfg:
        raise ConfigError("law: a section with a 'kind' key is required")
    kind = cfg["kind"]
    try:
        if kind == "dirac":
            return sampling.dirac([float(v) for v in cfg["point"]])
        if kind == "mixture":
            comps = [sampling.dirac([float(v) for v in p])
                     for p in cfg["points"]]
            return sampling.mixture([float(w) for w in cfg["weights"]], comps)
        if kind == "grid-density":
            edges = cfg["edges"]
            if edges and not isinstance(edges[0], (list, tuple)):
                edges = [edges]
            return sampling.grid_density(
                [np.asarray(e, dtype=float) for e in edges],
                np.asarray(cfg["values"], dtype=float))
    except KeyError as exc:
        raise ConfigError(f"law.{exc.args[0]}: required for {kind!r}")
    raise ConfigError(f"law.kind: unknown initial law kind {kind!r}")


# ---------------------------------------------------------------- scenario

@dataclass
class Scenario:
    """A validated run description plus its resolved objects."""

    spec: dict
    hash: str
    field: object
    F: object
    law: object
    out_dir: str

    @property
    def horizon(self):
        return self.spec["horizon"]

    @property
    def orders(self):
        return [int(n) for n in self.spec["orders"]]

    @property
    def n_paths(self):
        return int(self.spec["n_paths"])

    @property
    def seed(self):
        return int(self.spec["seed"])

    @property
    def sweeps(self):
        return list(self.spec["sweeps"])

    @property
    def scheme(self):
        return self.spec["scheme"]

    @property
    def allow_unverified(self):
        return bool(self.spec["allow_unverified"])

    @property
    def box(self):
        return self.spec["box"]

    @property
    def quad_h(self):
        return float(self.spec["quad_h"])

    @property
    def fine_step(self):
        return sampling.fine_step_for(self.horizon, max(self.orders),
                                      margin=int(self.spec["fine_margin"]))


def load_scenario(config, out_dir=None, seed_override=None):
    """Parse, default-fill, validate, and hash a scenario config.

    ``config`` is a path to a JSON file or an equivalent dict.  Raises
    ConfigError naming the offending key on any validation failure.
    """
    if isinstance(config, (str, os.PathLike)):
        try:
            with open(config) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"config: cannot read {config}: {exc}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: {config} is not valid JSON: {exc}")
    elif isinstance(config, dict):
        raw = config
    else:
        raise ConfigError("config must be a file path or a dict")
    for key in sorted(set(raw) - _TOP_KEYS):
        raise ConfigError(f"unknown config key {key!r}")
    if "field" not in raw:
        raise ConfigError("field: section is required")

    sweeps = list(raw.get("sweeps", []))
    for s in sweeps:
        if s not in SWEEPS:
            raise ConfigError(
                f"sweeps: unknown sweep {s!r}; choose from {', '.join(SWEEPS)}")
    needs_paths = any(s in PATH_SWEEPS for s in sweeps)

    horizon = float(raw.get("horizon", 1.0))
    if horizon <= 0:
        raise ConfigError("horizon: must be > 0")
    orders = [int(n) for n in raw.get("orders", [4, 6, 8])]
    if orders != sorted(set(orders)):
        raise ConfigError("orders: must be strictly increasing")
    if orders and not (0 <= orders[0] and orders[-1] <= sampling.MAX_ORDER):
        raise ConfigError(
            f"orders: every order must lie in [0, {sampling.MAX_ORDER}]")
    if needs_paths and not orders:
        raise ConfigError("orders: at least one dyadic order is required")
    n_paths = int(raw.get("n_paths", 100))
    if n_paths < 1:
        raise ConfigError("n_paths: must be >= 1")
    margin = int(raw.get("fine_margin", 4))
    if margin < 1:
        raise ConfigError("fine_margin: must be >= 1")
    if orders and orders[-1] + margin > sampling.MAX_ORDER:
        raise ConfigError(
            f"orders: max order {orders[-1]} + fine_margin {margin} exceeds "
            f"{sampling.MAX_ORDER}")
    scheme = raw.get("scheme", "euler-maruyama")
    if scheme not in ("euler-maruyama", "lattice"):
        raise ConfigError(f"scheme: unknown scheme {scheme!r}")
    seed = int(seed_override if seed_override is not None
               else raw.get("seed", 0))
    if seed < 0:
        raise ConfigError("seed: must be nonnegative")

    field = _build_field(raw["field"])
    F = _build_function(raw["function"]) if raw.get("function") else None
    law = _build_law(raw["law"]) if raw.get("law") else None
    if needs_paths:
        if F is None:
            raise ConfigError("function: required when path sweeps are listed")
        if law is None:
            raise ConfigError("law: required when path sweeps are listed")
    if F is not None and F.dim != field.dim:
        raise ConfigError(
            f"function: dimension {F.dim} != field dimension {field.dim}")
    if law is not None and law.dim != field.dim:
        raise ConfigError(
            f"law: dimension {law.dim} != field dimension {field.dim}")
    if needs_paths and scheme == "euler-maruyama" and (
            field.smoothness == "rough"):
        raise ConfigError(
            "scheme: euler-maruyama needs a smooth field; set field.mollify "
            "or use the lattice scheme")
    if needs_paths and scheme == "lattice" and not field.is_diagonal:
        raise ConfigError("scheme: the lattice scheme needs a diagonal field")
    if F is not None and law is not None and F.grad_singular:
        for atom in law.atoms():
            for p in F.singular_points:
                if np.array_equal(atom, np.asarray(p, dtype=float)):
                    raise ConfigError(
                        "law: an atom of the initial law sits exactly on a "
                        f"point where the gradient of {F.name} is undefined")

    kernel_cfg = raw.get("kernel")
    if "aronson" in sweeps and kernel_cfg is None:
        raise ConfigError("kernel: section is required for the aronson sweep")

    potential_cfg = raw.get("potential")
    if potential_cfg is None:
        if (law is not None and law.kind == "dirac" and field.dim == 1
                and raw["field"].get("name") == "identity"):
            potential_cfg = {"route": "closed-form"}
        else:
            potential_cfg = {"route": "monte-carlo", "n_samples": 200_000,
                             "seed": seed}
    if potential_cfg.get("route") not in ("closed-form", "monte-carlo",
                                          "grid"):
        raise ConfigError(
            f"potential.route: unknown route {potential_cfg.get('route')!r}")

    spec = {
        "field": raw["field"],
        "function": raw.get("function"),
        "law": raw.get("law"),
        "horizon": horizon,
        "orders": orders,
        "n_paths": n_paths,
        "scheme": scheme,
        "scheme_params": raw.get("scheme_params", {}),
        "fine_margin": margin,
        "seed": seed,
        "sweeps": sweeps,
        "allow_unverified": bool(raw.get("allow_unverified", False)),
        "box": raw.get("box", [-10.0, 10.0] if field.dim == 1
                       else [-25.0, 25.0]),
        "quad_h": float(raw.get("quad_h", 0.01 if field.dim == 1 else 0.1)),
        "potential": potential_cfg,
        "kernel": kernel_cfg,
    }
    spec = _canon(spec)
    digest = scenario_hash(spec)
    resolved_out = out_dir or raw.get("out_dir") or os.path.join(
        "runs", digest)
    return Scenario(spec=spec, hash=digest, field=field, F=F, law=law,
                    out_dir=str(resolved_out))


# ---------------------------------------------------------------- gating

def resolve_potential(scn):
    """Build the potential U nu the scenario's checks and sweeps rely on."""
    cfg = scn.spec["potential"]
    route = cfg["route"]
    try:
        if route == "closed-form":
            return kernels.resolvent_potential("closed-form", scn.law)
        if route == "monte-carlo":
            return kernels.resolvent_potential(
                "monte-carlo", scn.law, field=scn.field,
                n_samples=int(cfg.get("n_samples", 200_000)),
                seed=int(cfg.get("seed", scn.seed)),
                step=float(cfg.get("step", 2.0 ** -9)),
                t_cap=float(cfg.get("t_cap", 16.0)))
        kcfg = cfg.get("kernel")
        if not kcfg:
            raise ConfigError(
                "potential.kernel: section required for the grid route")
        dt = float(kcfg["dt"])
        times = kernels.log_time_grid(float(kcfg.get("t_min", dt)),
                                      float(kcfg.get("t_max", 8.0)),
                                      int(kcfg.get("n_slices", 240)), dt)
        kern = kernels.solve_kernel_pde(
            scn.field, np.asarray(scn.law.point, dtype=float),
            kcfg["box"], float(kcfg["h"]), times, dt)
        return kernels.resolvent_potential(kern, scn.law)
    except (KeyError, AttributeError) as exc:
        raise ConfigError(f"potential: incomplete {route!r} config ({exc})")


def _ladder_payload(cond):
    out = {"finite": cond.finite,
           "value": None if cond.value is None else float(cond.value),
           "ladders": cond.ladder_dict()}
    if cond.entry_finite is not None:
        out["entry_finite"] = cond.entry_finite.astype(bool).ravel().tolist()
    return out


def _violated(which, detail, payload):
    exc = ConditionViolated(
        f"condition {which} diverges: {detail}; shell-increment ratios stay "
        "above the geometric threshold (evidence ladder attached)")
    exc.evidence = payload
    return exc


def gate_scenario(scn):
    """Integrability checks before simulation.

    Returns (conditions, denominators, U).  Raises ConditionViolated with
    the evidence ladder attached when a gated sweep's condition diverges;
    allow_unverified skips the gates but never the ratio denominators the
    prop sweeps intrinsically need.
    """
    sweeps = set(scn.sweeps) & set(PATH_SWEEPS)
    need1 = bool(sweeps & GRADIENT_GATED)
    need2 = bool(sweeps & HESSIAN_GATED)
    conditions = {}
    denoms = {}
    if not (need1 or need2):
        return conditions, denoms, None
    if scn.allow_unverified and not (sweeps & {"prop1", "prop2", "prop3"}):
        return {"skipped": "allow_unverified"}, denoms, None

    U = resolve_potential(scn)
    box, h = scn.box, scn.quad_h
    if need1 or "prop1" in sweeps:
        c1 = integrability.check_condition_1(scn.F, U, box, h)
        conditions["condition_1"] = _ladder_payload(c1)
        if not c1.finite:
            if "prop1" in sweeps or not scn.allow_unverified:
                raise _violated(
                    1, f"int |grad {scn.F.name}|^2 U is not integrable",
                    conditions["condition_1"])
        else:
            denoms["prop1"] = float(c1.value)
    if "prop2" in sweeps:
        for k in range(scn.field.dim):
            fk = testfunctions.component_function(scn.F, k)
            ck = integrability.check_condition_1(fk, U, box, h)
            conditions[f"condition_1_d{k}"] = _ladder_payload(ck)
            if not ck.finite:
                raise _violated(
                    1, f"int |grad {fk.name}|^2 U is not integrable",
                    conditions[f"condition_1_d{k}"])
            denoms[f"prop2_k{k}"] = float(np.sqrt(ck.value))
    if need2:
        c2 = integrability.check_condition_2(scn.F, U, box, h)
        conditions["condition_2"] = _ladder_payload(c2)
        if not c2.finite:
            if "prop3" in sweeps or not scn.allow_unverified:
                raise _violated(
                    2,
                    f"a squared second derivative of {scn.F.name} weighted "
                    "by U is not integrable", conditions["condition_2"])
        else:
            denoms["prop3"] = float(np.sqrt(c2.entry_values).sum())
    return conditions, denoms, U


# ---------------------------------------------------------------- evaluation

def _batch_ok(F, states):
    """Per-path flag: values and gradients finite, no exact singular hit."""
    B = states.shape[0]
    ok = np.isfinite(F.value(states)).all(axis=-1)
    ok &= np.isfinite(F.gradient(states).reshape(B, -1)).all(axis=-1)
    if F.grad_singular and F.singular_points:
        for p in F.singular_points:
            hit = np.any(np.all(states == np.asarray(p, dtype=float),
                                axis=-1), axis=-1)
            ok &= ~hit
    return ok


def _simulate_clean(scn, path_ids, stride):
    """Batch states at the finest dyadic grid, resampling singular hits.

    Each offending path is redrawn from its attempt-shifted stream so the
    outcome depends only on that path's own history, never on how paths
    were grouped into batches or workers.
    """
    params = scn.spec["scheme_params"]
    states = sampling.generate_batch(
        scn.scheme, scn.field, scn.law, scn.horizon, scn.fine_step, scn.seed,
        path_ids, stride=stride, scheme_params=params)
    resamples = 0
    ok = _batch_ok(scn.F, states)
    for b in np.flatnonzero(~ok):
        pid = path_ids[b]
        for attempt in range(1, MAX_ATTEMPTS + 1):
            redo = sampling.generate_batch(
                scn.scheme, scn.field, scn.law, scn.horizon, scn.fine_step,
                scn.seed, [pid], stride=stride, attempt=attempt,
                scheme_params=params)
            resamples += 1
            if _batch_ok(scn.F, redo)[0]:
                states[b] = redo[0]
                break
        else:
            raise SingularHit(
                f"path {pid} still hits singular values of {scn.F.name} "
                f"after {MAX_ATTEMPTS} resamples")
    return states, resamples


def evaluate_chunk(scn, start, stop, denoms):
    """Per-path functional values for path_ids in [start, stop).

    Returns {"values": {(sweep, functional, n): array}, "resamples": int,
    "trap_violation": float}.  Arrays are indexed by path_id - start.
    """
    sweeps = [s for s in scn.sweeps if s in PATH_SWEEPS]
    orders = scn.orders
    n_top = max(orders)
    stride = round(scn.horizon / scn.fine_step) // 2 ** n_top
    F, d = scn.F, scn.field.dim

    need_qv = {"qv", "prop1"} & set(sweeps)
    need_cov = {"covariation", "trapezoid", "ito_residual", "prop2"} & set(
        sweeps)
    need_fwd = {"forward", "trapezoid", "ito_residual"} & set(sweeps)

    keys = []
    for n in orders:
        if "qv" in sweeps:
            keys.append(("qv", "qv", n))
        if "covariation" in sweeps:
            keys.append(("covariation", "covariation", n))
        if "forward" in sweeps:
            keys.append(("forward", "forward", n))
        if "trapezoid" in sweeps:
            keys.append(("trapezoid", "trapezoid", n))
        if "ito_residual" in sweeps:
            keys.append(("ito_residual", "ito_residual_abs", n))
        if "prop1" in sweeps:
            keys.append(("prop1", "prop1_ratio", n))
        if "prop2" in sweeps:
            keys.extend(("prop2", f"prop2_ratio_k{k}", n) for k in range(d))
        if "prop3" in sweeps:
            keys.append(("prop3", "prop3_ratio", n))
    values = {key: np.empty(stop - start) for key in keys}
    resamples = 0
    trap_violation = 0.0

    for b0 in range(start, stop, BATCH_PATHS):
        b1 = min(b0 + BATCH_PATHS, stop)
        ids = list(range(b0, b1))
        states, r = _simulate_clean(scn, ids, stride)
        resamples += r
        sl = slice(b0 - start, b1 - start)
        Fv = F.value(states)
        g = F.gradient(states)
        for n in orders:
            step = 2 ** (n_top - n)
            s_n = states[:, ::step, :]
            v_n = Fv[:, ::step]
            g_n = g[:, ::step, :]
            qv = calculus.quadratic_variation(v_n) if need_qv else None
            covs = ([calculus.covariation(g_n[..., k], s_n[..., k])
                     for k in range(d)] if need_cov else None)
            fwd = calculus.forward_sum(g_n, s_n) if need_fwd else None
            if "qv" in sweeps:
                values[("qv", "qv", n)][sl] = qv
            if "prop1" in sweeps:
                values[("prop1", "prop1_ratio", n)][sl] = (
                    qv / denoms["prop1"])
            if "covariation" in sweeps:
                total = covs[0].value + 0.0
                for c in covs[1:]:
                    total = total + c.value
                values[("covariation", "covariation", n)][sl] = total
            if "forward" in sweeps:
                values[("forward", "forward", n)][sl] = fwd
            if "prop2" in sweeps:
                for k in range(d):
                    values[("prop2", f"prop2_ratio_k{k}", n)][sl] = (
                        covs[k].abs_value / denoms[f"prop2_k{k}"])
            if "trapezoid" in sweeps or "ito_residual" in sweeps:
                halfcov = 0.5 * covs[0].value
                for c in covs[1:]:
                    halfcov = halfcov + 0.5 * c.value
            if "trapezoid" in sweeps:
                trap = calculus.trapezoid_sum(g_n, s_n)
                values[("trapezoid", "trapezoid", n)][sl] = trap
                gap = np.abs(trap - fwd - halfcov)
                gap /= np.maximum(1.0, np.abs(trap))
                trap_violation = max(trap_violation, float(gap.max()))
            if "ito_residual" in sweeps:
                R = (v_n[:, -1] - v_n[:, 0]) - fwd - halfcov
                values[("ito_residual", "ito_residual_abs", n)][sl] = (
                    np.abs(R))
            if "prop3" in sweeps:
                dx = np.diff(s_n, axis=-2)
                rem = (v_n[:, 1:] - v_n[:, :-1]
                       - (g_n[:, :-1, :] * dx).sum(axis=-1))
                values[("prop3", "prop3_ratio", n)][sl] = (
                    calculus.kahan_sum(np.abs(rem)) / denoms["prop3"])
    return {"values": values, "resamples": resamples,
            "trap_violation": trap_violation}


def _chunk_entry(spec_json, start, stop, denoms):
    """Worker entry point; rebuilds the scenario from its canonical JSON."""
    scn = load_scenario(json.loads(spec_json))
    return evaluate_chunk(scn, start, stop, denoms)


# ---------------------------------------------------------------- manifest

@dataclass
class RunManifest:
    """What a run produced and whether its gated checks passed."""

    scenario_hash: str
    version: str
    out_dir: str
    spec: dict
    reports: dict = dc_field(default_factory=dict)
    artifacts: dict = dc_field(default_factory=dict)
    verdicts: dict = dc_field(default_factory=dict)
    conditions: dict = dc_field(default_factory=dict)
    incidents: dict = dc_field(default_factory=dict)
    wall_clock_s: float = 0.0
    workers: int = 1

    def all_pass(self):
        return all(v != "FAIL" for v in self.verdicts.values())

    def payload(self):
        return {
            "scenario_hash": self.scenario_hash,
            "version": self.version,
            "spec": self.spec,
            "reports": self.reports,
            "artifacts": self.artifacts,
            "verdicts": self.verdicts,
            "conditions": self.conditions,
            "incidents": self.incidents,
            "wall_clock_s": self.wall_clock_s,
            "workers": self.workers,
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.payload(), fh, sort_keys=True, indent=2)
            fh.write("\n")


def _fmt(v):
    return repr(float(v))


def write_report_csv(path, rows):
    """rows: iterables (functional, n, mean, stderr, count)."""
    with open(path, "w", newline="") as fh:
        fh.write(CSV_HEADER + "\n")
        for functional, n, mean, se, count in rows:
            fh.write(f"{functional},{int(n)},{_fmt(mean)},{_fmt(se)},"
                     f"{int(count)}\n")


def read_report_csv(path):
    if not os.path.exists(path):
        raise MissingReport(f"report file {path} is missing")
    rows = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise MissingReport(f"{path} has unexpected header {header!r}")
        for line in fh:
            functional, n, mean, se, count = line.strip().split(",")
            rows.append((functional, int(n), float(mean), float(se),
                         int(count)))
    return rows


# ---------------------------------------------------------------- sweeps

def _run_aronson(scn, incidents):
    kcfg = scn.spec["kernel"]
    for key in ("box", "h", "dt", "times", "candidates"):
        if key not in kcfg:
            raise ConfigError(f"kernel.{key}: required for the aronson sweep")
    x0 = np.asarray(kcfg.get("x0", [0.0] * scn.field.dim), dtype=float)
    kern = kernels.solve_kernel_pde(scn.field, x0, kcfg["box"],
                                    float(kcfg["h"]),
                                    [float(t) for t in kcfg["times"]],
                                    float(kcfg["dt"]))
    if kern.leakage > LEAKAGE_TOL:
        incidents["leakage_warnings"] += 1
    fit = kernels.fit_aronson_M(kern, [float(c) for c in kcfg["candidates"]])
    prefix = os.path.join(scn.out_dir, "kernel")
    kern.save(prefix)
    rows = [("aronson_fit", 0, np.nan if fit is None else fit, 0.0,
             len(kern.times))]
    verdict = "PASS" if fit is not None else "FAIL"
    return rows, verdict, {"kernel": ["kernel.csv", "kernel.json"]}


def _run_potential(scn, U, incidents):
    if U is None:
        U = resolve_potential(scn)
    cfg = scn.spec["potential"]
    pbox = cfg.get("box", [-10.0, 10.0])
    ph = float(cfg.get("h", 0.01))
    if U.axes is not None:
        mass = U.integral()
        count = int(np.prod([ax.shape[0] for ax in U.axes]))
    else:
        mass = U.integral(box=pbox, h=ph)
        count = 1
    token = U.params.get("kernel_leakage")
    if token is not None and token > LEAKAGE_TOL:
        incidents["leakage_warnings"] += 1
    rows = [("potential_mass", 0, mass, 0.0, count)]
    if kernels.lq_admissible(2.0, U.dim):
        l2 = kernels.potential_Lq_norm(U, 2.0, pbox, h=ph)
        rows.append(("potential_l2", 0, l2.total, 0.0, count))
    artifacts = {}
    if U.axes is not None:
        U.save(os.path.join(scn.out_dir, "potential_field"))
        artifacts["potential_field"] = ["potential_field.csv",
                                        "potential_field.json"]
    verdict = "PASS" if abs(mass - 1.0) <= 0.02 else "FAIL"
    return rows, verdict, artifacts


def _path_sweep_reports(scn, chunks, denoms):
    """Reduce chunk values into per-sweep CSV rows and verdicts."""
    sweeps = [s for s in scn.sweeps if s in PATH_SWEEPS]
    merged = {}
    for key in chunks[0]["values"]:
        merged[key] = np.concatenate([c["values"][key] for c in chunks])
    trap_violation = max(c["trap_violation"] for c in chunks)

    per_sweep_rows = {s: [] for s in sweeps}
    prop_rows = {}
    for (sweep, functional, n), arr in merged.items():
        mean, se = calculus.mean_stderr(arr)
        per_sweep_rows[sweep].append(
            (functional, n, mean, se, arr.shape[0]))
        if sweep in ("prop1", "prop2", "prop3"):
            prop_rows.setdefault(functional, []).append(
                calculus.ConvergenceRow(n=n, mean=mean, stderr=se,
                                        count=arr.shape[0]))
    verdicts = {}
    for s in sweeps:
        per_sweep_rows[s].sort(key=lambda r: (r[0], r[1]))
        if s == "trapezoid":
            verdicts[s] = ("PASS" if trap_violation <= TRAPEZOID_TOL
                           else "FAIL")
        elif s in ("prop1", "prop2", "prop3"):
            ok = all(
                calculus._no_growth(sorted(rows, key=lambda r: r.n))
                for functional, rows in prop_rows.items()
                if functional.startswith(s))
            verdicts[s] = "PASS" if ok else "FAIL"
        else:
            verdicts[s] = "REPORT"
    return per_sweep_rows, verdicts, trap_violation


def run_scenario(config, workers=1, out_dir=None, seed_override=None):
    """Execute a scenario end to end and write its artifacts.

    ``config`` is a JSON file path, an equivalent dict, or an already
    loaded Scenario.  Returns the RunManifest (also saved as
    manifest.json in the output directory).
    """
    t0 = time.monotonic()
    if isinstance(config, Scenario):
        scn = config
        if out_dir is not None:
            scn.out_dir = str(out_dir)
    else:
        scn = load_scenario(config, out_dir=out_dir,
                            seed_override=seed_override)
    os.makedirs(scn.out_dir, exist_ok=True)
    incidents = {"resamples": 0, "leakage_warnings": 0}
    conditions, denoms, U = gate_scenario(scn)

    reports, verdicts, artifacts = {}, {}, {}
    path_sweeps = [s for s in scn.sweeps if s in PATH_SWEEPS]
    if path_sweeps:
        spec_json = canonical_json(scn.spec)
        n = scn.n_paths
        w = max(1, min(int(workers), n))
        bounds = np.linspace(0, n, w + 1).astype(int)
        spans = [(int(a), int(b)) for a, b in zip(bounds, bounds[1:])
                 if b > a]
        if len(spans) == 1:
            chunks = [evaluate_chunk(scn, 0, n, denoms)]
        else:
            with ProcessPoolExecutor(max_workers=len(spans)) as pool:
                futs = [pool.submit(_chunk_entry, spec_json, a, b, denoms)
                        for a, b in spans]
                chunks = [f.result() for f in futs]
        incidents["resamples"] += sum(c["resamples"] for c in chunks)
        rows_by_sweep, path_verdicts, _ = _path_sweep_reports(
            scn, chunks, denoms)
        for s in path_sweeps:
            fname = f"{s}.csv"
            write_report_csv(os.path.join(scn.out_dir, fname),
                             rows_by_sweep[s])
            reports[s] = fname
        verdicts.update(path_verdicts)

    if "aronson" in scn.sweeps:
        rows, verdict, arts = _run_aronson(scn, incidents)
        write_report_csv(os.path.join(scn.out_dir, "aronson.csv"), rows)
        reports["aronson"] = "aronson.csv"
        verdicts["aronson"] = verdict
        artifacts.update(arts)
    if "potential" in scn.sweeps:
        rows, verdict, arts = _run_potential(scn, U, incidents)
        write_report_csv(os.path.join(scn.out_dir, "potential.csv"), rows)
        reports["potential"] = "potential.csv"
        verdicts["potential"] = verdict
        artifacts.update(arts)

    manifest = RunManifest(
        scenario_hash=scn.hash, version=__version__, out_dir=scn.out_dir,
        spec=scn.spec, reports=reports, artifacts=artifacts,
        verdicts=verdicts, conditions=conditions, incidents=incidents,
        wall_clock_s=round(time.monotonic() - t0, 3),
        workers=int(workers))
    manifest.save(os.path.join(scn.out_dir, "manifest.json"))
    return manifest


# ---------------------------------------------------------------- summaries

def summarize(manifest):
    """Fixed-width text table of every report a manifest points to.

    ``manifest`` is a manifest.json path or a RunManifest.  Raises
    MissingReport when a listed report file is gone.
    """
    if isinstance(manifest, RunManifest):
        data = manifest.payload()
        base = manifest.out_dir
    else:
        with open(manifest) as fh:
            data = json.load(fh)
        base = os.path.dirname(os.path.abspath(manifest))
    lines = [f"{'functional':<22}{'n':>4}  {'mean':>14}  {'stderr':>14}"
             f"  {'count':>7}  verdict"]
    for sweep in sorted(data["reports"]):
        rows = read_report_csv(os.path.join(base, data["reports"][sweep]))
        verdict = data["verdicts"].get(sweep, "REPORT")
        for functional, n, mean, se, count in rows:
            lines.append(f"{functional:<22}{n:>4}  {mean:>14.6e}  "
                         f"{se:>14.6e}  {count:>7}  {verdict}")
    return "\n".join(lines) + "\n"
