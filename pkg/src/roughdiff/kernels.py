"""Transition kernels, Gaussian envelopes, and resolvent potentials.

The PDE route discretizes div(a grad) with a conservative finite-volume
scheme on a vertex-centered uniform grid: conductances sit at edge
midpoints, boundary faces carry zero flux, and Crank-Nicolson does the
time stepping with the implicit matrix factored once.  Mass is then
conserved exactly (in the trapezoid sense) up to solver roundoff, which
is what the leakage field records.

Envelope conventions, for a kernel started at x:

    upper(t, y) = (M / t^(d/2)) exp(-|y-x|^2 / (M t))
    lower(t, y) = (1 / (M t^(d/2))) exp(-M |y-x|^2 / t)

Both get wider/looser as M grows, so the smallest sandwiching M is a
rough-coefficient summary of the field.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu
from scipy.special import k0

from .errors import (
    EmptyCandidates,
    GridTooCoarse,
    InadmissibleExponent,
    InsufficientSamples,
    NonDiagonalField,
    NonPositiveTime,
    TailNotCovered,
    UnstableStep,
)
from . import sampling as _sampling
from .fields import sqrt_matrix

KDE_BANDWIDTH = {1: 0.05, 2: 0.1}
TAIL_T_MIN = 8.0
MIN_KDE_SAMPLES = 100_000


def _sqdist(x, y):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return ((y - x) ** 2).sum(axis=-1)


def _check_time(t):
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0.0):
        raise NonPositiveTime(f"time must be > 0, got {t}")
    return t


def gaussian_ref(M, dim, t, x, y):
    """Upper Gaussian envelope (M/t^(d/2)) exp(-|y-x|^2/(M t))."""
    if M <= 0:
        raise ValueError(f"M must be > 0, got {M}")
    t = _check_time(t)
    return (M / t ** (dim / 2.0)) * np.exp(-_sqdist(x, y) / (M * t))


def aronson_lower(M, dim, t, x, y):
    """Lower Gaussian envelope (1/(M t^(d/2))) exp(-M |y-x|^2/t)."""
    if M <= 0:
        raise ValueError(f"M must be > 0, got {M}")
    t = _check_time(t)
    return np.exp(-M * _sqdist(x, y) / t) / (M * t ** (dim / 2.0))


def exact_brownian_kernel(dim, t, x, y):
    """Transition density of the generator Laplacian: a Gaussian with
    per-coordinate variance 2t."""
    t = _check_time(t)
    return (4.0 * np.pi * t) ** (-dim / 2.0) * np.exp(-_sqdist(x, y)
                                                      / (4.0 * t))


# ------------------------------------------------------------- grid kernel

def _axes_volumes(box, h, dim):
    """Vertex grid axes and per-node 1-d volumes (h inside, h/2 at ends)."""
    box = np.asarray(box, dtype=float)
    if box.ndim == 1:
        box = np.tile(box, (dim, 1))
    axes = []
    vols = []
    for lo, hi in box:
        n = int(round((hi - lo) / h))
        if n < 4 or abs(lo + n * h - hi) > 1e-9 * max(1.0, abs(hi)):
            raise ValueError(f"h = {h} does not tile the box ({lo}, {hi})")
        ax = lo + h * np.arange(n + 1)
        v = np.full(n + 1, h)
        v[0] = v[-1] = 0.5 * h
        axes.append(ax)
        vols.append(v)
    return axes, vols


@dataclass
class GridKernel:
    """Densities on a uniform vertex grid at a list of times.

    values has shape (n_times,) + grid shape; masses holds the trapezoid
    integral per slice and leakage the worst deviation from unit mass.
    """

    axes: list
    h: float
    times: np.ndarray
    values: np.ndarray
    source: np.ndarray
    meta: dict = dc_field(default_factory=dict)
    masses: np.ndarray = None
    leakage: float = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.source = np.atleast_1d(np.asarray(self.source, dtype=float))
        vols = 1.0
        for ax in self.axes:
            v = np.full(ax.shape[0], self.h)
            v[0] = v[-1] = 0.5 * self.h
            vols = np.multiply.outer(vols, v) if np.ndim(vols) else v
        if len(self.axes) == 1:
            vols = np.asarray(vols)
        self.masses = (self.values * vols).reshape(
            self.times.shape[0], -1).sum(axis=1)
        self.leakage = float(np.max(np.abs(1.0 - self.masses)))

    @property
    def dim(self):
        return len(self.axes)

    def points(self):
        """All grid nodes, shape (N, d)."""
        grids = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def validate(self, tol=1e-3):
        if np.any(self.values < -1e-12):
            raise ValueError("kernel holds negative density values")
        if self.leakage > tol:
            raise ValueError(
                f"mass deviates from 1 by {self.leakage:.3g} (> {tol:g})")

    def save(self, prefix):
        """Write <prefix>.csv (t, coordinates, value) and <prefix>.json."""
        pts = self.points()
        coord_names = ["x", "y"][: self.dim]
        lines = ["t," + ",".join(coord_names) + ",value"]
        for it, t in enumerate(self.times):
            flat = self.values[it].ravel()
            for p, v in zip(pts, flat):
                coords = ",".join(repr(float(c)) for c in p)
                lines.append(f"{float(t)!r},{coords},{float(v)!r}")
        with open(f"{prefix}.csv", "w") as fh:
            fh.write("\n".join(lines) + "\n")
        meta = {
            "kind": "grid-kernel",
            "box": [[float(ax[0]), float(ax[-1])] for ax in self.axes],
            "h": float(self.h),
            "times": [float(t) for t in self.times],
            "source": [float(c) for c in self.source],
            "leakage": float(self.leakage),
            "meta": _jsonable(self.meta),
        }
        with open(f"{prefix}.json", "w") as fh:
            json.dump(meta, fh, sort_keys=True, indent=2)
            fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    return obj


def load_grid_kernel(prefix):
    with open(f"{prefix}.json") as fh:
        meta = json.load(fh)
    h = meta["h"]
    axes = [lo + h * np.arange(int(round((hi - lo) / h)) + 1)
            for lo, hi in meta["box"]]
    shape = tuple(ax.shape[0] for ax in axes)
    times = np.asarray(meta["times"], dtype=float)
    raw = np.loadtxt(f"{prefix}.csv", delimiter=",", skiprows=1)
    values = raw[:, -1].reshape((times.shape[0],) + shape)
    return GridKernel(axes=axes, h=h, times=times, values=values,
                      source=np.asarray(meta["source"]),
                      meta=meta.get("meta", {}))


def tabulate_kernel(fn, box, h, times, x0, dim=1, meta=None):
    """GridKernel with values fn(t, points) on the vertex grid; fn must
    map (t, (N, d)) to (N,) densities."""
    axes, _ = _axes_volumes(box, h, dim)
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    shape = tuple(ax.shape[0] for ax in axes)
    times = np.asarray(times, dtype=float)
    values = np.stack([np.asarray(fn(t, pts)).reshape(shape) for t in times])
    return GridKernel(axes=axes, h=h, times=times, values=values,
                      source=np.atleast_1d(np.asarray(x0, dtype=float)),
                      meta=dict(meta or {}))


def _assemble_operator(field, axes, vols, h):
    """Sparse A with (A p)_m = (1/vol_m) sum of face fluxes into node m."""
    dim = len(axes)
    shape = tuple(ax.shape[0] for ax in axes)
    n_total = int(np.prod(shape))
    vol = vols[0] if dim == 1 else np.multiply.outer(vols[0], vols[1])
    vol_flat = vol.ravel()

    rows, cols, vals = [], [], []
    for k in range(dim):
        # faces along axis k between node index i and i+1
        face_axes = [ax.copy() for ax in axes]
        face_axes[k] = 0.5 * (axes[k][:-1] + axes[k][1:])
        grids = np.meshgrid(*face_axes, indexing="ij")
        fpts = np.stack([g.ravel() for g in grids], axis=-1)
        cond = field._diag_many(fpts)[:, k].reshape(
            tuple(ax.shape[0] for ax in face_axes))
        # transverse 1-d volume factor
        if dim == 1:
            w = np.ones_like(cond)
        else:
            j = 1 - k
            w = np.broadcast_to(
                vols[j] if k == 0 else vols[j][:, None],
                cond.shape)
        coupling = (cond * w / h).ravel()

        idx = np.arange(n_total).reshape(shape)
        m = (idx.take(range(shape[k] - 1), axis=k)).ravel()
        n = (idx.take(range(1, shape[k]), axis=k)).ravel()
        rows += [m, n, m, n]
        cols += [n, m, m, n]
        vals += [coupling, coupling, -coupling, -coupling]

    S = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_total, n_total)).tocsr()
    inv_vol = sparse.diags(1.0 / vol_flat)
    return inv_vol @ S, vol_flat, shape


def solve_kernel_pde(field, x0, box, h, times, dt):
    """Crank-Nicolson kernel of div(a grad) from a discrete Dirac at x0.

    Zero-flux box boundary; conductances are the diagonal of a at edge
    midpoints (off-diagonal coefficients are out of scope for the solver).
    Output times snap to the nearest multiple of dt; the snapped values
    are what the returned GridKernel stores.
    """
    if field.dim not in (1, 2):
        raise ValueError(f"PDE solve supports d in {{1, 2}}, got {field.dim}")
    if not field.is_diagonal:
        raise NonDiagonalField(
            "the finite-volume solver handles diagonal fields only")
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if dt > h * h * field.lam / 4.0 + 1e-15:
        raise UnstableStep(
            f"dt = {dt:g} exceeds h^2 lambda / 4 = {h * h * field.lam / 4:g}")
    if field.feature_scale is not None and h > field.feature_scale / 2 + 1e-12:
        raise GridTooCoarse(
            f"h = {h:g} does not resolve the field's feature scale "
            f"{field.feature_scale:g} (need h <= feature/2)")
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0 or np.any(np.diff(times) <= 0):
        raise ValueError("times must be a strictly increasing 1-d list")
    _check_time(times)

    axes, vols = _axes_volumes(box, h, field.dim)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    src_idx = []
    for c, ax in zip(x0, axes):
        i = int(round((c - ax[0]) / h))
        if not 0 < i < ax.shape[0] - 1:
            raise ValueError(f"source {c} is not interior to the box")
        src_idx.append(i)
    source = np.array([ax[i] for ax, i in zip(axes, src_idx)])

    A, vol_flat, shape = _assemble_operator(field, axes, vols, h)
    n_total = vol_flat.shape[0]
    eye = sparse.identity(n_total, format="csr")
    lu = splu((eye - (dt / 2.0) * A).tocsc())
    rhs_mat = (eye + (dt / 2.0) * A).tocsr()

    p = np.zeros(n_total)
    flat_src = int(np.ravel_multi_index(src_idx, shape))
    p[flat_src] = 1.0 / vol_flat[flat_src]

    snap_steps = np.maximum(1, np.round(times / dt).astype(np.int64))
    if np.any(np.diff(snap_steps) <= 0):
        raise ValueError("output times collide after snapping to dt")
    snapped = snap_steps * dt

    out = np.empty((times.shape[0],) + shape)
    want = {int(s): i for i, s in enumerate(snap_steps)}
    for step in range(1, int(snap_steps[-1]) + 1):
        p = lu.solve(rhs_mat @ p)
        if step in want:
            out[want[step]] = p.reshape(shape)
    kern = GridKernel(axes=axes, h=h, times=snapped, values=out,
                      source=source,
                      meta={"scheme": "crank-nicolson-fv", "dt": dt,
                            "requested_times": [float(t) for t in times],
                            "field": getattr(field, "name", None)})
    return kern


def log_time_grid(t_min, t_max, n, dt):
    """Log-spaced output times snapped to multiples of dt, deduplicated.

    Suitable as the ``times`` list of solve_kernel_pde when the kernel
    will feed the resolvent quadrature: dense near 0, sparse at the tail.
    """
    raw = np.geomspace(max(t_min, dt), t_max, n)
    steps = np.unique(np.maximum(1, np.round(raw / dt).astype(np.int64)))
    return steps * dt


# ------------------------------------------------------------- Aronson fit

def sandwich_holds(kernel, M, floor=1e-12):
    """True iff both envelopes hold at every stored (t, y) with kernel
    value above the floor."""
    pts = kernel.points()
    r2 = ((pts - kernel.source) ** 2).sum(axis=-1)
    d = kernel.dim
    for it, t in enumerate(kernel.times):
        v = kernel.values[it].ravel()
        mask = v > floor
        if not mask.any():
            continue
        up = (M / t ** (d / 2.0)) * np.exp(-r2[mask] / (M * t))
        lo = np.exp(-M * r2[mask] / t) / (M * t ** (d / 2.0))
        vv = v[mask]
        if np.any(vv > up * (1.0 + 1e-12)):
            return False
        if np.any(vv < lo * (1.0 - 1e-12)):
            return False
    return True


def fit_aronson_M(kernel, candidates, floor=1e-12):
    """Smallest candidate M whose two Gaussian envelopes sandwich the
    kernel everywhere it exceeds the floor; None when no candidate does."""
    cands = list(candidates)
    if len(cands) == 0:
        raise EmptyCandidates("no candidate M values supplied")
    arr = np.asarray(cands, dtype=float)
    if np.any(arr <= 0) or np.any(np.diff(arr) <= 0):
        raise ValueError("candidates must be positive and increasing")
    for M in arr:
        if sandwich_holds(kernel, float(M), floor=floor):
            return float(M)
    return None


# ---------------------------------------------------------- potential field

@dataclass
class PotentialField:
    """The resolvent potential U nu as an evaluable field."""

    route: str
    dim: int
    params: dict = dc_field(default_factory=dict)
    fn: callable = None
    axes: list = None
    values: np.ndarray = None

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=float)
        if pts.ndim == 1:
            out = self.__call__(pts[None, :])
            return out[0]
        if self.fn is not None:
            return self.fn(pts)
        if self.dim == 1:
            return np.interp(pts[..., 0], self.axes[0], self.values,
                             left=0.0, right=0.0)
        return _bilinear(self.axes, self.values, pts)

    def integral(self, box=None, h=None):
        """Trapezoid integral of U over a box (defaults to the stored
        grid extent)."""
        if self.axes is not None and box is None:
            vals = self.values
            for ax in reversed(self.axes):
                vals = np.trapezoid(vals, ax, axis=-1)
            return float(vals)
        if box is None or h is None:
            raise ValueError("closed-form potentials need box and h")
        axes, _ = _axes_volumes(box, h, self.dim)
        grids = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=-1)
        vals = self(pts).reshape(tuple(a.shape[0] for a in axes))
        for ax in reversed(axes):
            vals = np.trapezoid(vals, ax, axis=-1)
        return float(vals)

    def save(self, prefix):
        if self.axes is None:
            raise ValueError("only tabulated potentials serialize; "
                             "tabulate the closed form on a grid first")
        coord_names = ["x", "y"][: self.dim]
        lines = ["t," + ",".join(coord_names) + ",value"]
        grids = np.meshgrid(*self.axes, indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=-1)
        for p, v in zip(pts, self.values.ravel()):
            coords = ",".join(repr(float(c)) for c in p)
            lines.append(f"0.0,{coords},{float(v)!r}")
        with open(f"{prefix}.csv", "w") as fh:
            fh.write("\n".join(lines) + "\n")
        meta = {
            "kind": "potential",
            "route": self.route,
            "box": [[float(ax[0]), float(ax[-1])] for ax in self.axes],
            "h": float(self.axes[0][1] - self.axes[0][0]),
            "time_column": "unused",
            "params": _jsonable(self.params),
        }
        with open(f"{prefix}.json", "w") as fh:
            json.dump(meta, fh, sort_keys=True, indent=2)
            fh.write("\n")


def _bilinear(axes, values, pts):
    ax0, ax1 = axes
    h0 = ax0[1] - ax0[0]
    h1 = ax1[1] - ax1[0]
    u = (pts[..., 0] - ax0[0]) / h0
    v = (pts[..., 1] - ax1[0]) / h1
    i = np.clip(np.floor(u).astype(np.int64), 0, ax0.shape[0] - 2)
    j = np.clip(np.floor(v).astype(np.int64), 0, ax1.shape[0] - 2)
    fu = np.clip(u - i, 0.0, 1.0)
    fv = np.clip(v - j, 0.0, 1.0)
    out = (values[i, j] * (1 - fu) * (1 - fv)
           + values[i + 1, j] * fu * (1 - fv)
           + values[i, j + 1] * (1 - fu) * fv
           + values[i + 1, j + 1] * fu * fv)
    inside = ((pts[..., 0] >= ax0[0]) & (pts[..., 0] <= ax0[-1])
              & (pts[..., 1] >= ax1[0]) & (pts[..., 1] <= ax1[-1]))
    return np.where(inside, out, 0.0)


def load_potential(prefix):
    with open(f"{prefix}.json") as fh:
        meta = json.load(fh)
    h = meta["h"]
    axes = [lo + h * np.arange(int(round((hi - lo) / h)) + 1)
            for lo, hi in meta["box"]]
    shape = tuple(ax.shape[0] for ax in axes)
    raw = np.loadtxt(f"{prefix}.csv", delimiter=",", skiprows=1)
    values = raw[:, -1].reshape(shape)
    return PotentialField(route=meta["route"], dim=len(axes),
                          params=meta.get("params", {}), axes=axes,
                          values=values)


def resolvent_potential(source, nu, *, field=None, n_samples=200_000,
                        seed=0, bandwidth=None, step=2.0 ** -9, t_cap=16.0,
                        envelope_M=4.0):
    """U nu(x) = integral of e^(-s) nu_s(x) ds, by one of three routes.

    source selects the route: the string "closed-form" (a = Id, d = 1,
    Dirac start), a GridKernel (time-slice quadrature), or the string
    "monte-carlo" (kernel-density estimate of X_T, T ~ Exponential(1),
    which needs ``field``).
    """
    if isinstance(source, GridKernel):
        return _potential_from_kernel(source, nu, envelope_M)
    if source == "closed-form":
        if nu.kind != "dirac" or nu.dim != 1:
            raise ValueError("the closed form covers d = 1 Dirac starts")
        x0 = float(np.atleast_1d(nu.point)[0])

        def fn(pts):
            return 0.5 * np.exp(-np.abs(np.asarray(pts)[..., 0] - x0))

        return PotentialField(route="closed-form", dim=1,
                              params={"x0": x0}, fn=fn)
    if source == "monte-carlo":
        return _potential_from_samples(field, nu, n_samples, seed,
                                       bandwidth, step, t_cap)
    raise ValueError(f"unknown potential source {source!r}")


def _potential_from_kernel(kernel, nu, envelope_M):
    t = kernel.times
    if t[-1] < TAIL_T_MIN - 1e-9:
        raise TailNotCovered(
            f"kernel times reach {t[-1]:g} < {TAIL_T_MIN:g}; the e^(-s) "
            "tail is not negligible there")
    if nu is not None and nu.kind == "dirac":
        if np.max(np.abs(np.atleast_1d(nu.point) - kernel.source)) > \
                kernel.h + 1e-12:
            raise ValueError("kernel was solved from a different start "
                             "point than nu")
    w = np.exp(-t)
    integrand = kernel.values * w.reshape((-1,) + (1,) * kernel.dim)
    U = np.trapezoid(integrand, t, axis=0)
    tail_bound = float(np.exp(-t[-1]) * envelope_M / t[-1] ** (kernel.dim / 2))
    return PotentialField(
        route="grid", dim=kernel.dim,
        params={"t_min": float(t[0]), "t_max": float(t[-1]),
                "n_slices": int(t.shape[0]), "tail_bound": tail_bound,
                "kernel_leakage": float(kernel.leakage)},
        axes=kernel.axes, values=U)


def _potential_from_samples(field, nu, n_samples, seed, bandwidth, step,
                            t_cap):
    if field is None:
        raise ValueError("the monte-carlo route needs the coefficient field")
    if n_samples < MIN_KDE_SAMPLES:
        raise InsufficientSamples(
            f"{n_samples} < {MIN_KDE_SAMPLES} samples for the KDE route")
    dim = field.dim
    bw = KDE_BANDWIDTH[dim] if bandwidth is None else float(bandwidth)
    # namespace offset keeps this stream independent of path simulations
    rng = _sampling.path_rng(seed, 0, attempt=1_000_003)
    T = np.minimum(rng.exponential(size=n_samples), t_cap)
    if nu.kind == "dirac":
        x0 = np.tile(np.atleast_1d(nu.point), (n_samples, 1)).astype(float)
    else:
        x0 = np.stack([_sampling.sample_initial(nu, rng)
                       for _ in range(n_samples)])
    if field.is_constant:
        # the SDE solution is Gaussian given T: exact sampling, no grid
        a0 = field.matrix(np.zeros(dim))
        root = sqrt_matrix(2.0 * a0)
        z = rng.standard_normal((n_samples, dim))
        samples = x0 + np.sqrt(T)[:, None] * (z @ root.T)
    else:
        samples = _terminal_by_groups(field, x0, T, step, seed)
    return _kde_field(samples, bw, dim, nu,
                      {"n_samples": int(n_samples), "bandwidth": bw,
                       "t_cap": float(t_cap), "seed": int(seed),
                       "exact_time": bool(field.is_constant),
                       "step": None if field.is_constant else float(step)})


def _terminal_by_groups(field, x0, T, step, seed):
    """X_T per sample via the Euler scheme, grouping equal step counts so
    per-path draws stay independent of the grouping."""
    nsteps = np.maximum(1, np.round(T / step).astype(np.int64))
    out = np.empty_like(x0)
    for m in np.unique(nsteps):
        sel = np.nonzero(nsteps == m)[0]
        states = _sampling._em_batch_states(
            field, None, float(m) * step, step, seed, sel.tolist(),
            stride=int(m), start_override=x0[sel])
        out[sel] = states[:, -1, :]
    return out


KDE_MAX_HALFWIDTH = 24.0


def _kde_field(samples, bw, dim, nu, params):
    """Bin the samples, then convolve with a Gaussian of width bw; the
    result is tabulated on the fine bin grid.

    Rare far-out samples are folded into the edge bins so the tabulated
    grid stays bounded; the potential out there is below e^(-24) of its
    peak, so the relocated mass is invisible at Monte Carlo accuracy.
    """
    bin_h = bw / 10.0 if dim == 1 else bw / 5.0
    center = np.median(samples, axis=0)
    samples = np.clip(samples, center - KDE_MAX_HALFWIDTH,
                      center + KDE_MAX_HALFWIDTH)
    lo = samples.min(axis=0) - 5.0 * bw
    hi = samples.max(axis=0) + 5.0 * bw
    n = samples.shape[0]
    if dim == 1:
        edges = np.arange(lo[0], hi[0] + bin_h, bin_h)
        counts, edges = np.histogram(samples[:, 0], bins=edges)
        centers = 0.5 * (edges[:-1] + edges[1:])
        kx = np.arange(-5 * bw, 5 * bw + bin_h / 2, bin_h)
        kern = np.exp(-0.5 * (kx / bw) ** 2)
        kern /= kern.sum() * bin_h
        dens = np.convolve(counts / n, kern, mode="same")
        return PotentialField(route="monte-carlo-kde", dim=1, params=params,
                              axes=[centers], values=dens)
    ex = np.arange(lo[0], hi[0] + bin_h, bin_h)
    ey = np.arange(lo[1], hi[1] + bin_h, bin_h)
    counts, ex, ey = np.histogram2d(samples[:, 0], samples[:, 1],
                                    bins=[ex, ey])
    cx = 0.5 * (ex[:-1] + ex[1:])
    cy = 0.5 * (ey[:-1] + ey[1:])
    kx = np.arange(-5 * bw, 5 * bw + bin_h / 2, bin_h)
    kern = np.exp(-0.5 * (kx / bw) ** 2)
    kern /= kern.sum() * bin_h
    dens = counts / n
    dens = np.apply_along_axis(np.convolve, 0, dens, kern, mode="same")
    dens = np.apply_along_axis(np.convolve, 1, dens, kern, mode="same")
    return PotentialField(route="monte-carlo-kde", dim=2, params=params,
                          axes=[cx, cy], values=dens)


# ------------------------------------------------------------- L^q norms

def lq_admissible(q, dim):
    """The admissible exponent range: q > 1 always, and q < d/(d-2) when
    d > 2."""
    if q <= 1.0:
        return False
    if dim > 2 and q >= dim / (dim - 2.0):
        return False
    return True


def _envelope_potential(r, M, dim):
    """Pointwise upper bound on U nu(x) at distance r from the start,
    from the upper Gaussian envelope integrated against e^(-s)."""
    r = np.asarray(r, dtype=float)
    if dim == 1:
        return M * np.sqrt(np.pi) * np.exp(-2.0 * r / np.sqrt(M))
    if dim == 2:
        return 2.0 * M * k0(2.0 * r / np.sqrt(M))
    raise ValueError("envelope tails cover d in {1, 2}")


@dataclass
class LqNormResult:
    q: float
    value: float
    tail_estimate: float

    @property
    def total(self):
        return self.value + self.tail_estimate


def potential_Lq_norm(U, q, box, h=0.01, envelope_M=4.0):
    """Trapezoid integral of U^q over the box plus an envelope tail bound.

    The tail integrates the Lemma-style upper envelope (constant
    envelope_M) radially beyond the box's inscribed radius.
    """
    q = float(q)
    if not lq_admissible(q, U.dim):
        raise InadmissibleExponent(
            f"q = {q} is outside the admissible range for d = {U.dim}")
    axes, _ = _axes_volumes(box, h, U.dim)
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    vals = np.maximum(U(pts), 0.0) ** q
    vals = vals.reshape(tuple(a.shape[0] for a in axes))
    for ax in reversed(axes):
        vals = np.trapezoid(vals, ax, axis=-1)
    box_value = float(vals)

    R = float(min(min(abs(lo), abs(hi)) for lo, hi in
                  np.atleast_2d(np.asarray(box, dtype=float))))
    if U.dim == 1:
        # closed form: 2 int_R^inf (M sqrt(pi))^q e^(-2 q r / sqrt M) dr
        amp = (envelope_M * np.sqrt(np.pi)) ** q
        tail = 2.0 * amp * np.sqrt(envelope_M) / (2.0 * q) * np.exp(
            -2.0 * q * R / np.sqrt(envelope_M))
    else:
        r = R * np.exp(np.linspace(0.0, 4.0, 400))
        env = _envelope_potential(r, envelope_M, 2) ** q
        tail = float(np.trapezoid(env * 2.0 * np.pi * r, r))
    return LqNormResult(q=q, value=box_value, tail_estimate=float(tail))
