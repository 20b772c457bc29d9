"""Path sampling for divergence-form diffusions along dyadic grids.

Two schemes approximate the process generated by L = div(a grad):

* Euler-Maruyama on a uniform fine grid, dX = (div a)(X) dt + sqrt(2 a)(X) dW,
  for smooth or mollified fields;
* a continuous-time lattice walk on x0 + h Z^d with edge-midpoint
  conductances a_kk(x +/- h e_k / 2) / h^2, for diagonal fields of any
  roughness, resampled onto the same uniform fine grid by carrying the last
  position forward.

Randomness is counter-based: every path owns the Philox stream keyed by
(seed, path_id), so path i is a bitwise-deterministic function of
(scheme, field, law, horizon, fine step, seed, path_id) no matter how paths
are batched or distributed over workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import (
    DimensionMismatch,
    GridFinerThanPath,
    NonDiagonalField,
    OrderTooLarge,
    RoughFieldError,
)
from . import fields as _fields

MAX_ORDER = 24
_CHUNK_STEPS = 4096
_ATTEMPT_STRIDE = 0x9E3779B97F4A7C15  # odd 64-bit constant, attempt offset


# ---------------------------------------------------------------- dyadic grids

@dataclass(frozen=True)
class DyadicGrid:
    """The grid D_n = {i S / 2^n : i = 0..2^n} on [0, S]."""

    n: int
    horizon: float
    spacing: float
    times: np.ndarray

    def __len__(self):
        return self.times.shape[0]


def dyadic_grid(horizon, n):
    """Build D_n on [0, horizon].

    Spacing is horizon * 2**-n; when the horizon is a power of two the
    times are exactly representable.  Orders above 24 (or below 0) raise
    OrderTooLarge.
    """
    if not (0 <= n <= MAX_ORDER):
        raise OrderTooLarge(f"dyadic order must be in [0, {MAX_ORDER}], got {n}")
    if horizon <= 0:
        raise ValueError(f"horizon must be > 0, got {horizon}")
    spacing = float(horizon) * 2.0 ** (-n)
    times = np.arange(2 ** n + 1, dtype=float) * spacing
    return DyadicGrid(n=int(n), horizon=float(horizon), spacing=spacing,
                      times=times)


def fine_step_for(horizon, n_max, margin=4):
    """Default simulation step: four dyadic levels below the finest grid."""
    if not (0 <= n_max + margin <= MAX_ORDER):
        raise OrderTooLarge(
            f"n_max + margin = {n_max + margin} outside [0, {MAX_ORDER}]")
    return float(horizon) * 2.0 ** (-(n_max + margin))


# ---------------------------------------------------------------- initial laws

@dataclass
class InitialLaw:
    """Initial distribution: a point mass, a grid density, or a mixture."""

    kind: str
    point: np.ndarray | None = None
    edges: list | None = None          # cell edges per axis (grid-density)
    cell_probs: np.ndarray | None = None
    components: list | None = dc_field(default=None)
    mix_weights: np.ndarray | None = None

    @property
    def dim(self):
        if self.kind == "dirac":
            return self.point.shape[0]
        if self.kind == "grid-density":
            return len(self.edges)
        return self.components[0].dim

    def atoms(self):
        """All Dirac atoms the law charges (empty for continuous laws)."""
        if self.kind == "dirac":
            return [self.point]
        if self.kind == "mixture":
            out = []
            for c in self.components:
                out.extend(c.atoms())
            return out
        return []


def dirac(point):
    pt = np.atleast_1d(np.asarray(point, dtype=float))
    return InitialLaw(kind="dirac", point=pt)


def grid_density(edges, values):
    """Piecewise-constant density on a rectilinear grid (d <= 2).

    ``edges`` is one increasing edge array per axis; ``values`` holds a
    nonnegative density value per cell.  Normalization is internal.
    """
    edges = [np.asarray(e, dtype=float) for e in
             (edges if isinstance(edges, (list, tuple)) else [edges])]
    if len(edges) > 2:
        raise DimensionMismatch("grid densities support d <= 2")
    vals = np.asarray(values, dtype=float)
    expected = tuple(e.shape[0] - 1 for e in edges)
    if vals.shape != expected:
        raise DimensionMismatch(
            f"density shape {vals.shape} does not match cells {expected}")
    if np.any(vals < 0) or vals.sum() <= 0:
        raise ValueError("density values must be nonnegative, not all zero")
    vols = np.diff(edges[0])
    if len(edges) == 2:
        vols = vols[:, None] * np.diff(edges[1])[None, :]
    probs = vals * vols
    return InitialLaw(kind="grid-density", edges=edges,
                      cell_probs=probs / probs.sum())


def mixture(weights, components):
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError("mixture weights must be nonnegative, not all zero")
    if len(components) != w.shape[0]:
        raise DimensionMismatch("one weight per component required")
    dims = {c.dim for c in components}
    if len(dims) != 1:
        raise DimensionMismatch(f"components disagree on dimension: {dims}")
    return InitialLaw(kind="mixture", components=list(components),
                      mix_weights=w / w.sum())


def _sample_axis(u, cum, edges):
    """Inverse CDF within a piecewise-constant axis."""
    k = int(np.searchsorted(cum, u, side="right"))
    k = min(k, cum.shape[0] - 1)
    lo = cum[k - 1] if k > 0 else 0.0
    p = cum[k] - lo
    frac = (u - lo) / p if p > 0 else 0.0
    return edges[k] + frac * (edges[k + 1] - edges[k])


def sample_initial(law, rng):
    """Draw one starting point from the law using the given generator."""
    if law.kind == "dirac":
        return law.point.copy()
    if law.kind == "mixture":
        u = rng.random()
        k = int(np.searchsorted(np.cumsum(law.mix_weights), u, side="right"))
        k = min(k, len(law.components) - 1)
        return sample_initial(law.components[k], rng)
    if law.kind == "grid-density":
        if len(law.edges) == 1:
            cum = np.cumsum(law.cell_probs)
            return np.array([_sample_axis(rng.random(), cum, law.edges[0])])
        marg = law.cell_probs.sum(axis=1)
        u1, u2 = rng.random(), rng.random()
        cum1 = np.cumsum(marg)
        i = min(int(np.searchsorted(cum1, u1, side="right")), marg.shape[0] - 1)
        x1_lo = cum1[i - 1] if i > 0 else 0.0
        frac = (u1 - x1_lo) / marg[i] if marg[i] > 0 else 0.0
        x1 = law.edges[0][i] + frac * (law.edges[0][i + 1] - law.edges[0][i])
        cond = law.cell_probs[i]
        cum2 = np.cumsum(cond / cond.sum())
        x2 = _sample_axis(u2, cum2, law.edges[1])
        return np.array([x1, x2])
    raise ValueError(f"unknown initial law kind {law.kind!r}")


# ---------------------------------------------------------------- rng plumbing

def path_rng(seed, path_id, attempt=0):
    """Counter-based generator for one path.

    The Philox key is (seed + attempt * odd constant, path_id); the step
    index lives in the Philox counter, so draws are reproducible and
    independent across paths regardless of evaluation order.
    """
    if seed < 0 or path_id < 0:
        raise ValueError("seed and path_id must be nonnegative")
    hi = (int(seed) + int(attempt) * _ATTEMPT_STRIDE) % (1 << 64)
    # the key must be an explicit uint64 array: a plain int list would be
    # inferred as float64 above 2^63 and silently drop the low key bits
    key = np.array([hi, int(path_id)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


# ---------------------------------------------------------------- paths

@dataclass
class Path:
    """A sampled trajectory on a uniform fine grid.

    ``states`` has shape (T, d) with states[i] at time i * fine_step; the
    last time equals the horizon.
    """

    times: np.ndarray
    states: np.ndarray
    scheme: str
    seed: int
    path_id: int
    fine_step: float
    horizon: float

    @property
    def dim(self):
        return self.states.shape[1]


def _nsteps(horizon, fine_step):
    n = round(horizon / fine_step)
    if n < 1 or abs(n * fine_step - horizon) > 1e-9 * horizon:
        raise ValueError(
            f"fine step {fine_step} does not divide the horizon {horizon}")
    return int(n)


def _start_points(law, gens, dim):
    x0 = np.empty((len(gens), dim))
    for b, g in enumerate(gens):
        pt = sample_initial(law, g)
        if pt.shape[0] != dim:
            raise DimensionMismatch(
                f"initial law dimension {pt.shape[0]} != field dimension {dim}")
        x0[b] = pt
    return x0


def _em_batch_states(field, law, horizon, fine_step, seed, path_ids,
                     attempt=0, stride=1, fd_step=1e-4, start_override=None):
    """Euler-Maruyama batch; returns states of shape (B, T', d) at times
    i * stride * fine_step, including both endpoints.

    start_override, when given, fixes the start point of each path
    directly (shape (B, d)) instead of drawing from the law.
    """
    if field.smoothness == "rough":
        raise RoughFieldError(
            "Euler-Maruyama needs a smooth or mollified field")
    nsteps = _nsteps(horizon, fine_step)
    if nsteps % stride != 0:
        raise ValueError(f"stride {stride} does not divide {nsteps} steps")
    d = field.dim
    gens = [path_rng(seed, pid, attempt) for pid in path_ids]
    B = len(gens)
    if start_override is not None:
        x = np.array(start_override, dtype=float)
        if x.shape != (B, d):
            raise DimensionMismatch(
                f"start_override shape {x.shape} != ({B}, {d})")
    else:
        x = _start_points(law, gens, d)
    out = np.empty((B, nsteps // stride + 1, d))
    out[:, 0] = x
    sqdt = np.sqrt(fine_step)

    if field.is_constant:
        # constant coefficients: zero drift, one constant diffusion factor
        if field.is_diagonal:
            sig = np.sqrt(2.0 * field._diag_many(x[:1])[0])  # (d,)
            mult = sig * sqdt
            for b, g in enumerate(gens):
                incs = g.standard_normal((nsteps, d)) * mult
                run = np.add.accumulate(
                    np.concatenate([x[b][None], incs], axis=0), axis=0)
                out[b, 1:] = run[stride::stride]
        else:
            sig = _fields.sqrt_matrix(2.0 * field.matrix(x[0]))
            for b, g in enumerate(gens):
                incs = (g.standard_normal((nsteps, d)) @ sig.T) * sqdt
                run = np.add.accumulate(
                    np.concatenate([x[b][None], incs], axis=0), axis=0)
                out[b, 1:] = run[stride::stride]
        return out

    mad = getattr(field, "matrix_and_divergence", None)
    xi = np.empty((B, _CHUNK_STEPS, d))
    done = 0
    while done < nsteps:
        take = min(_CHUNK_STEPS, nsteps - done)
        for b, g in enumerate(gens):
            xi[b, :take] = g.standard_normal((take, d))
        for j in range(take):
            if mad is not None:
                a, drift = mad(x)
            else:
                a = field._matrix_many(x)
                drift = _fields.divergence(field, x, step=fd_step)
            if field.is_diagonal:
                diag = np.einsum("nii->ni", a)
                noise = np.sqrt(2.0 * diag) * xi[:, j]
            else:
                sig = _fields.sqrt_matrix_batch(2.0 * a)
                noise = np.einsum("nij,nj->ni", sig, xi[:, j])
            x = x + (drift * fine_step + noise * sqdt)
            i = done + j + 1
            if i % stride == 0:
                out[:, i // stride] = x
        done += take
    return out


def _fill_spans(out, rows_pos, nf, idx_excl, x_before):
    """Write x_before into out[b, nf[b]:idx_excl[b]] for every path b."""
    count = idx_excl - nf
    count = np.where(count > 0, count, 0)
    total = int(count.sum())
    if total == 0:
        return nf
    rows = np.repeat(rows_pos, count)
    starts = np.repeat(nf, count)
    seg0 = np.concatenate([[0], np.cumsum(count)[:-1]])
    within = np.arange(total) - np.repeat(seg0, count)
    out[rows, starts + within] = x_before[rows]
    return np.maximum(nf, idx_excl)


def _lattice_batch_states(field, law, horizon, fine_step, seed, path_ids,
                          attempt=0, stride=1, h=0.05):
    """Continuous-time lattice walk batch, recorded on the uniform grid."""
    if not field.is_diagonal:
        raise NonDiagonalField("the lattice scheme needs a diagonal field")
    nsteps = _nsteps(horizon, fine_step)
    if nsteps % stride != 0:
        raise ValueError(f"stride {stride} does not divide {nsteps} steps")
    d = field.dim
    max_rate = 2.0 * d * field.lam / h ** 2
    if max_rate * fine_step > 0.1 + 1e-12:
        raise ValueError(
            f"embedding too coarse: max jump rate {max_rate:.3g} * fine step "
            f"{fine_step:.3g} exceeds 0.1; enlarge h or refine the grid")

    gens = [path_rng(seed, pid, attempt) for pid in path_ids]
    B = len(gens)
    x = _start_points(law, gens, d)
    dt_out = fine_step * stride
    T = nsteps // stride + 1
    out = np.empty((B, T, d))

    # pre-drawn randomness blocks, one column consumed per iteration
    mean_jumps = max_rate * horizon
    block = max(64, int(mean_jumps * 1.25 + 8.0 * np.sqrt(mean_jumps) + 16))
    expo = np.empty((B, 0))
    unif = np.empty((B, 0))

    t = np.zeros(B)
    nf = np.zeros(B, dtype=np.int64)
    alive = np.ones(B, dtype=bool)
    rows_all = np.arange(B)
    it = 0
    shifts = np.zeros((d, d))
    np.fill_diagonal(shifts, h / 2.0)

    while alive.any():
        if it >= expo.shape[1]:
            new_e = np.empty((B, block))
            new_u = np.empty((B, block))
            for b, g in enumerate(gens):
                new_e[b] = g.standard_exponential(block)
                new_u[b] = g.random(block)
            expo = np.concatenate([expo, new_e], axis=1)
            unif = np.concatenate([unif, new_u], axis=1)

        idx = rows_all[alive]
        xa = x[idx]
        rates = np.empty((idx.shape[0], 2 * d))
        for k in range(d):
            rates[:, 2 * k] = field._diag_many(xa + shifts[k])[:, k]
            rates[:, 2 * k + 1] = field._diag_many(xa - shifts[k])[:, k]
        rates /= h ** 2
        total = rates.sum(axis=1)
        tau = expo[idx, it] / total
        t_new = t[idx] + tau

        crossed = t_new > horizon
        # record the pre-jump position on every output slot before t_new
        idx_excl = np.ceil(np.minimum(t_new, horizon + dt_out) / dt_out)
        idx_excl = np.minimum(idx_excl.astype(np.int64), T)
        idx_excl[crossed] = T
        nf[idx] = _fill_spans(out, idx, nf[idx], idx_excl, x)

        # take the jump for paths still inside the horizon
        take = ~crossed
        if take.any():
            sub = idx[take]
            csum = np.cumsum(rates[take], axis=1)
            u = unif[sub, it] * total[take]
            m = (u[:, None] >= csum).sum(axis=1)
            m = np.minimum(m, 2 * d - 1)
            axis = m // 2
            sign = np.where(m % 2 == 0, 1.0, -1.0)
            x[sub, axis] += sign * h
        t[idx] = t_new
        alive[idx[crossed]] = False
        it += 1
    return out


def simulate_em(field, law, horizon, fine_step, seed, path_id, attempt=0,
                fd_step=1e-4):
    """Euler-Maruyama path on the uniform fine grid.

    The drift is the field's divergence and the diffusion factor is
    sqrt(2 a(X)); Gaussian increments have variance fine_step per Wiener
    coordinate.  Rough fields are rejected (mollify them first).
    """
    states = _em_batch_states(field, law, horizon, fine_step, seed,
                              [path_id], attempt=attempt, fd_step=fd_step)[0]
    times = np.arange(states.shape[0], dtype=float) * fine_step
    return Path(times=times, states=states, scheme="euler-maruyama",
                seed=seed, path_id=path_id, fine_step=fine_step,
                horizon=horizon)


def simulate_lattice(field, law, horizon, fine_step, seed, path_id,
                     attempt=0, h=0.05):
    """Lattice-walk path resampled onto the uniform fine grid.

    Jump rates along axis k are a_kk(x +/- h e_k / 2) / h^2 (edge-midpoint
    conductances); holding times are exponential; between jumps the
    recorded state carries the last position forward.
    """
    states = _lattice_batch_states(field, law, horizon, fine_step, seed,
                                   [path_id], attempt=attempt, h=h)[0]
    times = np.arange(states.shape[0], dtype=float) * fine_step
    return Path(times=times, states=states, scheme="lattice", seed=seed,
                path_id=path_id, fine_step=fine_step, horizon=horizon)


def generate_batch(scheme, field, law, horizon, fine_step, seed, path_ids,
                   stride=1, attempt=0, scheme_params=None):
    """Batched states (B, T', d) for either scheme, at stride multiples."""
    params = dict(scheme_params or {})
    if scheme == "euler-maruyama":
        return _em_batch_states(field, law, horizon, fine_step, seed,
                                path_ids, attempt=attempt, stride=stride,
                                fd_step=params.get("fd_step", 1e-4))
    if scheme == "lattice":
        return _lattice_batch_states(field, law, horizon, fine_step, seed,
                                     path_ids, attempt=attempt, stride=stride,
                                     h=params.get("h", 0.05))
    raise ValueError(f"unknown scheme {scheme!r}")


def restrict_to_dyadic(path, grid):
    """States of a path at the dyadic times of ``grid``.

    For each grid time the state at the nearest fine-grid time at or
    before it is returned.  The grid must be at least two fine steps
    coarse, else GridFinerThanPath is raised.
    """
    if grid.spacing < 2.0 * path.fine_step - 1e-15:
        raise GridFinerThanPath(
            f"dyadic spacing {grid.spacing:.3g} is finer than twice the "
            f"path step {path.fine_step:.3g}")
    if abs(grid.horizon - path.horizon) > 1e-12 * max(1.0, path.horizon):
        raise ValueError("grid and path disagree on the horizon")
    idx = np.floor(grid.times / path.fine_step + 1e-9).astype(np.int64)
    idx = np.minimum(idx, path.states.shape[0] - 1)
    return path.states[idx]
