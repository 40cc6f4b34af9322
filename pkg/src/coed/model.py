"""Candidate spaces: design points with cached one-point information matrices.

Three model kinds are supported:

``exponential``
    ``f(x, theta) = theta_1 exp(theta_2 x)`` on a grid in ``[-1, 1]`` with unit
    noise variance.
``kinetics``
    mole fractions of the reaction chain A <-> B -> C (see :mod:`coed.ode`)
    measured at time ``t_m`` after starting from composition ``(a0, b0, c0)``
    at temperature ``T``; noise covariance ``diag(s) / 100``.
``tabulated``
    user-supplied matrices read from a candidate-table file.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping

import numpy as np

from . import linalg
from .errors import DuplicatePoint, GridEmpty, NonPsdRow, ParseError
from .ode import IntegratorSettings, N_STATE, rate_constants, solve_kinetics

log = logging.getLogger(__name__)

MOLE_FRACTION_FLOOR = 1e-12
KINETICS_THETA = (0.7, 0.2, 0.1, 1000.0, 1000.0, 1000.0)
EXPONENTIAL_THETA = (1.0, 3.0)
KINETICS_AXES = ("t_m", "a0", "b0", "c0", "T")


@dataclass(frozen=True, eq=False)
class CandidateSpace:
    """Ordered finite set of candidate experiments.

    ``info[i]`` is the packed one-point information matrix of point ``i``
    and ``scalars[name][i]`` the raw value of integrand channel ``name``.
    The order is fixed; downstream tie-breaking uses the index.
    """

    coords: np.ndarray
    info: np.ndarray
    scalars: Mapping[str, np.ndarray] = field(default_factory=dict)
    coord_names: tuple[str, ...] = ()
    kind: str = "tabulated"

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        if coords.ndim == 1:
            coords = coords[:, None]
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "info", np.atleast_2d(np.asarray(self.info, dtype=float)))
        object.__setattr__(self, "scalars", {k: np.asarray(v, dtype=float) for k, v in self.scalars.items()})
        if not self.coord_names:
            object.__setattr__(self, "coord_names", tuple(f"x{j + 1}" for j in range(coords.shape[1])))
        if len(coords) == 0:
            raise GridEmpty("candidate space has no points")
        if len(self.info) != len(coords):
            raise ValueError("coords and info have different lengths")
        for name, vals in self.scalars.items():
            if vals.shape != (len(coords),):
                raise ValueError(f"scalar channel {name!r} has the wrong length")

    def __len__(self) -> int:
        return len(self.coords)

    @property
    def d_theta(self) -> int:
        return linalg.dim_from_packed(self.info.shape[1])

    @property
    def dim_x(self) -> int:
        return self.coords.shape[1]

    def matrix(self, i: int) -> np.ndarray:
        return linalg.unpack(self.info[i], self.d_theta)

    def matrices(self, indices) -> np.ndarray:
        return linalg.unpack(self.info[np.asarray(indices, dtype=np.int64)], self.d_theta)

    def channel(self, name: str) -> np.ndarray:
        try:
            return self.scalars[name]
        except KeyError:
            raise KeyError(f"unknown scalar channel {name!r}; have {sorted(self.scalars)}") from None

    def index_of(self, point) -> int:
        """Index of the candidate with exactly these coordinates."""
        point = np.atleast_1d(np.asarray(point, dtype=float))
        hits = np.flatnonzero(np.all(self.coords == point, axis=1))
        if hits.size == 0:
            # tolerate decimal round-off in user-written coordinates
            hits = np.flatnonzero(np.all(np.abs(self.coords - point) <= 1e-9 * (1 + np.abs(point)), axis=1))
        if hits.size == 0:
            raise KeyError(f"{point.tolist()} is not a candidate point")
        return int(hits[0])

    # grid neighbourhoods ---------------------------------------------------

    @cached_property
    def _ranks(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        ranks = np.empty(self.coords.shape, dtype=np.int64)
        sizes = []
        for j in range(self.dim_x):
            uniq, inv = np.unique(self.coords[:, j], return_inverse=True)
            ranks[:, j] = inv.ravel()
            sizes.append(len(uniq))
        radix = np.ones(self.dim_x, dtype=np.int64)
        for j in range(self.dim_x - 2, -1, -1):
            radix[j] = radix[j + 1] * sizes[j + 1]
        codes = ranks @ radix
        order = np.argsort(codes, kind="stable")
        return ranks, np.array(sizes), radix, codes[order], order

    def neighbors(self, indices, radius: int = 1) -> np.ndarray:
        """Candidates within ``radius`` grid steps (per coordinate) of ``indices``.

        Grid steps are ranks among the distinct values of each coordinate, so
        this works for any space, gridded or not. The points themselves are
        excluded; the result is sorted ascending.
        """
        ranks, sizes, radix, sorted_codes, order = self._ranks
        indices = np.atleast_1d(np.asarray(indices, dtype=np.int64))
        if indices.size == 0:
            return indices
        grids = np.meshgrid(*[np.arange(-radius, radius + 1)] * self.dim_x, indexing="ij")
        offsets = np.stack([g.ravel() for g in grids], axis=1)
        offsets = offsets[np.any(offsets != 0, axis=1)]
        cand = ranks[indices][:, None, :] + offsets[None, :, :]
        cand = cand.reshape(-1, self.dim_x)
        ok = np.all(cand >= 0, axis=1) & np.all(cand < sizes, axis=1)
        codes = cand[ok] @ radix
        pos = np.searchsorted(sorted_codes, codes)
        pos = np.minimum(pos, len(sorted_codes) - 1)
        found = order[pos[sorted_codes[pos] == codes]]
        return np.setdiff1d(np.unique(found), indices)

    # validation -------------------------------------------------------------

    def validate(self, psd_sample: int | None = None, seed: int = 0) -> None:
        """Check point uniqueness and PSD-ness of the stored matrices.

        ``psd_sample`` limits the PSD scan to a random subset of that size.
        """
        _, first = np.unique(self.coords, axis=0, return_index=True)
        if len(first) != len(self):
            dup = np.setdiff1d(np.arange(len(self)), first)
            raise DuplicatePoint(int(dup[0]))
        if psd_sample is None or psd_sample >= len(self):
            idx = np.arange(len(self))
        else:
            idx = np.sort(np.random.default_rng(seed).choice(len(self), psd_sample, replace=False))
        for start in range(0, len(idx), 65536):
            chunk = idx[start:start + 65536]
            ok = linalg.is_psd(self.matrices(chunk))
            if not np.all(ok):
                raise NonPsdRow(int(chunk[np.argmin(ok)]))


@dataclass(frozen=True)
class GridAxis:
    min: float
    max: float
    step: float

    def values(self) -> np.ndarray:
        if self.step <= 0:
            raise GridEmpty(f"non-positive step {self.step}")
        n = math.floor((self.max - self.min) / self.step + 1e-9)
        if n < 0:
            raise GridEmpty(f"empty axis [{self.min}, {self.max}]")
        return np.round(self.min + self.step * np.arange(n + 1), 12)


@dataclass(frozen=True)
class ModelConfig:
    kind: str
    theta_bar: tuple[float, ...] = ()
    grid: Mapping[str, GridAxis] = field(default_factory=dict)
    noise: str = "default"
    ode: IntegratorSettings = IntegratorSettings()
    path: str | None = None

    def __post_init__(self):
        if self.kind not in ("exponential", "kinetics", "tabulated"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        expected = {"exponential": 2, "kinetics": 6}.get(self.kind)
        if expected is not None and len(self.theta_bar) != expected:
            raise ValueError(f"{self.kind} model needs {expected} parameters, got {len(self.theta_bar)}")


def exponential_config(step: float = 1e-3, theta_bar=EXPONENTIAL_THETA) -> ModelConfig:
    return ModelConfig("exponential", tuple(theta_bar), {"x": GridAxis(-1.0, 1.0, step)}, "unit")


def kinetics_config(
    t_step: float = 1.0,
    frac_step: float = 0.01,
    T_step: float = 1.0,
    theta_bar=KINETICS_THETA,
    ode: IntegratorSettings = IntegratorSettings(),
) -> ModelConfig:
    grid = {
        "t_m": GridAxis(1.0, 10.0, t_step),
        "a0": GridAxis(0.5, 1.0, frac_step),
        "b0": GridAxis(0.1, 0.7, frac_step),
        "c0": GridAxis(0.1, 0.7, frac_step),
        "T": GridAxis(300.0, 700.0, T_step),
    }
    return ModelConfig("kinetics", tuple(theta_bar), grid, "mole_fraction", ode)


def arrhenius_rate(i: int, T: float, theta) -> float:
    """Rate constant of reaction ``i`` (1-based) at temperature ``T``."""
    if not 1 <= i <= 3:
        raise ValueError("reaction index must be 1, 2 or 3")
    return float(rate_constants(T, theta)[i - 1])


def exponential_information(x, theta=EXPONENTIAL_THETA) -> np.ndarray:
    """Dense one-point information matrices, shape ``x.shape + (2, 2)``."""
    x = np.asarray(x, dtype=float)
    t1, t2 = theta
    jac = np.stack([np.exp(t2 * x), t1 * x * np.exp(t2 * x)], axis=-1)
    return jac[..., :, None] * jac[..., None, :]


def build_exponential_space(cfg: ModelConfig | None = None) -> CandidateSpace:
    cfg = cfg or exponential_config()
    if cfg.kind != "exponential":
        raise ValueError("not an exponential model config")
    x = cfg.grid["x"].values()
    if x.size == 0:
        raise GridEmpty("exponential grid is empty")
    info = linalg.pack(exponential_information(x, cfg.theta_bar))
    scalars = {"x": x, "indicator_pos": (x > 0).astype(float)}
    return CandidateSpace(x[:, None], info, scalars, ("x",), "exponential")


def composition_grid(cfg: ModelConfig) -> np.ndarray:
    """Initial compositions on the grid with ``a0 + b0 + c0 = 1``, lexicographic."""
    a, b, c = (cfg.grid[k].values() for k in ("a0", "b0", "c0"))
    A, B, C = np.meshgrid(a, b, c, indexing="ij")
    keep = np.abs(A + B + C - 1.0) <= 1e-9
    return np.stack([A[keep], B[keep], C[keep]], axis=1)


def kinetics_information(s: np.ndarray, s_theta: np.ndarray) -> np.ndarray:
    """Packed ``100 * s_theta^T diag(s)^-1 s_theta`` for stacks of states."""
    G = s_theta * np.sqrt(100.0 / s)[..., :, None]
    return linalg.pack(np.einsum("...ki,...kj->...ij", G, G))


def build_kinetics_space(cfg: ModelConfig | None = None, threads: int = 1, chunk: int = 8192) -> CandidateSpace:
    """Integrate the kinetics model over the grid and cache ``m(x)`` per point.

    Points are ordered lexicographically over ``(t_m, a0, b0, c0, T)``.
    Points whose predicted mole fractions fall below ``1e-12`` are dropped
    (their noise covariance is singular) and counted in the log.
    """
    cfg = cfg or kinetics_config()
    if cfg.kind != "kinetics":
        raise ValueError("not a kinetics model config")
    t_grid = cfg.grid["t_m"].values()
    temps = cfg.grid["T"].values()
    comps = composition_grid(cfg)
    if t_grid.size == 0 or temps.size == 0 or comps.size == 0:
        raise GridEmpty("kinetics grid is empty")
    if np.any(t_grid < 0):
        raise ValueError("measurement times must be non-negative")

    n_combo = len(comps) * len(temps)
    s0 = np.repeat(comps, len(temps), axis=0)
    T = np.tile(temps, len(comps))
    n_t = len(t_grid)
    p = linalg.packed_size(6)
    info = np.empty((n_t, n_combo, p))
    fractions = np.empty((n_t, n_combo, N_STATE))

    def work(lo: int) -> None:
        hi = min(lo + chunk, n_combo)
        out = solve_kinetics(s0[lo:hi], T[lo:hi], cfg.theta_bar, t_grid, cfg.ode)
        out = np.swapaxes(out, 0, 1)
        s = out[..., :N_STATE]
        fractions[:, lo:hi] = s
        with np.errstate(divide="ignore", invalid="ignore"):
            info[:, lo:hi] = kinetics_information(np.maximum(s, MOLE_FRACTION_FLOOR), out[..., N_STATE:].reshape(s.shape[:-1] + (3, 6)))

    starts = range(0, n_combo, chunk)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            list(pool.map(work, starts))
    else:
        for lo in starts:
            work(lo)

    coords = np.empty((n_t, n_combo, 5))
    coords[..., 0] = t_grid[:, None]
    coords[..., 1:4] = s0[None]
    coords[..., 4] = T[None]
    coords = coords.reshape(-1, 5)
    info = info.reshape(-1, p)
    fractions = fractions.reshape(-1, N_STATE)

    keep = np.all(fractions > MOLE_FRACTION_FLOOR, axis=1)
    if not np.all(keep):
        log.warning("dropped %d candidate points with mole fraction <= %g", int(np.sum(~keep)), MOLE_FRACTION_FLOOR)
        coords, info, fractions = coords[keep], info[keep], fractions[keep]
    scalars = {
        "time": coords[:, 0].copy(),
        "roi": fractions[:, 1] / coords[:, 2],
        "s1": fractions[:, 0].copy(),
        "s2": fractions[:, 1].copy(),
        "s3": fractions[:, 2].copy(),
    }
    return CandidateSpace(coords, info, scalars, KINETICS_AXES, "kinetics")


def build_space(cfg: ModelConfig, threads: int = 1) -> CandidateSpace:
    if cfg.kind == "exponential":
        return build_exponential_space(cfg)
    if cfg.kind == "kinetics":
        return build_kinetics_space(cfg, threads=threads)
    if cfg.path is None:
        raise ValueError("tabulated model needs a path")
    return load_tabulated_space(cfg.path)


# candidate-table files -------------------------------------------------------


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def export_space(space: CandidateSpace, path) -> None:
    """Write ``space`` as a candidate-table file."""
    names = list(space.scalars)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([space.dim_x, space.d_theta, len(names), *names])
        cols = [space.coords, space.info] + [space.scalars[n][:, None] for n in names]
        table = np.hstack(cols)
        for row in table:
            w.writerow([_fmt(v) for v in row])


def load_tabulated_space(path) -> CandidateSpace:
    """Read a candidate-table file and validate it.

    Raises
    ------
    ParseError
        Malformed header or row (1-based line number).
    NonPsdRow, DuplicatePoint
        Invariant violations (0-based data row index).
    """
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(1, "empty file")
    header = rows[0]
    try:
        dim_x, d_theta, n_scalars = (int(v) for v in header[:3])
    except ValueError:
        raise ParseError(1, "header must start with dim_x,d_theta,n_scalars") from None
    names = [h.strip() for h in header[3:]]
    if dim_x < 1 or d_theta < 1 or n_scalars < 0 or len(names) != n_scalars:
        raise ParseError(1, "inconsistent header")
    if len(set(names)) != len(names):
        raise ParseError(1, "duplicate scalar channel names")
    p = linalg.packed_size(d_theta)
    width = dim_x + p + n_scalars
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != width:
            raise ParseError(lineno, f"expected {width} fields, got {len(row)}")
        try:
            vals = [float(c) for c in row]
        except ValueError as exc:
            raise ParseError(lineno, str(exc)) from None
        if not all(math.isfinite(v) for v in vals):
            raise ParseError(lineno, "non-finite value")
        data.append(vals)
    if not data:
        raise GridEmpty(f"{path}: no data rows")
    table = np.array(data)
    coords = table[:, :dim_x]
    info = table[:, dim_x:dim_x + p]
    scalars = {n: table[:, dim_x + p + j] for j, n in enumerate(names)}
    space = CandidateSpace(coords, info, scalars, kind="tabulated")
    space.validate()
    return space
