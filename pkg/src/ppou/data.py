"""Synthetic benchmark generators, CSV ingestion and splitting."""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    group_id: np.ndarray | None = None
    noise_floor: np.ndarray | None = None
    y_true: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.X.ndim != 2:
            raise DataError(f"X must be 2D, got shape {self.X.shape}")
        n = self.X.shape[0]
        if self.y.shape != (n,):
            raise DataError(f"y has shape {self.y.shape}, expected ({n},)")
        for name in ("group_id", "noise_floor", "y_true"):
            v = getattr(self, name)
            if v is not None and np.shape(v) != (n,):
                raise DataError(f"{name} has shape {np.shape(v)}, expected ({n},)")
        if self.noise_floor is not None and np.any(np.asarray(self.noise_floor) < 0):
            raise DataError("noise_floor must be nonnegative")

    def __len__(self):
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx)
        pick = lambda v: None if v is None else np.asarray(v)[idx]  # noqa: E731
        extras = {k: np.asarray(v)[idx] for k, v in self.extras.items() if np.shape(v)[:1] == (len(self),)}
        return replace(
            self,
            X=self.X[idx],
            y=self.y[idx],
            group_id=pick(self.group_id),
            noise_floor=pick(self.noise_floor),
            y_true=pick(self.y_true),
            provenance=dict(self.provenance),
            extras=extras,
        )


# ---------------------------------------------------------------- generators


def gen_sine_noise(n: int = 1024, alpha: float = 0.1, seed=0) -> Dataset:
    """``y = sin(2 pi x) + eps``, ``eps ~ N(0, (alpha x)**2)`` on evenly spaced ``x`` in [0, 1]."""
    if n < 2 or alpha < 0:
        raise DataError("need n >= 2 and alpha >= 0")
    rng = np.random.default_rng(seed)
    x = np.arange(n) / (n - 1)
    clean = np.sin(2.0 * np.pi * x)
    y = clean + alpha * x * rng.standard_normal(n)
    return Dataset(
        x[:, None], y, y_true=clean,
        provenance={"generator": "sine", "n": n, "alpha": alpha, "seed": seed},
    )


def gen_trefoil(n: int = 2048) -> Dataset:
    """Open trefoil knot sampled at ``n`` evenly spaced ``t`` in ``[0, 1.8 pi]``.

    The target is evaluated exactly as parameterized, logistic factor included.
    """
    if n < 2:
        raise DataError("need n >= 2")
    t = np.linspace(0.0, 1.8 * np.pi, n)
    X = np.column_stack([
        np.sin(t) + 2.0 * np.sin(2.0 * t),
        np.cos(t) - 2.0 * np.cos(2.0 * t),
        -np.sin(3.0 * t),
    ])
    y = np.pi * t - t**2 + (t**2 - np.pi * t) / (1.0 + np.exp(-100.0 * t))
    return Dataset(X, y, y_true=y.copy(), provenance={"generator": "trefoil", "n": n}, extras={"t": t})


def gen_swissroll(
    n: int = 2048,
    seed=0,
    t1_range=(1.5 * np.pi, 4.5 * np.pi),
    t2_range=(0.0, 10.0),
    sampling: str = "grid",
) -> Dataset:
    """Swiss roll ``x = (t1 cos t1, t2, t1 sin t1)`` with ``y = sqrt(s1) sin(2 pi s2)``.

    ``s`` is ``t`` min-max normalized over the sample. ``sampling="grid"``
    takes the first ``n`` points of a row-major lattice (so the corner
    ``t = (t1_min, t2_min)`` is always present); ``"uniform"`` draws ``t``
    uniformly with ``seed``.
    """
    if n < 4:
        raise DataError("need n >= 4")
    if sampling == "grid":
        n1 = math.ceil(math.sqrt(n))
        n2 = math.ceil(n / n1)
        g1, g2 = np.meshgrid(np.linspace(*t1_range, n1), np.linspace(*t2_range, n2), indexing="ij")
        t = np.column_stack([g1.ravel(), g2.ravel()])[:n]
    elif sampling == "uniform":
        rng = np.random.default_rng(seed)
        lo = np.array([t1_range[0], t2_range[0]])
        hi = np.array([t1_range[1], t2_range[1]])
        t = lo + (hi - lo) * rng.random((n, 2))
    else:
        raise DataError(f"unknown sampling {sampling!r}")
    tmin, tmax = t.min(axis=0), t.max(axis=0)
    s = (t - tmin) / np.where(tmax > tmin, tmax - tmin, 1.0)
    X = np.column_stack([t[:, 0] * np.cos(t[:, 0]), t[:, 1], t[:, 0] * np.sin(t[:, 0])])
    y = np.sqrt(s[:, 0]) * np.sin(2.0 * np.pi * s[:, 1])
    prov = {
        "generator": "swissroll", "n": n, "seed": seed, "sampling": sampling,
        "t1_range": list(map(float, t1_range)), "t2_range": list(map(float, t2_range)),
    }
    return Dataset(X, y, y_true=y.copy(), provenance=prov, extras={"t": t, "t_normalized": s})


def gen_rings(
    d: int = 10,
    n_rings: int = 4,
    n: int = 1024,
    seed=0,
    radius: float = 1.0,
    spacing: float = 1.0,
) -> Dataset:
    """Randomly oriented circles in ``R^d`` centred on the x1-axis.

    Ring ``r`` is ``c_r + radius (cos 2 pi t u_r + sin 2 pi t v_r)`` with
    orthonormal ``u_r, v_r`` and target ``sin(2 pi t + delta_r)``.
    """
    if d < 3 or n_rings < 1 or n % n_rings:
        raise DataError("need d >= 3, n_rings >= 1 and n divisible by n_rings")
    rng = np.random.default_rng(seed)
    m = n // n_rings
    t = np.arange(m) / m
    Xs, ys, labels = [], [], []
    for r in range(n_rings):
        g = rng.standard_normal((d, 2))
        u = g[:, 0] / np.linalg.norm(g[:, 0])
        v = g[:, 1] - (g[:, 1] @ u) * u
        v /= np.linalg.norm(v)
        v -= (v @ u) * u
        v /= np.linalg.norm(v)
        delta = rng.uniform(0.0, 2.0 * np.pi)
        center = np.zeros(d)
        center[0] = r * spacing
        Xs.append(center + radius * (np.cos(2 * np.pi * t)[:, None] * u + np.sin(2 * np.pi * t)[:, None] * v))
        ys.append(np.sin(2.0 * np.pi * t + delta))
        labels.append(np.full(m, r))
    y = np.concatenate(ys)
    prov = {"generator": "rings", "d": d, "n_rings": n_rings, "n": n, "seed": seed,
            "radius": radius, "spacing": spacing}
    return Dataset(np.vstack(Xs), y, y_true=y.copy(), provenance=prov,
                   extras={"ring": np.concatenate(labels), "t": np.tile(t, n_rings)})


GENERATORS = {
    "sine": gen_sine_noise,
    "trefoil": gen_trefoil,
    "swissroll": gen_swissroll,
    "rings": gen_rings,
}


def generate(name: str, **params) -> Dataset:
    try:
        gen = GENERATORS[name]
    except KeyError:
        raise DataError(f"unknown generator {name!r}; choose from {sorted(GENERATORS)}") from None
    return gen(**params)


# ---------------------------------------------------------------- CSV

_XCOL = re.compile(r"^x(\d+)$")


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def save_csv(dataset: Dataset, path) -> None:
    """Write ``x1..xd, y[, group][, noise_floor][, y_true]`` with 17 significant digits."""
    cols = [f"x{i + 1}" for i in range(dataset.n_features)] + ["y"]
    extra = []
    if dataset.group_id is not None:
        extra.append(("group", dataset.group_id, lambda v: str(int(v))))
    if dataset.noise_floor is not None:
        extra.append(("noise_floor", dataset.noise_floor, _fmt))
    if dataset.y_true is not None:
        extra.append(("y_true", dataset.y_true, _fmt))
    cols += [e[0] for e in extra]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for i in range(len(dataset)):
            row = [_fmt(v) for v in dataset.X[i]] + [_fmt(dataset.y[i])]
            row += [fmt(vals[i]) for _, vals, fmt in extra]
            w.writerow(row)


def load_csv(
    path,
    inputs=None,
    target: str = "y",
    group: str | None = "group",
    noise: str | None = "noise_floor",
    clean: str | None = "y_true",
    require_target: bool = True,
) -> Dataset:
    """Parse a header-row CSV.

    ``inputs`` defaults to every ``x<k>`` column in numeric order. Optional
    columns are used when present in the header.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        rows = list(reader)
    index = {h: i for i, h in enumerate(header)}
    if inputs is None:
        inputs = sorted((h for h in header if _XCOL.match(h)), key=lambda h: int(_XCOL.match(h)[1]))
        if not inputs:
            raise DataError(f"{path}: no input columns named x1..xd")
    missing = [c for c in inputs if c not in index]
    if require_target and target not in index:
        missing.append(target)
    if missing:
        raise DataError(f"{path}: missing columns {missing}")

    values = np.empty((len(rows), len(header)))
    for r, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r} has {len(row)} fields, header has {len(header)}")
        for c, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{path}: row {r}, column {header[c]!r}: cannot parse {cell!r}") from None
            if not math.isfinite(v):
                raise DataError(f"{path}: row {r}, column {header[c]!r}: non-finite value {cell!r}")
            values[r - 2, c] = v

    def col(name):
        return values[:, index[name]] if name is not None and name in index else None

    X = values[:, [index[c] for c in inputs]]
    y = col(target) if target in index else np.full(len(rows), np.nan)
    gid = col(group)
    return Dataset(
        X, y,
        group_id=None if gid is None else gid.astype(np.int64),
        noise_floor=col(noise),
        y_true=col(clean),
        provenance={"source": str(path)},
    )


# ---------------------------------------------------------------- splitting and scaling


def split(dataset: Dataset, fraction: float = 0.8, seed=0) -> tuple[Dataset, Dataset]:
    """Seeded shuffle, first ``round(fraction * N)`` rows become the training set."""
    if not 0 < fraction < 1:
        raise DataError("fraction must lie strictly between 0 and 1")
    n = len(dataset)
    n_train = int(round(fraction * n))
    if n_train == 0 or n_train == n:
        raise DataError(f"split of {n} rows at {fraction} leaves one side empty")
    perm = np.random.default_rng(seed).permutation(n)
    return dataset.subset(np.sort(perm[:n_train])), dataset.subset(np.sort(perm[n_train:]))


def input_box_map(X) -> tuple[np.ndarray, np.ndarray]:
    """Shift and scale mapping each column of ``X`` affinely onto ``[-1, 1]``.

    Constant columns are shifted to zero and left unscaled.
    """
    X = np.asarray(X, dtype=np.float64)
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = hi - lo
    scale = np.where(span > 0, 2.0 / np.where(span > 0, span, 1.0), 1.0)
    shift = np.where(span > 0, (hi + lo) / 2.0, lo)
    return shift, scale


class BoxScaler:
    """Affine map of training inputs onto ``[-1, 1]^d``."""

    def fit(self, X, y=None):
        self.shift_, self.scale_ = input_box_map(X)
        return self

    def transform(self, X):
        return (np.asarray(X, dtype=np.float64) - self.shift_) * self.scale_

    def inverse_transform(self, Z):
        return np.asarray(Z, dtype=np.float64) / self.scale_ + self.shift_

    def fit_transform(self, X, y=None):
        return self.fit(X).transform(X)
