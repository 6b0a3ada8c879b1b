"""Dataset container and CSV reading/writing."""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field

import numpy as np


class DataError(ValueError):
    """Malformed input data; the message names the offending row/column."""


@dataclass(frozen=True)
class Dataset:
    """``n`` observations of response ``y``, carriers ``X`` and ``t`` in [0, 1].

    ``z`` holds log responses when they are known exactly (simulated data or
    responses supplied already on the log scale).
    """

    y: np.ndarray
    X: np.ndarray
    t: np.ndarray
    z: np.ndarray | None = None
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        t = np.asarray(self.t, dtype=float).ravel()
        if not (X.shape[0] == y.size == t.size):
            raise DataError("y, X and t must have the same number of rows")
        if np.any(t < 0.0) or np.any(t > 1.0):
            raise DataError("t values must lie in [0, 1]")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "t", t)
        if self.z is not None:
            object.__setattr__(self, "z", np.asarray(self.z, float).ravel())

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def log_response(self) -> np.ndarray:
        if self.z is not None:
            return self.z
        if np.any(self.y <= 0):
            bad = int(np.nonzero(self.y <= 0)[0][0])
            raise DataError(
                f"response in row {bad + 1} is not positive; log-Gamma fits "
                "need positive responses (or pre-logged input)")
        return np.log(self.y)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        z = None if self.z is None else self.z[idx]
        return Dataset(self.y[idx], self.X[idx], self.t[idx], z, dict(self.meta))

    def drop(self, i: int) -> "Dataset":
        keep = np.ones(self.n, dtype=bool)
        keep[i] = False
        return self.subset(keep)


_XCOL = re.compile(r"^x(\d+)$")


def read_csv(path, rescale_t: bool = False) -> Dataset:
    """Read a CSV with header ``y, t, x1..xp`` (column order is free)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        rows = list(reader)
    for col in ("y", "t"):
        if col not in header:
            raise DataError(f"{path}: missing required column '{col}'")
    xcols = sorted((int(m.group(1)), j) for j, h in enumerate(header)
                   if (m := _XCOL.match(h)))
    if not xcols:
        raise DataError(f"{path}: no carrier columns x1..xp found")
    expected = list(range(1, len(xcols) + 1))
    if [i for i, _ in xcols] != expected:
        raise DataError(f"{path}: carrier columns must be x1..x{len(xcols)}")
    iy, it = header.index("y"), header.index("t")
    data = np.empty((len(rows), 2 + len(xcols)))
    names = ["y", "t"] + [header[j] for _, j in xcols]
    cols = [iy, it] + [j for _, j in xcols]
    for r, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}: row {r} has {len(row)} fields, "
                            f"expected {len(header)}")
        for c, (name, j) in enumerate(zip(names, cols)):
            try:
                val = float(row[j])
            except ValueError:
                raise DataError(
                    f"{path}: row {r}, column '{name}': "
                    f"cannot parse {row[j]!r} as a number") from None
            if not math.isfinite(val):
                raise DataError(f"{path}: row {r}, column '{name}' is not finite")
            data[r - 2, c] = val
    if data.shape[0] == 0:
        raise DataError(f"{path}: no data rows")
    t = data[:, 1]
    meta = {}
    if rescale_t:
        lo, hi = float(t.min()), float(t.max())
        if hi <= lo:
            raise DataError(f"{path}: column 't' is constant; cannot rescale")
        t = (t - lo) / (hi - lo)
        meta["t_rescale"] = {"min": lo, "max": hi}
    elif np.any(t < 0) or np.any(t > 1):
        bad = int(np.nonzero((t < 0) | (t > 1))[0][0]) + 2
        raise DataError(f"{path}: row {bad}, column 't' lies outside [0, 1]; "
                        "use rescaling to map t onto [0, 1]")
    return Dataset(data[:, 0], data[:, 2:], t, meta=meta)


def write_csv(path, data: Dataset):
    header = ["y", "t"] + [f"x{j + 1}" for j in range(data.p)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(data.n):
            writer.writerow([repr(float(data.y[i])), repr(float(data.t[i]))]
                            + [repr(float(v)) for v in data.X[i]])
