"""Readers for the value/policy CSV artifacts.

The solver CLI writes long-format tables with columns
``s,q,nu1,t,V,mode,rate`` where every written slice covers a full
rectangular block of grid nodes.  This module parses such a file once,
keeps the raw field strings next to the parsed floats (so sidecar CSVs
can reproduce the artifact text byte-for-byte), and answers slice
queries: a plane through the block at two pinned coordinates, or a
family of curves against the belief coordinate.

Slice selectors must hit grid nodes exactly; a miss raises
:class:`SliceError` whose message lists the node values that are
available, so a caller can see immediately what the artifact contains.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "ArtifactError",
    "EmptyArtifactError",
    "SliceError",
    "ValuePolicyTable",
    "PlaneSlice",
    "CurveFamily",
    "load_value_policy",
]

COORDS = ("s", "q", "nu1", "t")
REQUIRED = COORDS + ("V", "mode")

MODE_WAIT = 0
MODE_BUY = 1
MODE_SELL = 2


class ArtifactError(Exception):
    """A value/policy artifact cannot be read or is malformed."""


class EmptyArtifactError(ArtifactError):
    """The artifact has a header but no data rows (or no content at all)."""


class SliceError(ArtifactError):
    """A requested slice coordinate is not a node of the artifact's grid."""


def _fmt_levels(levels: np.ndarray, limit: int = 24) -> str:
    vals = [f"{v:g}" for v in levels]
    if len(vals) > limit:
        shown = ", ".join(vals[:limit])
        return f"[{shown}, ...] ({len(vals)} values)"
    return "[" + ", ".join(vals) + "]"


@dataclass(frozen=True)
class PlaneSlice:
    """A full rectangular plane through the table at two pinned coordinates.

    ``z`` and ``mode`` are indexed ``[iy, ix]`` to match matplotlib's
    meshgrid convention; ``rows`` are the raw CSV fields of the selected
    artifact rows ordered x-major then y, for verbatim sidecar output.
    """

    x_name: str
    y_name: str
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    mode: np.ndarray
    rows: list[tuple[str, str, str, str]]  # (x, y, V, mode) raw strings


@dataclass(frozen=True)
class CurveFamily:
    """V against nu1 at fixed (s, t), one curve per storage level."""

    nu: np.ndarray
    q_values: tuple[float, ...]
    v: np.ndarray  # shape (len(q_values), len(nu))
    rows: list[tuple[str, str, str]]  # (nu1, q, V) raw strings


@dataclass
class ValuePolicyTable:
    """One parsed value/policy CSV plus its per-coordinate node sets."""

    path: Path
    raw: dict[str, list[str]] = field(repr=False)
    cols: dict[str, np.ndarray] = field(repr=False)
    mode: np.ndarray = field(repr=False)
    levels: dict[str, np.ndarray] = field(repr=False)

    def __len__(self) -> int:
        return self.mode.size

    def check_selector(self, name: str, value: float) -> float:
        """Validate that `value` is a grid node of coordinate `name`."""
        if name not in COORDS:
            raise SliceError(f"unknown slice coordinate {name!r}; expected one of {COORDS}")
        lv = self.levels[name]
        value = float(value)
        if not np.any(lv == value):
            raise SliceError(
                f"{name}={value:g} is not a grid slice of {self.path.name}; "
                f"available {name} slices: {_fmt_levels(lv)}"
            )
        return value

    def nearest(self, name: str, target: float) -> float:
        """The grid node of coordinate `name` closest to `target`."""
        lv = self.levels[name]
        return float(lv[np.argmin(np.abs(lv - float(target)))])

    def plane(self, fixed: dict[str, float]) -> PlaneSlice:
        """Slice the plane left free by pinning the two coordinates in `fixed`.

        The price axis, when free, is reported as x; the plane must cover
        its node rectangle exactly once per node.
        """
        if len(fixed) != 2:
            raise SliceError(
                f"a plane needs exactly 2 pinned coordinates, got {sorted(fixed)}"
            )
        pinned = {name: self.check_selector(name, val) for name, val in fixed.items()}
        free = [c for c in COORDS if c not in pinned]
        x_name, y_name = free if free[0] == "s" else (free[1], free[0]) if free[1] == "s" else free
        mask = np.ones(len(self), dtype=bool)
        for name, val in pinned.items():
            mask &= self.cols[name] == val
        xs = self.levels[x_name]
        ys = self.levels[y_name]
        sel = np.nonzero(mask)[0]
        if sel.size != xs.size * ys.size:
            raise ArtifactError(
                f"slice {pinned} of {self.path.name} has {sel.size} rows; "
                f"expected a full {xs.size}x{ys.size} plane"
            )
        xi = np.searchsorted(xs, self.cols[x_name][sel])
        yi = np.searchsorted(ys, self.cols[y_name][sel])
        z = np.full((ys.size, xs.size), np.nan)
        md = np.full((ys.size, xs.size), -1, dtype=int)
        z[yi, xi] = self.cols["V"][sel]
        md[yi, xi] = self.mode[sel]
        if np.any(md < 0):
            raise ArtifactError(
                f"slice {pinned} of {self.path.name} does not cover the node "
                "rectangle exactly once per node"
            )
        order = sel[np.lexsort((self.cols[y_name][sel], self.cols[x_name][sel]))]
        rows = [
            (self.raw[x_name][i], self.raw[y_name][i], self.raw["V"][i], self.raw["mode"][i])
            for i in order
        ]
        return PlaneSlice(x_name=x_name, y_name=y_name, x=xs, y=ys, z=z, mode=md, rows=rows)

    def curves(self, s: float, t: float, q_values: tuple[float, ...]) -> CurveFamily:
        """V against nu1 at fixed (s, t), one curve per entry of `q_values`."""
        s = self.check_selector("s", s)
        t = self.check_selector("t", t)
        qs = tuple(self.check_selector("q", q) for q in q_values)
        if not qs:
            raise SliceError("a curve family needs at least one storage level")
        nu = self.levels["nu1"]
        v = np.empty((len(qs), nu.size))
        rows: list[tuple[str, str, str]] = []
        base = (self.cols["s"] == s) & (self.cols["t"] == t)
        for ci, qv in enumerate(qs):
            sel = np.nonzero(base & (self.cols["q"] == qv))[0]
            if sel.size != nu.size:
                raise ArtifactError(
                    f"curve at s={s:g}, t={t:g}, q={qv:g} of {self.path.name} has "
                    f"{sel.size} rows; expected one per nu1 node ({nu.size})"
                )
            order = sel[np.argsort(self.cols["nu1"][sel])]
            v[ci] = self.cols["V"][order]
            rows.extend(
                (self.raw["nu1"][i], self.raw["q"][i], self.raw["V"][i]) for i in order
            )
        return CurveFamily(nu=nu, q_values=qs, v=v, rows=rows)


def load_value_policy(path: Path | str) -> ValuePolicyTable:
    """Parse a long-format value/policy CSV into a queryable table."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(
            f"value/policy artifact not found: {path} (run the solver CLI's "
            "'all' or 'solve' subcommand to produce it)"
        )
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyArtifactError(f"policy artifact {path} is empty")
        missing = [c for c in REQUIRED if c not in header]
        if missing:
            raise ArtifactError(
                f"policy artifact {path} lacks required columns {missing}; "
                f"found {header}"
            )
        idx = {c: header.index(c) for c in REQUIRED}
        raw: dict[str, list[str]] = {c: [] for c in REQUIRED}
        for row in reader:
            if not row:
                continue
            for c in REQUIRED:
                raw[c].append(row[idx[c]])
    if not raw["V"]:
        raise EmptyArtifactError(f"policy artifact {path} has no data rows")
    cols = {c: np.array(raw[c], dtype=float) for c in COORDS + ("V",)}
    mode = np.array(raw["mode"], dtype=int)
    bad = set(np.unique(mode)) - {MODE_WAIT, MODE_BUY, MODE_SELL}
    if bad:
        raise ArtifactError(f"policy artifact {path} has unknown mode codes {sorted(bad)}")
    levels = {c: np.unique(cols[c]) for c in COORDS}
    return ValuePolicyTable(path=path, raw=raw, cols=cols, mode=mode, levels=levels)
