"""Figure rendering for solver artifacts.

A :class:`FigureSpec` names one image: the artifact CSV it reads, the
slice selectors pinning the view, the figure kind, and the output path.
:func:`render` draws it and writes the plotted arrays next to the image
as a sidecar CSV whose fields are the artifact's own text, verbatim —
diffing a sidecar against the source artifact shows exactly what was
plotted.

Three kinds are supported:

* ``surface``    — the value function over the free coordinate plane;
* ``region-map`` — the policy modes over the free plane, colored with the
  fixed convention red = buy, green = wait, blue = sell;
* ``line``       — value against the belief coordinate at fixed price and
  time, one curve per storage level.

The named presets ``fig2`` … ``fig7`` bundle the views of the reference
parameter study: value surface and policy map over (s, q); the same pair
for three belief levels; the (s, nu1) and (s, t) planes through mid
storage; the value-vs-belief comparison of an empty and a full store;
and the horizon comparison against the ``horizon3/`` sub-run.

Rendering never modifies its inputs, and nothing is written until the
requested slice has been validated against the artifact's grid.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import csv

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.colors import BoundaryNorm, ListedColormap
from matplotlib.patches import Patch

from .tables import (
    MODE_BUY,
    MODE_SELL,
    MODE_WAIT,
    SliceError,
    ValuePolicyTable,
    load_value_policy,
)

__all__ = [
    "FigureSpec",
    "render",
    "render_preset",
    "PRESETS",
    "REGION_COLORS",
    "KINDS",
]

KINDS = ("surface", "region-map", "line")

# Paper-convention region colors: energy is bought in the red band (low
# prices), held in the green band, sold in the blue band (high prices).
REGION_COLORS = {MODE_BUY: "#d62728", MODE_WAIT: "#2ca02c", MODE_SELL: "#1f77b4"}
REGION_NAMES = {MODE_BUY: "buy", MODE_WAIT: "wait", MODE_SELL: "sell"}
_REGION_CMAP = ListedColormap([REGION_COLORS[m] for m in (MODE_WAIT, MODE_BUY, MODE_SELL)])
_REGION_NORM = BoundaryNorm([-0.5, 0.5, 1.5, 2.5], _REGION_CMAP.N)

_AX_LABELS = {
    "s": "price $s$",
    "q": "storage level $q$",
    "nu1": r"belief $\nu_1$",
    "t": "time $t$",
}
_SEL_SYMBOLS = {"s": "s", "q": "q", "nu1": r"\nu_1", "t": "t"}

_LINE_STYLES = (
    {"color": "tab:red", "linestyle": "--"},
    {"color": "tab:blue", "linestyle": "-"},
    {"color": "tab:green", "linestyle": "-."},
    {"color": "tab:purple", "linestyle": ":"},
)

_DPI = 120


@dataclass(frozen=True)
class FigureSpec:
    """One figure: artifact path, slice selectors, kind, and output path.

    Exactly the selectors that pin the view are set; the coordinates left
    `None` span the plot.  Every set selector must be a grid node of the
    artifact (validated before anything is drawn).  ``q_curves`` applies
    to the ``line`` kind only: one curve per storage level.
    """

    artifact: Path
    kind: str
    out: Path
    t: float | None = None
    nu1: float | None = None
    q: float | None = None
    s: float | None = None
    q_curves: tuple[float, ...] = ()
    title: str | None = None

    def selectors(self) -> dict[str, float]:
        pinned = {"s": self.s, "q": self.q, "nu1": self.nu1, "t": self.t}
        return {k: float(v) for k, v in pinned.items() if v is not None}


def _sel_label(selectors: dict[str, float]) -> str:
    parts = [f"${_SEL_SYMBOLS[k]} = {v:g}$" for k, v in selectors.items()]
    return ", ".join(parts)


def _write_sidecar(path: Path, header: list[str], rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


@functools.lru_cache(maxsize=8)
def _load(path_str: str) -> ValuePolicyTable:
    return load_value_policy(Path(path_str))


def render(spec: FigureSpec) -> Path:
    """Draw one figure and its sidecar CSV; return the image path.

    Raises before writing anything when the artifact is missing or empty,
    the kind is unknown, or a selector misses the artifact's grid.
    """
    if spec.kind not in KINDS:
        raise ValueError(f"unsupported figure kind {spec.kind!r}; expected one of {KINDS}")
    table = _load(str(Path(spec.artifact).resolve()))
    selectors = spec.selectors()
    out = Path(spec.out)
    out.parent.mkdir(parents=True, exist_ok=True)

    if spec.kind == "line":
        for name in ("s", "t"):
            if name not in selectors:
                raise SliceError(f"the line kind pins s and t; selector {name!r} is missing")
        family = table.curves(selectors["s"], selectors["t"], spec.q_curves)
        fig, ax = plt.subplots(figsize=(6.4, 4.4))
        for ci, qv in enumerate(family.q_values):
            style = _LINE_STYLES[ci % len(_LINE_STYLES)]
            ax.plot(family.nu, family.v[ci], label=f"$q = {qv:g}$", linewidth=2.0, **style)
        ax.set_xlabel(_AX_LABELS["nu1"])
        ax.set_ylabel("value $V$")
        ax.grid(alpha=0.3)
        ax.legend()
        ax.set_title(spec.title or f"value at {_sel_label(selectors)}")
        fig.tight_layout()
        fig.savefig(out, dpi=_DPI)
        plt.close(fig)
        _write_sidecar(out.with_suffix(".csv"), ["nu1", "q", "V"], family.rows)
        return out

    plane = table.plane(selectors)
    if spec.kind == "surface":
        fig = plt.figure(figsize=(7.0, 5.2))
        ax = fig.add_subplot(projection="3d")
        xm, ym = np.meshgrid(plane.x, plane.y)
        surf = ax.plot_surface(
            xm, ym, plane.z, cmap="viridis", linewidth=0, antialiased=True
        )
        ax.set_xlabel(_AX_LABELS[plane.x_name])
        ax.set_ylabel(_AX_LABELS[plane.y_name])
        ax.set_zlabel("value $V$")
        ax.set_title(spec.title or f"value function at {_sel_label(selectors)}")
        fig.colorbar(surf, shrink=0.55, pad=0.1)
        fig.savefig(out, dpi=_DPI)
        plt.close(fig)
        _write_sidecar(
            out.with_suffix(".csv"),
            [plane.x_name, plane.y_name, "V"],
            [(r[0], r[1], r[2]) for r in plane.rows],
        )
        return out

    fig, ax = plt.subplots(figsize=(6.6, 4.6))
    ax.pcolormesh(
        plane.x, plane.y, plane.mode, cmap=_REGION_CMAP, norm=_REGION_NORM,
        shading="nearest",
    )
    handles = [
        Patch(facecolor=REGION_COLORS[m], label=REGION_NAMES[m])
        for m in (MODE_BUY, MODE_WAIT, MODE_SELL)
    ]
    ax.legend(handles=handles, loc="upper left", framealpha=0.9)
    ax.set_xlabel(_AX_LABELS[plane.x_name])
    ax.set_ylabel(_AX_LABELS[plane.y_name])
    ax.set_title(spec.title or f"charging policy at {_sel_label(selectors)}")
    fig.tight_layout()
    fig.savefig(out, dpi=_DPI)
    plt.close(fig)
    _write_sidecar(
        out.with_suffix(".csv"),
        [plane.x_name, plane.y_name, "mode"],
        [(r[0], r[1], r[3]) for r in plane.rows],
    )
    return out


def _t0_table(artifact_dir: Path) -> tuple[Path, ValuePolicyTable]:
    path = artifact_dir / "value_policy_t0.csv"
    return path, _load(str(path.resolve()))


def _pair(path: Path, out_dir: Path, stem: str, *, t: float | None = None,
          nu1: float | None = None, q: float | None = None,
          title_tag: str = "") -> list[FigureSpec]:
    """A value-surface/policy-map pair over the plane left free."""
    sel = {k: v for k, v in (("t", t), ("nu1", nu1), ("q", q)) if v is not None}
    label = _sel_label(sel)
    tag = f"{title_tag} " if title_tag else ""
    return [
        FigureSpec(artifact=path, kind="surface", out=out_dir / f"{stem}_value.png",
                   title=f"value function {tag}at {label}", **sel),
        FigureSpec(artifact=path, kind="region-map", out=out_dir / f"{stem}_policy.png",
                   title=f"charging policy {tag}at {label}", **sel),
    ]


def preset_fig2(artifact_dir: Path, out_dir: Path) -> list[FigureSpec]:
    """Value surface and policy map over (s, q) at the mid belief, t = 0."""
    path, table = _t0_table(artifact_dir)
    t0 = float(table.levels["t"][0])
    return _pair(path, out_dir, "fig2", t=t0, nu1=table.nearest("nu1", 0.5))


def preset_fig3(artifact_dir: Path, out_dir: Path) -> list[FigureSpec]:
    """The fig2 pair for growing belief levels nu1 in {0, 1/2, 1}."""
    path, table = _t0_table(artifact_dir)
    t0 = float(table.levels["t"][0])
    specs: list[FigureSpec] = []
    for label, target in (("nu0", 0.0), ("nu05", 0.5), ("nu1", 1.0)):
        specs.extend(
            _pair(path, out_dir, f"fig3_{label}", t=t0, nu1=table.nearest("nu1", target))
        )
    return specs


def preset_fig4(artifact_dir: Path, out_dir: Path) -> list[FigureSpec]:
    """Dependence on the filter: the (s, nu1) plane at mid storage, t = 0."""
    path, table = _t0_table(artifact_dir)
    t0 = float(table.levels["t"][0])
    q_mid = table.nearest("q", 0.5 * (table.levels["q"][0] + table.levels["q"][-1]))
    return _pair(path, out_dir, "fig4", t=t0, q=q_mid)


def preset_fig5(artifact_dir: Path, out_dir: Path) -> list[FigureSpec]:
    """Value against belief at the high regime's mean price: empty vs full store."""
    path, table = _t0_table(artifact_dir)
    t0 = float(table.levels["t"][0])
    s0 = table.nearest("s", 50.0)
    q_lo = float(table.levels["q"][0])
    q_hi = float(table.levels["q"][-1])
    return [
        FigureSpec(
            artifact=path, kind="line", out=out_dir / "fig5.png",
            s=s0, t=t0, q_curves=(q_lo, q_hi),
            title=f"value of an empty vs a full store at $s = {s0:g}$, $t = {t0:g}$",
        )
    ]


def preset_fig6(artifact_dir: Path, out_dir: Path) -> list[FigureSpec]:
    """Dependence on time: the (s, t) plane at mid storage, mid belief."""
    path = artifact_dir / "value_policy_mid.csv"
    table = _load(str(path.resolve()))
    q_mid = float(table.levels["q"][0])
    nu_mid = float(table.levels["nu1"][0])
    return _pair(path, out_dir, "fig6", t=None, nu1=nu_mid, q=q_mid)


def preset_fig7(artifact_dir: Path, out_dir: Path) -> list[FigureSpec]:
    """Horizon comparison: the fig2 pair for the base run and horizon3/."""
    specs = []
    for stem, sub, tag in (("fig7_T1", ".", "(base horizon)"),
                           ("fig7_T3", "horizon3", "(horizon 3)")):
        run_dir = artifact_dir if sub == "." else artifact_dir / sub
        path, table = _t0_table(run_dir)
        t0 = float(table.levels["t"][0])
        specs.extend(
            _pair(path, out_dir, stem, t=t0, nu1=table.nearest("nu1", 0.5), title_tag=tag)
        )
    return specs


PRESETS = {
    "fig2": preset_fig2,
    "fig3": preset_fig3,
    "fig4": preset_fig4,
    "fig5": preset_fig5,
    "fig6": preset_fig6,
    "fig7": preset_fig7,
}


def render_preset(name: str, artifact_dir: Path | str, out_dir: Path | str) -> list[Path]:
    """Render every image of the named preset; return the image paths."""
    if name not in PRESETS:
        raise ValueError(f"unknown figure preset {name!r}; expected one of {sorted(PRESETS)}")
    specs = PRESETS[name](Path(artifact_dir), Path(out_dir))
    return [render(spec) for spec in specs]
