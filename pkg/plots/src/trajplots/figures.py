"""The three figure kinds rendered from exported tables.

Rendering is a pure function of (table bytes, spec, pinned style config):
the style is checked in, the Agg backend is forced, and PNG metadata that
varies across installs is stripped, so repeated renders are byte-identical.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .tables import load_annotations, read_table  # noqa: E402

FIGURE_KINDS = ("trajectories", "correlation_curves", "cluster_panels")
X_AXES = ("steps", "perplexity")
GROUP_KEYS = ("field", "linguistics_term", "cluster_id")


def load_style() -> dict:
    with resources.files("trajplots").joinpath("style.json").open("r") as fh:
        return json.load(fh)


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    table: Path
    out: Path
    x_axis: str = "steps"
    group_by: str = "field"
    format: str = "png"
    trajectory_table: Path | None = None  # cluster panels join against this

    def __post_init__(self) -> None:
        if self.kind not in FIGURE_KINDS:
            raise ValueError(f"kind must be one of {FIGURE_KINDS}")
        if self.x_axis not in X_AXES:
            raise ValueError(f"x_axis must be one of {X_AXES}")
        if self.group_by not in GROUP_KEYS:
            raise ValueError(f"group_by must be one of {GROUP_KEYS}")
        if self.format not in ("png", "svg"):
            raise ValueError("format must be png or svg")

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path, out_dir: Path) -> "FigureSpec":
        known = {"kind", "table", "out", "x_axis", "group_by", "format", "trajectory_table"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown figure spec keys: {sorted(unknown)}")
        if "kind" not in d or "table" not in d:
            raise ValueError("figure spec needs 'kind' and 'table'")
        table = base_dir / d["table"]
        out_name = d.get("out") or f"{d['kind']}.{d.get('format', 'png')}"
        return cls(
            kind=d["kind"],
            table=table,
            out=out_dir / out_name,
            x_axis=d.get("x_axis", "steps"),
            group_by=d.get("group_by", "field"),
            format=d.get("format", "png"),
            trajectory_table=(base_dir / d["trajectory_table"]) if d.get("trajectory_table") else None,
        )


def _apply_style(style: dict):
    return plt.rc_context(style["rcparams"])


def _color_map(style: dict, keys: list) -> dict:
    palette = style["palette"]
    return {k: palette[i % len(palette)] for i, k in enumerate(keys)}


def _save(fig, spec: FigureSpec) -> Path:
    spec.out.parent.mkdir(parents=True, exist_ok=True)
    if spec.format == "png":
        fig.savefig(spec.out, format="png", metadata={"Software": None})
    else:
        fig.savefig(spec.out, format="svg", metadata={"Date": None})
    plt.close(fig)
    return spec.out


def _x_values(rows: list[dict], spec: FigureSpec, table_name: str) -> list[float]:
    if spec.x_axis == "steps":
        return [r["step"] for r in rows]
    missing = [r for r in rows if r.get("dev_perplexity") is None]
    if missing:
        raise ValueError(
            f"{table_name}: x_axis=perplexity but column 'dev_perplexity' is empty for "
            f"{len(missing)} rows"
        )
    return [r["dev_perplexity"] for r in rows]


def _setup_x_axis(ax, spec: FigureSpec) -> None:
    if spec.x_axis == "perplexity":
        # learning proceeds left to right: log scale, descending
        ax.set_xscale("log")
        ax.invert_xaxis()
        ax.set_xlabel("dev perplexity (log, decreasing)")
    else:
        ax.set_xlabel("training step")


def render_trajectories(spec: FigureSpec, style: dict | None = None) -> Path:
    """Per-challenge accuracy trajectories, one line per (model, challenge),
    colored by the grouping key."""
    style = style or load_style()
    rows = read_table(spec.table)
    if not rows:
        raise ValueError(f"{spec.table}: empty table")
    groups = sorted({str(r[spec.group_by]) for r in rows if spec.group_by in r})
    if not groups:
        raise ValueError(f"{spec.table}: grouping column '{spec.group_by}' not present")
    colors = _color_map(style, groups)
    with _apply_style(style):
        fig, ax = plt.subplots()
        seen_labels = set()
        by_line: dict[tuple, list[dict]] = {}
        for r in rows:
            by_line.setdefault((r["model_id"], r["challenge_uid"]), []).append(r)
        for (model_id, uid), line_rows in sorted(by_line.items()):
            line_rows = sorted(line_rows, key=lambda r: r["step"])
            xs = _x_values(line_rows, spec, spec.table.name)
            ys = [r["accuracy"] for r in line_rows]
            g = str(line_rows[0][spec.group_by])
            label = g if g not in seen_labels else None
            seen_labels.add(g)
            ax.plot(xs, ys, color=colors[g], label=label, alpha=0.85)
        _setup_x_axis(ax, spec)
        ax.set_ylabel("challenge accuracy")
        ax.set_ylim(-0.02, 1.02)
        ax.axhline(0.5, color="#888888", linewidth=0.8, linestyle=":")
        ax.set_title("per-challenge learning trajectories")
        ax.legend(title=spec.group_by, loc="lower right")
        return _save(fig, spec)


def render_correlation_curves(spec: FigureSpec, style: dict | None = None) -> Path:
    """Correlation-vs-checkpoint curves, one per (trajectory, reference) pair,
    annotated at the matched-performance step with the reference's mean
    accuracy when that metadata is available."""
    style = style or load_style()
    rows = read_table(spec.table)
    if not rows:
        raise ValueError(f"{spec.table}: empty table")
    annotations = load_annotations(spec.table)
    if annotations is None:
        warnings.warn("matched-performance metadata missing; rendering without annotations")
        annotations = {}
    # keep reference curves (label_b occurs with a static label across many steps
    # for the same label_a); pairwise model rows are also valid curves
    by_pair: dict[tuple[str, str], list[dict]] = {}
    for r in rows:
        by_pair.setdefault((r["label_a"], r["label_b"]), []).append(r)
    curves = {k: v for k, v in by_pair.items() if len({r["step"] for r in v}) >= 2}
    if not curves:
        raise ValueError(f"{spec.table}: no per-step correlation curves found")
    colors = _color_map(style, sorted(curves))
    with _apply_style(style):
        fig, ax = plt.subplots()
        for key in sorted(curves):
            la, lb = key
            pts = sorted(curves[key], key=lambda r: r["step"])
            xs = [r["step"] for r in pts]
            ys = [r["r"] for r in pts]
            ax.plot(xs, ys, color=colors[key], label=f"{la} vs {lb}")
            meta = annotations.get(f"{la}:{lb}")
            if meta:
                step = meta["matched_performance_step"]
                nearest = min(pts, key=lambda r: abs(r["step"] - step))
                ax.annotate(
                    f"{meta['ref_mean_accuracy']:.2f}",
                    xy=(step, nearest["r"]),
                    xytext=(0, 8),
                    textcoords="offset points",
                    ha="center",
                    color=colors[key],
                    fontsize=8,
                )
                ax.plot([step], [nearest["r"]], marker="o", ms=4, color=colors[key])
        ax.set_xlabel("training step")
        ax.set_ylabel("correlation with reference")
        ax.set_ylim(-1.05, 1.05)
        ax.axhline(0.0, color="#888888", linewidth=0.8, linestyle=":")
        ax.set_title("correlation with fixed references during training")
        ax.legend(loc="lower right")
        return _save(fig, spec)


def render_cluster_panels(spec: FigureSpec, style: dict | None = None) -> Path:
    """One subplot per grouping value (cluster id or field), drawing each
    member challenge's learning curve colored by super-phenomenon."""
    style = style or load_style()
    clusters = read_table(spec.table)
    if not clusters:
        raise ValueError(f"{spec.table}: empty table")
    traj_path = spec.trajectory_table
    if traj_path is None:
        for cand in ("performance.csv", "performance.json"):
            if (spec.table.parent / cand).exists():
                traj_path = spec.table.parent / cand
                break
    if traj_path is None or not Path(traj_path).exists():
        raise ValueError("cluster panels need a trajectory table (performance.csv/.json)")
    traj_rows = read_table(traj_path)
    by_uid: dict[str, list[dict]] = {}
    for r in traj_rows:
        by_uid.setdefault(r["challenge_uid"], []).append(r)
    orphans = sorted({c["challenge_uid"] for c in clusters} - set(by_uid))
    if orphans:
        raise ValueError(f"challenges missing from trajectory table: {', '.join(orphans)}")

    panels = sorted({str(c[spec.group_by]) for c in clusters})
    terms = sorted({c["linguistics_term"] for c in clusters})
    colors = _color_map(style, terms)
    with _apply_style(style):
        ncols = min(2, len(panels))
        nrows = (len(panels) + ncols - 1) // ncols
        fig, axes = plt.subplots(
            nrows, ncols, squeeze=False,
            figsize=(style["rcparams"]["figure.figsize"][0], 3.0 * nrows),
            sharex=True, sharey=True,
        )
        flat_axes = [ax for row in axes for ax in row]
        for ax in flat_axes[len(panels):]:
            ax.set_visible(False)
        for ax, panel in zip(flat_axes, panels):
            members = [c for c in clusters if str(c[spec.group_by]) == panel]
            seen = set()
            for c in sorted(members, key=lambda c: c["challenge_uid"]):
                # average over models so each challenge is one curve
                rows = by_uid[c["challenge_uid"]]
                steps = sorted({r["step"] for r in rows})
                ys = []
                for s in steps:
                    vals = [r["accuracy"] for r in rows if r["step"] == s]
                    ys.append(sum(vals) / len(vals))
                term = c["linguistics_term"]
                label = term if term not in seen else None
                seen.add(term)
                ax.plot(steps, ys, color=colors[term], label=label, alpha=0.9)
            ax.set_title(f"{spec.group_by} {panel} ({len(members)})", fontsize=9)
            ax.set_ylim(-0.02, 1.02)
            ax.axhline(0.5, color="#888888", linewidth=0.7, linestyle=":")
            if seen:
                ax.legend(fontsize=6, loc="lower right")
        for ax in axes[-1]:
            ax.set_xlabel("training step")
        for row in axes:
            row[0].set_ylabel("accuracy")
        fig.suptitle("learning curves by " + spec.group_by, y=0.995)
        fig.tight_layout()
        return _save(fig, spec)


RENDERERS = {
    "trajectories": render_trajectories,
    "correlation_curves": render_correlation_curves,
    "cluster_panels": render_cluster_panels,
}


def render(spec: FigureSpec, style: dict | None = None) -> Path:
    return RENDERERS[spec.kind](spec, style=style)
