"""Iteration records, CSV/SVG emission, rate diagnostics and run manifests."""

from __future__ import annotations

import csv
import json
import subprocess
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "IterationRecord",
    "CSV_COLUMNS",
    "write_csv",
    "read_csv",
    "RateReport",
    "rate_report",
    "write_svg",
    "RunManifest",
    "source_revision",
]

CSV_COLUMNS = ("iter", "objective", "constraint_inf", "constraint_sq", "auglag", "lyapunov",
               "primal_step", "dual_step", "kkt_stat", "wall_ms")
_ATTRS = ("iteration",) + CSV_COLUMNS[1:]


@dataclass
class IterationRecord:
    """Diagnostics of one completed ADMM iteration ``k``.

    ``auglag`` is ``L_rho(x^k, lambda^k)``; ``auglag_primal`` is the value
    after the primal sweep and before the dual update,
    ``L_rho(x^k, lambda^{k-1})``.  ``block_step_sq`` holds
    ``||x_i^k - x_i^{k-1}||^2`` for every block.  ``descent_gap`` is
    ``L_rho(x^k, lambda^{k-1}) + sum_i ||dx_i||^2 / (2 eta_i) - L_rho(x^{k-1}, lambda^{k-1})``,
    nonpositive whenever the sweep met its descent guarantee.
    """

    iteration: int
    objective: float
    constraint_inf: float
    constraint_sq: float
    auglag: float
    lyapunov: float
    primal_step: float
    dual_step: float
    kkt_stat: float
    wall_ms: float = 0.0
    auglag_primal: float = float("nan")
    block_step_sq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    inner_misses: int = 0
    descent_gap: float = float("nan")

    def csv_row(self):
        return [getattr(self, a) for a in _ATTRS]


def _fmt(value):
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def write_csv(records, path):
    """Write records with a fixed 10-column header, 17 significant digits."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow([_fmt(v) for v in rec.csv_row()])


def read_csv(path):
    """Parse a file produced by :func:`write_csv` back into records."""
    records = []
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"unexpected header {header!r}")
        for row in reader:
            values = [int(row[0])] + [float(v) for v in row[1:]]
            records.append(IterationRecord(**dict(zip(_ATTRS, values))))
    return records


@dataclass
class RateReport:
    """Running minimum ``m_k`` of the weighted step and the ``k * m_k`` series."""

    iterations: np.ndarray
    weighted_steps: np.ndarray
    running_min: np.ndarray
    scaled: np.ndarray
    slope: float

    def at(self, k):
        """``m_k`` at iteration ``k`` (1-based, as logged)."""
        idx = int(np.searchsorted(self.iterations, k))
        return float(self.running_min[idx])


def rate_report(records, c, c_tilde):
    """Rate diagnostic from per-block step norms.

    For each logged iteration ``k`` with steps ``s_i = ||x_i^k - x_i^{k-1}||^2``
    the weighted step is ``sum_i (c_i + c~_i) s_i``; ``m_k`` is its running
    minimum and ``slope`` the least-squares slope of ``log(k m_k)`` against
    ``log k`` over the positive entries.
    """
    if len(records) < 2:
        raise ValueError("rate_report needs at least two records")
    w = np.asarray(c, dtype=float) + np.asarray(c_tilde, dtype=float)
    iters = np.array([r.iteration for r in records], dtype=float)
    steps = np.array([float(w @ np.asarray(r.block_step_sq, dtype=float)) for r in records])
    running = np.minimum.accumulate(steps)
    scaled = iters * running
    mask = (scaled > 0) & np.isfinite(scaled)
    if mask.sum() >= 2:
        slope = float(np.polyfit(np.log(iters[mask]), np.log(scaled[mask]), 1)[0])
    elif np.all(scaled[1:] == 0):
        slope = -np.inf
    else:
        slope = float("nan")
    return RateReport(iters.astype(int), steps, running, scaled, slope)


def _polyline(xs, ys, width, height, pad, log_y):
    ys = np.asarray(ys, dtype=float)
    xs = np.asarray(xs, dtype=float)
    if log_y:
        ys = np.log10(np.maximum(ys, 1e-300))
    ok = np.isfinite(ys)
    xs, ys = xs[ok], ys[ok]
    if xs.size == 0:
        return "", (0.0, 1.0)
    x0, x1 = xs.min(), max(xs.max(), xs.min() + 1)
    y0, y1 = ys.min(), ys.max()
    if y1 - y0 < 1e-12:
        y0, y1 = y0 - 0.5, y1 + 0.5
    px = pad + (xs - x0) / (x1 - x0) * (width - 2 * pad)
    py = height - pad - (ys - y0) / (y1 - y0) * (height - 2 * pad)
    pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(px, py))
    return pts, (y0, y1)


def write_svg(records, path, width=640, height=260):
    """Two stacked line charts: objective and log10 constraint error."""
    iters = [r.iteration for r in records]
    panels = [("objective", [r.objective for r in records], False),
              ("log10 constraint error (inf-norm)", [r.constraint_inf for r in records], True)]
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
             f'width="{width}" height="{2 * height}">']
    for p, (title, ys, log_y) in enumerate(panels):
        pts, (lo, hi) = _polyline(iters, ys, width, height, 40, log_y)
        dy = p * height
        parts.append(f'<g transform="translate(0,{dy})">')
        parts.append(f'<rect x="40" y="40" width="{width - 80}" height="{height - 80}" '
                     'fill="none" stroke="#888"/>')
        parts.append(f'<text x="{width / 2:.0f}" y="24" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="13">{title}</text>')
        parts.append(f'<text x="4" y="44" font-family="sans-serif" font-size="10">{hi:.3g}</text>')
        parts.append(f'<text x="4" y="{height - 40}" font-family="sans-serif" '
                     f'font-size="10">{lo:.3g}</text>')
        if pts:
            parts.append(f'<polyline fill="none" stroke="#1f77b4" stroke-width="1.5" points="{pts}"/>')
        parts.append("</g>")
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def source_revision():
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True,
                             cwd=Path(__file__).resolve().parent, timeout=5)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 else "unknown"


@dataclass
class RunManifest:
    config: dict
    seed: int | None = None
    certificate: dict | None = None
    revision: str = "unknown"
    started: str | None = None
    finished: str | None = None

    def write(self, path):
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True, default=_jsonable) + "\n")

    @classmethod
    def read(cls, path):
        return cls(**json.loads(Path(path).read_text()))


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")
