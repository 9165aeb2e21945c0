"""Observables of sampled permutations and CSV plot data."""
from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import TooFewSamples
from .lattice import BoxRegion, Permutation


def _as_maps(samples, window: BoxRegion | None, shift=None):
    """Normalise samples to ``(window, callable)`` pairs."""
    for s in samples:
        if isinstance(s, Permutation):
            if window is None:
                raise ValueError("plain permutations need an explicit window")
            if shift is None:
                yield window, s
            else:
                yield window, (lambda x, s=s: tuple(a + b for a, b in zip(s(x), shift)))
        else:  # WindowSample
            yield (window or s.window), s


@dataclass(frozen=True)
class MeanJump:
    mean: np.ndarray
    stderr: np.ndarray
    n: int
    batches: int

    def ci(self, z: float = 1.96) -> tuple[np.ndarray, np.ndarray]:
        return self.mean - z * self.stderr, self.mean + z * self.stderr

    def within(self, target: Sequence[float], sigmas: float = 3.0) -> bool:
        diff = np.abs(self.mean - np.asarray(target, dtype=float))
        return bool(np.all(diff <= sigmas * self.stderr + 1e-15))


def mean_jump(
    samples: Iterable, window: BoxRegion | None = None, shift=None, batches: int = 20
) -> MeanJump:
    """Average of ``sigma(x) - x`` over window sites and samples.

    The standard error comes from batch means over consecutive samples.
    """
    per_sample = []
    for win, f in _as_maps(samples, window, shift):
        sites = win.sites()
        per_sample.append(
            np.mean([[a - b for a, b in zip(f(x), x)] for x in sites], axis=0)
        )
    n = len(per_sample)
    if n < 2:
        raise TooFewSamples(f"need at least 2 samples, got {n}")
    X = np.array(per_sample, dtype=float)
    b = min(batches, n)
    means = np.array([chunk.mean(axis=0) for chunk in np.array_split(X, b)])
    sizes = np.array([len(chunk) for chunk in np.array_split(X, b)])
    mean = X.mean(axis=0)
    if b > 1:
        # weighted batch-means variance of the overall mean
        var = (sizes[:, None] * (means - mean) ** 2).sum(axis=0) / (b - 1) / n
    else:
        var = np.zeros_like(mean)
    return MeanJump(mean, np.sqrt(var), n, b)


def cycle_length_histogram(samples: Iterable, window: BoxRegion | None = None) -> dict:
    """Number of window sites lying in cycles of each length (fixed points: 1)."""
    hist: Counter = Counter()
    count = 0
    for win, s in _as_maps(samples, window):
        perm = s if isinstance(s, Permutation) else s.permutation
        lengths = {}
        for c in perm.cycles:
            for x in c.sites:
                lengths[x] = len(c)
        for x in win.sites():
            hist[lengths.get(x, 1)] += 1
        count += 1
    if count == 0:
        raise TooFewSamples("need at least one sample")
    return dict(sorted(hist.items()))


def fraction_moved(hist: dict) -> float:
    total = sum(hist.values())
    return 1 - hist.get(1, 0) / total if total else 0.0


# -- plot data -----------------------------------------------------------------


@dataclass(frozen=True)
class PlotCurve:
    name: str
    columns: tuple  # (name, description) pairs
    rows: tuple


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def emit_plotdata(curves: Iterable[PlotCurve], outdir: str | Path) -> list[Path]:
    """One CSV per curve plus ``plotdata_schema.json`` describing the columns."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    schema = {}
    paths = []
    for curve in curves:
        path = outdir / f"{curve.name}.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([c for c, _ in curve.columns])
            for row in curve.rows:
                w.writerow([_cell(v) for v in row])
        schema[path.name] = {c: desc for c, desc in curve.columns}
        paths.append(path)
    sidecar = outdir / "plotdata_schema.json"
    sidecar.write_text(json.dumps(schema, indent=2, sort_keys=True) + "\n")
    paths.append(sidecar)
    return paths


def agreement_curve(report) -> PlotCurve:
    rows = []
    for box, k, fit, p, se in zip(
        report.boxes, report.disagreements, report.contains_clan,
        report.probabilities, report.standard_errors,
    ):
        radius = (box.upper[0] - box.lower[0]) // 2
        rows.append((radius, str(box), k, fit, p, se))
    cols = (
        ("radius", "half side of the box Lambda"),
        ("box", "Lambda as [lower]..[upper]"),
        ("disagreements", "replicas whose window differs from the Z^d answer"),
        ("clan_inside", "replicas whose clan support lies inside Lambda"),
        ("probability", "disagreements / replicas"),
        ("stderr", "binomial standard error of probability"),
    )
    return PlotCurve("agreement_vs_box", cols, tuple(rows))


def clan_size_curve(sizes: Sequence[int]) -> PlotCurve:
    vals, counts = np.unique(np.asarray(sizes), return_counts=True)
    cols = (("size", "number of clan nodes"), ("count", "replicas with that size"))
    return PlotCurve("clan_size_histogram", cols, tuple(zip(vals.tolist(), counts.tolist())))


def beta_alpha_curve(catalog, alphas: Sequence[float]) -> PlotCurve:
    """Certified ``beta`` upper bound as a function of alpha (w_min = 0 catalog)."""
    from .bounds import beta_from_energies
    from .errors import DivergentSeries

    rows = []
    for a in sorted(alphas):
        try:
            est = beta_from_energies(catalog, a)
        except DivergentSeries:
            continue
        rows.append((float(a), est.truncated_sum, est.tail_bound, est.upper))
    cols = (
        ("alpha", "inverse temperature"),
        ("beta_truncated", "sum of |gamma| w over catalog cycles through 0"),
        ("tail_bound", "bound on the excluded part"),
        ("beta_upper", "beta_truncated + tail_bound"),
    )
    return PlotCurve("beta_vs_alpha", cols, tuple(rows))


def histogram_curve(name: str, hist: dict, key: str, desc: str) -> PlotCurve:
    cols = ((key, desc), ("count", "number of occurrences"))
    return PlotCurve(name, cols, tuple(sorted(hist.items())))


def finite(x: float):
    """JSON-safe float: non-finite values become strings."""
    x = float(x)
    return x if math.isfinite(x) else str(x)
