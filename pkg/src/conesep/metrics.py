"""Separation and localization scores: SI-SDR(i), angular error, matching, precision/recall, CDFs."""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from .dsp import Waveform
from .geometry import angular_distance

SI_SDR_CLAMP = 60.0
MAX_EXHAUSTIVE = 8


def _mono(x) -> np.ndarray:
    """Canonical-channel reduction: mic 0 of a multichannel signal."""
    if isinstance(x, Waveform):
        x = x.data
    x = np.asarray(x, dtype=np.float64)
    return x[0] if x.ndim == 2 else x


def si_sdr(estimate, reference) -> float:
    """Scale-invariant SDR in dB, clamped to [-60, 60]."""
    est, ref = _mono(estimate), _mono(reference)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {ref.shape}")
    ref_energy = np.dot(ref, ref)
    if ref_energy == 0:
        raise ValueError("reference signal is all zeros")
    alpha = np.dot(est, ref) / ref_energy
    target = alpha * ref
    noise = target - est
    num, den = np.dot(target, target), np.dot(noise, noise)
    if num == 0:
        return -SI_SDR_CLAMP
    if den == 0:
        return SI_SDR_CLAMP
    return float(np.clip(10 * np.log10(num / den), -SI_SDR_CLAMP, SI_SDR_CLAMP))


def si_sdr_improvement(mixture, estimate, reference) -> float:
    return si_sdr(estimate, reference) - si_sdr(mixture, reference)


def angular_error(est: float, truth: float) -> float:
    return angular_distance(est, truth)


def match_permutation(estimates, truths, cost="angular"):
    """Minimum-cost one-to-one assignment between estimates and truths.

    ``cost`` is ``"angular"`` (entries are degrees), ``"signal"`` (entries are signals; cost is
    negative SI-SDR) or a callable ``cost(est, truth)``. Returns ``(pairs, total_cost)`` with
    pairs ``(est_index, truth_index)`` sorted by truth index. Up to eight items per side are
    enumerated exhaustively in lexicographic order so ties resolve to the smallest indices.
    """
    if cost == "angular":
        fn = angular_error
    elif cost == "signal":
        fn = lambda e, t: -si_sdr(e, t)  # noqa: E731
    else:
        fn = cost
    m, n = len(estimates), len(truths)
    if m == 0 or n == 0:
        return [], 0.0
    C = np.array([[fn(e, t) for t in truths] for e in estimates], dtype=float)
    if max(m, n) <= MAX_EXHAUSTIVE:
        best, best_cost = None, np.inf
        if m >= n:
            for perm in itertools.permutations(range(m), n):
                c = C[list(perm), range(n)].sum()
                if c < best_cost - 1e-12:
                    best, best_cost = [(perm[j], j) for j in range(n)], c
        else:
            for perm in itertools.permutations(range(n), m):
                c = C[range(m), list(perm)].sum()
                if c < best_cost - 1e-12:
                    best, best_cost = [(i, perm[i]) for i in range(m)], c
        pairs = sorted(best, key=lambda p: p[1])
        return pairs, float(best_cost)
    rows, cols = linear_sum_assignment(C)
    pairs = sorted(zip(rows.tolist(), cols.tolist()), key=lambda p: p[1])
    return pairs, float(C[rows, cols].sum())


def precision_recall(estimates, truths, tolerance: float = 15.0):
    """Greedy one-to-one matching in increasing error order; ``None`` marks an undefined ratio."""
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    est, tru = list(estimates), list(truths)
    pairs = sorted(
        ((angular_error(e, t), i, j) for i, e in enumerate(est) for j, t in enumerate(tru)),
    )
    used_e, used_t, matches = set(), set(), 0
    for err, i, j in pairs:
        if err > tolerance:
            break
        if i in used_e or j in used_t:
            continue
        used_e.add(i)
        used_t.add(j)
        matches += 1
    precision = matches / len(est) if est else None
    recall = matches / len(tru) if tru else None
    return precision, recall


def cdf_export(errors, grid) -> list[float]:
    """Fraction of ``errors`` at or below each grid value."""
    e = np.sort(np.asarray(list(errors), dtype=float))
    g = np.asarray(list(grid), dtype=float)
    if g.size == 0:
        return []
    if e.size == 0:
        return [0.0] * g.size
    return (np.searchsorted(e, g, side="right") / e.size).tolist()


def write_cdf_csv(path, errors, grid) -> None:
    fractions = cdf_export(errors, grid)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["error_deg", "fraction"])
        for g, frac in zip(grid, fractions):
            w.writerow([f"{g:g}", f"{frac:.6f}"])


@dataclass
class SceneRecord:
    scene: str
    n_truth: int
    n_estimates: int
    si_sdr_in: list[float] = field(default_factory=list)
    si_sdr_out: list[float] = field(default_factory=list)
    angular_errors: list[float] = field(default_factory=list)
    permutation: list[tuple[int, int]] = field(default_factory=list)
    precision: float | None = None
    recall: float | None = None
    error: str | None = None


@dataclass
class EvalReport:
    method: str
    records: list[SceneRecord] = field(default_factory=list)
    tolerance: float = 15.0

    def add(self, record: SceneRecord) -> None:
        self.records.append(record)

    @property
    def si_sdri(self) -> list[float]:
        return [o - i for r in self.records for i, o in zip(r.si_sdr_in, r.si_sdr_out)]

    @property
    def angular_errors(self) -> list[float]:
        return [e for r in self.records for e in r.angular_errors]

    def aggregate(self) -> dict:
        """Medians pool matched sources across scenes; precision/recall pool match counts."""
        ok = [r for r in self.records if r.error is None]
        n_est = sum(r.n_estimates for r in ok)
        n_tru = sum(r.n_truth for r in ok)
        p_hits = sum((r.precision or 0.0) * r.n_estimates for r in ok)
        r_hits = sum((r.recall or 0.0) * r.n_truth for r in ok)
        sdri, errs = self.si_sdri, self.angular_errors
        return {
            "method": self.method,
            "scenes": len(self.records),
            "failed_scenes": len(self.records) - len(ok),
            "median_si_sdri_db": float(np.median(sdri)) if sdri else None,
            "median_angular_error_deg": float(np.median(errs)) if errs else None,
            "precision": p_hits / n_est if n_est else None,
            "recall": r_hits / n_tru if n_tru else None,
            "tolerance_deg": self.tolerance,
        }

    def to_json(self) -> dict:
        return {"aggregate": self.aggregate(), "records": [asdict(r) for r in self.records]}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2))
