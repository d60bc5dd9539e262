"""Time-average accounting for virtual and actual systems.

One ``RunMetrics`` instance accumulates a single run; aggregation across
seeds uses ``merge`` (associative, commutative).  Cost sums use compensated
summation so horizons up to 1e7 keep ~1e-9 relative accuracy.
"""
from __future__ import annotations

import csv
import json
import math

import numpy as np

from .core import EmptyRunError


class KahanSum:
    """Compensated accumulator, scalar or fixed-shape vector."""

    __slots__ = ("total", "comp")

    def __init__(self, shape=()):
        self.total = np.zeros(shape)
        self.comp = np.zeros(shape)

    def add(self, x) -> None:
        y = x - self.comp
        t = self.total + y
        self.comp = (t - self.total) - y
        self.total = t

    @property
    def value(self):
        return self.total if self.total.ndim else float(self.total)


def default_checkpoints(T: int, count: int = 20) -> np.ndarray:
    """Log-spaced slot counts at which a row is emitted, always ending at T."""
    if T <= 0:
        return np.array([], dtype=np.int64)
    pts = np.geomspace(min(10, T), T, num=count)
    return np.unique(np.concatenate([pts.astype(np.int64), [T]]))


class RunMetrics:
    """Accumulates one run: cost sums, occupancy, balance-flow diagnostics.

    ``flow`` tracks sum_t pi(t)^T Y(t) over current-slot matrices (the last
    slot is kept separately so the Lemma-style balance check can stop one
    slot early, where the matching queue value exists).
    """

    def __init__(self, n: int, k: int, checkpoints=None):
        self.n = n
        self.k = k
        self.T = 0
        self.vobj = KahanSum()
        self.aobj = KahanSum()
        self.vcon = KahanSum((k,))
        self.acon = KahanSum((k,))
        self.vocc = np.zeros(n)
        self.acnt = np.zeros(n, dtype=np.int64)
        self.flow = np.zeros(n)
        self.last_flow = np.zeros(n)
        self.l1_drift = 0.0
        self.redirect_slots = 0
        self.queue_final: np.ndarray | None = None
        self.z_final: np.ndarray | None = None
        self.checkpoint_slots = np.asarray(
            checkpoints if checkpoints is not None else [], dtype=np.int64
        )
        self.rows: list[dict] = []

    # ---- accumulation (reference path) ------------------------------------

    def record_slot(
        self,
        pi: np.ndarray,
        v0: float,
        vl: np.ndarray,
        a0: float,
        al: np.ndarray,
        actual_state: int,
        flow_term: np.ndarray,
        dpi_l1: float,
        redirect_active: bool,
        queues_q: np.ndarray,
        queues_z: np.ndarray,
    ) -> None:
        self.vobj.add(v0)
        self.aobj.add(a0)
        if self.k:
            self.vcon.add(vl)
            self.acon.add(al)
        self.vocc += pi
        self.acnt[actual_state] += 1
        self.flow += flow_term
        self.last_flow = flow_term
        if self.T > 0:
            self.l1_drift += dpi_l1
        if redirect_active:
            self.redirect_slots += 1
        self.T += 1
        if self.T in self.checkpoint_slots:
            self._checkpoint(queues_q, queues_z)

    def _checkpoint(self, q: np.ndarray, z: np.ndarray) -> None:
        t = self.T
        row = {"t": t, "r_virtual": -self.vobj.value / t, "r_actual": -self.aobj.value / t}
        for l in range(self.k):
            row[f"constraint{l + 1}_virtual"] = self.vcon.value[l] / t
            row[f"constraint{l + 1}_actual"] = self.acon.value[l] / t
        row["qnorm"] = math.sqrt(float(np.dot(q, q) + np.dot(z, z)))
        row["redirect_active_count"] = self.redirect_slots
        self.rows.append(row)

    def set_final_queues(self, q: np.ndarray, z: np.ndarray) -> None:
        self.queue_final = np.array(q, dtype=float)
        self.z_final = np.array(z, dtype=float)

    # ---- aggregation -------------------------------------------------------

    def merge(self, other: "RunMetrics") -> "RunMetrics":
        """Pool two runs' time-average accumulators (checkpoints are dropped)."""
        if (self.n, self.k) != (other.n, other.k):
            raise ValueError("cannot merge metrics with different shapes")
        out = RunMetrics(self.n, self.k)
        out.T = self.T + other.T
        for name in ("vobj", "aobj", "vcon", "acon"):
            acc = getattr(out, name)
            acc.add(getattr(self, name).value)
            acc.add(getattr(other, name).value)
        out.vocc = self.vocc + other.vocc
        out.acnt = self.acnt + other.acnt
        out.flow = self.flow + other.flow
        out.l1_drift = self.l1_drift + other.l1_drift
        out.redirect_slots = self.redirect_slots + other.redirect_slots
        return out

    # ---- readouts ----------------------------------------------------------

    @property
    def r_virtual(self) -> float:
        return -self.vobj.value / self.T

    @property
    def r_actual(self) -> float:
        return -self.aobj.value / self.T

    def constraint_averages(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vcon.value / self.T, self.acon.value / self.T

    def occupancy_virtual(self) -> np.ndarray:
        return self.vocc / self.T

    def occupancy_actual(self) -> np.ndarray:
        return self.acnt / self.T

    def qnorm_over_T(self) -> float:
        q = self.queue_final if self.queue_final is not None else np.zeros(self.n)
        z = self.z_final if self.z_final is not None else np.zeros(self.k)
        return math.sqrt(float(np.dot(q, q) + np.dot(z, z))) / self.T

    def global_balance_check(self) -> dict:
        """Per-state |avg pi^T Y y_j| against the queue/drift bound.

        Uses the first T-1 slots of current-slot flow, so the bounding queue
        value (the run's final queues) is exactly the one the telescoped
        identity produces.  Algebraic given the recorded traces; returned as
        a diagnostic dict with the worst margin.
        """
        tp = self.T - 1
        if tp < 1 or self.queue_final is None:
            return {"ok": True, "lhs_max": 0.0, "rhs": 0.0}
        lhs = np.abs(self.flow - self.last_flow) / tp
        qn = math.sqrt(float(np.dot(self.queue_final, self.queue_final)))
        rhs = qn / tp + self.l1_drift / tp
        margin = rhs - float(lhs.max())
        return {"ok": bool(margin >= -1e-9 * max(1.0, self.T)), "lhs_max": float(lhs.max()), "rhs": rhs}

    def finalize(self, state_labels=None) -> dict:
        """Summary report; occupancy fractions rounded to three decimals."""
        if self.T == 0:
            raise EmptyRunError("no slots recorded")
        labels = state_labels or [str(i) for i in range(self.n)]
        vavg, aavg = self.constraint_averages()
        report = {
            "T": self.T,
            "r_virtual": self.r_virtual,
            "r_actual": self.r_actual,
            "constraints_virtual": [float(x) for x in vavg],
            "constraints_actual": [float(x) for x in aavg],
            "occupancy_virtual": {
                labels[i]: round(float(f), 3) for i, f in enumerate(self.occupancy_virtual())
            },
            "occupancy_actual": {
                labels[i]: round(float(f), 3) for i, f in enumerate(self.occupancy_actual())
            },
            "qnorm_over_T": self.qnorm_over_T() if self.queue_final is not None else None,
            "redirect_slots": self.redirect_slots,
            "global_balance": self.global_balance_check(),
        }
        return report


def csv_fieldnames(k: int) -> list[str]:
    names = ["t", "r_virtual", "r_actual"]
    for l in range(k):
        names += [f"constraint{l + 1}_virtual", f"constraint{l + 1}_actual"]
    names += ["qnorm", "redirect_active_count"]
    return names


def write_checkpoint_csv(path, metrics: RunMetrics) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=csv_fieldnames(metrics.k))
        writer.writeheader()
        for row in metrics.rows:
            writer.writerow({key: repr(v) if isinstance(v, float) else v for key, v in row.items()})


def write_occupancy_json(path, metrics: RunMetrics, state_labels=None) -> None:
    labels = state_labels or [str(i) for i in range(metrics.n)]
    payload = {
        "virtual": {labels[i]: float(f) for i, f in enumerate(metrics.occupancy_virtual())},
        "actual": {labels[i]: float(f) for i, f in enumerate(metrics.occupancy_actual())},
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
