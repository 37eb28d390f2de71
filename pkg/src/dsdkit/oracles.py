"""Slow, literal re-implementations used to cross-check the fast code paths.

Nothing here shares helpers with :mod:`dsdkit.trcl` or :mod:`dsdkit.evalmetrics`:
every quantity is recomputed from the definitions with plain Python loops and
exact rationals, and selections are decided by counting how many candidates
outrank a sample rather than by sorting.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Iterable, Optional, Sequence


def _rows(table) -> list[tuple[int, int, list[float]]]:
    return [
        (int(table.sample_ids[r]), int(table.noisy_labels[r]), [float(v) for v in table.probs[r]])
        for r in range(table.n)
    ]


def brute_thresholds(table) -> list[Fraction]:
    rows = _rows(table)
    out = []
    for j in range(table.m):
        vals = [Fraction(p[j]) for _, lab, p in rows if lab == j]
        out.append(sum(vals, Fraction(0)) / len(vals))
    return out


def _confident(p: list[float], t: list[Fraction]) -> Optional[int]:
    top = 0
    for j in range(1, len(p)):
        if p[j] > p[top]:
            top = j
    # thresholds are reported as floats, so compare against the once-rounded mean
    return top if p[top] >= float(t[top]) else None


def brute_confusion(table) -> list[list[int]]:
    t = brute_thresholds(table)
    c = [[0] * table.m for _ in range(table.m)]
    for _, lab, p in _rows(table):
        j = _confident(p, t)
        if j is not None:
            c[lab][j] += 1
    return c


def brute_joint(table) -> list[list[Fraction]]:
    c = brute_confusion(table)
    m = table.m
    sizes = [sum(1 for _, lab, _ in _rows(table) if lab == i) for i in range(m)]
    unnorm = [
        [Fraction(c[i][j], sum(c[i])) * sizes[i] if sum(c[i]) else Fraction(0) for j in range(m)]
        for i in range(m)
    ]
    total = sum((sum(row, Fraction(0)) for row in unnorm), Fraction(0))
    return [[v / total for v in row] for row in unnorm]


def _half_away(x: Fraction) -> int:
    # x >= 0, so half-away-from-zero is floor(x + 1/2)
    return (x + Fraction(1, 2)).__floor__()


def brute_strategies(table, protected: Iterable[int] = (), union: bool = False) -> dict[int, dict[int, int]]:
    """``{strategy: {sample_id: suggested_label}}`` for strategies 1-4."""
    protected = set(protected)
    rows = _rows(table)
    n, m = table.n, table.m
    t = brute_thresholds(table)
    q = brute_joint(table)

    s1 = {}
    for sid, lab, p in rows:
        j = _confident(p, t)
        if j is not None and j != lab and lab not in protected:
            s1[sid] = j

    def best_other(p, lab):
        cands = [j for j in range(m) if j != lab]
        return min(cands, key=lambda j: (-p[j], j))

    s2 = {}
    for i in range(m):
        if i in protected:
            continue
        members = [(sid, p) for sid, lab, p in rows if lab == i]
        k = min(_half_away(n * sum((q[i][j] for j in range(m) if j != i), Fraction(0))), len(members))
        for sid, p in members:
            outranked_by = sum(1 for sid2, p2 in members if (p2[i], sid2) < (p[i], sid))
            if outranked_by < k:
                s2[sid] = best_other(p, i)

    picks: dict[int, list[tuple[float, int]]] = {}
    for i in range(m):
        if i in protected:
            continue
        members = [(sid, p) for sid, lab, p in rows if lab == i]
        for j in range(m):
            if j == i:
                continue
            k = min(_half_away(n * q[i][j]), len(members))
            for sid, p in members:
                key = (-(p[j] - p[i]), sid)
                outranked_by = sum(1 for sid2, p2 in members if (-(p2[j] - p2[i]), sid2) < key)
                if outranked_by < k:
                    picks.setdefault(sid, []).append((p[j] - p[i], j))
    s3 = {sid: min(c, key=lambda mj: (-mj[0], mj[1]))[1] for sid, c in picks.items()}

    if union:
        s4 = {**s2, **s3}
    else:
        s4 = {sid: s3[sid] for sid in s2 if sid in s3}
    return {1: s1, 2: s2, 3: s3, 4: s4}


def brute_classification(preds: Sequence[int], labels: Sequence[int], m: int) -> dict:
    """Per-class counts and percentages straight from the definitions."""
    per_class = []
    for c in range(m):
        tp = fp = tn = fn = 0
        for p, y in zip(preds, labels):
            if p == c and y == c:
                tp += 1
            elif p == c:
                fp += 1
            elif y == c:
                fn += 1
            else:
                tn += 1
        pre = 100.0 * tp / (tp + fp) if tp + fp else None
        rec = 100.0 * tp / (tp + fn) if tp + fn else None
        f1 = 2.0 * pre * rec / (pre + rec) if pre is not None and rec is not None and pre + rec else None
        per_class.append({"tp": tp, "fp": fp, "tn": tn, "fn": fn, "pre": pre, "rec": rec, "f1": f1})
    correct = sum(1 for p, y in zip(preds, labels) if p == y)
    return {"per_class": per_class, "acc": 100.0 * correct / len(labels) if labels else None}
