"""Sampling-based competitors: random sampling with independence join
estimates (RS) and index-based join sampling (IBJS).

Both share the same fallback for empty conjunctive sample results: retry
the conjuncts individually, substituting 1/distinct-count for any conjunct
that still matches nothing. All estimates are clamped to >= 1 so q-error
stays defined.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .executor import eval_predicates_on_sample
from .query import QuerySpec
from .storage import Database, HashIndex, MaterializedSample


def _filtered_size(
    db: Database,
    samples: dict[str, MaterializedSample],
    spec: QuerySpec,
    alias: str,
) -> float:
    """Sample-extrapolated number of qualifying rows of one base table.

    Computed as popcount * |t| / S (in that order, so single-table
    extrapolations are exact); an empty conjunctive sample falls back to
    the per-conjunct product, substituting 1/distinct-count for conjuncts
    that match nothing.
    """
    table = spec.table_of(alias)
    rows = db.table(table).row_count
    sample = samples[table]
    preds = spec.predicates_of(alias)
    popcount = int(eval_predicates_on_sample(sample, preds).sum())
    if popcount > 0 or not preds:
        return popcount * rows / sample.size
    sel = 1.0
    for p in preds:
        pop_c = int(eval_predicates_on_sample(sample, (p,)).sum())
        fallback = 1.0 / db.stats(table, p.column).distinct_count
        sel *= max(pop_c / sample.size, fallback)
    return sel * rows


def _join_denominator(db: Database, spec: QuerySpec) -> float:
    denom = 1.0
    for j in spec.joins:
        dvs = []
        for alias, column in (j.left, j.right):
            dvs.append(db.stats(spec.table_of(alias), column).distinct_count)
        denom *= max(dvs)
    return denom


def rs_estimate(
    db: Database, samples: dict[str, MaterializedSample], spec: QuerySpec
) -> float:
    """Product of extrapolated filtered table sizes over the independence
    join denominator (max distinct count per join edge), clamped to >= 1."""
    est = 1.0
    for alias in spec.aliases:
        est *= _filtered_size(db, samples, spec, alias)
    est /= _join_denominator(db, spec)
    return max(est, 1.0)


def ibjs_estimate(
    db: Database,
    samples: dict[str, MaterializedSample],
    indexes: dict[tuple[str, str], HashIndex],
    spec: QuerySpec,
) -> float:
    """Walk the join tree from the most selective table, probing each next
    table's hash index with the current intermediate tuples and applying
    that table's predicates exactly.

    The final match count is scaled by the driver's inverse sampling
    fraction. Falls back to RS semantics when the driver sample is empty,
    and to independence factors for the remaining tables when an
    intermediate runs dry mid-walk.
    """
    if not spec.joins:
        return rs_estimate(db, samples, spec)

    filtered = {a: _filtered_size(db, samples, spec, a) for a in spec.aliases}
    driver = min(spec.aliases, key=lambda a: (filtered[a], a))
    driver_sample = samples[spec.table_of(driver)]
    driver_bitmap = eval_predicates_on_sample(
        driver_sample, spec.predicates_of(driver)
    )
    if not driver_bitmap.any():
        return rs_estimate(db, samples, spec)
    scale = db.table(spec.table_of(driver)).row_count / driver_sample.size

    # Order edges so each one attaches a new alias to the walked set.
    adj: dict[str, list] = {a: [] for a in spec.aliases}
    for j in spec.joins:
        adj[j.left[0]].append((j.right[0], j.left[1], j.right[1]))
        adj[j.right[0]].append((j.left[0], j.right[1], j.left[1]))
    walk = []
    seen = {driver}
    frontier = [driver]
    while frontier:
        alias = frontier.pop(0)
        for other, own_col, other_col in sorted(adj[alias]):
            if other not in seen:
                seen.add(other)
                walk.append((alias, own_col, other, other_col))
                frontier.append(other)

    def independence_tail(count: int, joined: set[str], remaining: list) -> float:
        """Partial-walk extrapolation times RS factors for what is left."""
        est = float(count) * scale
        for a in spec.aliases:
            if a not in joined:
                est *= filtered[a]
        for known, _, new, _ in remaining:
            edge = next(
                j for j in spec.joins if {j.left[0], j.right[0]} == {known, new}
            )
            dvs = [
                db.stats(spec.table_of(alias), column).distinct_count
                for alias, column in (edge.left, edge.right)
            ]
            est /= max(dvs)
        return max(est, 1.0)

    # Intermediate result: parallel arrays of full-table row indices.
    inter: dict[str, np.ndarray] = {
        driver: driver_sample.row_indices[driver_bitmap]
    }
    for step, (known, own_col, new, new_col) in enumerate(walk):
        new_table = db.table(spec.table_of(new))
        key = (new_table.name, new_col)
        if key not in indexes:
            raise ValidationError(f"missing hash index on {new_table.name}.{new_col}")
        index = indexes[key]
        pred_mask = None
        preds = spec.predicates_of(new)
        if preds:
            m = np.ones(new_table.row_count, dtype=bool)
            for p in preds:
                v = new_table.column(p.column).values
                m &= {"=": v == p.literal, "<": v < p.literal, ">": v > p.literal}[p.op]
            pred_mask = m
        probe_vals = db.column_values(spec.table_of(known), own_col)[inter[known]]
        match_lists = []
        repeats = np.zeros(probe_vals.size, dtype=np.int64)
        for i, v in enumerate(probe_vals):
            matches = index.lookup(int(v))
            if pred_mask is not None and matches.size:
                matches = matches[pred_mask[matches]]
            match_lists.append(matches)
            repeats[i] = matches.size
        count_before = inter[driver].size
        if not repeats.sum():
            return independence_tail(count_before, set(inter), walk[step:])
        inter = {a: np.repeat(rows, repeats) for a, rows in inter.items()}
        inter[new] = np.concatenate(match_lists)
    return max(inter[driver].size * scale, 1.0)
