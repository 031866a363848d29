"""Ground-truth engine: exact cardinalities for labeling, predicate
evaluation over materialized samples, and the labeled-corpus file formats.

Cardinalities are exact bag-semantics counts of the join+filter result.
Rather than materializing intermediates, the acyclic join tree is counted
by aggregating per-row subtree weights grouped by join key (bincount for
dense keys, sort + searchsorted otherwise), which is order-independent and
never blows up.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .errors import ParseError
from .query import LabeledQuery, Predicate, QuerySpec, format_query, parse_query
from .storage import Database, MaterializedSample

_OPS = {"=": np.equal, "<": np.less, ">": np.greater}


def _mask_for(values_of, predicates) -> np.ndarray | None:
    mask = None
    for p in predicates:
        m = _OPS[p.op](values_of(p.column), p.literal)
        mask = m if mask is None else (mask & m)
    return mask


def filter_table(db: Database, spec: QuerySpec, alias: str) -> np.ndarray:
    """Row indices of `alias`'s base table satisfying its predicates."""
    table = db.table(spec.table_of(alias))
    mask = _mask_for(lambda c: table.column(c).values, spec.predicates_of(alias))
    if mask is None:
        return np.arange(table.row_count, dtype=np.int64)
    return np.flatnonzero(mask)


def _match_sums(keys: np.ndarray, weights: np.ndarray, probes: np.ndarray) -> np.ndarray:
    """Per-probe sum of weights over rows whose key equals the probe.

    Dense key ranges go through bincount (no sort); anything else falls back
    to sort + searchsorted. Both are exact: weight sums stay far below 2^53,
    so the float64 bincount loses nothing.
    """
    if keys.size == 0:
        return np.zeros(probes.shape, dtype=np.int64)
    lo = int(min(keys.min(), probes.min()))
    hi = int(max(keys.max(), probes.max()))
    span = hi - lo + 1
    if span <= 4 * (keys.size + probes.size) + 1024:
        sums = np.bincount(keys - lo, weights=weights, minlength=span)
        if sums.max() < 2**53:
            return sums[probes - lo].astype(np.int64)
    order = np.argsort(keys, kind="stable")
    ks = keys[order]
    ws = weights[order]
    starts = np.flatnonzero(np.r_[True, ks[1:] != ks[:-1]])
    unique_keys = ks[starts]
    grouped = np.add.reduceat(ws, starts)
    pos = np.searchsorted(unique_keys, probes)
    pos_c = np.minimum(pos, unique_keys.size - 1)
    found = (pos < unique_keys.size) & (unique_keys[pos_c] == probes)
    return np.where(found, grouped[pos_c], 0)


def true_cardinality(db: Database, spec: QuerySpec) -> int:
    """Exact result count of the join tree under bag semantics (no dedup)."""
    rows = {a: filter_table(db, spec, a) for a in spec.aliases}
    if any(r.size == 0 for r in rows.values()):
        return 0
    if not spec.joins:
        (only,) = spec.aliases
        return int(rows[only].size)

    # alias -> [(neighbor alias, own column, neighbor column)]
    adj: dict[str, list[tuple[str, str, str]]] = {a: [] for a in spec.aliases}
    for j in spec.joins:
        (la, lc), (ra, rc) = j.left, j.right
        adj[la].append((ra, lc, rc))
        adj[ra].append((la, rc, lc))

    def subtree_weights(alias: str, parent: str | None) -> np.ndarray:
        """Per-filtered-row result count of the subtree rooted at alias."""
        table = db.table(spec.table_of(alias))
        w = np.ones(rows[alias].size, dtype=np.int64)
        for other, own_col, other_col in adj[alias]:
            if other == parent:
                continue
            child_w = subtree_weights(other, alias)
            child_keys = db.column_values(spec.table_of(other), other_col)[rows[other]]
            probes = table.column(own_col).values[rows[alias]]
            w *= _match_sums(child_keys, child_w, probes)
        return w

    root = spec.aliases[0]
    return int(subtree_weights(root, None).sum())


def eval_predicates_on_sample(
    sample: MaterializedSample, predicates: tuple[Predicate, ...]
) -> np.ndarray:
    """Boolean bitmap over the sample rows; all ones for an empty conjunction."""
    mask = _mask_for(lambda c: sample.rows[c], predicates)
    if mask is None:
        return np.ones(sample.size, dtype=bool)
    return mask


def query_bitmaps(
    spec: QuerySpec, samples: dict[str, MaterializedSample]
) -> dict[str, np.ndarray]:
    """One bitmap per referenced base table (joins never affect bitmaps)."""
    return {
        a: eval_predicates_on_sample(samples[spec.table_of(a)], spec.predicates_of(a))
        for a in spec.aliases
    }


def label_query(
    db: Database, spec: QuerySpec, samples: dict[str, MaterializedSample]
) -> LabeledQuery | None:
    """Labeled query, or None when the result is empty."""
    card = true_cardinality(db, spec)
    if card == 0:
        return None
    return LabeledQuery(spec, card, query_bitmaps(spec, samples))


def label_workload(
    db: Database,
    specs: list[QuerySpec],
    samples: dict[str, MaterializedSample],
    *,
    threads: int = 1,
) -> tuple[list[LabeledQuery], int]:
    """Label all queries, dropping empty results; returns (kept, dropped)."""
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda s: label_query(db, s, samples), specs))
    else:
        results = [label_query(db, s, samples) for s in specs]
    kept = [r for r in results if r is not None]
    return kept, len(results) - len(kept)


# ---------------------------------------------------------------------------
# Labeled corpus files: workload lines with cardinalities, plus a bitmap
# sidecar with one line per query, `alias:hex` comma-separated (bit 0 =
# sample row 0, little-endian within bytes).
# ---------------------------------------------------------------------------


def bitmap_to_hex(bitmap: np.ndarray) -> str:
    return np.packbits(bitmap.astype(np.uint8), bitorder="little").tobytes().hex()


def hex_to_bitmap(text: str, size: int) -> np.ndarray:
    raw = np.frombuffer(bytes.fromhex(text), dtype=np.uint8)
    bits = np.unpackbits(raw, bitorder="little")
    if bits.size < size:
        raise ParseError(f"bitmap holds {bits.size} bits, expected {size}")
    return bits[:size].astype(bool)


def write_labeled_corpus(
    labeled: list[LabeledQuery],
    corpus_path: str | Path,
    bitmaps_path: str | Path | None = None,
    sample_size: int | None = None,
) -> None:
    lines = [format_query(q.spec, q.true_cardinality) for q in labeled]
    Path(corpus_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    if bitmaps_path is None:
        return
    if sample_size is None:
        raise ValueError("sample_size is required when writing a bitmap sidecar")
    rows = [f"-- sample_size={sample_size}"]
    for q in labeled:
        rows.append(
            ",".join(f"{a}:{bitmap_to_hex(q.bitmaps[a])}" for a in sorted(q.bitmaps))
        )
    Path(bitmaps_path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def read_labeled_corpus(
    corpus_path: str | Path, bitmaps_path: str | Path | None = None
) -> tuple[list[LabeledQuery], int | None]:
    """Returns (queries, sample_size). Bitmaps are empty without a sidecar."""
    queries: list[LabeledQuery] = []
    for lineno, line in enumerate(
        Path(corpus_path).read_text(encoding="utf-8").splitlines(), 1
    ):
        if not line.strip() or line.startswith("--"):
            continue
        spec, label = parse_query(line)
        if label is None:
            raise ParseError(f"{corpus_path}:{lineno}: missing cardinality label")
        queries.append(LabeledQuery(spec, label, {}))
    if bitmaps_path is None:
        return queries, None
    text = Path(bitmaps_path).read_text(encoding="utf-8").splitlines()
    header = next((l for l in text if l.startswith("--")), None)
    m = re.match(r"--\s*sample_size=(\d+)", header or "")
    if not m:
        raise ParseError(f"{bitmaps_path}: missing '-- sample_size=N' header")
    size = int(m.group(1))
    data_lines = [l for l in text if l.strip() and not l.startswith("--")]
    if len(data_lines) != len(queries):
        raise ParseError(
            f"{bitmaps_path}: {len(data_lines)} bitmap lines for {len(queries)} queries"
        )
    for q, line in zip(queries, data_lines):
        bitmaps = {}
        for token in line.split(","):
            alias, _, hexpart = token.partition(":")
            if not hexpart:
                raise ParseError(f"{bitmaps_path}: malformed bitmap token {token!r}")
            bitmaps[alias] = hex_to_bitmap(hexpart, size)
        if set(bitmaps) != set(q.spec.aliases):
            raise ParseError(
                f"{bitmaps_path}: bitmap aliases {sorted(bitmaps)} do not match query"
            )
        q.bitmaps = bitmaps
    return queries, size
