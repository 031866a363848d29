"""Query intermediate representation, line-oriented text format, validation,
and the random workload generator.

A query is the triple (tables, joins, predicates). The text format is one
query per line, four `#`-separated fields::

    title t,movie_companies mc#mc.movie_id=t.id#t.production_year,>,2010#847

i.e. `tables#joins#predicates#cardinality` with tables as `name alias`,
joins as `a.col=b.col`, predicates as flat `col,op,val` triples, and an
optional trailing cardinality. Empty fields are allowed. Elements are
always emitted in canonical sorted order, so formatting is deterministic
and uniqueness can be defined on the canonical string.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GenerationError, ParseError
from .storage import KIND_ATTR, Database

OPS = ("=", "<", ">")

#: Retry bound for the unique-workload generator, per requested query.
RETRY_FACTOR = 1000


@dataclass(frozen=True, order=True)
class TableRef:
    table: str
    alias: str


@dataclass(frozen=True, order=True)
class JoinEdge:
    """Equi-join between two alias-qualified columns, fk side first for
    generated queries (parsed queries keep their written orientation)."""

    left: tuple[str, str]  # (alias, column)
    right: tuple[str, str]

    def __str__(self):
        return f"{self.left[0]}.{self.left[1]}={self.right[0]}.{self.right[1]}"


@dataclass(frozen=True, order=True)
class Predicate:
    alias: str
    column: str
    op: str
    literal: int

    def __str__(self):
        return f"{self.alias}.{self.column},{self.op},{self.literal}"


@dataclass(frozen=True)
class QuerySpec:
    """Canonicalized (tables, joins, predicates) triple.

    Construction sorts and deduplicates each component, so two specs that
    are equal as sets compare (and format) equal. Structural soundness
    against a database is checked by :func:`validate`.
    """

    tables: tuple[TableRef, ...]
    joins: tuple[JoinEdge, ...] = ()
    predicates: tuple[Predicate, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "tables", tuple(sorted(set(self.tables))))
        object.__setattr__(self, "joins", tuple(sorted(set(self.joins))))
        object.__setattr__(self, "predicates", tuple(sorted(set(self.predicates))))
        aliases = [t.alias for t in self.tables]
        if len(set(aliases)) != len(aliases):
            raise ParseError(f"duplicate alias in {aliases}")

    @property
    def aliases(self) -> tuple[str, ...]:
        return tuple(t.alias for t in self.tables)

    def table_of(self, alias: str) -> str:
        for t in self.tables:
            if t.alias == alias:
                return t.table
        raise ParseError(f"alias {alias!r} not declared")

    def predicates_of(self, alias: str) -> tuple[Predicate, ...]:
        return tuple(p for p in self.predicates if p.alias == alias)


@dataclass(eq=False)
class LabeledQuery:
    """QuerySpec plus ground truth and per-table sample bitmaps.

    `true_cardinality` is >= 1 for training/eval corpora (empty-result
    queries are dropped during labeling) and None for queries featurized at
    prediction time. `bitmaps` maps alias -> boolean vector over the
    table's materialized sample.
    """

    spec: QuerySpec
    true_cardinality: int | None
    bitmaps: dict[str, np.ndarray] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Text format
# ---------------------------------------------------------------------------


def format_query(spec: QuerySpec, label: int | None = None) -> str:
    tables = ",".join(f"{t.table} {t.alias}" for t in spec.tables)
    joins = ",".join(str(j) for j in spec.joins)
    preds = ",".join(str(p) for p in spec.predicates)
    return "#".join([tables, joins, preds, "" if label is None else str(label)])


def _split_qualified(token: str, what: str) -> tuple[str, str]:
    parts = token.split(".")
    if len(parts) != 2 or not all(parts):
        raise ParseError(f"malformed {what} {token!r} (expected alias.column)")
    return parts[0], parts[1]


def _structural_errors(spec: QuerySpec) -> list[str]:
    """Checks not requiring a database: alias resolution, join-tree shape."""
    errors = []
    declared = set(spec.aliases)
    for j in spec.joins:
        for side in (j.left, j.right):
            if side[0] not in declared:
                errors.append(f"join {j} uses undeclared alias {side[0]!r}")
    for p in spec.predicates:
        if p.alias not in declared:
            errors.append(f"predicate {p} uses undeclared alias {p.alias!r}")
        if p.op not in OPS:
            errors.append(f"predicate {p} has unknown operator {p.op!r}")
    if len(spec.joins) != len(spec.tables) - 1:
        errors.append(
            f"{len(spec.joins)} joins over {len(spec.tables)} tables is not a join tree"
        )
    elif spec.tables and not errors:
        # Connectivity via union-find over aliases.
        parent = {a: a for a in declared}

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        for j in spec.joins:
            parent[find(j.left[0])] = find(j.right[0])
        if len({find(a) for a in declared}) != 1:
            errors.append("join graph is disconnected")
    return errors


def parse_query(text: str) -> tuple[QuerySpec, int | None]:
    """Parse one workload line; returns the spec and its optional label."""
    line = text.rstrip("\n")
    fields = line.split("#")
    if len(fields) not in (3, 4):
        raise ParseError(f"expected 3 or 4 '#'-separated fields, got {len(fields)}")
    tables = []
    for token in fields[0].split(",") if fields[0] else []:
        parts = token.split()
        if len(parts) != 2:
            raise ParseError(f"malformed table reference {token!r} (expected 'name alias')")
        tables.append(TableRef(parts[0], parts[1]))
    if not tables:
        raise ParseError("query must reference at least one table")
    joins = []
    for token in fields[1].split(",") if fields[1] else []:
        sides = token.split("=")
        if len(sides) != 2:
            raise ParseError(f"malformed join {token!r}")
        joins.append(
            JoinEdge(_split_qualified(sides[0], "join side"), _split_qualified(sides[1], "join side"))
        )
    predicates = []
    if fields[2]:
        tokens = fields[2].split(",")
        if len(tokens) % 3:
            raise ParseError(f"predicate field has {len(tokens)} tokens, not a multiple of 3")
        for i in range(0, len(tokens), 3):
            col, op, val = tokens[i : i + 3]
            alias, column = _split_qualified(col, "predicate column")
            if op not in OPS:
                raise ParseError(f"unknown operator {op!r}")
            try:
                literal = int(val)
            except ValueError:
                raise ParseError(f"malformed literal {val!r}") from None
            predicates.append(Predicate(alias, column, op, literal))
    label: int | None = None
    if len(fields) == 4 and fields[3]:
        try:
            label = int(fields[3])
        except ValueError:
            raise ParseError(f"malformed cardinality {fields[3]!r}") from None
        if label < 0:
            raise ParseError(f"negative cardinality {label}")
    spec = QuerySpec(tuple(tables), tuple(joins), tuple(predicates))
    errors = _structural_errors(spec)
    if errors:
        raise ParseError("; ".join(errors))
    return spec, label


def validate(spec: QuerySpec, db: Database) -> list[str]:
    """All QuerySpec invariants against a concrete database; [] means ok."""
    errors = list(_structural_errors(spec))
    alias_table = {}
    for t in spec.tables:
        if t.table not in db.tables:
            errors.append(f"unknown table {t.table!r}")
        else:
            alias_table[t.alias] = t.table
    declared_edges = {(e.child, e.parent) for e in db.fk_edges}
    for j in spec.joins:
        sides = []
        for alias, column in (j.left, j.right):
            if alias not in alias_table:
                continue
            table = alias_table[alias]
            if not db.table(table).has_column(column):
                errors.append(f"unknown column {table}.{column} in join {j}")
            else:
                sides.append((table, column))
        if len(sides) == 2:
            if (sides[0], sides[1]) not in declared_edges and (
                sides[1],
                sides[0],
            ) not in declared_edges:
                errors.append(f"join {j} does not follow a declared foreign key")
    for p in spec.predicates:
        if p.alias not in alias_table:
            continue
        table = alias_table[p.alias]
        if not db.table(table).has_column(p.column):
            errors.append(f"unknown column {table}.{p.column} in predicate {p}")
        elif db.table(table).column(p.column).kind != KIND_ATTR:
            errors.append(f"predicate {p} targets a key column")
    return errors


# ---------------------------------------------------------------------------
# Workload generation
# ---------------------------------------------------------------------------


def default_aliases(db: Database) -> dict[str, str]:
    """Short alias per table (first letters of underscore-separated parts)."""
    aliases: dict[str, str] = {}
    used: set[str] = set()
    for name in db.table_names():
        base = "".join(part[0] for part in name.split("_") if part)
        alias = base
        n = 2
        while alias in used:
            alias = f"{base}{n}"
            n += 1
        used.add(alias)
        aliases[name] = alias
    return aliases


def generate_query(
    db: Database,
    max_joins: int,
    rng: np.random.Generator,
    *,
    referenced_only_seed: bool = False,
) -> QuerySpec:
    """One random query: join count ~ U{0..max_joins}, join tree grown by
    uniform extension, per-table predicate count ~ U{0..#non-key columns},
    uniform operator, literal drawn from actual column values.

    With `referenced_only_seed` the 0-join seed table is restricted to
    tables referenced by at least one fk edge (as for joining queries).
    """
    if max_joins < 0:
        raise ValueError("max_joins must be >= 0")
    aliases = default_aliases(db)
    num_joins = int(rng.integers(0, max_joins + 1))
    if num_joins == 0 and not referenced_only_seed:
        candidates = db.table_names()
    else:
        candidates = db.referenced_tables()
        if not candidates:
            raise GenerationError("database declares no joinable tables")
    current = [str(candidates[rng.integers(len(candidates))])]
    edges: list[JoinEdge] = []
    for _ in range(num_joins):
        frontier: dict[str, list] = {}
        for e in db.fk_edges:
            ct, pt = e.child[0], e.parent[0]
            if ct in current and pt not in current:
                frontier.setdefault(pt, []).append(e)
            elif pt in current and ct not in current:
                frontier.setdefault(ct, []).append(e)
        if not frontier:
            raise GenerationError(
                f"cannot extend join tree beyond {len(current)} tables"
            )
        new_table = sorted(frontier)[rng.integers(len(frontier))]
        options = frontier[new_table]
        edge = options[rng.integers(len(options))]
        edges.append(
            JoinEdge(
                (aliases[edge.child[0]], edge.child[1]),
                (aliases[edge.parent[0]], edge.parent[1]),
            )
        )
        current.append(new_table)
    predicates: list[Predicate] = []
    refs = sorted(TableRef(t, aliases[t]) for t in current)
    for ref in refs:
        attrs = db.attr_columns(ref.table)
        if not attrs:
            continue
        k = int(rng.integers(0, len(attrs) + 1))
        if not k:
            continue
        chosen = rng.choice(len(attrs), size=k, replace=False)
        for ci in chosen:
            column = attrs[int(ci)]
            op = OPS[int(rng.integers(len(OPS)))]
            values = db.column_values(ref.table, column)
            literal = int(values[rng.integers(len(values))])
            predicates.append(Predicate(ref.alias, column, op, literal))
    return QuerySpec(tuple(refs), tuple(edges), tuple(predicates))


def generate_workload(
    db: Database, n: int, max_joins: int, seed: int, **kwargs
) -> list[QuerySpec]:
    """n pairwise-distinct queries (unique canonical strings), deterministic
    per seed. Raises after RETRY_FACTOR * n failed attempts."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    seen: set[str] = set()
    out: list[QuerySpec] = []
    attempts = 0
    limit = RETRY_FACTOR * n
    while len(out) < n:
        if attempts >= limit:
            raise GenerationError(
                f"could not find {n} unique queries in {limit} attempts"
            )
        attempts += 1
        spec = generate_query(db, max_joins, rng, **kwargs)
        key = format_query(spec)
        if key not in seen:
            seen.add(key)
            out.append(spec)
    return out


# ---------------------------------------------------------------------------
# Workload files
# ---------------------------------------------------------------------------


def read_workload(path: str | Path) -> list[tuple[QuerySpec, int | None]]:
    """One query per line; blank lines and `--` comments are skipped."""
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("--"):
            continue
        try:
            out.append(parse_query(line))
        except ParseError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
    return out


def write_workload(
    path: str | Path, queries: list[QuerySpec] | list[tuple[QuerySpec, int | None]]
) -> None:
    lines = []
    for q in queries:
        spec, label = q if isinstance(q, tuple) else (q, None)
        lines.append(format_query(spec, label))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
