"""Immutable in-memory columnar database.

Covers loading/synthesis of integer tables, per-column statistics,
materialized uniform samples, and hash indexes for join probing. After
construction a Database (and its samples/indexes) is never mutated, so
concurrent readers are safe.
"""

from __future__ import annotations

import csv
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, SchemaError

KIND_PK = "pk"
KIND_FK = "fk"
KIND_ATTR = "attr"
COLUMN_KINDS = (KIND_PK, KIND_FK, KIND_ATTR)

SCHEMA_FORMAT_VERSION = 1
SAMPLES_FORMAT_VERSION = 1

#: Number of latent classes driving the injected correlations.
LATENT_CLASSES = 8

#: Desk-scale default row counts (fact table plus five children).
DEFAULT_ROWS = {
    "title": 100_000,
    "movie_companies": 200_000,
    "movie_info": 200_000,
    "movie_info_idx": 200_000,
    "movie_keyword": 200_000,
    "cast_info": 200_000,
}

#: Desk-scale default materialized sample size per table.
DEFAULT_SAMPLE_SIZE = 100


@dataclass(frozen=True)
class ColumnSpec:
    """Declared column: name, kind, and (for foreign keys) the referenced column."""

    name: str
    kind: str
    ref: tuple[str, str] | None = None  # (table, column) for fk columns

    def __post_init__(self):
        if self.kind not in COLUMN_KINDS:
            raise SchemaError(f"unknown column kind {self.kind!r} for {self.name!r}")
        if self.kind == KIND_FK and self.ref is None:
            raise SchemaError(f"foreign key column {self.name!r} needs a ref")
        if self.kind != KIND_FK and self.ref is not None:
            raise SchemaError(f"non-fk column {self.name!r} must not carry a ref")


@dataclass(frozen=True)
class TableSchema:
    name: str
    columns: tuple[ColumnSpec, ...]


@dataclass
class Column:
    """One named integer column. Values are always 64-bit signed."""

    name: str
    kind: str
    values: np.ndarray
    ref: tuple[str, str] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int64)
        if self.values.ndim != 1:
            raise SchemaError(f"column {self.name!r} must be one-dimensional")


@dataclass
class ColumnStats:
    min: int
    max: int
    distinct_count: int


@dataclass
class Table:
    """Ordered set of equal-length columns with exactly one primary key."""

    name: str
    columns: list[Column]
    row_count: int = field(init=False)

    def __post_init__(self):
        lengths = {len(c.values) for c in self.columns}
        if len(lengths) > 1:
            raise SchemaError(f"table {self.name!r} has ragged columns")
        self.row_count = lengths.pop() if lengths else 0
        pks = [c for c in self.columns if c.kind == KIND_PK]
        if len(pks) != 1:
            raise SchemaError(
                f"table {self.name!r} must have exactly one primary key, found {len(pks)}"
            )
        pk = pks[0]
        if self.row_count and len(np.unique(pk.values)) != self.row_count:
            raise SchemaError(f"primary key {self.name}.{pk.name} has duplicates")

    def column(self, name: str) -> Column:
        for c in self.columns:
            if c.name == name:
                return c
        raise SchemaError(f"unknown column {self.name}.{name}")

    def has_column(self, name: str) -> bool:
        return any(c.name == name for c in self.columns)

    @property
    def primary_key(self) -> Column:
        return next(c for c in self.columns if c.kind == KIND_PK)


@dataclass(frozen=True)
class FkEdge:
    """Declared join edge, child (fk) side first."""

    child: tuple[str, str]  # (table, column)
    parent: tuple[str, str]

    @property
    def key(self) -> str:
        return f"{self.child[0]}.{self.child[1]}={self.parent[0]}.{self.parent[1]}"


class Database:
    """Named set of tables plus the declared fk-edge join universe.

    Referential integrity is verified on construction; per-column stats are
    precomputed for all non-empty columns.
    """

    def __init__(self, tables: list[Table]):
        self.tables: dict[str, Table] = {}
        for t in tables:
            if t.name in self.tables:
                raise SchemaError(f"duplicate table {t.name!r}")
            self.tables[t.name] = t
        self.fk_edges: tuple[FkEdge, ...] = tuple(
            FkEdge(child=(t.name, c.name), parent=c.ref)
            for t in tables
            for c in t.columns
            if c.kind == KIND_FK
        )
        self._check_integrity()
        self._stats: dict[tuple[str, str], ColumnStats] = {}
        for t in tables:
            for c in t.columns:
                if len(c.values):
                    self._stats[(t.name, c.name)] = compute_stats(c)

    def _check_integrity(self):
        for e in self.fk_edges:
            pt, pc = e.parent
            if pt not in self.tables or not self.tables[pt].has_column(pc):
                raise SchemaError(f"fk edge {e.key} references unknown column")
            child_vals = self.tables[e.child[0]].column(e.child[1]).values
            parent_vals = self.tables[pt].column(pc).values
            if child_vals.size and not np.isin(child_vals, parent_vals).all():
                raise SchemaError(f"referential integrity violated on {e.key}")

    def table(self, name: str) -> Table:
        if name not in self.tables:
            raise SchemaError(f"unknown table {name!r}")
        return self.tables[name]

    def column_values(self, table: str, column: str) -> np.ndarray:
        return self.table(table).column(column).values

    def stats(self, table: str, column: str) -> ColumnStats:
        key = (table, column)
        if key not in self._stats:
            # Either the column does not exist or it is empty.
            self.table(table).column(column)
            raise ValueError(f"no stats for empty column {table}.{column}")
        return self._stats[key]

    def attr_columns(self, table: str) -> tuple[str, ...]:
        return tuple(c.name for c in self.table(table).columns if c.kind == KIND_ATTR)

    def referenced_tables(self) -> tuple[str, ...]:
        return tuple(sorted({e.parent[0] for e in self.fk_edges}))

    def table_names(self) -> tuple[str, ...]:
        return tuple(sorted(self.tables))


@dataclass
class MaterializedSample:
    """Uniform without-replacement sample of one table, kept in row order."""

    table: str
    size: int
    row_indices: np.ndarray
    rows: dict[str, np.ndarray]
    seed: int


class HashIndex:
    """Exact value -> row indices map over one column."""

    def __init__(self, table: str, key_column: str, values: np.ndarray):
        self.table = table
        self.key_column = key_column
        order = np.argsort(values, kind="stable")
        sorted_vals = values[order]
        if sorted_vals.size:
            starts = np.flatnonzero(np.r_[True, sorted_vals[1:] != sorted_vals[:-1]])
            bounds = np.r_[starts, sorted_vals.size]
            self._map = {
                int(sorted_vals[starts[i]]): order[bounds[i] : bounds[i + 1]]
                for i in range(len(starts))
            }
        else:
            self._map = {}
        self._empty = np.empty(0, dtype=np.int64)

    def lookup(self, value: int) -> np.ndarray:
        return self._map.get(int(value), self._empty)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def compute_stats(column: Column) -> ColumnStats:
    """Exact min/max/distinct-count of a non-empty column."""
    v = column.values
    if not v.size:
        raise ValueError(f"cannot compute stats of empty column {column.name!r}")
    return ColumnStats(
        min=int(v.min()), max=int(v.max()), distinct_count=int(np.unique(v).size)
    )


def load_csv(path: str | Path, schema: TableSchema) -> Table:
    """Read a header+integer CSV file into a Table with columns in schema order."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: missing header line") from None
        declared = [c.name for c in schema.columns]
        if sorted(header) != sorted(declared):
            unknown = set(header) - set(declared)
            missing = set(declared) - set(header)
            raise SchemaError(
                f"{path}: header mismatch for table {schema.name!r}"
                f" (unknown: {sorted(unknown)}, missing: {sorted(missing)})"
            )
        positions = [header.index(name) for name in declared]
        raw: list[list[int]] = [[] for _ in declared]
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            for out, pos in zip(raw, positions):
                cell = row[pos]
                try:
                    out.append(int(cell))
                except ValueError:
                    raise ParseError(
                        f"{path}:{lineno}: malformed integer {cell!r}"
                    ) from None
    columns = [
        Column(spec.name, spec.kind, np.array(vals, dtype=np.int64), ref=spec.ref)
        for spec, vals in zip(schema.columns, raw)
    ]
    return Table(schema.name, columns)


def draw_sample(table: Table, size: int, seed: int) -> MaterializedSample:
    """Uniform sample without replacement; deterministic per (table name, size, seed)."""
    if not 1 <= size <= table.row_count:
        raise ValueError(
            f"sample size {size} out of range [1, {table.row_count}] for {table.name!r}"
        )
    ss = np.random.SeedSequence([seed, size, zlib.crc32(table.name.encode())])
    rng = np.random.default_rng(ss)
    idx = np.sort(rng.choice(table.row_count, size=size, replace=False))
    rows = {c.name: c.values[idx] for c in table.columns}
    return MaterializedSample(table.name, size, idx, rows, seed)


def build_index(table: Table, column: str) -> HashIndex:
    return HashIndex(table.name, column, table.column(column).values)


def build_join_indexes(db: Database) -> dict[tuple[str, str], HashIndex]:
    """Indexes on every column participating in a declared fk edge."""
    keys = {e.child for e in db.fk_edges} | {e.parent for e in db.fk_edges}
    return {
        (t, c): build_index(db.table(t), c) for t, c in sorted(keys)
    }


def draw_all_samples(
    db: Database, size: int, seed: int
) -> dict[str, MaterializedSample]:
    return {name: draw_sample(db.table(name), size, seed) for name in db.table_names()}


# ---------------------------------------------------------------------------
# Synthetic database
# ---------------------------------------------------------------------------


@dataclass
class SynthConfig:
    """Row counts and correlation strength for the built-in star schema."""

    rows: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_ROWS))
    rho: float = 0.8

    def __post_init__(self):
        unknown = set(self.rows) - set(DEFAULT_ROWS)
        if unknown:
            raise ValueError(f"unknown synthetic tables: {sorted(unknown)}")
        merged = dict(DEFAULT_ROWS)
        merged.update(self.rows)
        self.rows = merged
        if any(n < 1 for n in self.rows.values()):
            raise ValueError("row counts must be >= 1")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")


# (table, column) -> inclusive value domain of the attribute.
_ATTR_DOMAINS: dict[tuple[str, str], tuple[int, int]] = {
    ("title", "kind_id"): (1, 7),
    ("title", "production_year"): (1880, 2020),
    ("movie_companies", "company_id"): (1, 200),
    ("movie_companies", "company_type_id"): (1, 4),
    ("movie_info", "info_type_id"): (1, 113),
    ("movie_info_idx", "info_type_id"): (1, 113),
    ("movie_keyword", "keyword_id"): (1, 500),
    ("cast_info", "person_id"): (1, 1000),
    ("cast_info", "role_id"): (1, 12),
}

_CHILD_TABLES = (
    "movie_companies",
    "movie_info",
    "movie_info_idx",
    "movie_keyword",
    "cast_info",
)

SYNTHETIC_SCHEMA: tuple[TableSchema, ...] = (
    TableSchema(
        "title",
        (
            ColumnSpec("id", KIND_PK),
            ColumnSpec("kind_id", KIND_ATTR),
            ColumnSpec("production_year", KIND_ATTR),
        ),
    ),
) + tuple(
    TableSchema(
        name,
        (ColumnSpec("id", KIND_PK), ColumnSpec("movie_id", KIND_FK, ("title", "id")))
        + tuple(
            ColumnSpec(col, KIND_ATTR)
            for (t, col) in _ATTR_DOMAINS
            if t == name
        ),
    )
    for name in _CHILD_TABLES
)


def _correlated_values(rng, rho, latent, lo, hi):
    """Blend latent-class-driven values with independent uniform draws."""
    domain = hi - lo + 1
    block = max(1, domain // LATENT_CLASSES)
    within = rng.integers(0, block, size=latent.size)
    correlated = lo + (latent * block + within) % domain
    independent = rng.integers(lo, hi + 1, size=latent.size)
    take = rng.random(latent.size) < rho
    return np.where(take, correlated, independent).astype(np.int64)


def generate_synthetic_db(config: SynthConfig | None = None, seed: int = 0) -> Database:
    """Six-table star schema with a latent per-title variable injecting
    join-crossing correlations of strength rho.

    Child rows pick their parent with log-normal popularity weights (mildly
    tied to the latent class), so join fanouts are skewed and correlated
    across child tables the way real fact tables are; independence-based
    join estimates are systematically off on multi-child joins.
    """
    cfg = config if config is not None else SynthConfig()
    rng = np.random.default_rng(seed)
    n_title = cfg.rows["title"]
    latent = rng.integers(0, LATENT_CLASSES, size=n_title)
    centered = (latent - (LATENT_CLASSES - 1) / 2.0) / LATENT_CLASSES
    log_popularity = 0.8 * rng.standard_normal(n_title) + centered
    popularity = np.exp(log_popularity)
    popularity /= popularity.sum()

    tables: list[Table] = []
    for schema in SYNTHETIC_SCHEMA:
        n = cfg.rows[schema.name]
        if schema.name == "title":
            parent_latent = latent
            base = {"id": np.arange(1, n + 1, dtype=np.int64)}
        else:
            parent_pos = rng.choice(n_title, size=n, p=popularity)
            parent_latent = latent[parent_pos]
            base = {
                "id": np.arange(1, n + 1, dtype=np.int64),
                "movie_id": (parent_pos + 1).astype(np.int64),
            }
        columns = []
        for spec in schema.columns:
            if spec.name in base:
                values = base[spec.name]
            else:
                lo, hi = _ATTR_DOMAINS[(schema.name, spec.name)]
                values = _correlated_values(rng, cfg.rho, parent_latent, lo, hi)
            columns.append(Column(spec.name, spec.kind, values, ref=spec.ref))
        tables.append(Table(schema.name, columns))
    return Database(tables)


def load_synth_config(path: str | Path) -> tuple[SynthConfig, int | None]:
    """Key/value config file: `rows.<table>`, `rho`, `seed`. Returns (config, seed)."""
    rows: dict[str, int] = {}
    rho = SynthConfig().rho
    seed: int | None = None
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#") or line.startswith("--"):
            continue
        if "=" not in line:
            raise ParseError(f"{path}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        try:
            if key.startswith("rows."):
                rows[key[len("rows.") :]] = int(value)
            elif key == "rho":
                rho = float(value)
            elif key == "seed":
                seed = int(value)
            else:
                raise ParseError(f"{path}:{lineno}: unknown key {key!r}")
        except ValueError:
            raise ParseError(f"{path}:{lineno}: malformed value {value!r}") from None
    return SynthConfig(rows=rows, rho=rho), seed


# ---------------------------------------------------------------------------
# On-disk database directory (schema.json + one CSV per table)
# ---------------------------------------------------------------------------


def save_database(db: Database, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    schema_doc = {
        "format_version": SCHEMA_FORMAT_VERSION,
        "tables": [
            {
                "name": t.name,
                "columns": [
                    {
                        "name": c.name,
                        "kind": c.kind,
                        **({"ref": f"{c.ref[0]}.{c.ref[1]}"} if c.ref else {}),
                    }
                    for c in t.columns
                ],
            }
            for t in db.tables.values()
        ],
    }
    (directory / "schema.json").write_text(
        json.dumps(schema_doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    for t in db.tables.values():
        with (directory / f"{t.name}.csv").open("w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow([c.name for c in t.columns])
            writer.writerows(zip(*(c.values.tolist() for c in t.columns)))


def load_database(directory: str | Path) -> Database:
    directory = Path(directory)
    schema_path = directory / "schema.json"
    if not schema_path.exists():
        raise SchemaError(f"{directory}: no schema.json found")
    doc = json.loads(schema_path.read_text(encoding="utf-8"))
    if doc.get("format_version") != SCHEMA_FORMAT_VERSION:
        raise SchemaError(f"{schema_path}: unsupported format_version")
    tables = []
    for tdoc in doc["tables"]:
        specs = []
        for cdoc in tdoc["columns"]:
            ref = None
            if "ref" in cdoc:
                rt, _, rc = cdoc["ref"].partition(".")
                ref = (rt, rc)
            specs.append(ColumnSpec(cdoc["name"], cdoc["kind"], ref))
        schema = TableSchema(tdoc["name"], tuple(specs))
        tables.append(load_csv(directory / f"{schema.name}.csv", schema))
    return Database(tables)


def save_samples(samples: dict[str, MaterializedSample], path: str | Path) -> None:
    doc = {
        "format_version": SAMPLES_FORMAT_VERSION,
        "tables": {
            name: {
                "size": s.size,
                "seed": s.seed,
                "row_indices": s.row_indices.tolist(),
            }
            for name, s in sorted(samples.items())
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def load_samples(path: str | Path, db: Database) -> dict[str, MaterializedSample]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format_version") != SAMPLES_FORMAT_VERSION:
        raise SchemaError(f"{path}: unsupported samples format_version")
    samples = {}
    for name, entry in doc["tables"].items():
        table = db.table(name)
        idx = np.asarray(entry["row_indices"], dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= table.row_count):
            raise SchemaError(f"{path}: sample indices out of range for {name!r}")
        rows = {c.name: c.values[idx] for c in table.columns}
        samples[name] = MaterializedSample(name, int(entry["size"]), idx, rows, int(entry["seed"]))
    return samples
