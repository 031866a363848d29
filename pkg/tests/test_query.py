import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cardlab.errors import GenerationError, ParseError
from cardlab.query import (
    JoinEdge,
    Predicate,
    QuerySpec,
    TableRef,
    default_aliases,
    format_query,
    generate_query,
    generate_workload,
    parse_query,
    read_workload,
    validate,
    write_workload,
)
from cardlab.storage import SynthConfig, generate_synthetic_db

ROWS = {
    "title": 400,
    "movie_companies": 700,
    "movie_info": 700,
    "movie_info_idx": 700,
    "movie_keyword": 700,
    "cast_info": 700,
}


@pytest.fixture(scope="module")
def db():
    return generate_synthetic_db(SynthConfig(rows=ROWS, rho=0.5), seed=21)


class TestParse:
    def test_direct_parse(self):
        spec, label = parse_query(
            "title t,movie_companies mc#mc.movie_id=t.id#t.production_year,>,2010#847"
        )
        assert spec.tables == (TableRef("movie_companies", "mc"), TableRef("title", "t"))
        assert spec.joins == (JoinEdge(("mc", "movie_id"), ("t", "id")),)
        assert spec.predicates == (Predicate("t", "production_year", ">", 2010),)
        assert label == 847

    def test_undeclared_alias_rejected(self):
        with pytest.raises(ParseError):
            parse_query("title t#mc.movie_id=t.id#t.production_year,>,2010#847")

    def test_empty_sets(self):
        spec, label = parse_query("title t###")
        assert spec.tables == (TableRef("title", "t"),)
        assert spec.joins == ()
        assert spec.predicates == ()
        assert label is None

    def test_three_field_line(self):
        spec, label = parse_query("title t##")
        assert label is None
        assert spec.joins == ()

    def test_bad_operator(self):
        with pytest.raises(ParseError):
            parse_query("title t##t.kind_id,!,3#")

    def test_bad_literal(self):
        with pytest.raises(ParseError):
            parse_query("title t##t.kind_id,=,three#")

    def test_disconnected_join_graph(self):
        with pytest.raises(ParseError):
            parse_query("title t,movie_companies mc,movie_info mi#mc.movie_id=t.id##")

    def test_cross_product_rejected(self):
        with pytest.raises(ParseError):
            parse_query("title t,movie_companies mc###")

    def test_duplicate_alias_rejected(self):
        with pytest.raises(ParseError):
            parse_query("title t,movie_companies t###")


class TestFormat:
    def test_label_suffix(self):
        spec, _ = parse_query("title t###")
        assert format_query(spec, 42).endswith("#42")

    def test_round_trip_of_generated(self, db):
        rng = np.random.default_rng(0)
        for _ in range(100):
            spec = generate_query(db, 2, rng)
            again, label = parse_query(format_query(spec))
            assert again == spec
            assert label is None

    def test_insertion_order_irrelevant(self):
        a = QuerySpec(
            (TableRef("title", "t"), TableRef("movie_companies", "mc")),
            (JoinEdge(("mc", "movie_id"), ("t", "id")),),
            (Predicate("t", "kind_id", "=", 3), Predicate("t", "production_year", ">", 2000)),
        )
        b = QuerySpec(
            (TableRef("movie_companies", "mc"), TableRef("title", "t")),
            (JoinEdge(("mc", "movie_id"), ("t", "id")),),
            (Predicate("t", "production_year", ">", 2000), Predicate("t", "kind_id", "=", 3)),
        )
        assert a == b
        assert format_query(a) == format_query(b)

    @given(label=st.integers(min_value=0, max_value=10**12))
    @settings(max_examples=50, deadline=None)
    def test_label_round_trip(self, label):
        spec, parsed = parse_query(format_query(QuerySpec((TableRef("title", "t"),)), label))
        assert parsed == label


class TestGenerator:
    def test_zero_joins_forced(self, db):
        rng = np.random.default_rng(1)
        for _ in range(50):
            spec = generate_query(db, 0, rng)
            assert spec.joins == ()
            assert len(spec.tables) == 1

    def test_join_count_uniform(self, db):
        rng = np.random.default_rng(2)
        counts = np.zeros(3)
        trials = 10_000
        for _ in range(trials):
            counts[len(generate_query(db, 2, rng).joins)] += 1
        np.testing.assert_allclose(counts / trials, 1 / 3, atol=0.02)

    def test_literal_membership(self, db):
        rng = np.random.default_rng(3)
        for _ in range(200):
            spec = generate_query(db, 2, rng)
            for p in spec.predicates:
                values = db.column_values(spec.table_of(p.alias), p.column)
                assert p.literal in values

    def test_generated_queries_validate(self, db):
        rng = np.random.default_rng(4)
        for _ in range(200):
            assert validate(generate_query(db, 3, rng), db) == []

    def test_generator_uses_canonical_fk_orientation(self, db):
        rng = np.random.default_rng(5)
        child_cols = {(e.child[0], e.child[1]) for e in db.fk_edges}
        aliases = default_aliases(db)
        table_of_alias = {v: k for k, v in aliases.items()}
        for _ in range(100):
            for j in generate_query(db, 2, rng).joins:
                assert (table_of_alias[j.left[0]], j.left[1]) in child_cols

    def test_referenced_only_seed_policy(self, db):
        rng = np.random.default_rng(60)
        tables = {
            generate_query(db, 0, rng, referenced_only_seed=True).tables[0].table
            for _ in range(30)
        }
        assert tables == {"title"}

    def test_any_table_seeds_zero_join_queries(self, db):
        rng = np.random.default_rng(61)
        tables = {
            generate_query(db, 0, rng).tables[0].table for _ in range(200)
        }
        assert len(tables) == 6

    def test_max_joins_beyond_schema_errors(self, db):
        rng = np.random.default_rng(6)
        with pytest.raises(GenerationError):
            for _ in range(200):  # at some point a 6-join draw appears
                generate_query(db, 6, rng)


class TestWorkload:
    def test_unique_and_deterministic(self, db):
        w1 = generate_workload(db, 1000, 2, seed=7)
        w2 = generate_workload(db, 1000, 2, seed=7)
        strings = [format_query(q) for q in w1]
        assert len(set(strings)) == 1000
        assert strings == [format_query(q) for q in w2]

    def test_contains_deeper_joins(self, db):
        w = generate_workload(db, 300, 4, seed=8)
        joins = {len(q.joins) for q in w}
        assert 3 in joins and 4 in joins

    def test_file_round_trip(self, db, tmp_path):
        w = generate_workload(db, 50, 2, seed=9)
        path = tmp_path / "w.txt"
        write_workload(path, w)
        loaded = read_workload(path)
        assert [q for q, _ in loaded] == w

    def test_comments_and_blanks_skipped(self, tmp_path):
        path = tmp_path / "w.txt"
        path.write_text("-- a comment\n\ntitle t###\n")
        assert len(read_workload(path)) == 1


class TestValidate:
    def test_non_fk_join(self, db):
        spec = QuerySpec(
            (TableRef("movie_companies", "mc"), TableRef("movie_info", "mi")),
            (JoinEdge(("mc", "movie_id"), ("mi", "movie_id")),),
        )
        assert any("foreign key" in e for e in validate(spec, db))

    def test_predicate_on_key_column(self, db):
        spec = QuerySpec(
            (TableRef("title", "t"),),
            (),
            (Predicate("t", "id", "=", 1),),
        )
        assert any("key column" in e for e in validate(spec, db))

    def test_unknown_table(self, db):
        spec = QuerySpec((TableRef("nope", "n"),))
        assert any("unknown table" in e for e in validate(spec, db))

    def test_unknown_column(self, db):
        spec = QuerySpec((TableRef("title", "t"),), (), (Predicate("t", "zz", "=", 1),))
        assert any("unknown column" in e for e in validate(spec, db))
