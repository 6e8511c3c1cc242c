import numpy as np
import pytest

from audiorec.index import build_index, load_index, query_topk, save_index


def unit_rows(rng, n, d):
    m = rng.normal(size=(n, d))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


TOY = {
    "A": np.array([1.0, 0.0]),
    "B": np.array([0.0, 1.0]),
    "C": np.array([0.6, 0.8]),
}


class TestBuild:
    def test_sorted_ids(self):
        idx = build_index({"b": np.array([1.0, 0.0]), "a": np.array([0.0, 1.0])})
        assert idx.ids == ["a", "b"]
        assert len(idx) == 2

    def test_duplicate_id_fatal(self):
        pairs = [("a", np.array([1.0, 0.0])), ("a", np.array([0.0, 1.0]))]
        with pytest.raises(ValueError, match="duplicate"):
            build_index(pairs)

    def test_dimension_mismatch_fatal(self):
        with pytest.raises(ValueError, match="shape"):
            build_index({"a": np.array([1.0, 0.0]), "b": np.array([0.0, 0.0, 1.0])})

    def test_non_unit_row_fatal(self):
        with pytest.raises(ValueError, match="unit norm"):
            build_index({"a": np.array([1.0, 1.0])})

    def test_empty_fatal(self):
        with pytest.raises(ValueError):
            build_index({})

    def test_rebuild_identical(self, tmp_path):
        rng = np.random.default_rng(0)
        vecs = {f"i{i}": v for i, v in enumerate(unit_rows(rng, 8, 4))}
        i1, i2 = build_index(vecs), build_index(vecs)
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        save_index(i1, p1)
        save_index(i2, p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestQuery:
    def test_hand_example(self):
        idx = build_index(TOY)
        out = query_topk(idx, np.array([1.0, 0.0]), k=2)
        assert out == [("A", pytest.approx(1.0)), ("C", pytest.approx(0.6))]

    def test_exclusion(self):
        idx = build_index(TOY)
        out = query_topk(idx, np.array([1.0, 0.0]), k=2, exclude={"A"})
        assert [i for i, _ in out] == ["C", "B"]
        assert out[1][1] == pytest.approx(0.0)

    def test_tie_broken_by_ascending_id(self):
        idx = build_index(
            {"zz": np.array([1.0, 0.0]), "aa": np.array([1.0, 0.0]), "mm": np.array([0.0, 1.0])}
        )
        out = query_topk(idx, np.array([1.0, 0.0]), k=3)
        assert [i for i, _ in out] == ["aa", "zz", "mm"]

    def test_k_larger_than_index(self):
        idx = build_index(TOY)
        assert len(query_topk(idx, np.array([1.0, 0.0]), k=50)) == 3

    def test_k_below_one_fatal(self):
        idx = build_index(TOY)
        with pytest.raises(ValueError):
            query_topk(idx, np.array([1.0, 0.0]), k=0)

    def test_scores_non_increasing_and_exclusion_sound(self):
        rng = np.random.default_rng(4)
        vecs = {f"i{i:03d}": v for i, v in enumerate(unit_rows(rng, 40, 8))}
        idx = build_index(vecs)
        for _ in range(50):
            q = rng.normal(size=8)
            exclude = {f"i{int(i):03d}" for i in rng.integers(0, 40, size=5)}
            out = query_topk(idx, q, k=10, exclude=exclude)
            scores = [s for _, s in out]
            assert all(a >= b for a, b in zip(scores, scores[1:]))
            assert not ({i for i, _ in out} & exclude)

    def test_oracle_equivalence(self):
        rng = np.random.default_rng(11)
        base = unit_rows(rng, 30, 6)
        vecs = {}
        for i in range(30):
            vecs[f"i{i:03d}"] = base[i]
        # duplicated rows under new ids force exact score ties
        for i in range(5):
            vecs[f"dup{i}"] = base[i]
        idx = build_index(vecs)
        ids = sorted(vecs)
        for trial in range(200):
            q = rng.normal(size=6)
            k = int(rng.integers(1, 12))
            exclude = set(
                str(x) for x in rng.choice(ids, size=int(rng.integers(0, 6)), replace=False)
            )
            expected = sorted(
                ((i, float(vecs[i] @ q)) for i in ids if i not in exclude),
                key=lambda p: (-p[1], p[0]),
            )[:k]
            got = query_topk(idx, q, k, exclude)
            # ranking (incl. exact ties from duplicated rows) must match the
            # full-sort oracle exactly; scores agree up to BLAS-kernel ulps
            assert [i for i, _ in got] == [i for i, _ in expected]
            for (_, s_got), (_, s_exp) in zip(got, expected):
                assert abs(s_got - s_exp) < 1e-12


class TestSerialization:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(2)
        vecs = {f"item-{i}": v for i, v in enumerate(unit_rows(rng, 12, 16))}
        idx = build_index(vecs)
        p = tmp_path / "x.bin"
        save_index(idx, p)
        loaded = load_index(p)
        assert loaded.ids == idx.ids
        assert np.array_equal(loaded.vectors, idx.vectors)
        p2 = tmp_path / "y.bin"
        save_index(loaded, p2)
        assert p.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "x.bin"
        p.write_bytes(b"garbage")
        with pytest.raises(ValueError):
            load_index(p)
