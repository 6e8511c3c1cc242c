import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from audiorec.data import (
    DAY_SECONDS,
    InteractionRecord,
    parse_catalog,
    parse_interactions,
    timeline_split,
    truncate_history,
    user_segments,
)
from audiorec.synth import SynthConfig, synth_generate, synth_generate_with_meta

from conftest import make_catalog, stream


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def rec_line(user="u1", item="a1", item_type="audiobook", signal="stream", t=0, **extra):
    obj = {"user_id": user, "item_id": item, "item_type": item_type, "signal": signal, "timestamp": t}
    obj.update(extra)
    return json.dumps(obj)


class TestParseInteractions:
    def test_valid_file_in_order(self, tmp_path):
        p = tmp_path / "x.jsonl"
        write_lines(p, [rec_line(t=3), rec_line(item="p1", item_type="podcast", t=1), rec_line(t=2)])
        parsed = parse_interactions(p)
        assert [r.timestamp for r in parsed.records] == [3, 1, 2]
        assert parsed.diagnostics == []

    def test_unknown_signal_skipped_with_line_number(self, tmp_path):
        p = tmp_path / "x.jsonl"
        write_lines(p, [rec_line(), rec_line(signal="purchase"), rec_line(t=5)])
        parsed = parse_interactions(p)
        assert len(parsed.records) == 2
        assert len(parsed.diagnostics) == 1
        assert parsed.diagnostics[0].line_no == 2
        assert "purchase" in parsed.diagnostics[0].message

    def test_empty_file(self, tmp_path):
        p = tmp_path / "x.jsonl"
        p.write_text("", encoding="utf-8")
        parsed = parse_interactions(p)
        assert parsed.records == [] and parsed.diagnostics == []

    def test_weak_signal_on_podcast_rejected(self, tmp_path):
        p = tmp_path / "x.jsonl"
        write_lines(p, [rec_line(item="p1", item_type="podcast", signal="follow")])
        parsed = parse_interactions(p)
        assert parsed.records == []
        assert parsed.diagnostics[0].line_no == 1

    def test_negative_timestamp_and_bad_json(self, tmp_path):
        p = tmp_path / "x.jsonl"
        write_lines(p, [rec_line(t=-1), "{not json", rec_line()])
        parsed = parse_interactions(p)
        assert len(parsed.records) == 1
        assert [d.line_no for d in parsed.diagnostics] == [1, 2]

    def test_missing_file_fatal(self, tmp_path):
        with pytest.raises(OSError):
            parse_interactions(tmp_path / "missing.jsonl")


def cat_line(item="a1", item_type="audiobook", vec=(1.0, 0.0, 0.0, 0.0), lang="en", genre="g0"):
    return json.dumps(
        {"item_id": item, "item_type": item_type, "content_vector": list(vec), "language": lang, "genre": genre}
    )


class TestParseCatalog:
    def test_two_items(self, tmp_path):
        p = tmp_path / "c.jsonl"
        write_lines(p, [cat_line("a1"), cat_line("p1", "podcast", (0.0, 1.0, 0.0, 0.0))])
        catalog = parse_catalog(p)
        assert set(catalog) == {"a1", "p1"}
        assert catalog["a1"].content_vector.shape == (4,)

    def test_duplicate_id_names_both_lines(self, tmp_path):
        p = tmp_path / "c.jsonl"
        write_lines(p, [cat_line("a1"), cat_line("p1", "podcast"), cat_line("a1")])
        with pytest.raises(ValueError, match=r"lines 1 and 3"):
            parse_catalog(p)

    def test_dimension_mismatch(self, tmp_path):
        p = tmp_path / "c.jsonl"
        write_lines(p, [cat_line("a1", vec=(1, 0, 0, 0)), cat_line("a2", vec=(1, 0, 0, 0, 0))])
        with pytest.raises(ValueError, match="dimension"):
            parse_catalog(p)


class TestTimelineSplit:
    def test_example_90_days(self):
        catalog = make_catalog()
        records = [stream("u1", "a0", catalog, t=(d - 1) * DAY_SECONDS) for d in range(1, 91)]
        split = timeline_split(records, split_time=76 * DAY_SECONDS)
        assert max(r.timestamp for r in split.train) == 75 * DAY_SECONDS  # day 76
        assert min(r.timestamp for r in split.holdout) == 76 * DAY_SECONDS  # day 77
        assert len(split.train) == 76 and len(split.holdout) == 14

    def test_default_split_time_is_max_minus_14_days(self):
        catalog = make_catalog()
        records = [stream("u1", "a0", catalog, t=t) for t in (0, 100 * DAY_SECONDS)]
        split = timeline_split(records)
        assert split.split_time == 100 * DAY_SECONDS - 14 * DAY_SECONDS

    def test_all_before_split_warns(self):
        catalog = make_catalog()
        records = [stream("u1", "a0", catalog, t=5)]
        with pytest.warns(UserWarning, match="holdout"):
            split = timeline_split(records, split_time=100)
        assert split.holdout == []

    def test_record_at_split_time_lands_in_holdout(self):
        catalog = make_catalog()
        records = [stream("u1", "a0", catalog, t=50), stream("u1", "a1", catalog, t=100)]
        split = timeline_split(records, split_time=100)
        assert [r.item_id for r in split.holdout] == ["a1"]

    def test_empty_is_fatal(self):
        with pytest.raises(ValueError):
            timeline_split([])

    @given(
        ts=st.lists(st.integers(min_value=0, max_value=10_000), min_size=1, max_size=60),
        split_at=st.integers(min_value=0, max_value=10_000),
    )
    @settings(max_examples=60, deadline=None)
    def test_partition_property(self, ts, split_at):
        catalog = make_catalog()
        records = [stream(f"u{i % 5}", "a0", catalog, t=t) for i, t in enumerate(ts)]
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            split = timeline_split(records, split_time=split_at)
        assert sorted(split.train + split.holdout, key=lambda r: (r.timestamp, r.user_id)) == sorted(
            records, key=lambda r: (r.timestamp, r.user_id)
        )
        assert all(r.timestamp < split_at for r in split.train)
        assert all(r.timestamp >= split_at for r in split.holdout)


class TestUserSegments:
    def test_follow_makes_warm(self):
        catalog = make_catalog()
        records = [
            InteractionRecord("u1", "a0", "audiobook", "follow", 10),
            stream("u1", "a1", catalog, t=100),
        ]
        split = timeline_split(records, split_time=50)
        seg = user_segments(split)
        assert seg.warm == {"u1"} and seg.cold == set()

    def test_podcast_only_history_is_cold(self):
        catalog = make_catalog()
        records = [stream("u1", "p0", catalog, t=10), stream("u1", "a1", catalog, t=100)]
        split = timeline_split(records, split_time=50)
        seg = user_segments(split)
        assert seg.cold == {"u1"}

    def test_train_only_user_not_segmented(self):
        catalog = make_catalog()
        records = [stream("u1", "a0", catalog, t=10), stream("u2", "a1", catalog, t=100)]
        split = timeline_split(records, split_time=50)
        seg = user_segments(split)
        assert "u1" not in seg.warm | seg.cold
        assert seg.warm | seg.cold == {"u2"}

    @given(st.integers(min_value=0, max_value=2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_disjoint_and_cover_holdout(self, seed):
        rng = np.random.default_rng(seed)
        catalog = make_catalog()
        from conftest import random_log

        records = random_log(rng, n_users=8, catalog=catalog)
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            split = timeline_split(records, split_time=500)
        seg = user_segments(split)
        holdout_users = {r.user_id for r in split.holdout}
        assert seg.warm & seg.cold == set()
        assert seg.warm | seg.cold == holdout_users


class TestSynth:
    def test_determinism_across_seeds(self):
        cfg = SynthConfig(n_users=40, n_podcasts=20, n_audiobooks=10, n_clusters=2, d_c=4)
        for seed in range(10):
            r1, c1 = synth_generate(cfg, seed)
            r2, c2 = synth_generate(cfg, seed)
            assert r1 == r2
            assert set(c1) == set(c2)
            for k in c1:
                assert np.array_equal(c1[k].content_vector, c2[k].content_vector)
                assert (c1[k].language, c1[k].genre) == (c2[k].language, c2[k].genre)

    def test_too_many_clusters_fatal(self):
        with pytest.raises(ValueError, match="n_clusters"):
            synth_generate(SynthConfig(n_users=3, n_audiobooks=2, n_clusters=5), seed=0)

    def test_within_cluster_stream_rate_exceeds_cross(self):
        cfg = SynthConfig(n_users=80, n_podcasts=40, n_audiobooks=20, n_clusters=3, d_c=4)
        assert cfg.cluster_affinity >= 5
        for seed in range(10):
            records, catalog, meta = synth_generate_with_meta(cfg, seed)
            within = cross = 0
            within_pairs = cross_pairs = 0
            uc, ic = meta["user_cluster"], meta["item_cluster"]
            for r in records:
                if r.signal != "stream":
                    continue
                if uc[r.user_id] == ic[r.item_id]:
                    within += 1
                else:
                    cross += 1
            for u in uc:
                for i in ic:
                    if uc[u] == ic[i]:
                        within_pairs += 1
                    else:
                        cross_pairs += 1
            assert within / within_pairs > cross / cross_pairs

    def test_colistened_content_similarity_exceeds_random(self, small_synth):
        # Exhaustive enumeration over audiobook pairs, independent of the
        # graph builder.
        records, catalog = small_synth
        per_user: dict[str, set[str]] = {}
        for r in records:
            if r.signal == "stream" and r.item_type == "audiobook":
                per_user.setdefault(r.user_id, set()).add(r.item_id)
        co = set()
        for items in per_user.values():
            ordered = sorted(items)
            for i, a in enumerate(ordered):
                for b in ordered[i + 1 :]:
                    co.add((a, b))
        assert co

        def cos(a, b):
            va, vb = catalog[a].content_vector, catalog[b].content_vector
            return va @ vb / (np.linalg.norm(va) * np.linalg.norm(vb))

        co_mean = np.mean([cos(a, b) for a, b in sorted(co)])
        ab_ids = sorted(i for i in catalog if catalog[i].item_type == "audiobook")
        all_mean = np.mean(
            [cos(a, b) for i, a in enumerate(ab_ids) for b in ab_ids[i + 1 :]]
        )
        assert co_mean > all_mean

    def test_single_cluster_has_no_content_structure(self):
        cfg = SynthConfig(n_users=80, n_podcasts=30, n_audiobooks=16, n_clusters=1, d_c=4)
        records, catalog = synth_generate(cfg, seed=3)
        per_user: dict[str, set[str]] = {}
        for r in records:
            if r.signal == "stream" and r.item_type == "audiobook":
                per_user.setdefault(r.user_id, set()).add(r.item_id)
        co = set()
        for items in per_user.values():
            ordered = sorted(items)
            for i, a in enumerate(ordered):
                for b in ordered[i + 1 :]:
                    co.add((a, b))

        def cos(a, b):
            va, vb = catalog[a].content_vector, catalog[b].content_vector
            return va @ vb / (np.linalg.norm(va) * np.linalg.norm(vb))

        ab_ids = sorted(i for i in catalog if catalog[i].item_type == "audiobook")
        co_mean = np.mean([cos(a, b) for a, b in sorted(co)])
        all_mean = np.mean([cos(a, b) for i, a in enumerate(ab_ids) for b in ab_ids[i + 1 :]])
        assert abs(co_mean - all_mean) < 0.05

    def test_weak_signals_precede_first_streams(self, small_synth):
        records, _ = small_synth
        pairs: dict[tuple[str, str], dict] = {}
        for r in records:
            if r.item_type != "audiobook":
                continue
            d = pairs.setdefault((r.user_id, r.item_id), {"stream": [], "weak": []})
            d["stream" if r.signal == "stream" else "weak"].append(r.timestamp)
        preceded = streamed = 0
        for d in pairs.values():
            if d["stream"]:
                streamed += 1
                if d["weak"] and min(d["weak"]) <= min(d["stream"]):
                    preceded += 1
        assert streamed > 0
        assert 0.3 < preceded / streamed <= 1.0

    def test_cold_items_have_no_streams(self, small_synth, small_synth_config):
        records, catalog = small_synth
        ab_ids = sorted(i for i in catalog if catalog[i].item_type == "audiobook")
        cold = set(ab_ids[-small_synth_config.n_cold_items :])
        streamed = {r.item_id for r in records if r.signal == "stream"}
        assert streamed & cold == set()


def test_truncate_history():
    catalog = make_catalog()
    records = [stream("u1", "a0", catalog, t=0), stream("u1", "a1", catalog, t=100 * DAY_SECONDS)]
    kept = truncate_history(records, history_days=30)
    assert [r.item_id for r in kept] == ["a1"]
