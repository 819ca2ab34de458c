from pathlib import Path

import orjson
import pytest

from app.models.tweet_models import TweetRecord, normalize_url
from app.services.ingest_service import (
    detect_retweet,
    group_cascades,
    load_cascades,
    load_troll_registry,
    parse_corpus,
    read_corpus,
    write_cascades,
)
from app.utils.exceptions import ArtifactError, CorpusFormatError, CorpusIOError, RegistryFormatError
from tests.conftest import A, TOY_TEXT, T0, record, retweet, tweet_dict

URL = "https://x.co/a"


def lines_of(*payloads) -> list:
    return [orjson.dumps(payload).decode() for payload in payloads]


class TestParseCorpus:
    def test_empty_stream(self):
        parsed = parse_corpus([])
        assert parsed.records == []
        assert parsed.skipped == 0

    def test_garbage_line_is_skipped(self):
        lines = lines_of(*(tweet_dict(i, 100 + i, T0 + i, "hello") for i in range(3)))
        lines.insert(1, "{not json")
        parsed = parse_corpus(lines)
        assert [r.tweet_id for r in parsed.records] == [0, 1, 2]
        assert parsed.skipped == 1

    def test_ids_preserved_in_input_order(self):
        ids = [90, 12, 5, 77, 31, 8, 64, 43, 20, 1]
        parsed = parse_corpus(lines_of(*(tweet_dict(i, 7, T0, "x") for i in ids)))
        assert [r.tweet_id for r in parsed.records] == ids

    def test_majority_malformed_is_fatal(self):
        lines = lines_of(tweet_dict(1, 7, T0, "ok")) + ["garbage", "[1, 2]"]
        with pytest.raises(CorpusFormatError):
            parse_corpus(lines)

    def test_validation_failures_count_as_malformed(self):
        too_early = tweet_dict(2, 7, T0, "old")
        too_early["created_at"] = "2005-12-31T23:59:59Z"
        empty_name = tweet_dict(3, 7, T0, "x", mentions=[8])
        empty_name["mentions"][0]["screen_name"] = ""
        negative = tweet_dict(4, -1, T0, "x")
        good = [tweet_dict(i, 7, T0, "fine") for i in range(10, 14)]
        parsed = parse_corpus(lines_of(*good, too_early, empty_name, negative))
        assert len(parsed.records) == 4
        assert parsed.skipped == 3

    def test_duplicate_tweet_id_is_skipped(self):
        parsed = parse_corpus(lines_of(tweet_dict(1, 7, T0, "a"), tweet_dict(1, 8, T0, "b"), tweet_dict(2, 7, T0, "c")))
        assert [r.user_id for r in parsed.records] == [7, 7]
        assert parsed.skipped == 1

    def test_string_ids_and_subsecond_times(self):
        payload = tweet_dict(1, 7, T0, "x")
        payload["tweet_id"] = "18446744073709551615"
        payload["created_at"] = "2016-10-01T12:00:00.750+00:00"
        parsed = parse_corpus(lines_of(payload))
        assert parsed.records[0].tweet_id == 2**64 - 1
        assert parsed.records[0].created_at.microsecond == 0

    def test_unreadable_file(self, tmp_path: Path):
        with pytest.raises(CorpusIOError):
            read_corpus(tmp_path / "missing.jsonl")

    def test_read_corpus_is_worker_independent(self, tmp_path: Path, monkeypatch):
        monkeypatch.setattr("app.services.ingest_service.SHARD_SIZE", 3)
        path = tmp_path / "c.jsonl"
        lines = lines_of(*(tweet_dict(i, i % 5, T0 + i, f"post {i}") for i in range(20)))
        lines.insert(7, "garbage")
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        single = read_corpus(path, workers=1)
        multi = read_corpus(path, workers=4)
        assert [r.tweet_id for r in multi.records] == [r.tweet_id for r in single.records]
        assert multi.skipped == single.skipped == 1


class TestUrlNormalization:
    def test_scheme_and_host_lowercased(self):
        assert normalize_url("HTTPS://News.Example.COM/Path/") == "https://news.example.com/Path"

    def test_query_kept(self):
        assert normalize_url("http://x.co/a/?id=3") == "http://x.co/a?id=3"
        assert normalize_url("http://x.co/a?id=3#top") == "http://x.co/a?id=3#top"


class TestDetectRetweet:
    def test_resolves_root_from_mentions(self):
        payload = tweet_dict(1, 9, T0, f"RT @alice: vote! {URL}", urls=[URL])
        payload["mentions"] = [{"user_id": 7, "screen_name": "alice"}]
        info = detect_retweet(record_from(payload))
        assert info is not None
        assert info.root_user_id == 7
        assert info.normalized_text == f"vote! {URL}"

    def test_screen_name_match_is_case_insensitive(self):
        payload = tweet_dict(1, 9, T0, "RT @Alice: vote!", urls=[URL])
        payload["mentions"] = [{"user_id": 7, "screen_name": "aLiCe"}]
        assert detect_retweet(record_from(payload)).root_user_id == 7

    def test_no_url_is_not_a_retweet(self):
        payload = tweet_dict(1, 9, T0, "RT @alice: vote!")
        payload["mentions"] = [{"user_id": 7, "screen_name": "alice"}]
        assert detect_retweet(record_from(payload)) is None

    def test_rt_without_prefix_is_not_a_retweet(self):
        assert detect_retweet(record(1, 9, T0, f"RT this is great {URL}", urls=[URL])) is None

    def test_unresolvable_name(self):
        assert detect_retweet(record(1, 9, T0, "RT @ghost: boo", mentions=[7], urls=[URL])) is None

    def test_whitespace_collapsed(self):
        t = record(1, 9, T0, "RT @u7:   many\n\tspaces  here ", mentions=[7], urls=[URL])
        assert detect_retweet(t).normalized_text == "many spaces here"


def record_from(payload) -> TweetRecord:
    return TweetRecord.model_validate(payload)


def cascade_records(n_users: int, root: int = 1, text: str = "story", repeat_first: int = 0):
    records = [record(1, root, T0, text, urls=[URL])]
    for i in range(n_users):
        records.append(retweet(100 + i, 1000 + i, root, T0 + 10 + i, text, URL))
    for j in range(repeat_first):
        records.append(retweet(5000 + j, 1000, root, T0 + 5000 + j, text, URL))
    return records


class TestGroupCascades:
    def test_above_threshold(self):
        cascades = group_cascades(cascade_records(150), min_retweeters=100)
        assert len(cascades) == 1
        assert cascades[0].n_events == 150

    def test_below_threshold(self):
        assert group_cascades(cascade_records(99), min_retweeters=100) == []

    def test_repeated_retweeter(self):
        cascades = group_cascades(cascade_records(100, repeat_first=2), min_retweeters=100)
        assert cascades[0].n_events == 102
        assert cascades[0].n_distinct == 100

    def test_root_self_retweet_not_counted(self):
        records = cascade_records(99)
        records.append(retweet(9000, 1, 1, T0 + 7, "story", URL))
        assert group_cascades(records, min_retweeters=100) == []
        cascade = group_cascades(records, min_retweeters=99)[0]
        assert 1 not in cascade.retweeters

    def test_events_sorted_with_user_tie_break(self):
        records = [
            retweet(1, 30, A, T0 + 5, "t", URL),
            retweet(2, 10, A, T0 + 5, "t", URL),
            retweet(3, 20, A, T0 + 1, "t", URL),
        ]
        cascade = group_cascades(records, min_retweeters=1)[0]
        assert cascade.events == [(20, T0 + 1), (10, T0 + 5), (30, T0 + 5)]

    def test_root_tweet_attached(self):
        cascade = group_cascades(cascade_records(3), min_retweeters=1)[0]
        assert cascade.root_tweet is not None
        assert cascade.root_tweet.tweet_id == 1

    def test_quote_splits_and_repost_merges(self):
        records = cascade_records(5)
        records.append(retweet(700, 2000, 1, T0 + 100, "story so true", URL))
        records.append(record(701, 1, T0 + 200, "story", urls=[URL]))
        records.append(retweet(702, 2001, 1, T0 + 210, "story", URL))
        cascades = group_cascades(records, min_retweeters=1)
        assert [c.n_distinct for c in cascades] == [6, 1]
        assert cascades[0].root_tweet.tweet_id == 1

    def test_sorted_by_event_count(self):
        records = cascade_records(3, root=1, text="small") + cascade_records(5, root=2, text="big")
        cascades = group_cascades(records, min_retweeters=1)
        assert [c.root_user_id for c in cascades] == [2, 1]

    def test_grouping_is_a_partition(self, toy_records):
        cascades = group_cascades(toy_records, min_retweeters=1)
        assert len(cascades) == 1
        assert cascades[0].cascade_key == (TOY_TEXT, A)
        assert sum(c.n_events for c in cascades) == 4

    def test_invalid_threshold(self):
        with pytest.raises(ValueError):
            group_cascades([], min_retweeters=0)


class TestTrollRegistry:
    def test_duplicates_collapse(self, tmp_path: Path):
        path = tmp_path / "trolls.txt"
        path.write_text("1\n2\n2\n", encoding="utf-8")
        assert len(load_troll_registry(path)) == 2

    def test_empty_file(self, tmp_path: Path):
        path = tmp_path / "trolls.txt"
        path.write_text("", encoding="utf-8")
        registry = load_troll_registry(path)
        assert len(registry) == 0
        assert registry.group_of(42) == "regular"

    def test_label(self, tmp_path: Path):
        path = tmp_path / "trolls.txt"
        path.write_text("4224729994\tRussia\n", encoding="utf-8")
        registry = load_troll_registry(path)
        assert registry.is_troll(4224729994)
        assert registry.labels[4224729994] == "Russia"

    def test_bad_line_reports_line_number(self, tmp_path: Path):
        path = tmp_path / "trolls.txt"
        path.write_text("1\n\nabc\n", encoding="utf-8")
        with pytest.raises(RegistryFormatError) as info:
            load_troll_registry(path)
        assert info.value.line_number == 3


class TestCascadeArtifacts:
    def test_write_then_load(self, tmp_path: Path):
        cascades = group_cascades(cascade_records(4, repeat_first=1), min_retweeters=1)
        written = write_cascades(cascades, tmp_path)
        assert written == {"cascades.tsv": 1, "cascade_events.tsv": 5, "cascade_roots.tsv": 1}

        loaded = load_cascades(tmp_path)
        assert loaded[0].key_hash == cascades[0].key_hash
        assert loaded[0].events == cascades[0].events
        assert loaded[0].urls == cascades[0].urls
        assert loaded[0].root_unix_ts == T0

    def test_cascades_tsv_columns(self, tmp_path: Path):
        write_cascades(group_cascades(cascade_records(2), min_retweeters=1), tmp_path)
        header = (tmp_path / "cascades.tsv").read_text(encoding="utf-8").splitlines()[0]
        assert header.split("\t") == ["cascade_key_hash", "root_user_id", "n_events", "n_distinct", "urls"]

    def test_unparseable_event_is_an_artifact_error(self, tmp_path: Path):
        write_cascades(group_cascades(cascade_records(2), min_retweeters=1), tmp_path)
        events = tmp_path / "cascade_events.tsv"
        header, first, *rest = events.read_text(encoding="utf-8").splitlines()
        key_hash, _, ts = first.split("\t")
        events.write_text("\n".join([header, f"{key_hash}\tnot-an-id\t{ts}", *rest]) + "\n", encoding="utf-8")
        with pytest.raises(ArtifactError):
            load_cascades(tmp_path)

    def test_dangling_cascade_is_an_artifact_error(self, tmp_path: Path):
        write_cascades(group_cascades(cascade_records(2), min_retweeters=1), tmp_path)
        roots = tmp_path / "cascade_roots.tsv"
        roots.write_text(roots.read_text(encoding="utf-8").splitlines()[0] + "\n", encoding="utf-8")
        with pytest.raises(ArtifactError):
            load_cascades(tmp_path)
