from datetime import datetime
from fractions import Fraction
from pathlib import Path
from typing import Callable, Dict, List

import httpx
import orjson
import pytest

from app.models.audit_models import AccountState, AccountStatus, BotScore
from app.models.config_models import AuditSettings
from app.models.score_models import Ranking
from app.models.tweet_models import TrollRegistry
from app.services.audit_service import (
    audit_report,
    fetch_bot_scores,
    fetch_statuses,
    load_ranking,
    write_audit_outputs,
)
from app.services.shapley_service import rank, ranking_frame
from app.tools.account_client import AccountAuditClient, RateLimiter, is_retryable
from app.utils.dataframe_utils import read_tsv, write_tsv

STATUS_URL = "http://audit.test/statuses"
BOT_URL = "http://audit.test/botscores"
DAY = "2018-02-01"
CHECKED = "2018-02-01T09:00:00+00:00"


def make_settings(cache_dir: Path = None, **overrides) -> AuditSettings:
    values = dict(
        status_endpoint=STATUS_URL,
        bot_endpoint=BOT_URL,
        backoff_initial=0.0,
        backoff_max=0.0,
        max_retries=3,
        requests_per_second=1000.0,
        batch_size=10,
        cache_dir=cache_dir,
    )
    values.update(overrides)
    return AuditSettings(**values)


class FakeServices:
    """Answers both endpoints from fixed tables and counts the requests."""

    def __init__(self, codes: Dict[int, int], caps: Dict[int, tuple], failures: int = 0, status: int = 503):
        self.codes = codes
        self.caps = caps
        self.failures = failures
        self.status = status
        self.requests: List[httpx.Request] = []

    def __call__(self, request: httpx.Request) -> httpx.Response:
        self.requests.append(request)
        if self.failures:
            self.failures -= 1
            return httpx.Response(self.status)
        ids = orjson.loads(request.content)["user_ids"]
        if request.url.path.endswith("statuses"):
            body = [
                {"user_id": uid, "error_code": self.codes[uid]} if self.codes[uid]
                else {"user_id": uid, "screen_name": f"user{uid}"}
                for uid in ids if uid in self.codes
            ]
        else:
            body = []
            for uid in ids:
                english, universal = self.caps.get(uid, (None, None))
                body.append({"user_id": uid, "cap_english": english, "cap_universal": universal})
        return httpx.Response(200, json=body)


def client_for(settings: AuditSettings, handler: Callable) -> AccountAuditClient:
    return AccountAuditClient(settings, transport=httpx.MockTransport(handler))


def statuses_of(states: Dict[int, AccountState]) -> List[AccountStatus]:
    checked = datetime.fromisoformat(CHECKED)
    return [AccountStatus(user_id=uid, state=state, checked_at=checked) for uid, state in states.items()]


class TestAccountStates:
    def test_error_codes(self):
        services = FakeServices({1: 63, 2: 50, 3: 0}, {})
        settings = make_settings()
        with client_for(settings, services) as client:
            found = fetch_statuses([1, 2, 3], settings, client=client, day=DAY)
        assert [s.state for s in found] == [AccountState.SUSPENDED, AccountState.DELETED, AccountState.ACTIVE]

    def test_unrecognised_code_and_missing_id(self):
        services = FakeServices({1: 88}, {})
        settings = make_settings()
        with client_for(settings, services) as client:
            found = fetch_statuses([1, 2], settings, client=client, day=DAY)
        assert [s.state for s in found] == [AccountState.UNKNOWN, AccountState.UNKNOWN]

    def test_batches_and_input_order(self):
        codes = {uid: (63 if uid % 7 == 0 else 0) for uid in range(1, 26)}
        services = FakeServices(codes, {})
        settings = make_settings(batch_size=10)
        with client_for(settings, services) as client:
            found = fetch_statuses(list(range(25, 0, -1)), settings, client=client, day=DAY)
        assert len(services.requests) == 3
        assert [s.user_id for s in found] == list(range(25, 0, -1))
        assert sum(s.state == AccountState.SUSPENDED for s in found) == 3


class TestRetries:
    def test_transient_failure_is_retried(self):
        services = FakeServices({1: 0}, {}, failures=2)
        settings = make_settings(max_retries=3)
        with client_for(settings, services) as client:
            found = fetch_statuses([1], settings, client=client, day=DAY)
        assert found[0].state == AccountState.ACTIVE
        assert len(services.requests) == 3

    def test_exhausted_retries_give_unknown_and_are_not_cached(self, tmp_path: Path):
        services = FakeServices({1: 0}, {}, failures=10)
        settings = make_settings(cache_dir=tmp_path, max_retries=3)
        with client_for(settings, services) as client:
            found = fetch_statuses([1], settings, client=client, day=DAY)
        assert found[0].state == AccountState.UNKNOWN
        assert len(services.requests) == 3
        assert not (tmp_path / "status_journal.tsv").exists()

    def test_client_errors_are_not_retried(self):
        services = FakeServices({1: 0}, {}, failures=1, status=404)
        settings = make_settings(max_retries=5)
        with client_for(settings, services) as client:
            found = fetch_statuses([1], settings, client=client, day=DAY)
        assert found[0].state == AccountState.UNKNOWN
        assert len(services.requests) == 1

    def test_retryable_classification(self):
        request = httpx.Request("POST", STATUS_URL)
        throttled = httpx.HTTPStatusError("429", request=request, response=httpx.Response(429, request=request))
        missing = httpx.HTTPStatusError("404", request=request, response=httpx.Response(404, request=request))
        assert is_retryable(throttled)
        assert not is_retryable(missing)
        assert is_retryable(httpx.ConnectError("refused", request=request))
        assert not is_retryable(ValueError("bad body"))

    def test_non_array_body(self):
        settings = make_settings(max_retries=1)
        with client_for(settings, lambda request: httpx.Response(200, json={"oops": True})) as client:
            with pytest.raises(ValueError):
                client.lookup_statuses([1])

    def test_bearer_token_is_sent(self):
        seen = []

        def handler(request: httpx.Request) -> httpx.Response:
            seen.append(request.headers.get("Authorization"))
            return httpx.Response(200, json=[])

        settings = make_settings(api_token="s3cret")
        with client_for(settings, handler) as client:
            client.lookup_statuses([1])
        assert seen == ["Bearer s3cret"]
        assert "s3cret" not in repr(settings)

    def test_rate_limiter_spacing(self, monkeypatch):
        clock = [100.0]
        sleeps = []
        monkeypatch.setattr("app.tools.account_client.time.monotonic", lambda: clock[0])
        monkeypatch.setattr("app.tools.account_client.time.sleep", sleeps.append)
        limiter = RateLimiter(per_second=4)
        for _ in range(3):
            limiter.wait()
        assert sleeps == pytest.approx([0.25, 0.5])


class TestCache:
    def test_cache_hit_makes_no_request(self, tmp_path: Path):
        settings = make_settings(cache_dir=tmp_path)
        services = FakeServices({1: 63, 2: 0}, {2: (0.1, 0.2)})
        with client_for(settings, services) as client:
            fetch_statuses([1, 2], settings, client=client, day=DAY)
            fetch_bot_scores([1, 2], settings, client=client, day=DAY)
        assert len(services.requests) == 2

        def refuse(request: httpx.Request) -> httpx.Response:
            raise AssertionError(f"unexpected request to {request.url}")

        with client_for(settings, refuse) as client:
            again = fetch_statuses([1, 2], settings, client=client, day=DAY)
            scores = fetch_bot_scores([2], settings, client=client, day=DAY)
        assert [s.state for s in again] == [AccountState.SUSPENDED, AccountState.ACTIVE]
        assert [(s.user_id, s.cap_english) for s in scores] == [(2, 0.1)]

    def test_newest_entry_wins_and_days_are_separate(self, tmp_path: Path):
        settings = make_settings(cache_dir=tmp_path)
        with client_for(settings, FakeServices({1: 0}, {})) as client:
            fetch_statuses([1], settings, client=client, day=DAY)
        with client_for(settings, FakeServices({1: 63}, {})) as client:
            later = fetch_statuses([1], settings, client=client, day="2018-06-01")
        assert later[0].state == AccountState.SUSPENDED

        journal = read_tsv(tmp_path / "status_journal.tsv", dtype={"date": str})
        assert journal["state"].tolist() == ["active", "suspended"]

        write_tsv(journal.assign(state=["active", "deleted"], date=[DAY, DAY]), tmp_path / "status_journal.tsv")
        with client_for(settings, FakeServices({}, {})) as client:
            assert fetch_statuses([1], settings, client=client, day=DAY)[0].state == AccountState.DELETED


class TestBotScores:
    def test_flags(self):
        services = FakeServices({}, {1: (0.565053, 0.297), 2: (0.0015, 0.0019)})
        settings = make_settings()
        with client_for(settings, services) as client:
            scores = fetch_bot_scores([1, 2], settings, client=client, day=DAY)
        assert [s.is_bot(0.5) for s in scores] == [True, False]

    def test_suspended_account_has_no_score(self, tmp_path: Path):
        services = FakeServices({1: 63, 2: 0}, {2: (0.0015, 0.0019)})
        settings = make_settings()
        with client_for(settings, services) as client:
            statuses = fetch_statuses([1, 2], settings, client=client, day=DAY)
            scores = fetch_bot_scores([1, 2], settings, client=client, day=DAY)
        assert [s.user_id for s in scores] == [2]

        summary = audit_report(rank({1: 2.0, 2: 1.0}, TrollRegistry()), 2, statuses, scores)
        write_audit_outputs(summary, tmp_path)
        accounts = read_tsv(tmp_path / "audit_accounts.tsv", dtype=str)
        assert accounts.loc[0, "state"] == "suspended"
        assert accounts.loc[0, "cap_english"] == "N/A"
        assert accounts.loc[1, "cap_english"] == "0.0015"

    def test_malformed_and_out_of_range_items_are_skipped(self):
        def answer(request: httpx.Request) -> httpx.Response:
            return httpx.Response(200, json=[
                {"cap_english": 0.2, "cap_universal": 0.1},
                {"user_id": 2, "cap_english": 1.3, "cap_universal": 0.1},
                {"user_id": 3, "cap_english": 0.05, "cap_universal": 0.04},
            ])

        settings = make_settings()
        with client_for(settings, answer) as client:
            scores = fetch_bot_scores([1, 2, 3], settings, client=client, day=DAY)
        assert [(s.user_id, s.cap_english) for s in scores] == [(3, 0.05)]

    def test_unrequested_ids_are_not_cached(self, tmp_path: Path):
        def answer(request: httpx.Request) -> httpx.Response:
            return httpx.Response(200, json=[
                {"user_id": 1, "cap_english": 0.3, "cap_universal": 0.2},
                {"user_id": 99, "cap_english": 0.9, "cap_universal": 0.9},
            ])

        settings = make_settings(cache_dir=tmp_path)
        with client_for(settings, answer) as client:
            scores = fetch_bot_scores([1], settings, client=client, day=DAY)
        assert [s.user_id for s in scores] == [1]

        journal = read_tsv(tmp_path / "botscore_journal.tsv")
        assert journal["user_id"].tolist() == [1]


class TestAuditReport:
    def test_suspended_fraction_is_exact(self, tmp_path: Path):
        ranking = rank({uid: 1000.0 - uid for uid in range(1, 151)}, TrollRegistry())
        states = {uid: AccountState.SUSPENDED if uid % 4 == 0 and uid <= 92 else AccountState.ACTIVE for uid in range(1, 101)}
        summary = audit_report(ranking, 100, statuses_of(states), [])
        assert summary.n_suspended == 23
        assert summary.suspended_fraction == Fraction(23, 100)
        assert float(summary.suspended_fraction) == 0.23

        write_audit_outputs(summary, tmp_path)
        totals = read_tsv(tmp_path / "audit_summary.tsv", dtype=str).set_index("category")
        assert totals.loc["suspended", "ratio"] == "23/100"
        assert totals.loc["suspended", "fraction"] == "0.23"

    def test_all_active_low_scores(self):
        ranking = rank({1: 3.0, 2: 2.0, 3: 1.0}, TrollRegistry())
        scores = [BotScore(user_id=uid, cap_english=0.01, cap_universal=0.02) for uid in (1, 2, 3)]
        summary = audit_report(ranking, 3, statuses_of({uid: AccountState.ACTIVE for uid in (1, 2, 3)}), scores)
        assert summary.n_bot == 0
        assert summary.n_active == 3

    def test_k_zero(self):
        summary = audit_report(rank({1: 1.0}, TrollRegistry()), 0, [], [])
        assert summary.rows == []
        assert summary.suspended_fraction == 0

    def test_k_beyond_ranking(self):
        with pytest.raises(ValueError):
            audit_report(rank({1: 1.0}, TrollRegistry()), 2, [], [])

    def test_regular_only(self):
        ranking = rank({1: 3.0, 2: 2.0, 3: 1.0}, TrollRegistry(ids={1}))
        summary = audit_report(ranking, 2, [], [], regular_only=True)
        assert [row.user_id for row in summary.rows] == [2, 3]
        assert summary.n_unknown == 2

    def test_load_ranking(self, tmp_path: Path):
        ranking = rank({1: 0.5, 2: 1.5}, TrollRegistry(ids={2}))
        write_tsv(ranking_frame(ranking), tmp_path / "ranking.tsv")
        loaded = load_ranking(tmp_path / "ranking.tsv")
        assert loaded == ranking
        assert isinstance(loaded, Ranking)
