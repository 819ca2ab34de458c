from concurrent.futures import ThreadPoolExecutor
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import logging

import httpx
import pandas as pd

from pydantic import ValidationError

from app.models.audit_models import AccountState, AccountStatus, AuditRow, AuditSummary, BotScore
from app.models.config_models import AuditSettings
from app.models.score_models import RankedUser, Ranking
from app.models.tweet_models import REGULAR
from app.tools.account_client import AccountAuditClient
from app.utils.dataframe_utils import chunk_sequence, read_tsv, write_tsv

logger = logging.getLogger(__name__)

NOT_AVAILABLE = "N/A"
STATUS_JOURNAL = "status_journal.tsv"
BOT_JOURNAL = "botscore_journal.tsv"
STATUS_COLUMNS = ["user_id", "date", "state", "checked_at"]
BOT_COLUMNS = ["user_id", "date", "cap_english", "cap_universal"]


class AuditCache:
    """
    Append-only journals of audit results, keyed by (user_id, date).

    The newest journal line for a key wins. Without a directory the cache
    keeps nothing.
    """

    def __init__(self, cache_dir: Optional[Path]):
        self.cache_dir = cache_dir
        if cache_dir is not None:
            cache_dir.mkdir(parents=True, exist_ok=True)

    def _load(self, name: str, columns: List[str]) -> Dict[Tuple[int, str], tuple]:
        if self.cache_dir is None or not (self.cache_dir / name).exists():
            return {}
        frame = read_tsv(self.cache_dir / name, dtype={"date": str})
        entries: Dict[Tuple[int, str], tuple] = {}
        for row in frame[columns].itertuples(index=False):
            entries[(int(row[0]), row[1])] = tuple(row[2:])
        return entries

    def _append(self, name: str, columns: List[str], rows: List[tuple]) -> None:
        if self.cache_dir is None or not rows:
            return
        path = self.cache_dir / name
        frame = pd.DataFrame(rows, columns=columns)
        frame.to_csv(path, sep="\t", index=False, lineterminator="\n", mode="a", header=not path.exists())
        logger.debug(f"Appended {len(rows)} entries to '{path}'.")

    def statuses(self, day: str) -> Dict[int, AccountStatus]:
        return {
            user_id: AccountStatus(user_id=user_id, state=AccountState(state), checked_at=datetime.fromisoformat(checked))
            for (user_id, entry_day), (state, checked) in self._load(STATUS_JOURNAL, STATUS_COLUMNS).items()
            if entry_day == day
        }

    def store_statuses(self, day: str, statuses: Sequence[AccountStatus]) -> None:
        rows = [
            (s.user_id, day, s.state.value, s.checked_at.isoformat())
            for s in statuses
            if s.state != AccountState.UNKNOWN
        ]
        self._append(STATUS_JOURNAL, STATUS_COLUMNS, rows)

    def bot_scores(self, day: str) -> Dict[int, BotScore]:
        return {
            user_id: BotScore(user_id=user_id, cap_english=float(english), cap_universal=float(universal))
            for (user_id, entry_day), (english, universal) in self._load(BOT_JOURNAL, BOT_COLUMNS).items()
            if entry_day == day
        }

    def store_bot_scores(self, day: str, scores: Sequence[BotScore]) -> None:
        rows = [(s.user_id, day, repr(s.cap_english), repr(s.cap_universal)) for s in scores]
        self._append(BOT_JOURNAL, BOT_COLUMNS, rows)


def _today() -> str:
    return date.today().isoformat()


def _fan_out(batches: List[Sequence[int]], settings: AuditSettings, call) -> List[Tuple[Sequence[int], Optional[list]]]:
    def run(batch: Sequence[int]) -> Tuple[Sequence[int], Optional[list]]:
        try:
            return batch, call(batch)
        except (httpx.HTTPError, ValueError) as e:
            logger.warning(f"Lookup of {len(batch)} accounts failed after retries: {type(e).__name__}: {e}")
            return batch, None

    with ThreadPoolExecutor(max_workers=settings.max_concurrency) as pool:
        return list(pool.map(run, batches))


def fetch_statuses(
    user_ids: Sequence[int],
    settings: AuditSettings,
    client: Optional[AccountAuditClient] = None,
    day: Optional[str] = None,
) -> List[AccountStatus]:
    """
    Look up the account state of every id.

    Cached entries for the same day are returned without network traffic.
    Remaining ids are requested in batches, concurrently up to the
    configured limit. A batch whose retries are exhausted yields the state
    `unknown` for its ids, which is never cached.

    Args:
        user_ids (Sequence[int]): Accounts to check.
        settings (AuditSettings): Endpoint and client settings.
        client (AccountAuditClient, optional): Client to use; built from `settings` when omitted.
        day (str, optional): Cache date as YYYY-MM-DD. Defaults to today.

    Returns:
        List[AccountStatus]: One status per id, in input order.
    """
    day = day or _today()
    cache = AuditCache(settings.cache_dir)
    known = cache.statuses(day)
    missing = list(dict.fromkeys(uid for uid in user_ids if uid not in known))
    logger.info(f"Account status: {len(user_ids) - len(missing)} cached, {len(missing)} to fetch.")

    if missing:
        owned = client is None
        client = client or AccountAuditClient(settings)
        try:
            results = _fan_out(chunk_sequence(missing, settings.batch_size), settings, client.lookup_statuses)
        finally:
            if owned:
                client.close()

        fetched: List[AccountStatus] = []
        for batch, payload in results:
            checked_at = datetime.now(timezone.utc).replace(microsecond=0)
            codes = {}
            if payload is not None:
                codes = {int(item["user_id"]): item.get("error_code") for item in payload if "user_id" in item}
            for uid in batch:
                state = AccountState.from_error_code(codes[uid]) if uid in codes else AccountState.UNKNOWN
                fetched.append(AccountStatus(user_id=uid, state=state, checked_at=checked_at))
        cache.store_statuses(day, fetched)
        known.update({status.user_id: status for status in fetched})

    return [known[uid] for uid in user_ids]


def fetch_bot_scores(
    user_ids: Sequence[int],
    settings: AuditSettings,
    client: Optional[AccountAuditClient] = None,
    day: Optional[str] = None,
) -> List[BotScore]:
    """
    Look up the complete-automation probabilities of every id.

    Accounts the service has no score for (suspended or deleted ones, or a
    failed batch) get no entry.

    Args:
        user_ids (Sequence[int]): Accounts to score.
        settings (AuditSettings): Endpoint and client settings.
        client (AccountAuditClient, optional): Client to use; built from `settings` when omitted.
        day (str, optional): Cache date as YYYY-MM-DD. Defaults to today.

    Returns:
        List[BotScore]: Scores in input order, for the ids that have one.
    """
    day = day or _today()
    cache = AuditCache(settings.cache_dir)
    known = cache.bot_scores(day)
    missing = list(dict.fromkeys(uid for uid in user_ids if uid not in known))

    if missing:
        owned = client is None
        client = client or AccountAuditClient(settings)
        try:
            results = _fan_out(chunk_sequence(missing, settings.batch_size), settings, client.lookup_bot_scores)
        finally:
            if owned:
                client.close()

        fetched: List[BotScore] = []
        for batch, payload in results:
            requested = set(batch)
            for item in payload or []:
                if item.get("cap_english") is None or item.get("cap_universal") is None:
                    continue
                try:
                    uid = int(item["user_id"])
                except (KeyError, TypeError, ValueError):
                    logger.warning(f"Skipping bot score without a usable user id: {item}")
                    continue
                if uid not in requested:
                    logger.warning(f"Skipping bot score for unrequested account {uid}")
                    continue
                try:
                    fetched.append(BotScore(
                        user_id=uid,
                        cap_english=item["cap_english"],
                        cap_universal=item["cap_universal"],
                    ))
                except ValidationError as e:
                    logger.warning(f"Skipping invalid bot score for account {uid}: {e.error_count()} error(s)")
        cache.store_bot_scores(day, fetched)
        known.update({score.user_id: score for score in fetched})

    scores = [known[uid] for uid in dict.fromkeys(user_ids) if uid in known]
    logger.info(f"Bot scores available for {len(scores)} of {len(user_ids)} accounts.")
    return scores


def audit_candidates(ranking: Ranking, k: int, regular_only: bool = False) -> Ranking:
    """The first `k` ranking entries, optionally counting regular accounts only."""
    entries = ranking.of_group(REGULAR) if regular_only else ranking.entries
    if k > len(entries):
        raise ValueError(f"top-{k} requested but only {len(entries)} accounts are ranked")
    return Ranking(entries=entries[:k])


def audit_report(
    ranking: Ranking,
    k: int,
    statuses: Sequence[AccountStatus],
    scores: Sequence[BotScore],
    threshold: float = 0.5,
    regular_only: bool = False,
) -> AuditSummary:
    """
    Summarize account states and bot flags of the top-k ranked accounts.

    Args:
        ranking (Ranking): The Shapley ranking.
        k (int): Number of accounts to audit.
        statuses (Sequence[AccountStatus]): Looked-up states; accounts without one count as unknown.
        scores (Sequence[BotScore]): Bot scores; accounts without one are not flagged.
        threshold (float, optional): Bot flag threshold on the larger CAP score. Defaults to 0.5.
        regular_only (bool, optional): Audit the top-k regular accounts only. Defaults to False.

    Returns:
        AuditSummary: Per-account rows in rank order and the counts over k.

    Raises:
        ValueError: If fewer than `k` accounts are available.
    """
    state_of = {status.user_id: status.state for status in statuses}
    score_of = {score.user_id: score for score in scores}
    summary = AuditSummary(k=k)

    for entry in audit_candidates(ranking, k, regular_only).entries:
        state = state_of.get(entry.user_id, AccountState.UNKNOWN)
        score = score_of.get(entry.user_id)
        flagged = score is not None and score.is_bot(threshold)
        summary.rows.append(AuditRow(
            rank=entry.rank,
            user_id=entry.user_id,
            group=entry.group,
            state=state,
            cap_english=None if score is None else score.cap_english,
            cap_universal=None if score is None else score.cap_universal,
            bot_flag=flagged,
        ))
        summary.n_bot += flagged
        if state == AccountState.ACTIVE:
            summary.n_active += 1
        elif state == AccountState.SUSPENDED:
            summary.n_suspended += 1
        elif state == AccountState.DELETED:
            summary.n_deleted += 1
        else:
            summary.n_unknown += 1

    logger.info(
        f"Audited top-{k}: {summary.n_suspended} suspended, {summary.n_deleted} deleted, "
        f"{summary.n_unknown} unknown, {summary.n_bot} flagged as bots."
    )
    return summary


def write_audit_outputs(summary: AuditSummary, out_dir: Path) -> Dict[str, int]:
    """
    Persist `audit_accounts.tsv` and `audit_summary.tsv`.

    Missing CAP scores are written as N/A. Fractions are written both as
    exact ratios and as decimals.
    """
    def cap(value: Optional[float]) -> str:
        return NOT_AVAILABLE if value is None else repr(value)

    accounts = pd.DataFrame(
        [
            (row.rank, row.user_id, row.group, row.state.value, cap(row.cap_english), cap(row.cap_universal), int(row.bot_flag))
            for row in summary.rows
        ],
        columns=["rank", "user_id", "group", "state", "cap_english", "cap_universal", "bot_flag"],
    )
    counts = [
        ("active", summary.n_active),
        ("suspended", summary.n_suspended),
        ("deleted", summary.n_deleted),
        ("unknown", summary.n_unknown),
        ("bot", summary.n_bot),
    ]
    totals = pd.DataFrame(
        [
            (label, count, summary.k, str(summary.fraction(count)), repr(float(summary.fraction(count))))
            for label, count in counts
        ],
        columns=["category", "count", "k", "ratio", "fraction"],
    )
    return {
        "audit_accounts.tsv": write_tsv(accounts, out_dir / "audit_accounts.tsv"),
        "audit_summary.tsv": write_tsv(totals, out_dir / "audit_summary.tsv"),
    }


def load_ranking(path: Path) -> Ranking:
    """Read a `ranking.tsv` written by the Shapley stage."""
    frame = read_tsv(path, dtype={"group": str})
    return Ranking(entries=[
        RankedUser(rank=int(row.rank), user_id=int(row.user_id), score=float(row.shapley), group=row.group)
        for row in frame.itertuples(index=False)
    ])
