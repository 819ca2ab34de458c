from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import logging
import re

import orjson
import pandas as pd
from pydantic import BaseModel, ConfigDict, ValidationError

from app.models.tweet_models import (
    Cascade,
    RetweetInfo,
    TrollRegistry,
    TweetRecord,
    collapse_whitespace,
)
from app.utils.dataframe_utils import chunk_sequence, read_tsv, write_tsv
from app.utils.exceptions import ArtifactError, CorpusFormatError, CorpusIOError, RegistryFormatError

logger = logging.getLogger(__name__)

DEFAULT_MIN_RETWEETERS = 100
MAX_MALFORMED_FRACTION = 0.5
SHARD_SIZE = 50_000

RETWEET_PREFIX = re.compile(r"^RT @(?P<name>\w+):")

CASCADE_COLUMNS = ["cascade_key_hash", "root_user_id", "n_events", "n_distinct", "urls"]
EVENT_COLUMNS = ["cascade_key_hash", "retweeter_id", "unix_ts"]
ROOT_COLUMNS = ["cascade_key_hash", "root_user_id", "root_tweet_id", "root_unix_ts", "normalized_text"]


class ParsedCorpus(BaseModel):
    """Valid records in input order plus the number of skipped lines."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    records: List[TweetRecord]
    skipped: int = 0
    total_lines: int = 0


def _parse_shard(lines: Iterable[str]) -> Tuple[List[TweetRecord], int, int]:
    records: List[TweetRecord] = []
    skipped = 0
    total = 0
    for line in lines:
        if not line.strip():
            continue
        total += 1
        try:
            payload = orjson.loads(line)
            if not isinstance(payload, dict):
                raise ValueError("line is not a JSON object")
            records.append(TweetRecord.model_validate(payload))
        except (orjson.JSONDecodeError, ValidationError, ValueError) as e:
            skipped += 1
            logger.debug(f"Skipping malformed line: {e}")
    return records, skipped, total


def _finish_parse(records: List[TweetRecord], skipped: int, total: int) -> ParsedCorpus:
    seen: Set[int] = set()
    unique: List[TweetRecord] = []
    for record in records:
        if record.tweet_id in seen:
            skipped += 1
            logger.warning(f"Skipping duplicate tweet_id {record.tweet_id}.")
            continue
        seen.add(record.tweet_id)
        unique.append(record)

    if total and skipped / total > MAX_MALFORMED_FRACTION:
        logger.error(f"{skipped} of {total} corpus lines are malformed.")
        raise CorpusFormatError(f"{skipped} of {total} corpus lines are malformed (more than half)")
    if skipped:
        logger.warning(f"Skipped {skipped} of {total} corpus lines.")
    logger.info(f"Parsed {len(unique)} tweet records.")
    return ParsedCorpus(records=unique, skipped=skipped, total_lines=total)


def parse_corpus(lines: Iterable[str]) -> ParsedCorpus:
    """
    Parse a stream of JSON Lines into tweet records.

    Blank lines are ignored. Lines that are not valid JSON objects, fail
    record validation, or repeat an earlier tweet_id are counted as skipped.

    Args:
        lines (Iterable[str]): One JSON object per line.

    Returns:
        ParsedCorpus: Valid records in input order and the skipped count.

    Raises:
        CorpusFormatError: If more than half of the non-blank lines are malformed.
    """
    records, skipped, total = _parse_shard(lines)
    return _finish_parse(records, skipped, total)


def read_corpus(path: Path, workers: int = 1) -> ParsedCorpus:
    """
    Read and parse a JSON Lines corpus file.

    With more than one worker, the lines are split into shards that are
    parsed in separate processes and concatenated in shard order, so the
    result does not depend on the worker count.

    Args:
        path (Path): The corpus file.
        workers (int, optional): Worker processes. Defaults to 1.

    Returns:
        ParsedCorpus: The parsed corpus.

    Raises:
        CorpusIOError: If the file cannot be opened or decoded.
        CorpusFormatError: If more than half of the lines are malformed.
    """
    try:
        with open(path, "r", encoding="utf-8") as file:
            lines = file.read().splitlines()
    except (OSError, UnicodeDecodeError) as e:
        logger.error(f"Cannot read corpus '{path}': {e}")
        raise CorpusIOError(f"Cannot read corpus '{path}': {e}") from e

    logger.info(f"Read {len(lines)} lines from '{path}'.")
    if workers <= 1 or len(lines) <= SHARD_SIZE:
        return parse_corpus(lines)

    shards = chunk_sequence(lines, SHARD_SIZE)
    records: List[TweetRecord] = []
    skipped = total = 0
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for shard_records, shard_skipped, shard_total in pool.map(_parse_shard, shards):
            records.extend(shard_records)
            skipped += shard_skipped
            total += shard_total
    return _finish_parse(records, skipped, total)


def detect_retweet(t: TweetRecord) -> Optional[RetweetInfo]:
    """
    Recognise a retweet and resolve the author of the original post.

    A record is a retweet when its text starts with "RT @<name>:", `<name>`
    matches the screen name of one of the record's own mentions
    (case-insensitively), and the record carries at least one URL.

    Args:
        t (TweetRecord): The candidate record.

    Returns:
        Optional[RetweetInfo]: The retweet details, or None for any other record.
    """
    match = RETWEET_PREFIX.match(t.text)
    if match is None or not t.urls:
        return None

    name = match.group("name")
    folded = name.casefold()
    root = next((m for m in t.mentions if m.screen_name.casefold() == folded), None)
    if root is None:
        logger.debug(f"Tweet {t.tweet_id}: '@{name}' not resolvable from mentions.")
        return None

    return RetweetInfo(
        tweet_id=t.tweet_id,
        retweeter_id=t.user_id,
        root_user_id=root.user_id,
        root_screen_name=name,
        created_at=t.created_at,
        normalized_text=collapse_whitespace(t.text[match.end():]),
        urls=list(t.urls),
    )


def group_cascades(records: Iterable[TweetRecord], min_retweeters: int = DEFAULT_MIN_RETWEETERS) -> List[Cascade]:
    """
    Group retweets into cascades keyed by (normalized text, root user id).

    Only groups with at least `min_retweeters` distinct retweeters, the root
    user excluded, are kept. The root's own retweets of its post are not
    events. A non-retweet record by the root user whose whitespace-collapsed
    text equals the group text is attached as the root tweet (the earliest
    one when the root posted it several times).

    Args:
        records (Iterable[TweetRecord]): Parsed records.
        min_retweeters (int, optional): Distinct-retweeter threshold. Defaults to 100.

    Returns:
        List[Cascade]: Cascades by descending event count, then by key.

    Raises:
        ValueError: If `min_retweeters` is below 1.
    """
    if min_retweeters < 1:
        raise ValueError("min_retweeters must be at least 1")

    events: Dict[Tuple[str, int], List[Tuple[int, int]]] = {}
    urls: Dict[Tuple[str, int], Set[str]] = {}
    originals: Dict[Tuple[str, int], TweetRecord] = {}
    self_retweets = 0

    for record in records:
        info = detect_retweet(record)
        if info is None:
            if not record.urls:
                continue
            key = (collapse_whitespace(record.text), record.user_id)
            earlier = originals.get(key)
            if earlier is None or (record.unix_ts, record.tweet_id) < (earlier.unix_ts, earlier.tweet_id):
                originals[key] = record
            continue
        key = (info.normalized_text, info.root_user_id)
        if info.retweeter_id == info.root_user_id:
            self_retweets += 1
            continue
        events.setdefault(key, []).append((info.retweeter_id, info.unix_ts))
        urls.setdefault(key, set()).update(info.urls)

    if self_retweets:
        logger.debug(f"Dropped {self_retweets} self-retweets by root users.")

    cascades: List[Cascade] = []
    for key, key_events in events.items():
        distinct = len({retweeter for retweeter, _ in key_events})
        if distinct < min_retweeters:
            continue
        key_events.sort(key=lambda event: (event[1], event[0]))
        cascades.append(
            Cascade(
                cascade_key=key,
                root_user_id=key[1],
                root_tweet=originals.get(key),
                events=key_events,
                urls=sorted(urls[key]),
            )
        )

    cascades.sort(key=lambda c: (-c.n_events, c.cascade_key[1], c.cascade_key[0]))
    logger.info(f"Recovered {len(cascades)} cascades from {len(events)} retweet groups (threshold {min_retweeters}).")
    return cascades


def load_troll_registry(path: Path) -> TrollRegistry:
    """
    Load the troll registry.

    Each non-blank line holds a decimal user id, optionally followed by a
    tab and a campaign label. Repeated ids collapse; the last label wins.

    Args:
        path (Path): The registry file.

    Returns:
        TrollRegistry: The troll ids and labels.

    Raises:
        CorpusIOError: If the file cannot be read.
        RegistryFormatError: If a line is not a decimal id (with optional label).
    """
    registry = TrollRegistry()
    try:
        with open(path, "r", encoding="utf-8") as file:
            lines = file.read().splitlines()
    except OSError as e:
        logger.error(f"Cannot read troll registry '{path}': {e}")
        raise CorpusIOError(f"Cannot read troll registry '{path}': {e}") from e

    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        raw_id, _, label = line.partition("\t")
        raw_id = raw_id.strip()
        if not raw_id.isdigit():
            logger.error(f"Unparseable troll registry line {number}: {line!r}")
            raise RegistryFormatError(number, line)
        user_id = int(raw_id)
        registry.ids.add(user_id)
        if label.strip():
            registry.labels[user_id] = label.strip()

    logger.info(f"Loaded {len(registry.ids)} troll ids from '{path}'.")
    return registry


def write_cascades(cascades: Sequence[Cascade], out_dir: Path) -> Dict[str, int]:
    """
    Persist cascades as `cascades.tsv`, `cascade_events.tsv` and `cascade_roots.tsv`.

    Args:
        cascades (Sequence[Cascade]): Cascades to write, in order.
        out_dir (Path): Target directory.

    Returns:
        Dict[str, int]: Row count per written file name.
    """
    summary = pd.DataFrame(
        [
            (c.key_hash, c.root_user_id, c.n_events, c.n_distinct, ";".join(c.urls))
            for c in cascades
        ],
        columns=CASCADE_COLUMNS,
    )
    events = pd.DataFrame(
        [(c.key_hash, retweeter, ts) for c in cascades for retweeter, ts in c.events],
        columns=EVENT_COLUMNS,
    )
    roots = pd.DataFrame(
        [
            (
                c.key_hash,
                c.root_user_id,
                "" if c.root_tweet is None else str(c.root_tweet.tweet_id),
                "" if c.root_tweet is None else str(c.root_tweet.unix_ts),
                c.cascade_key[0],
            )
            for c in cascades
        ],
        columns=ROOT_COLUMNS,
    )
    return {
        "cascades.tsv": write_tsv(summary, out_dir / "cascades.tsv"),
        "cascade_events.tsv": write_tsv(events, out_dir / "cascade_events.tsv"),
        "cascade_roots.tsv": write_tsv(roots, out_dir / "cascade_roots.tsv"),
    }


def load_cascades(cascade_dir: Path) -> List[Cascade]:
    """
    Rebuild cascades from the files written by `write_cascades`.

    A root tweet is restored only as the fields the later stages need
    (id, author, time, text); its mentions are not persisted.

    Args:
        cascade_dir (Path): Directory holding the cascade artifacts.

    Returns:
        List[Cascade]: Cascades in file order.
    """
    summary = read_tsv(cascade_dir / "cascades.tsv", dtype={"cascade_key_hash": str, "urls": str})
    events = read_tsv(cascade_dir / "cascade_events.tsv", dtype={"cascade_key_hash": str})
    roots = read_tsv(cascade_dir / "cascade_roots.tsv", dtype={
        "cascade_key_hash": str, "root_tweet_id": str, "root_unix_ts": str, "normalized_text": str,
    })

    try:
        cascades = _rebuild_cascades(summary, events, roots)
    except (AttributeError, KeyError, TypeError, ValueError) as e:
        logger.error(f"Corrupt cascade artifacts in '{cascade_dir}': {type(e).__name__}: {e}")
        raise ArtifactError(f"corrupt cascade artifacts in '{cascade_dir}': {type(e).__name__}: {e}") from e
    logger.info(f"Loaded {len(cascades)} cascades from '{cascade_dir}'.")
    return cascades


def _rebuild_cascades(summary: pd.DataFrame, events: pd.DataFrame, roots: pd.DataFrame) -> List[Cascade]:
    grouped: Dict[str, List[Tuple[int, int]]] = {}
    for key_hash, retweeter, ts in events[EVENT_COLUMNS].itertuples(index=False):
        grouped.setdefault(key_hash, []).append((int(retweeter), int(ts)))
    root_rows = {row.cascade_key_hash: row for row in roots.itertuples(index=False)}

    cascades: List[Cascade] = []
    for row in summary.itertuples(index=False):
        root_row = root_rows[row.cascade_key_hash]
        root_user_id = int(row.root_user_id)
        root_tweet = None
        if root_row.root_tweet_id:
            root_tweet = TweetRecord(
                tweet_id=int(root_row.root_tweet_id),
                user_id=root_user_id,
                screen_name=str(root_user_id),
                created_at=datetime.fromtimestamp(int(root_row.root_unix_ts), tz=timezone.utc),
                text=root_row.normalized_text,
            )
        cascades.append(
            Cascade(
                cascade_key=(root_row.normalized_text, root_user_id),
                root_user_id=root_user_id,
                root_tweet=root_tweet,
                events=grouped.get(row.cascade_key_hash, []),
                urls=[url for url in row.urls.split(";") if url],
            )
        )
    return cascades
