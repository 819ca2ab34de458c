from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import logging

import numpy as np
import orjson
import pytest

from app.models.graph_models import ActionType, FollowerGraph, InteractionGraph, NodeTable
from app.models.tweet_models import TrollRegistry, TweetRecord
from app.services.graph_service import collapse_to_follower_graph

T0 = 1_500_000_000
A, B, C, D, E = 1, 2, 3, 4, 5
TOY_TEXT = "breaking: the ballots were counted twice"
TOY_URL = "http://news.example.com/ballots"


def tweet_dict(
    tweet_id: int,
    user_id: int,
    second: int,
    text: str,
    mentions: Sequence[int] = (),
    urls: Sequence[str] = (),
    reply_to: Optional[int] = None,
) -> Dict:
    payload = {
        "tweet_id": tweet_id,
        "user_id": user_id,
        "screen_name": f"u{user_id}",
        "created_at": datetime.fromtimestamp(second, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
        "text": text,
        "mentions": [{"user_id": uid, "screen_name": f"u{uid}"} for uid in mentions],
        "urls": list(urls),
    }
    if reply_to is not None:
        payload["in_reply_to_user_id"] = reply_to
    return payload


def record(*args, **kwargs) -> TweetRecord:
    return TweetRecord.model_validate(tweet_dict(*args, **kwargs))


def retweet(tweet_id: int, user_id: int, root: int, second: int, text: str, url: str) -> TweetRecord:
    return record(tweet_id, user_id, second, f"RT @u{root}: {text}", mentions=[root], urls=[url])


def write_jsonl(path: Path, payloads: Sequence[Dict]) -> Path:
    with open(path, "wb") as file:
        for payload in payloads:
            file.write(orjson.dumps(payload) + b"\n")
    return path


def toy_payloads() -> List[Dict]:
    """
    Root a posts; b, c, d and e retweet in that order. c and d replied to b
    before the cascade, so they follow b; e follows nobody.
    """
    rt = f"RT @u{A}: {TOY_TEXT}"
    return [
        tweet_dict(10, C, T0 - 100, f"@u{B} good point", mentions=[B], reply_to=B),
        tweet_dict(11, D, T0 - 90, f"@u{B} agreed", mentions=[B], reply_to=B),
        tweet_dict(12, A, T0, TOY_TEXT, urls=[TOY_URL]),
        tweet_dict(13, B, T0 + 10, rt, mentions=[A], urls=[TOY_URL]),
        tweet_dict(14, C, T0 + 20, rt, mentions=[A], urls=[TOY_URL]),
        tweet_dict(15, D, T0 + 30, rt, mentions=[A], urls=[TOY_URL]),
        tweet_dict(16, E, T0 + 40, rt, mentions=[A], urls=[TOY_URL]),
    ]


@pytest.fixture
def toy_records() -> List[TweetRecord]:
    return [TweetRecord.model_validate(payload) for payload in toy_payloads()]


@pytest.fixture
def toy_corpus(tmp_path: Path) -> Path:
    return write_jsonl(tmp_path / "toy.jsonl", toy_payloads())


@pytest.fixture
def empty_registry() -> TrollRegistry:
    return TrollRegistry()


@pytest.fixture
def registry_file(tmp_path: Path) -> Path:
    path = tmp_path / "trolls.txt"
    path.write_text(f"{B}\tira\n", encoding="utf-8")
    return path


def interaction_graph(
    n: int, edges: Sequence[tuple], trolls: Sequence[int] = (), action: ActionType = ActionType.MENTION
) -> InteractionGraph:
    """
    Interaction graph over dense nodes 0..n-1 whose user ids are index + 1.

    Each edge is (src, dst) or (src, dst, unix_ts); the timestamp defaults to 0.
    """
    nodes = NodeTable(
        user_ids=np.arange(1, n + 1, dtype=np.uint64),
        is_troll=np.isin(np.arange(1, n + 1), list(trolls)),
    )
    return InteractionGraph(
        nodes=nodes,
        src=np.array([e[0] for e in edges], dtype=np.int64),
        dst=np.array([e[1] for e in edges], dtype=np.int64),
        action=np.full(len(edges), int(action), dtype=np.int8),
        ts=np.array([e[2] if len(e) > 2 else 0 for e in edges], dtype=np.int64),
    )


def follower_graph(n: int, edges: Sequence[tuple], trolls: Sequence[int] = ()) -> FollowerGraph:
    return collapse_to_follower_graph(interaction_graph(n, edges, trolls))


@pytest.fixture(scope="session", autouse=True)
def setup_logger() -> logging.Logger:
    """Send the package's log records to the console while tests run."""
    logger = logging.getLogger("app")
    logger.setLevel(logging.DEBUG)

    ch = logging.StreamHandler()
    ch.setLevel(logging.DEBUG)
    ch.setFormatter(logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s'))
    if not logger.handlers:
        logger.addHandler(ch)
    return logger
