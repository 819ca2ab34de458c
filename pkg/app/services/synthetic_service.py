from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import logging

import numpy as np
import orjson
import pandas as pd

from app.models.synthetic_models import CascadeShape, HubPlan, SyntheticOptions
from app.utils.dataframe_utils import write_tsv

logger = logging.getLogger(__name__)

FIRST_USER_ID = 1000
FIRST_TWEET_ID = 10**15
START_TS = 1451606400  # 2016-01-01T00:00:00Z
CASCADE_SPACING = 100_000
RETWEET_GAP = 10
REPOST_OFFSET = 50_000

GROUND_TRUTH_COLUMNS = ["tweet_id", "cascade_index", "retweeter_id", "root_user_id", "true_parent_id", "shape"]


def screen_name(user_id: int) -> str:
    return f"user{user_id}"


def _iso(second: int) -> str:
    return datetime.fromtimestamp(second, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


class _CorpusBuilder:
    """Collects posts with their ground truth until tweet ids are assigned in time order."""

    def __init__(self):
        self.posts: List[Tuple[int, int, Dict[str, Any], Optional[tuple]]] = []

    def post(
        self,
        second: int,
        user_id: int,
        text: str,
        mentions: Sequence[int] = (),
        urls: Sequence[str] = (),
        reply_to: Optional[int] = None,
        truth: Optional[tuple] = None,
    ) -> None:
        record: Dict[str, Any] = {
            "user_id": user_id,
            "screen_name": screen_name(user_id),
            "created_at": _iso(second),
            "text": text,
            "mentions": [{"user_id": uid, "screen_name": screen_name(uid)} for uid in mentions],
            "urls": list(urls),
        }
        if reply_to is not None:
            record["in_reply_to_user_id"] = reply_to
        self.posts.append((second, len(self.posts), record, truth))

    def finish(self) -> Tuple[List[Dict[str, Any]], List[tuple]]:
        records: List[Dict[str, Any]] = []
        truth_rows: List[tuple] = []
        for index, (_, _, record, truth) in enumerate(sorted(self.posts, key=lambda p: (p[0], p[1]))):
            tweet_id = FIRST_TWEET_ID + index
            records.append({"tweet_id": tweet_id, **record})
            if truth is not None:
                truth_rows.append((tweet_id, *truth))
        return records, truth_rows


class _UserPool:
    """Hands out users from a shuffled order so cascades get disjoint participants while users last."""

    def __init__(self, users: np.ndarray):
        self.users = users.tolist()
        self.cursor = 0
        self.wrapped = False

    def take(self, count: int) -> List[int]:
        taken = []
        for _ in range(count):
            if self.cursor == len(self.users):
                self.cursor = 0
                self.wrapped = True
            taken.append(self.users[self.cursor])
            self.cursor += 1
        return taken


def _plant_cascade(
    builder: _CorpusBuilder,
    rng: np.random.Generator,
    index: int,
    root: int,
    retweeters: List[int],
    shape: CascadeShape,
) -> None:
    start = START_TS + index * CASCADE_SPACING
    text = f"story {index}: read this before it disappears"
    url = f"https://news.example.com/story/{index}"
    builder.post(start, root, text, urls=[url])

    parents: List[int] = []
    for j, retweeter in enumerate(retweeters):
        if shape == CascadeShape.STAR or j == 0:
            parent = root
        elif shape == CascadeShape.CHAIN:
            parent = retweeters[j - 1]
        else:
            pick = int(rng.integers(0, j + 1))
            parent = root if pick == 0 else retweeters[pick - 1]
        parents.append(parent)

        # earlier interactions are the only follow evidence the tree sees
        before = start - len(retweeters) - 10 + j
        if shape == CascadeShape.CHAIN and j > 0:
            builder.post(before, retweeter, f"catching up with friends {index}", mentions=retweeters[:j])
        elif shape == CascadeShape.RANDOM and parent != root:
            builder.post(before, retweeter, f"@{screen_name(parent)} agreed", mentions=[parent], reply_to=parent)

        builder.post(
            start + RETWEET_GAP * (j + 1),
            retweeter,
            f"RT @{screen_name(root)}: {text}",
            mentions=[root],
            urls=[url],
            truth=(index, retweeter, root, parent, shape.value),
        )


def _plant_noise(
    builder: _CorpusBuilder,
    rng: np.random.Generator,
    index: int,
    root: int,
    retweeters: List[int],
    pool: _UserPool,
) -> None:
    start = START_TS + index * CASCADE_SPACING
    text = f"story {index}: read this before it disappears"
    url = f"https://news.example.com/story/{index}"
    late = start + RETWEET_GAP * (len(retweeters) + 2)

    for j, retweeter in enumerate(retweeters):
        if rng.random() < 0.05:
            builder.post(
                late + j, retweeter, f"RT @{screen_name(root)}: {text}", mentions=[root], urls=[url],
                truth=(index, retweeter, root, root, "duplicate_retweet"),
            )
    if index % 3 == 0:
        quoter = retweeters[0]
        builder.post(
            late + len(retweeters), quoter, f"RT @{screen_name(root)}: {text} so true", mentions=[root], urls=[url],
            truth=(index, quoter, root, root, "quote"),
        )
    if index % 4 == 0:
        author = retweeters[-1]
        builder.post(
            late + len(retweeters) + 1, author, f"RT @ghost{index}: not actually a retweet", urls=[url],
            truth=(index, author, "", "", "fake_rt"),
        )
    if index % 5 == 0:
        repost = start + REPOST_OFFSET
        builder.post(repost, root, text, urls=[url])
        for j, latecomer in enumerate(pool.take(2)):
            builder.post(
                repost + RETWEET_GAP * (j + 1), latecomer, f"RT @{screen_name(root)}: {text}", mentions=[root],
                urls=[url], truth=(index, latecomer, root, root, "duplicate_root"),
            )


def gen_synthetic(
    seed: int,
    n_users: int,
    n_cascades: int,
    troll_fraction: float,
    hub_plan: Optional[HubPlan] = None,
    out_dir: Path = Path("synthetic"),
    options: Optional[SyntheticOptions] = None,
) -> Dict[str, int]:
    """
    Generate a reproducible corpus with planted cascades and its ground truth.

    Writes `corpus.jsonl`, `trolls.tsv` (registry format, one id and label
    per line) and `ground_truth.tsv` (tweet_id, cascade_index, retweeter_id,
    root_user_id, true_parent_id, shape). Hub cascades come first and are
    stars; the remaining cascades take the configured shapes in turn. The
    follow evidence for chain and random trees is planted as mentions or
    replies posted shortly before the cascade, so the time-inferred tree
    recovers the true parents while participants stay disjoint.

    Args:
        seed (int): RNG seed; equal arguments produce byte-identical files.
        n_users (int): Number of accounts.
        n_cascades (int): Number of planted cascades, hub cascades included.
        troll_fraction (float): Share of accounts listed as trolls.
        hub_plan (HubPlan, optional): Planted hubs. Defaults to one hub.
        out_dir (Path, optional): Output directory.
        options (SyntheticOptions, optional): Cascade size, shapes and noise.

    Returns:
        Dict[str, int]: Row count per written file name.

    Raises:
        ValueError: If a count is not positive or `troll_fraction` is outside [0, 1].
    """
    if n_users < 2 or n_cascades < 1:
        raise ValueError("n_users must be at least 2 and n_cascades at least 1")
    if not 0.0 <= troll_fraction <= 1.0:
        raise ValueError("troll_fraction must lie in [0, 1]")
    hub_plan = hub_plan or HubPlan()
    options = options or SyntheticOptions()

    rng = np.random.default_rng(seed)
    users = np.arange(FIRST_USER_ID, FIRST_USER_ID + n_users, dtype=np.int64)
    trolls = np.sort(rng.choice(users, size=int(round(troll_fraction * n_users)), replace=False))
    pool = _UserPool(rng.permutation(users))

    builder = _CorpusBuilder()
    hubs = pool.take(hub_plan.hub_count)
    fanout = hub_plan.fanout or 2 * options.retweeters_per_cascade
    hub_cascades = [hub for hub in hubs for _ in range(hub_plan.cascades_per_hub)][:n_cascades]

    for index in range(n_cascades):
        if index < len(hub_cascades):
            root, size, shape = hub_cascades[index], fanout, CascadeShape.STAR
        else:
            root = pool.take(1)[0]
            size = options.retweeters_per_cascade
            shape = options.shapes[(index - len(hub_cascades)) % len(options.shapes)]
        retweeters = [uid for uid in pool.take(size + 1) if uid != root][:size]
        _plant_cascade(builder, rng, index, root, retweeters, shape)
        if options.noise:
            _plant_noise(builder, rng, index, root, retweeters, pool)

    if options.noise:
        after = START_TS + (n_cascades + 1) * CASCADE_SPACING
        for j in range(max(n_users // 10, 1)):
            author, target = rng.choice(users, size=2, replace=False).tolist()
            builder.post(after + j, author, f"@{screen_name(target)} thanks", mentions=[target], reply_to=target)

    if pool.wrapped:
        logger.warning("User pool exhausted; cascades share participants and planted parents may not be recoverable.")

    records, truth_rows = builder.finish()
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "corpus.jsonl", "wb") as file:
        for record in records:
            file.write(orjson.dumps(record) + b"\n")
    with open(out_dir / "trolls.tsv", "w", encoding="utf-8", newline="\n") as file:
        for troll in trolls.tolist():
            file.write(f"{troll}\tsynthetic\n")
    truth = write_tsv(pd.DataFrame(truth_rows, columns=GROUND_TRUTH_COLUMNS), out_dir / "ground_truth.tsv")

    logger.info(
        f"Synthetic corpus: {len(records)} posts, {n_cascades} cascades, {len(trolls)} trolls, "
        f"{len(hubs)} hubs in '{out_dir}'."
    )
    return {"corpus.jsonl": len(records), "trolls.tsv": int(trolls.shape[0]), "ground_truth.tsv": truth}
