from collections import deque
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import logging

import numpy as np
import pandas as pd

from app.models.cascade_models import (
    CascadeAnalysis,
    CascadeCount,
    CascadeTree,
    FlowGraph,
    InfluenceScore,
    ViralityScore,
)
from app.models.graph_models import CcdfTable, FollowerGraph
from app.models.tweet_models import REGULAR, TROLL, Cascade, TrollRegistry
from app.services.graph_service import ccdf_frame, ccdf_table
from app.services.shapley_service import shapley_degree
from app.utils.dataframe_utils import chunk_sequence, write_tsv
from app.utils.exceptions import EmptyCascadeError, ViralityDomainError

logger = logging.getLogger(__name__)

ANALYSIS_CHUNK = 64
GROUPS = (TROLL, REGULAR)

_worker_graph: Optional[FollowerGraph] = None
_worker_registry: Optional[TrollRegistry] = None


def build_flow_graph(c: Cascade, fg: FollowerGraph) -> FlowGraph:
    """
    Build the possible-influence graph of one cascade.

    Every retweeter becomes one node stamped with its first retweet second.
    The root gets an edge to every retweeter. A retweeter u gets an edge to
    a retweeter v when v follows u in the follower graph with a follow time
    before t_v, and t_u < t_v. The root is stamped with its post time, or one
    second before the first retweet when the post is not in the corpus or is
    not earlier than every retweet.

    Args:
        c (Cascade): The cascade; events sorted by time.
        fg (FollowerGraph): Follower graph over the corpus.

    Returns:
        FlowGraph: Local node 0 is the root, then retweeters by first retweet.

    Raises:
        EmptyCascadeError: If the cascade has no retweeter besides the root.
    """
    first_time: Dict[int, int] = {}
    for retweeter, second in c.events:
        if retweeter != c.root_user_id and retweeter not in first_time:
            first_time[retweeter] = second
    if not first_time:
        raise EmptyCascadeError(f"cascade {c.key_hash} has no retweeters")

    retweeters = sorted(first_time, key=lambda uid: (first_time[uid], uid))
    earliest = first_time[retweeters[0]]
    root_ts = c.root_unix_ts
    if root_ts is None or root_ts >= earliest:
        root_ts = earliest - 1

    user_ids = [c.root_user_id] + retweeters
    times = np.array([root_ts] + [first_time[uid] for uid in retweeters], dtype=np.int64)
    n = len(user_ids)

    # global index -> local index, over retweeters present in the follower graph
    local_of: Dict[int, int] = {}
    for local, uid in enumerate(retweeters, start=1):
        index = fg.nodes.index_of.get(uid)
        if index is not None:
            local_of[index] = local

    src: List[np.ndarray] = [np.zeros(n - 1, dtype=np.int64)]
    dst: List[np.ndarray] = [np.arange(1, n, dtype=np.int64)]
    if local_of:
        members = np.array(sorted(local_of), dtype=np.int64)
        member_local = np.array([local_of[g] for g in members.tolist()], dtype=np.int64)
        for index, v in local_of.items():
            targets, follow_ts = fg.follows(index)
            if targets.size == 0:
                continue
            slot = np.searchsorted(members, targets)
            slot = np.minimum(slot, members.shape[0] - 1)
            present = members[slot] == targets
            u = member_local[slot[present]]
            t_v = times[v]
            keep = (follow_ts[present] < t_v) & (times[u] < t_v)
            if keep.any():
                src.append(u[keep])
                dst.append(np.full(int(keep.sum()), v, dtype=np.int64))

    all_src = np.concatenate(src)
    all_dst = np.concatenate(dst)
    order = np.lexsort((all_dst, all_src))
    return FlowGraph(
        cascade_key_hash=c.key_hash,
        user_ids=user_ids,
        times=times.tolist(),
        src=all_src[order],
        dst=all_dst[order],
    )


def build_cascade_tree(fgraph: FlowGraph) -> CascadeTree:
    """
    Infer the cascade tree from a flow graph.

    Each retweeter's parent is its non-root in-neighbour with the latest
    first-retweet time, the smaller user id on equal times; without such a
    neighbour the parent is the root.

    Args:
        fgraph (FlowGraph): The cascade's flow graph.

    Returns:
        CascadeTree: One parent per retweeter, -1 for the root.
    """
    n = fgraph.n_nodes
    parents = np.zeros(n, dtype=np.int64)
    if n:
        parents[0] = -1

    non_root = fgraph.src > 0
    s, d = fgraph.src[non_root], fgraph.dst[non_root]
    if s.size:
        times = np.asarray(fgraph.times, dtype=np.int64)
        uids = np.asarray(fgraph.user_ids, dtype=np.uint64)
        order = np.lexsort((uids[s], -times[s], d))
        s, d = s[order], d[order]
        first = np.ones(d.shape[0], dtype=bool)
        first[1:] = d[1:] != d[:-1]
        parents[d[first]] = s[first]

    return CascadeTree(
        cascade_key_hash=fgraph.cascade_key_hash,
        user_ids=list(fgraph.user_ids),
        times=list(fgraph.times),
        parents=parents.tolist(),
    )


def _bfs_order(tree: CascadeTree) -> List[int]:
    children = tree.children()
    order = [0]
    queue = deque([0])
    while queue:
        node = queue.popleft()
        for child in children[node]:
            order.append(child)
            queue.append(child)
    return order


def structural_virality(t: CascadeTree) -> float:
    """
    Average distance between all ordered pairs of tree nodes.

    The distance sum is taken through subtree sizes: every edge above a
    subtree of size s lies on s * (n - s) unordered node pairs.

    Args:
        t (CascadeTree): A tree with at least two nodes.

    Returns:
        float: The structural virality.

    Raises:
        ViralityDomainError: If the tree has fewer than two nodes.
    """
    n = t.n_nodes
    if n < 2:
        raise ViralityDomainError(f"structural virality needs at least 2 nodes, got {n}")

    order = _bfs_order(t)
    if len(order) != n:
        raise ValueError(f"tree {t.cascade_key_hash} does not span its {n} nodes")
    size = [1] * n
    wiener = 0
    for node in reversed(order[1:]):
        wiener += size[node] * (n - size[node])
        size[t.parents[node]] += size[node]
    return 2 * wiener / (n * (n - 1))


def influence_degree(t: CascadeTree) -> Dict[int, int]:
    """Child count of every tree node, keyed by user id."""
    counts = [0] * t.n_nodes
    for parent in t.parents:
        if parent >= 0:
            counts[parent] += 1
    return dict(zip(t.user_ids, counts))


def global_influence(trees: Iterable[CascadeTree]) -> Dict[int, InfluenceScore]:
    """
    Sum influence-degree over every tree a user takes part in.

    Args:
        trees (Iterable[CascadeTree]): Cascade trees.

    Returns:
        Dict[int, InfluenceScore]: Scores keyed by user id, ascending.
    """
    per_user: Dict[int, Dict[str, int]] = {}
    for tree in trees:
        for user_id, count in influence_degree(tree).items():
            per_user.setdefault(user_id, {})[tree.cascade_key_hash] = count
    return {
        user_id: InfluenceScore(user_id=user_id, per_cascade=per_user[user_id], total=sum(per_user[user_id].values()))
        for user_id in sorted(per_user)
    }


def cascade_stats(
    cascades: Sequence[Cascade], registry: TrollRegistry
) -> Tuple[List[CascadeCount], Dict[str, CcdfTable]]:
    """
    Cascade sizes and their distributions per root group.

    Args:
        cascades (Sequence[Cascade]): Recovered cascades.
        registry (TrollRegistry): Troll ids; a cascade belongs to its root's group.

    Returns:
        Tuple[List[CascadeCount], Dict[str, CcdfTable]]: One count per cascade,
        and CCDFs keyed `retweeters_<group>` and `retweets_<group>`.
    """
    counts = [
        CascadeCount(
            cascade_key_hash=c.key_hash,
            root_user_id=c.root_user_id,
            root_group=registry.group_of(c.root_user_id),
            n_distinct=c.n_distinct,
            n_events=c.n_events,
        )
        for c in cascades
    ]
    tables: Dict[str, CcdfTable] = {}
    for group in GROUPS:
        members = [count for count in counts if count.root_group == group]
        tables[f"retweeters_{group}"] = ccdf_table([count.n_distinct for count in members])
        tables[f"retweets_{group}"] = ccdf_table([count.n_events for count in members])
    return counts, tables


def cascade_summary(cascades: Sequence[Cascade], registry: TrollRegistry) -> pd.DataFrame:
    """
    Census of the cascades started by trolls and by regular accounts.

    Columns: group, n_users, n_root_users, n_root_tweets, n_retweeters,
    n_retweets, n_urls. Users and URLs are counted once per group.
    """
    rows = []
    for group in GROUPS:
        members = [c for c in cascades if registry.group_of(c.root_user_id) == group]
        roots = {c.root_user_id for c in members}
        retweeters = {uid for c in members for uid, _ in c.events}
        urls = {url for c in members for url in c.urls}
        rows.append((
            group,
            len(roots | retweeters),
            len(roots),
            len(members),
            len(retweeters),
            sum(c.n_events for c in members),
            len(urls),
        ))
    return pd.DataFrame(
        rows,
        columns=["group", "n_users", "n_root_users", "n_root_tweets", "n_retweeters", "n_retweets", "n_urls"],
    )


def virality_vs_size(trees: Sequence[CascadeTree], registry: TrollRegistry) -> pd.DataFrame:
    """
    Structural virality against cascade size, one row per tree.

    Rows are grouped by root group (regular first) and keep the tree order
    within a group. Single-node trees are left out.
    """
    scores = [
        ViralityScore(
            cascade_key_hash=tree.cascade_key_hash,
            n_nodes=tree.n_nodes,
            virality=structural_virality(tree),
            root_group=registry.group_of(tree.root_user_id),
        )
        for tree in trees
        if tree.n_nodes >= 2
    ]
    return virality_frame(scores)


def virality_frame(scores: Sequence[ViralityScore]) -> pd.DataFrame:
    frame = pd.DataFrame(
        [(s.cascade_key_hash, s.n_nodes, s.virality, s.root_group) for s in scores],
        columns=["cascade_key_hash", "n", "virality", "root_group"],
    )
    return frame.sort_values("root_group", kind="stable").reset_index(drop=True)


def analyze_cascade(c: Cascade, fg: FollowerGraph, registry: TrollRegistry) -> CascadeAnalysis:
    """Flow graph, tree, virality, influence-degree and Shapley values of one cascade."""
    flow = build_flow_graph(c, fg)
    tree = build_cascade_tree(flow)
    return CascadeAnalysis(
        cascade_key_hash=c.key_hash,
        urls=list(c.urls),
        root_group=registry.group_of(c.root_user_id),
        tree=tree,
        virality=structural_virality(tree),
        influence=influence_degree(tree),
        shapley_users=list(flow.user_ids),
        shapley_values=shapley_degree(flow),
    )


def _init_worker(fg: FollowerGraph, registry: TrollRegistry) -> None:
    global _worker_graph, _worker_registry
    _worker_graph = fg
    _worker_registry = registry


def _analyze_chunk(cascades: Sequence[Cascade]) -> List[CascadeAnalysis]:
    return [analyze_cascade(c, _worker_graph, _worker_registry) for c in cascades]


def analyze_cascades(
    cascades: Sequence[Cascade], fg: FollowerGraph, registry: TrollRegistry, workers: int = 1
) -> List[CascadeAnalysis]:
    """
    Analyze every cascade, in parallel when `workers > 1`.

    Results come back in cascade order for any worker count.

    Args:
        cascades (Sequence[Cascade]): Recovered cascades.
        fg (FollowerGraph): Follower graph over the corpus.
        registry (TrollRegistry): Troll ids.
        workers (int, optional): Worker processes. Defaults to 1.

    Returns:
        List[CascadeAnalysis]: One analysis per cascade.
    """
    if workers <= 1 or len(cascades) <= ANALYSIS_CHUNK:
        results = [analyze_cascade(c, fg, registry) for c in cascades]
    else:
        results = []
        chunks = chunk_sequence(list(cascades), ANALYSIS_CHUNK)
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(fg, registry)) as pool:
            for chunk_results in pool.map(_analyze_chunk, chunks):
                results.extend(chunk_results)
    logger.info(f"Analyzed {len(results)} cascades with {workers} worker(s).")
    return results


def write_cascade_outputs(
    analyses: Sequence[CascadeAnalysis],
    cascades: Sequence[Cascade],
    registry: TrollRegistry,
    out_dir: Path,
) -> Dict[str, int]:
    """
    Persist the cascade-stage artifacts.

    Writes `trees.tsv` (cascade_key_hash, child_id, parent_id),
    `virality.tsv`, `influence.tsv` (user_id, global_influence_degree,
    group), the influence-degree, structural-virality and cascade-size
    CCDFs per group (virality grouped by the root poster),
    `cascade_counts.tsv` and `cascade_summary.tsv`.

    Returns:
        Dict[str, int]: Row count per written file name.
    """
    trees = pd.DataFrame(
        [(a.cascade_key_hash, child, parent) for a in analyses for child, parent in a.tree.edges()],
        columns=["cascade_key_hash", "child_id", "parent_id"],
    )
    virality = virality_vs_size([a.tree for a in analyses], registry)
    influence = global_influence(a.tree for a in analyses)
    influence_frame = pd.DataFrame(
        [(uid, score.total, registry.group_of(uid)) for uid, score in influence.items()],
        columns=["user_id", "global_influence_degree", "group"],
    )

    written = {
        "trees.tsv": write_tsv(trees, out_dir / "trees.tsv"),
        "virality.tsv": write_tsv(virality, out_dir / "virality.tsv"),
        "influence.tsv": write_tsv(influence_frame, out_dir / "influence.tsv"),
    }
    for group in GROUPS:
        name = f"ccdf_influence_{group}.tsv"
        values = [score.total for uid, score in influence.items() if registry.group_of(uid) == group]
        written[name] = write_tsv(ccdf_frame(ccdf_table(values)), out_dir / name)
    for group in GROUPS:
        name = f"ccdf_virality_{group}.tsv"
        values = [a.virality for a in analyses if a.root_group == group]
        written[name] = write_tsv(ccdf_frame(ccdf_table(values)), out_dir / name)

    counts, tables = cascade_stats(cascades, registry)
    written["cascade_counts.tsv"] = write_tsv(
        pd.DataFrame([count.model_dump() for count in counts], columns=list(CascadeCount.model_fields)),
        out_dir / "cascade_counts.tsv",
    )
    for key, table in tables.items():
        name = f"ccdf_{key}.tsv"
        written[name] = write_tsv(ccdf_frame(table), out_dir / name)
    written["cascade_summary.tsv"] = write_tsv(cascade_summary(cascades, registry), out_dir / "cascade_summary.tsv")
    logger.info(f"Cascade outputs written to '{out_dir}'.")
    return written
