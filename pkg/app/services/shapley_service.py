from math import factorial, fsum
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import logging

import numpy as np
import pandas as pd

from app.models.cascade_models import CascadeAnalysis, FlowGraph
from app.models.graph_models import GroupAverages, Metric
from app.models.score_models import (
    CascadeShapley,
    RankedUser,
    Ranking,
    ShapleyScore,
    TopKRow,
    UrlFilter,
)
from app.models.tweet_models import REGULAR, TROLL, Cascade, TrollRegistry
from app.services.graph_service import averages_frame, ccdf_frame, ccdf_table, group_averages
from app.utils.dataframe_utils import write_tsv
from app.utils.exceptions import OracleSizeError

logger = logging.getLogger(__name__)

MAX_ORACLE_NODES = 12


def shapley_degree_arrays(n_nodes: int, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """
    Degree-centrality Shapley values of a simple digraph given as edge arrays.

    SV(u) is the sum, over the out-neighbours v of u, of 1 / (1 + indegree(v)).
    Runs in O(|V| + |E|).

    Args:
        n_nodes (int): Number of nodes.
        src (np.ndarray): Edge sources.
        dst (np.ndarray): Edge targets.

    Returns:
        np.ndarray: float64 value per node; 0 for nodes without out-neighbours.
    """
    if src.shape[0] == 0:
        return np.zeros(n_nodes, dtype=np.float64)
    in_degree = np.bincount(dst, minlength=n_nodes)
    shares = 1.0 / (1.0 + in_degree[dst])
    return np.bincount(src, weights=shares, minlength=n_nodes).astype(np.float64)


def shapley_degree(g: FlowGraph) -> np.ndarray:
    """Shapley value of every flow-graph node, aligned with `g.user_ids`."""
    return shapley_degree_arrays(g.n_nodes, g.src, g.dst)


def brute_force_shapley(g: FlowGraph) -> np.ndarray:
    """
    Reference Shapley values by enumerating every coalition.

    The game is v(C) = |C ∪ N_out(C)|. Each player's exact Shapley value in
    that game, minus its own share 1 / (1 + indegree), equals the
    degree-centrality value of `shapley_degree`.

    Args:
        g (FlowGraph): A graph with at most 12 nodes.

    Returns:
        np.ndarray: float64 value per node.

    Raises:
        OracleSizeError: If the graph has more than 12 nodes.
    """
    n = g.n_nodes
    if n > MAX_ORACLE_NODES:
        raise OracleSizeError(f"brute-force Shapley is limited to {MAX_ORACLE_NODES} nodes, got {n}")
    if n == 0:
        return np.zeros(0, dtype=np.float64)

    out_mask = [0] * n
    for u, v in zip(g.src.tolist(), g.dst.tolist()):
        out_mask[u] |= 1 << v

    full = 1 << n
    covered = [0] * full
    worth = [0] * full
    for mask in range(1, full):
        low = mask & -mask
        player = low.bit_length() - 1
        covered[mask] = covered[mask ^ low] | low | out_mask[player]
        worth[mask] = bin(covered[mask]).count("1")

    weights = [factorial(s) * factorial(n - s - 1) / factorial(n) for s in range(n)]
    in_degree = np.bincount(g.dst, minlength=n) if g.n_edges else np.zeros(n, dtype=np.int64)
    values = np.zeros(n, dtype=np.float64)
    for player in range(n):
        bit = 1 << player
        terms = [
            weights[bin(mask).count("1")] * (worth[mask | bit] - worth[mask])
            for mask in range(full)
            if not mask & bit
        ]
        values[player] = fsum(terms) - 1.0 / (1.0 + in_degree[player])
    return values


def cascade_shapley(analysis: CascadeAnalysis) -> CascadeShapley:
    return CascadeShapley(
        cascade_key_hash=analysis.cascade_key_hash,
        urls=analysis.urls,
        user_ids=analysis.shapley_users,
        values=analysis.shapley_values,
    )


def troll_url_filter(cascades: Iterable[Cascade], registry: TrollRegistry) -> UrlFilter:
    """
    Collect the URLs of every cascade a troll posted or retweeted.

    Args:
        cascades (Iterable[Cascade]): Recovered cascades.
        registry (TrollRegistry): Troll ids.

    Returns:
        UrlFilter: The URLs-troll anchor set.
    """
    urls = set()
    for cascade in cascades:
        if registry.is_troll(cascade.root_user_id) or any(
            registry.is_troll(retweeter) for retweeter, _ in cascade.events
        ):
            urls.update(cascade.urls)
    logger.info(f"URLs-troll filter holds {len(urls)} URLs.")
    return UrlFilter(urls=urls)


def global_shapley(
    per_cascade: Sequence[CascadeShapley], url_filter: Optional[UrlFilter] = None
) -> Dict[int, ShapleyScore]:
    """
    Sum each user's per-flow-graph Shapley values.

    Every participant appears in the result. With a filter, only the graphs
    of matching cascades contribute to `global_value`; participants of other
    graphs keep a total of 0. Sums are correctly rounded, so the result does
    not depend on the order of the graphs.

    Args:
        per_cascade (Sequence[CascadeShapley]): Values per flow graph.
        url_filter (UrlFilter, optional): Restrict the sum to matching cascades.

    Returns:
        Dict[int, ShapleyScore]: Scores keyed by user id, in ascending id order.
    """
    per_user: Dict[int, Dict[str, float]] = {}
    selected: Dict[int, List[float]] = {}
    matched = 0
    for graph in per_cascade:
        use = url_filter is None or url_filter.matches(graph.urls)
        matched += use
        for user_id, value in zip(graph.user_ids, graph.values.tolist()):
            per_user.setdefault(user_id, {})[graph.cascade_key_hash] = value
            bucket = selected.setdefault(user_id, [])
            if use:
                bucket.append(value)

    if url_filter is not None:
        logger.info(f"URL filter matches {matched} of {len(per_cascade)} cascades.")
    return {
        user_id: ShapleyScore(user_id=user_id, per_graph=per_user[user_id], global_value=fsum(selected[user_id]))
        for user_id in sorted(per_user)
    }


def rank(scores: Mapping[int, float], registry: TrollRegistry) -> Ranking:
    """
    Rank accounts by score.

    Ranks are dense and 1-based; scores are non-increasing and ties go to
    the smaller user id, so zero-score accounts follow every positive score
    in id order.

    Args:
        scores (Mapping[int, float]): Score per user id.
        registry (TrollRegistry): Troll ids used to label the entries.

    Returns:
        Ranking: The ordered ranking.
    """
    ordered = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
    return Ranking(entries=[
        RankedUser(rank=position, user_id=user_id, score=score, group=registry.group_of(user_id))
        for position, (user_id, score) in enumerate(ordered, start=1)
    ])


def troll_ranks(ranking: Ranking, registry: TrollRegistry) -> List[RankedUser]:
    """Ranking entries of every registry troll that was ranked, best first."""
    found = ranking.of_group(TROLL)
    missing = len(registry.ids) - len(found)
    if missing:
        logger.info(f"{missing} registry trolls do not take part in any cascade.")
    return found


def top_k_table(
    shapley_ranking: Ranking,
    influence_ranking: Ranking,
    coreness: Mapping[int, int],
    k: int = 10,
) -> List[TopKRow]:
    """
    Describe the top-k accounts of the Shapley ranking.

    Args:
        shapley_ranking (Ranking): Ranking by global Shapley value.
        influence_ranking (Ranking): Ranking by global influence-degree.
        coreness (Mapping[int, int]): Coreness per user of the largest component.
        k (int, optional): Number of rows. Defaults to 10.

    Returns:
        List[TopKRow]: One row per top-k account; coreness is None outside the largest component.
    """
    influence = {entry.user_id: entry for entry in influence_ranking.entries}
    rows = []
    for entry in shapley_ranking.top(k):
        other = influence.get(entry.user_id)
        rows.append(TopKRow(
            shapley_rank=entry.rank,
            user_id=entry.user_id,
            group=entry.group,
            shapley=entry.score,
            influence_rank=None if other is None else other.rank,
            influence_degree=0 if other is None else int(other.score),
            coreness=coreness.get(entry.user_id),
        ))
    return rows


def ranking_frame(ranking: Ranking, score_column: str = "shapley", integral: bool = False) -> pd.DataFrame:
    return pd.DataFrame(
        [(e.rank, e.user_id, int(e.score) if integral else e.score, e.group) for e in ranking.entries],
        columns=["rank", "user_id", score_column, "group"],
    )


def topk_frame(rows: Sequence[TopKRow]) -> pd.DataFrame:
    columns = list(TopKRow.model_fields)
    return pd.DataFrame(
        [["" if value is None else value for value in row.model_dump().values()] for row in rows],
        columns=columns,
    )


def shapley_averages(ranking: Ranking, registry: TrollRegistry) -> List[Tuple[str, GroupAverages]]:
    """Mean Shapley value and mean Shapley rank per group."""
    user_ids = [entry.user_id for entry in ranking.entries]
    return [
        ("cascades", group_averages(user_ids, [e.score for e in ranking.entries], registry, Metric.SHAPLEY)),
        ("cascades", group_averages(user_ids, [e.rank for e in ranking.entries], registry, Metric.RANK)),
    ]


def write_shapley_outputs(
    ranking: Ranking,
    influence_ranking: Ranking,
    registry: TrollRegistry,
    out_dir: Path,
) -> Dict[str, int]:
    """
    Persist the Shapley ranking and its companion tables.

    Writes `ranking.tsv`, `troll_ranks.tsv`, `averages.tsv` (mean Shapley
    value and mean rank per group), `influence_ranking.tsv` and the Shapley
    CCDF per group.

    Returns:
        Dict[str, int]: Row count per written file name.
    """
    written = {
        "ranking.tsv": write_tsv(ranking_frame(ranking), out_dir / "ranking.tsv"),
        "troll_ranks.tsv": write_tsv(
            ranking_frame(Ranking(entries=troll_ranks(ranking, registry))), out_dir / "troll_ranks.tsv"
        ),
        "averages.tsv": write_tsv(averages_frame(shapley_averages(ranking, registry)), out_dir / "averages.tsv"),
        "influence_ranking.tsv": write_tsv(
            ranking_frame(influence_ranking, "influence_degree", integral=True), out_dir / "influence_ranking.tsv"
        ),
    }
    for group in (TROLL, REGULAR):
        name = f"ccdf_shapley_{group}.tsv"
        table = ccdf_table([e.score for e in ranking.of_group(group)])
        written[name] = write_tsv(ccdf_frame(table), out_dir / name)
    logger.info(f"Ranked {len(ranking)} accounts; outputs written to '{out_dir}'.")
    return written
