from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import logging

import networkx as nx
import numpy as np
import pandas as pd
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components as csgraph_components

from app.models.graph_models import (
    ActionType,
    CcdfTable,
    ComponentResult,
    CorenessResult,
    Direction,
    FollowerGraph,
    GroupAverages,
    InteractionGraph,
    Metric,
    NodeTable,
)
from app.models.tweet_models import REGULAR, TROLL, TrollRegistry, TweetRecord
from app.services.ingest_service import detect_retweet
from app.utils.dataframe_utils import read_tsv, write_tsv
from app.utils.exceptions import ArtifactError
from app.utils.graph_codec import read_fgr, write_fgr

logger = logging.getLogger(__name__)

NOT_AVAILABLE = "N/A"
GROUPS = (TROLL, REGULAR)


def _node_table(user_ids: Sequence[int], registry: TrollRegistry) -> NodeTable:
    ids = np.array(user_ids, dtype=np.uint64)
    trolls = np.array([registry.is_troll(uid) for uid in user_ids], dtype=bool)
    return NodeTable(user_ids=ids, is_troll=trolls)


def _record_actions(record: TweetRecord) -> List[Tuple[int, ActionType]]:
    author = record.user_id
    actions: List[Tuple[int, ActionType]] = []
    if record.in_reply_to_user_id is not None and record.in_reply_to_user_id != author:
        actions.append((record.in_reply_to_user_id, ActionType.REPLY))

    info = detect_retweet(record)
    root_pending = False
    if info is not None and info.root_user_id != author:
        actions.append((info.root_user_id, ActionType.RETWEET))
        root_pending = True

    mentioned = set()
    for mention in record.mentions:
        target = mention.user_id
        if target == author:
            continue
        # the root's own mention is carried by the retweet edge
        if root_pending and target == info.root_user_id:
            root_pending = False
            continue
        if target in mentioned:
            continue
        mentioned.add(target)
        actions.append((target, ActionType.MENTION))
    return actions


def build_interaction_graph(records: Iterable[TweetRecord], registry: TrollRegistry) -> InteractionGraph:
    """
    Build the interaction multigraph: one edge per reply, mention and retweet.

    An edge (i, j) is added for every action of i on a post of j. A detected
    retweet yields one retweet edge to the root user; the root's mention in
    the same record is not counted again. Self-loops are dropped and users
    without any action in or out never become nodes. Dense node indices
    follow first appearance (source before target).

    Args:
        records (Iterable[TweetRecord]): Parsed records in corpus order.
        registry (TrollRegistry): Troll ids used to label the nodes.

    Returns:
        InteractionGraph: The multigraph.
    """
    index_of: Dict[int, int] = {}
    user_ids: List[int] = []
    src: List[int] = []
    dst: List[int] = []
    action: List[int] = []
    ts: List[int] = []

    def node(user_id: int) -> int:
        index = index_of.get(user_id)
        if index is None:
            index = len(user_ids)
            index_of[user_id] = index
            user_ids.append(user_id)
        return index

    for record in records:
        actions = _record_actions(record)
        if not actions:
            continue
        source = node(record.user_id)
        second = record.unix_ts
        for target, kind in actions:
            src.append(source)
            dst.append(node(target))
            action.append(int(kind))
            ts.append(second)

    nodes = _node_table(user_ids, registry)
    graph = InteractionGraph(
        nodes=nodes,
        src=np.array(src, dtype=np.int64),
        dst=np.array(dst, dtype=np.int64),
        action=np.array(action, dtype=np.int8),
        ts=np.array(ts, dtype=np.int64),
    )
    _log_troll_exposure(graph, registry)
    logger.info(f"Interaction graph: {graph.n_nodes} nodes, {graph.n_edges} edges.")
    return graph


def _log_troll_exposure(graph: InteractionGraph, registry: TrollRegistry) -> None:
    trolls_in_graph = int(graph.nodes.is_troll.sum())
    absent = len(registry.ids) - trolls_in_graph
    to_trolls = graph.nodes.is_troll[graph.dst]
    reached = np.unique(graph.dst[to_trolls]).size
    logger.info(
        f"{trolls_in_graph} trolls in graph ({absent} registry ids absent); "
        f"{int(to_trolls.sum())} edges point to {reached} trolls."
    )


def follower_graph_from_forward(
    nodes: NodeTable, offsets: np.ndarray, targets: np.ndarray, timestamps: np.ndarray
) -> FollowerGraph:
    """
    Assemble a follower graph from forward CSR arrays, deriving the reverse side.

    Args:
        nodes (NodeTable): Node indexing.
        offsets (np.ndarray): Forward offsets, length n + 1.
        targets (np.ndarray): Followed account per edge, ascending within each source.
        timestamps (np.ndarray): Earliest interaction second per edge.

    Returns:
        FollowerGraph: The graph with consistent forward and reverse adjacency.
    """
    n = nodes.n_nodes
    sources = np.repeat(np.arange(n, dtype=np.int64), np.diff(offsets))
    rev_order = np.lexsort((sources, targets)).astype(np.int64)
    rev_offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(targets, minlength=n), out=rev_offsets[1:])
    return FollowerGraph(
        nodes=nodes,
        fwd_offsets=offsets.astype(np.int64),
        fwd_targets=targets.astype(np.int64),
        fwd_ts=timestamps.astype(np.int64),
        rev_offsets=rev_offsets,
        rev_sources=sources[rev_order],
        rev_edge_ids=rev_order,
    )


def collapse_to_follower_graph(ig: InteractionGraph) -> FollowerGraph:
    """
    Collapse the multigraph to a simple digraph, keeping the earliest edge per pair.

    Args:
        ig (InteractionGraph): The interaction multigraph.

    Returns:
        FollowerGraph: One edge per ordered (follower, followed) pair carrying
        the minimum timestamp over all interactions of that pair.
    """
    n = ig.n_nodes
    order = np.lexsort((ig.ts, ig.dst, ig.src))
    src, dst, ts = ig.src[order], ig.dst[order], ig.ts[order]
    first = np.ones(src.shape[0], dtype=bool)
    first[1:] = (src[1:] != src[:-1]) | (dst[1:] != dst[:-1])
    src, dst, ts = src[first], dst[first], ts[first]

    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=offsets[1:])
    graph = follower_graph_from_forward(ig.nodes, offsets, dst, ts)
    logger.info(f"Follower graph: {graph.n_nodes} nodes, {graph.n_edges} edges (from {ig.n_edges} interactions).")
    return graph


def ccdf_table(values: Iterable[float]) -> CcdfTable:
    """
    Empirical CCDF over the non-zero values.

    Args:
        values (Iterable[float]): One value per entity.

    Returns:
        CcdfTable: (value, fraction of entities with a value >= it) for each
        distinct non-zero value, ascending; empty when no value is non-zero.
    """
    array = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=np.float64)
    array = array[array > 0]
    if array.size == 0:
        return CcdfTable()
    distinct, counts = np.unique(array, return_counts=True)
    at_least = np.cumsum(counts[::-1])[::-1] / array.size
    return CcdfTable(rows=list(zip(distinct.tolist(), at_least.tolist())))


def _group_mask(is_troll: np.ndarray, group: Optional[str]) -> np.ndarray:
    if group is None:
        return np.ones(is_troll.shape[0], dtype=bool)
    if group == TROLL:
        return is_troll
    if group == REGULAR:
        return ~is_troll
    raise ValueError(f"Unknown group: '{group}'")


def degree_ccdf(g, direction: Direction, group: Optional[str] = None) -> CcdfTable:
    """
    CCDF of non-zero in- or out-degree for one group of nodes.

    Args:
        g (InteractionGraph | FollowerGraph): The graph.
        direction (Direction): In- or out-degree.
        group (str, optional): "troll", "regular" or None for all nodes.

    Returns:
        CcdfTable: The distribution; empty when no node in the group has a non-zero degree.
    """
    degrees = g.in_degree() if Direction(direction) == Direction.IN else g.out_degree()
    return ccdf_table(degrees[_group_mask(g.nodes.is_troll, group)])


def connected_components(fg: FollowerGraph) -> ComponentResult:
    """
    Connected components of the undirected view of the follower graph.

    Component ids are ordered by descending size, ties by smallest member
    index, so id 0 is the largest component.

    Args:
        fg (FollowerGraph): The follower graph.

    Returns:
        ComponentResult: Component id per node and the component sizes.
    """
    n = fg.n_nodes
    if n == 0:
        return ComponentResult(labels=np.zeros(0, dtype=np.int64), sizes=np.zeros(0, dtype=np.int64))

    adjacency = csr_matrix(
        (np.ones(fg.n_edges, dtype=np.int8), fg.fwd_targets, fg.fwd_offsets), shape=(n, n)
    )
    count, raw = csgraph_components(adjacency, directed=False)
    raw_sizes = np.bincount(raw, minlength=count)
    first_member = np.full(count, n, dtype=np.int64)
    np.minimum.at(first_member, raw, np.arange(n, dtype=np.int64))
    order = np.lexsort((first_member, -raw_sizes))
    new_id = np.empty(count, dtype=np.int64)
    new_id[order] = np.arange(count, dtype=np.int64)

    result = ComponentResult(labels=new_id[raw], sizes=raw_sizes[order].astype(np.int64))
    logger.info(f"{result.n_components} components; largest has {int(result.sizes[0])} nodes.")
    return result


def undirected_adjacency(fg: FollowerGraph, node_indices: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Simple undirected CSR adjacency of the subgraph induced by `node_indices`.

    Antiparallel edge pairs collapse to one undirected edge. Local index `k`
    stands for `sorted(node_indices)[k]`.

    Returns:
        Tuple[np.ndarray, np.ndarray]: offsets and neighbour arrays.
    """
    members = np.unique(node_indices).astype(np.int64)
    k = members.shape[0]
    local = np.full(fg.n_nodes, -1, dtype=np.int64)
    local[members] = np.arange(k, dtype=np.int64)

    sources = local[fg.edge_sources()]
    targets = local[fg.fwd_targets]
    keep = (sources >= 0) & (targets >= 0)
    a = np.concatenate([sources[keep], targets[keep]])
    b = np.concatenate([targets[keep], sources[keep]])
    pairs = np.unique(a * max(k, 1) + b)
    a, b = pairs // max(k, 1), pairs % max(k, 1)

    offsets = np.zeros(k + 1, dtype=np.int64)
    np.cumsum(np.bincount(a, minlength=k), out=offsets[1:])
    return offsets, b.astype(np.int64)


def core_numbers(offsets: np.ndarray, neighbors: np.ndarray) -> np.ndarray:
    """
    Coreness of every node of a simple undirected CSR graph.

    Args:
        offsets (np.ndarray): CSR offsets, length n + 1.
        neighbors (np.ndarray): CSR neighbour lists (each undirected edge stored both ways).

    Returns:
        np.ndarray: int64 coreness per node.
    """
    n = offsets.shape[0] - 1
    if n <= 0:
        return np.zeros(0, dtype=np.int64)
    sources = np.repeat(np.arange(n, dtype=np.int64), np.diff(offsets))
    upper = sources < neighbors

    graph = nx.Graph()
    graph.add_nodes_from(range(n))
    graph.add_edges_from(zip(sources[upper].tolist(), neighbors[upper].tolist()))
    core = nx.core_number(graph)
    return np.fromiter((core[v] for v in range(n)), dtype=np.int64, count=n)


def kcore_decomposition(fg: FollowerGraph, node_indices: Optional[np.ndarray] = None) -> CorenessResult:
    """
    k-core decomposition of the undirected view of one component.

    Args:
        fg (FollowerGraph): The follower graph.
        node_indices (np.ndarray, optional): Nodes of the component to decompose.
            Defaults to the largest connected component.

    Returns:
        CorenessResult: Coreness per member node; `core_number` is the maximum.
    """
    if node_indices is None:
        components = connected_components(fg)
        if components.n_components == 0:
            return CorenessResult(node_indices=np.zeros(0, dtype=np.int64), coreness=np.zeros(0, dtype=np.int64))
        node_indices = np.flatnonzero(components.labels == components.largest)

    members = np.unique(node_indices).astype(np.int64)
    offsets, neighbors = undirected_adjacency(fg, members)
    result = CorenessResult(node_indices=members, coreness=core_numbers(offsets, neighbors))
    logger.info(f"k-core decomposition of {members.shape[0]} nodes: core number {result.core_number}.")
    return result


def group_averages(
    user_ids: Sequence[int], values: Sequence[float], registry: TrollRegistry, metric: Metric
) -> GroupAverages:
    """
    Arithmetic mean of a per-account metric for regular accounts and trolls.

    Args:
        user_ids (Sequence[int]): Accounts that are members of the graph or ranking.
        values (Sequence[float]): Metric value per account, aligned with `user_ids`.
        registry (TrollRegistry): Troll ids.
        metric (Metric): Which metric the values hold.

    Returns:
        GroupAverages: Means per group; a group without members is None, not zero.
    """
    values = np.asarray(values, dtype=np.float64)
    trolls = np.array([registry.is_troll(uid) for uid in user_ids], dtype=bool)
    if values.shape[0] != trolls.shape[0]:
        raise ValueError("user_ids and values must have the same length")

    def mean(mask: np.ndarray) -> Optional[float]:
        return float(values[mask].mean()) if mask.any() else None

    return GroupAverages(metric=Metric(metric).value, regular=mean(~trolls), troll=mean(trolls))


def averages_frame(rows: Sequence[Tuple[str, GroupAverages]]) -> pd.DataFrame:
    """Tabulate (scope, averages) pairs with N/A for absent groups."""
    def fmt(value: Optional[float]) -> str:
        return NOT_AVAILABLE if value is None else repr(value)

    return pd.DataFrame(
        [(scope, avg.metric, fmt(avg.regular), fmt(avg.troll)) for scope, avg in rows],
        columns=["scope", "metric", "regular", "troll"],
    )


def ccdf_frame(table: CcdfTable) -> pd.DataFrame:
    return pd.DataFrame(table.rows, columns=["value", "fraction_ge"])


def write_graphs(ig: InteractionGraph, fg: FollowerGraph, out_dir: Path) -> Dict[str, int]:
    """
    Persist both graphs.

    Writes `nodes.tsv` (node_index, user_id, group), `interaction.edges`
    (src, dst, type, unix_ts), `follower.edges` (src, dst, unix_ts) with
    user ids as endpoints, and the binary `follower.fgr`.

    Returns:
        Dict[str, int]: Row count per written file name.
    """
    user_ids = ig.nodes.user_ids
    nodes = pd.DataFrame({
        "node_index": np.arange(ig.n_nodes, dtype=np.int64),
        "user_id": user_ids,
        "group": np.where(ig.nodes.is_troll, TROLL, REGULAR),
    })
    labels = np.array([kind.label for kind in ActionType])
    interaction = pd.DataFrame({
        "src": user_ids[ig.src],
        "dst": user_ids[ig.dst],
        "type": labels[ig.action.astype(np.int64)],
        "unix_ts": ig.ts,
    })
    follower = pd.DataFrame({
        "src": user_ids[fg.edge_sources()],
        "dst": user_ids[fg.fwd_targets],
        "unix_ts": fg.fwd_ts,
    })
    return {
        "nodes.tsv": write_tsv(nodes, out_dir / "nodes.tsv"),
        "interaction.edges": write_tsv(interaction, out_dir / "interaction.edges"),
        "follower.edges": write_tsv(follower, out_dir / "follower.edges"),
        "follower.fgr": write_fgr(out_dir / "follower.fgr", fg.fwd_offsets, fg.fwd_targets, fg.fwd_ts),
    }


def load_node_table(graph_dir: Path) -> NodeTable:
    nodes = read_tsv(graph_dir / "nodes.tsv", dtype={"user_id": "uint64", "group": str})
    return NodeTable(
        user_ids=nodes["user_id"].to_numpy(dtype=np.uint64),
        is_troll=(nodes["group"] == TROLL).to_numpy(dtype=bool),
    )


def load_follower_graph(graph_dir: Path, nodes: Optional[NodeTable] = None) -> FollowerGraph:
    """Load `follower.fgr` together with the node table of the same directory."""
    nodes = nodes if nodes is not None else load_node_table(graph_dir)
    offsets, targets, timestamps = read_fgr(graph_dir / "follower.fgr")
    if offsets.shape[0] != nodes.n_nodes + 1:
        raise ArtifactError(f"follower.fgr has {offsets.shape[0] - 1} nodes, nodes.tsv has {nodes.n_nodes}")
    return follower_graph_from_forward(nodes, offsets, targets, timestamps)


def load_interaction_graph(graph_dir: Path, nodes: Optional[NodeTable] = None) -> InteractionGraph:
    """Load `interaction.edges` and map its user ids back to dense indices."""
    nodes = nodes if nodes is not None else load_node_table(graph_dir)
    edges = read_tsv(graph_dir / "interaction.edges", dtype={"src": "uint64", "dst": "uint64", "type": str})
    kinds = {kind.label: int(kind) for kind in ActionType}
    index_of = nodes.index_of
    return InteractionGraph(
        nodes=nodes,
        src=np.array([index_of[int(uid)] for uid in edges["src"].tolist()], dtype=np.int64),
        dst=np.array([index_of[int(uid)] for uid in edges["dst"].tolist()], dtype=np.int64),
        action=np.array([kinds[label] for label in edges["type"].tolist()], dtype=np.int8),
        ts=edges["unix_ts"].to_numpy(dtype=np.int64),
    )


def compute_graph_stats(
    ig: InteractionGraph, fg: FollowerGraph, registry: TrollRegistry, out_dir: Path
) -> Tuple[Dict[str, int], CorenessResult]:
    """
    Compute and persist the topology measures of both graphs.

    Writes degree CCDFs per group for both graphs, the component table and
    size histogram, coreness of the largest component with its per-group
    CCDF and k-shell census, and the group-average table.

    Args:
        ig (InteractionGraph): Interaction multigraph.
        fg (FollowerGraph): Follower graph over the same nodes.
        registry (TrollRegistry): Troll ids.
        out_dir (Path): Target directory.

    Returns:
        Tuple[Dict[str, int], CorenessResult]: Row count per written file and the coreness result.
    """
    written: Dict[str, int] = {}
    for direction in Direction:
        for group in GROUPS:
            name = f"ccdf_{direction.value}_{group}.tsv"
            written[name] = write_tsv(ccdf_frame(degree_ccdf(ig, direction, group)), out_dir / name)
            name = f"follower_ccdf_{direction.value}_{group}.tsv"
            written[name] = write_tsv(ccdf_frame(degree_ccdf(fg, direction, group)), out_dir / name)

    components = connected_components(fg)
    written["components.tsv"] = write_tsv(
        pd.DataFrame({"component_id": np.arange(components.n_components), "size": components.sizes}),
        out_dir / "components.tsv",
    )
    written["component_sizes.tsv"] = write_tsv(
        pd.DataFrame(components.size_histogram(), columns=["size", "n_components"]),
        out_dir / "component_sizes.tsv",
    )

    if components.n_components:
        coreness = kcore_decomposition(fg, np.flatnonzero(components.labels == components.largest))
    else:
        coreness = CorenessResult(node_indices=np.zeros(0, dtype=np.int64), coreness=np.zeros(0, dtype=np.int64))
    core_users = fg.nodes.user_ids[coreness.node_indices]
    core_trolls = fg.nodes.is_troll[coreness.node_indices]
    written["coreness.tsv"] = write_tsv(
        pd.DataFrame({"user_id": core_users, "coreness": coreness.coreness}), out_dir / "coreness.tsv"
    )
    for group in GROUPS:
        name = f"ccdf_coreness_{group}.tsv"
        table = ccdf_table(coreness.coreness[_group_mask(core_trolls, group)])
        written[name] = write_tsv(ccdf_frame(table), out_dir / name)
    written["kshells.tsv"] = write_tsv(kshell_census(coreness.coreness, core_trolls), out_dir / "kshells.tsv")

    averages = graph_averages(ig, fg, coreness, registry)
    written["averages.tsv"] = write_tsv(averages_frame(averages), out_dir / "averages.tsv")
    logger.info(f"Graph statistics written to '{out_dir}'.")
    return written, coreness


def kshell_census(coreness: np.ndarray, is_troll: np.ndarray) -> pd.DataFrame:
    """Number of regular accounts and trolls in each k-shell, innermost shell first."""
    if coreness.size == 0:
        return pd.DataFrame(columns=["k", "n_regular", "n_troll"])
    shells = np.unique(coreness)[::-1]
    return pd.DataFrame({
        "k": shells,
        "n_regular": [int(((coreness == k) & ~is_troll).sum()) for k in shells],
        "n_troll": [int(((coreness == k) & is_troll).sum()) for k in shells],
    })


def graph_averages(
    ig: InteractionGraph, fg: FollowerGraph, coreness: CorenessResult, registry: TrollRegistry
) -> List[Tuple[str, GroupAverages]]:
    """Group means of the degrees of both graphs and of coreness in the largest component."""
    user_ids = ig.nodes.user_ids.tolist()
    core_users = fg.nodes.user_ids[coreness.node_indices].tolist()
    return [
        ("interaction", group_averages(user_ids, ig.in_degree(), registry, Metric.IN_DEGREE)),
        ("interaction", group_averages(user_ids, ig.out_degree(), registry, Metric.OUT_DEGREE)),
        ("follower", group_averages(user_ids, fg.in_degree(), registry, Metric.IN_DEGREE)),
        ("follower", group_averages(user_ids, fg.out_degree(), registry, Metric.OUT_DEGREE)),
        ("largest_component", group_averages(core_users, coreness.coreness, registry, Metric.CORENESS)),
    ]


def registry_from_nodes(nodes: NodeTable) -> TrollRegistry:
    """Troll registry restricted to the accounts of a persisted node table."""
    return TrollRegistry(ids={int(uid) for uid in nodes.user_ids[nodes.is_troll].tolist()})
