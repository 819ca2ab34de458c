from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from pydantic import BaseModel, ConfigDict, Field


class ActionType(int, Enum):
    """Interaction kinds recorded as interaction-graph edges."""

    REPLY = 0
    MENTION = 1
    RETWEET = 2

    @property
    def label(self) -> str:
        return self.name.lower()


class Direction(str, Enum):
    IN = "in"
    OUT = "out"


class Metric(str, Enum):
    """Per-account measures that can be averaged per group."""

    IN_DEGREE = "in-degree"
    OUT_DEGREE = "out-degree"
    CORENESS = "coreness"
    SHAPLEY = "shapley"
    INFLUENCE_DEGREE = "influence-degree"
    RANK = "rank"


class NodeTable(BaseModel):
    """
    Dense node indexing shared by both graphs.

    Attributes:
        user_ids (np.ndarray): uint64 user id for each dense index, in first-appearance order.
        is_troll (np.ndarray): bool troll flag for each dense index.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    user_ids: np.ndarray
    is_troll: np.ndarray
    index_of: Dict[int, int] = Field(default_factory=dict)

    def model_post_init(self, __context) -> None:
        if not self.index_of:
            self.index_of = {int(uid): i for i, uid in enumerate(self.user_ids.tolist())}

    @property
    def n_nodes(self) -> int:
        return int(self.user_ids.shape[0])


class InteractionGraph(BaseModel):
    """
    Directed multigraph with one edge per reply, mention or retweet action.

    Edge arrays are parallel: edge `k` goes from `src[k]` to `dst[k]` with
    kind `action[k]` at second `ts[k]`.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    nodes: NodeTable
    src: np.ndarray
    dst: np.ndarray
    action: np.ndarray
    ts: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.nodes.n_nodes

    @property
    def n_edges(self) -> int:
        return int(self.src.shape[0])

    def in_degree(self) -> np.ndarray:
        return np.bincount(self.dst, minlength=self.n_nodes).astype(np.int64)

    def out_degree(self) -> np.ndarray:
        return np.bincount(self.src, minlength=self.n_nodes).astype(np.int64)


class FollowerGraph(BaseModel):
    """
    Simple digraph in compressed adjacency form.

    Edge (i, j) means "i follows j"; information flows from j to i. The
    forward arrays list, for each node i, the accounts i follows
    (`fwd_targets[fwd_offsets[i]:fwd_offsets[i + 1]]`, ascending) together
    with the earliest interaction second for each pair. The reverse arrays
    list the followers of each node and map back into the forward edge ids.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    nodes: NodeTable
    fwd_offsets: np.ndarray
    fwd_targets: np.ndarray
    fwd_ts: np.ndarray
    rev_offsets: np.ndarray
    rev_sources: np.ndarray
    rev_edge_ids: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.nodes.n_nodes

    @property
    def n_edges(self) -> int:
        return int(self.fwd_targets.shape[0])

    def out_degree(self) -> np.ndarray:
        return np.diff(self.fwd_offsets).astype(np.int64)

    def in_degree(self) -> np.ndarray:
        return np.diff(self.rev_offsets).astype(np.int64)

    def edge_sources(self) -> np.ndarray:
        """Source index of every forward edge, aligned with `fwd_targets`."""
        return np.repeat(np.arange(self.n_nodes, dtype=np.int64), self.out_degree())

    def follows(self, index: int) -> Tuple[np.ndarray, np.ndarray]:
        """Accounts followed by node `index` and the follow timestamps."""
        start, end = self.fwd_offsets[index], self.fwd_offsets[index + 1]
        return self.fwd_targets[start:end], self.fwd_ts[start:end]


class CcdfTable(BaseModel):
    """
    Empirical complementary cumulative distribution over non-zero values.

    Attributes:
        rows (List[Tuple[float, float]]): (value, fraction of entities with value >= it), ascending values.
    """

    rows: List[Tuple[float, float]] = Field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)


class ComponentResult(BaseModel):
    """Connected components of the undirected follower-graph view."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    labels: np.ndarray
    sizes: np.ndarray

    @property
    def n_components(self) -> int:
        return int(self.sizes.shape[0])

    @property
    def largest(self) -> Optional[int]:
        """Component id of the largest component (ids are ordered by descending size)."""
        return 0 if self.n_components else None

    def size_histogram(self) -> List[Tuple[int, int]]:
        """(component size, number of components of that size), ascending sizes."""
        values, counts = np.unique(self.sizes, return_counts=True)
        return [(int(v), int(c)) for v, c in zip(values.tolist(), counts.tolist())]


class CorenessResult(BaseModel):
    """
    Coreness of the nodes of one undirected subgraph.

    Attributes:
        node_indices (np.ndarray): Dense node indices of the subgraph, ascending.
        coreness (np.ndarray): Coreness aligned with `node_indices`.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    node_indices: np.ndarray
    coreness: np.ndarray

    @property
    def core_number(self) -> int:
        return int(self.coreness.max()) if self.coreness.size else 0


class GroupAverages(BaseModel):
    """Arithmetic means per group; None marks a group absent from the data."""

    metric: str
    regular: Optional[float] = None
    troll: Optional[float] = None
