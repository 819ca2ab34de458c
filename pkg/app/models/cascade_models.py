from typing import Dict, List, Tuple

import numpy as np

from pydantic import BaseModel, ConfigDict


class FlowGraph(BaseModel):
    """
    Possible-influence digraph of one cascade.

    Local node 0 is the root; the remaining nodes are the distinct retweeters
    ordered by first retweet time (ties by user id). `times[k]` is the first
    retweet second of local node `k` (for the root, its post time). Edges are
    parallel local-index arrays sorted by (src, dst).
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    cascade_key_hash: str
    user_ids: List[int]
    times: List[int]
    src: np.ndarray
    dst: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.user_ids)

    @property
    def n_edges(self) -> int:
        return int(self.src.shape[0])

    def in_degree(self) -> np.ndarray:
        return np.bincount(self.dst, minlength=self.n_nodes).astype(np.int64)


class CascadeTree(BaseModel):
    """
    Time-inferred spanning tree of a cascade.

    `parents[k]` is the local index of node k's parent, -1 for the root
    (node 0). Node order and `times` are those of the flow graph it came from.
    """

    cascade_key_hash: str
    user_ids: List[int]
    times: List[int]
    parents: List[int]

    @property
    def n_nodes(self) -> int:
        return len(self.user_ids)

    @property
    def root_user_id(self) -> int:
        return self.user_ids[0]

    def children(self) -> List[List[int]]:
        """Child local indices of every node, ascending."""
        kids: List[List[int]] = [[] for _ in self.user_ids]
        for child, parent in enumerate(self.parents):
            if parent >= 0:
                kids[parent].append(child)
        return kids

    def edges(self) -> List[Tuple[int, int]]:
        """(child user id, parent user id) for every non-root node."""
        return [
            (self.user_ids[child], self.user_ids[parent])
            for child, parent in enumerate(self.parents)
            if parent >= 0
        ]


class ViralityScore(BaseModel):
    cascade_key_hash: str
    n_nodes: int
    virality: float
    root_group: str


class InfluenceScore(BaseModel):
    """Per-cascade child counts of one user and their global total."""

    user_id: int
    per_cascade: Dict[str, int]
    total: int


class CascadeAnalysis(BaseModel):
    """Everything computed for one cascade by the analysis stage."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    cascade_key_hash: str
    urls: List[str]
    root_group: str
    tree: CascadeTree
    virality: float
    influence: Dict[int, int]
    shapley_users: List[int]
    shapley_values: np.ndarray


class CascadeCount(BaseModel):
    """Size of one cascade: distinct retweeters and total retweets."""

    cascade_key_hash: str
    root_user_id: int
    root_group: str
    n_distinct: int
    n_events: int
