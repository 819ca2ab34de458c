from typing import Dict, List, Optional, Set

import numpy as np

from pydantic import BaseModel, ConfigDict, Field


class CascadeShapley(BaseModel):
    """Shapley values of the members of one flow graph."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    cascade_key_hash: str
    urls: List[str]
    user_ids: List[int]
    values: np.ndarray


class ShapleyScore(BaseModel):
    """
    Shapley value of one account.

    Attributes:
        user_id (int): The account.
        per_graph (Dict[str, float]): Value in each flow graph the account belongs to.
        global_value (float): Sum of `per_graph` over the graphs selected by the filter.
    """

    user_id: int
    per_graph: Dict[str, float] = Field(default_factory=dict)
    global_value: float = 0.0


class RankedUser(BaseModel):
    rank: int
    user_id: int
    score: float
    group: str


class Ranking(BaseModel):
    """
    Dense 1-based ranking, scores non-increasing, ties by ascending user id.
    """

    entries: List[RankedUser] = Field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def top(self, k: int) -> List[RankedUser]:
        return self.entries[:k]

    def of_group(self, group: str) -> List[RankedUser]:
        return [entry for entry in self.entries if entry.group == group]


class UrlFilter(BaseModel):
    """Anchor URL set; a cascade matches when its URLs intersect it."""

    urls: Set[str] = Field(default_factory=set)

    def matches(self, cascade_urls: List[str]) -> bool:
        return not self.urls.isdisjoint(cascade_urls)


class TopKRow(BaseModel):
    shapley_rank: int
    user_id: int
    group: str
    shapley: float
    influence_rank: Optional[int] = None
    influence_degree: int = 0
    coreness: Optional[int] = None
