from enum import Enum
from typing import Optional, Tuple

from pydantic import BaseModel, Field


class CascadeShape(str, Enum):
    """Planted tree shapes; `random` attaches each retweeter to a uniformly chosen earlier node."""

    STAR = "star"
    CHAIN = "chain"
    RANDOM = "random"


class HubPlan(BaseModel):
    """
    Planted high-influence accounts.

    Each hub roots `cascades_per_hub` star cascades with `fanout` retweeters,
    which puts the hubs at the top of the Shapley ranking.

    Attributes:
        hub_count (int): Number of hubs. Defaults to 1.
        cascades_per_hub (int): Star cascades rooted at each hub. Defaults to 2.
        fanout (int, optional): Retweeters per hub cascade; twice the regular size when omitted.
    """

    hub_count: int = Field(1, ge=0)
    cascades_per_hub: int = Field(2, ge=1)
    fanout: Optional[int] = Field(None, ge=1)


class SyntheticOptions(BaseModel):
    """
    Shape and noise settings of a synthetic corpus.

    Attributes:
        retweeters_per_cascade (int): Distinct retweeters of a regular cascade.
        shapes (Tuple[CascadeShape, ...]): Shapes assigned to regular cascades in turn.
        noise (bool): Add duplicate retweets, quote-style near-duplicates,
            duplicate root posts, "RT"-prefixed non-retweets and background replies.
    """

    retweeters_per_cascade: int = Field(100, ge=1)
    shapes: Tuple[CascadeShape, ...] = (CascadeShape.STAR, CascadeShape.CHAIN, CascadeShape.RANDOM)
    noise: bool = True
