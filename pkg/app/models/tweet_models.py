from datetime import datetime, timezone
from typing import Dict, List, Optional, Set, Tuple
from urllib.parse import urlsplit, urlunsplit

import hashlib

from pydantic import BaseModel, ConfigDict, Field, field_validator

UINT64_MAX = (1 << 64) - 1
EARLIEST_TIMESTAMP = datetime(2006, 1, 1, tzinfo=timezone.utc)

TROLL = "troll"
REGULAR = "regular"


def normalize_url(url: str) -> str:
    """
    Normalize a URL for use as a cascade anchor.

    The scheme and host are lowercased and one trailing slash is removed
    from the path. Query strings and fragments are kept as they are.

    Args:
        url (str): The raw URL.

    Returns:
        str: The normalized URL.
    """
    url = url.strip()
    parts = urlsplit(url)
    if not parts.scheme or not parts.netloc:
        return url.rstrip("/") if url.endswith("/") and len(url) > 1 else url
    path = parts.path[:-1] if parts.path.endswith("/") else parts.path
    return urlunsplit((parts.scheme.lower(), parts.netloc.lower(), path, parts.query, parts.fragment))


def collapse_whitespace(text: str) -> str:
    """Replace every run of whitespace with one space and trim the ends."""
    return " ".join(text.split())


def _check_uint64(value: int) -> int:
    if value < 0 or value > UINT64_MAX:
        raise ValueError(f"identifier {value} is outside the unsigned 64-bit range")
    return value


class Mention(BaseModel):
    """One entry of a tweet's mentions entity."""

    model_config = ConfigDict(frozen=True)

    user_id: int
    screen_name: str = Field(..., min_length=1)

    @field_validator("user_id")
    @classmethod
    def check_user_id(cls, value: int) -> int:
        return _check_uint64(value)


class TweetRecord(BaseModel):
    """
    One ingested post.

    Attributes:
        tweet_id (int): Unique id of the post within the corpus.
        user_id (int): Author id.
        screen_name (str): Author screen name.
        created_at (datetime): UTC timestamp truncated to the second.
        text (str): Raw post text.
        mentions (List[Mention]): Mentioned accounts, in entity order.
        urls (List[str]): Normalized embedded URLs.
        in_reply_to_user_id (int, optional): Author of the post replied to.
    """

    model_config = ConfigDict(frozen=True)

    tweet_id: int
    user_id: int
    screen_name: str
    created_at: datetime
    text: str
    mentions: List[Mention] = Field(default_factory=list)
    urls: List[str] = Field(default_factory=list)
    in_reply_to_user_id: Optional[int] = None

    @field_validator("tweet_id", "user_id")
    @classmethod
    def check_ids(cls, value: int) -> int:
        return _check_uint64(value)

    @field_validator("in_reply_to_user_id")
    @classmethod
    def check_reply_id(cls, value: Optional[int]) -> Optional[int]:
        return None if value is None else _check_uint64(value)

    @field_validator("created_at")
    @classmethod
    def utc_seconds(cls, value: datetime) -> datetime:
        if value.tzinfo is None:
            value = value.replace(tzinfo=timezone.utc)
        value = value.astimezone(timezone.utc).replace(microsecond=0)
        if value < EARLIEST_TIMESTAMP:
            raise ValueError(f"created_at {value.isoformat()} precedes 2006-01-01")
        return value

    @field_validator("urls")
    @classmethod
    def normalize_urls(cls, value: List[str]) -> List[str]:
        return [normalize_url(url) for url in value if url.strip()]

    @property
    def unix_ts(self) -> int:
        """Creation time as integer seconds since the epoch."""
        return int(self.created_at.timestamp())


class RetweetInfo(BaseModel):
    """
    A record recognised as a retweet of another account's post.

    Attributes:
        tweet_id (int): Id of the retweet record itself.
        retweeter_id (int): Author of the retweet.
        root_user_id (int): Author of the original post, resolved from mentions.
        root_screen_name (str): Screen name taken from the "RT @name:" prefix.
        created_at (datetime): Time of the retweet.
        normalized_text (str): Text with the prefix stripped and whitespace collapsed.
        urls (List[str]): URLs embedded in the retweet.
    """

    model_config = ConfigDict(frozen=True)

    tweet_id: int
    retweeter_id: int
    root_user_id: int
    root_screen_name: str
    created_at: datetime
    normalized_text: str
    urls: List[str]

    @property
    def unix_ts(self) -> int:
        return int(self.created_at.timestamp())


class Cascade(BaseModel):
    """
    A root post together with its recovered retweets.

    `events` holds (retweeter_id, unix_ts) pairs sorted by time, ties broken
    by retweeter id. A retweeter who retweeted several times appears once
    per retweet.
    """

    cascade_key: Tuple[str, int]
    root_user_id: int
    root_tweet: Optional[TweetRecord] = None
    events: List[Tuple[int, int]]
    urls: List[str]

    @property
    def key_hash(self) -> str:
        """Stable 16-hex-digit digest of the cascade key."""
        text, root = self.cascade_key
        return hashlib.sha1(f"{root}\x1f{text}".encode("utf-8")).hexdigest()[:16]

    @property
    def n_events(self) -> int:
        return len(self.events)

    @property
    def retweeters(self) -> List[int]:
        """Distinct retweeters in order of their first retweet."""
        seen: Set[int] = set()
        ordered = []
        for retweeter, _ in self.events:
            if retweeter not in seen:
                seen.add(retweeter)
                ordered.append(retweeter)
        return ordered

    @property
    def n_distinct(self) -> int:
        return len({retweeter for retweeter, _ in self.events if retweeter != self.root_user_id})

    @property
    def root_unix_ts(self) -> Optional[int]:
        return None if self.root_tweet is None else self.root_tweet.unix_ts


class TrollRegistry(BaseModel):
    """
    Ground-truth troll accounts.

    Every account that is not in `ids` is a regular account.
    """

    ids: Set[int] = Field(default_factory=set)
    labels: Dict[int, str] = Field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, user_id: object) -> bool:
        return user_id in self.ids

    def is_troll(self, user_id: int) -> bool:
        return int(user_id) in self.ids

    def group_of(self, user_id: int) -> str:
        return TROLL if int(user_id) in self.ids else REGULAR
