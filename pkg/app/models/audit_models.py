from datetime import datetime
from enum import Enum
from fractions import Fraction
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field

SUSPENDED_CODE = 63
DELETED_CODE = 50


class AccountState(str, Enum):
    ACTIVE = "active"
    SUSPENDED = "suspended"
    DELETED = "deleted"
    UNKNOWN = "unknown"

    @classmethod
    def from_error_code(cls, code: Optional[int]) -> "AccountState":
        """
        Map an account-lookup error code to an account state.

        Code 63 means the account is suspended, code 50 that it no longer
        exists, 0 or no code that a profile was returned.
        """
        if code == SUSPENDED_CODE:
            return cls.SUSPENDED
        if code == DELETED_CODE:
            return cls.DELETED
        if code in (None, 0):
            return cls.ACTIVE
        return cls.UNKNOWN


class AccountStatus(BaseModel):
    model_config = ConfigDict(frozen=True)

    user_id: int
    state: AccountState
    checked_at: datetime


class BotScore(BaseModel):
    """Complete-automation probabilities of one account."""

    model_config = ConfigDict(frozen=True)

    user_id: int
    cap_english: float = Field(..., ge=0.0, le=1.0)
    cap_universal: float = Field(..., ge=0.0, le=1.0)

    def is_bot(self, threshold: float = 0.5) -> bool:
        return max(self.cap_english, self.cap_universal) > threshold


class AuditRow(BaseModel):
    rank: int
    user_id: int
    group: str
    state: AccountState
    cap_english: Optional[float] = None
    cap_universal: Optional[float] = None
    bot_flag: bool = False


class AuditSummary(BaseModel):
    """
    Audit of the top-k ranked accounts.

    Fractions are exact rationals over `k`.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    k: int
    rows: List[AuditRow] = Field(default_factory=list)
    n_active: int = 0
    n_suspended: int = 0
    n_deleted: int = 0
    n_unknown: int = 0
    n_bot: int = 0

    def fraction(self, count: int) -> Fraction:
        return Fraction(count, self.k) if self.k else Fraction(0)

    @property
    def suspended_fraction(self) -> Fraction:
        return self.fraction(self.n_suspended)

    @property
    def deleted_fraction(self) -> Fraction:
        return self.fraction(self.n_deleted)

    @property
    def bot_fraction(self) -> Fraction:
        return self.fraction(self.n_bot)
