from typing import Any, Dict, List, Optional, Sequence

import logging
import threading
import time

import httpx
from tenacity import Retrying, retry_if_exception, stop_after_attempt, wait_exponential

from app.models.config_models import AuditSettings

logger = logging.getLogger(__name__)

RETRYABLE_STATUS_CODES = {429, 500, 502, 503, 504}


def is_retryable(exc: BaseException) -> bool:
    """Transport failures and throttling or server-side responses are retried."""
    if isinstance(exc, httpx.HTTPStatusError):
        return exc.response.status_code in RETRYABLE_STATUS_CODES
    return isinstance(exc, httpx.TransportError)


class RateLimiter:
    """Spaces calls at least `1 / per_second` seconds apart across threads."""

    def __init__(self, per_second: float):
        self.interval = 1.0 / per_second
        self._lock = threading.Lock()
        self._next = 0.0

    def wait(self) -> None:
        with self._lock:
            now = time.monotonic()
            slot = max(now, self._next)
            self._next = slot + self.interval
        if slot > now:
            time.sleep(slot - now)


class AccountAuditClient:
    """
    HTTP client for the account-status and bot-score services.

    Both endpoints take a POST body `{"user_ids": [...]}` and answer with a
    JSON array holding one object per requested id. Requests are retried with
    exponential backoff on transport errors and on 429/5xx responses, and
    each endpoint is rate limited separately. The API token, when set, is
    sent as a bearer token and never logged.

    Args:
        settings (AuditSettings): Endpoints, limits and credentials.
        transport (httpx.BaseTransport, optional): Transport override, used by tests.
    """

    def __init__(self, settings: AuditSettings, transport: Optional[httpx.BaseTransport] = None):
        self.settings = settings
        headers = {"Accept": "application/json"}
        if settings.api_token is not None:
            headers["Authorization"] = f"Bearer {settings.api_token.get_secret_value()}"
        self._client = httpx.Client(timeout=settings.timeout_seconds, headers=headers, transport=transport)
        self._limiters = {
            settings.status_endpoint: RateLimiter(settings.requests_per_second),
            settings.bot_endpoint: RateLimiter(settings.requests_per_second),
        }

    def __enter__(self) -> "AccountAuditClient":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def close(self) -> None:
        self._client.close()

    def _retrying(self) -> Retrying:
        return Retrying(
            stop=stop_after_attempt(self.settings.max_retries),
            wait=wait_exponential(multiplier=self.settings.backoff_initial, max=self.settings.backoff_max),
            retry=retry_if_exception(is_retryable),
            reraise=True,
        )

    def _post(self, url: str, user_ids: Sequence[int]) -> List[Dict[str, Any]]:
        limiter = self._limiters[url]
        for attempt in self._retrying():
            with attempt:
                limiter.wait()
                number = attempt.retry_state.attempt_number
                logger.debug(f"POST {url} for {len(user_ids)} ids (attempt {number}).")
                response = self._client.post(url, json={"user_ids": [int(uid) for uid in user_ids]})
                response.raise_for_status()
                payload = response.json()
        if not isinstance(payload, list):
            raise ValueError(f"Expected a JSON array from {url}, got {type(payload).__name__}")
        return payload

    def lookup_statuses(self, user_ids: Sequence[int]) -> List[Dict[str, Any]]:
        """Raw status objects (`user_id`, `error_code`) for a batch of ids."""
        return self._post(self.settings.status_endpoint, user_ids)

    def lookup_bot_scores(self, user_ids: Sequence[int]) -> List[Dict[str, Any]]:
        """Raw score objects (`user_id`, `cap_english`, `cap_universal`) for a batch of ids."""
        return self._post(self.settings.bot_endpoint, user_ids)
