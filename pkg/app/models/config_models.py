from enum import Enum
from pathlib import Path
from typing import Optional

import logging

from dotenv import load_dotenv
from pydantic import Field, SecretStr, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

logger = logging.getLogger(__name__)

load_dotenv()

ENV_PREFIX = "TROLLRANK_"


class UrlFilterMode(str, Enum):
    NONE = "none"
    TROLL_URLS = "troll-urls"


class PipelineConfig(BaseSettings):
    """
    Settings of one end-to-end pipeline run.

    Values not passed explicitly are read from `TROLLRANK_*` environment
    variables or a `.env` file.

    Attributes:
        input_path (Path): JSON Lines corpus.
        trolls_path (Path, optional): Troll registry; without it every account is regular.
        min_retweeters (int): Minimum distinct retweeters per cascade. Defaults to 100.
        url_filter (UrlFilterMode): Restrict the global Shapley sum to URLs-troll cascades.
        workers (int): Worker processes for parsing and per-cascade analysis.
        output_dir (Path): Artifact directory.
        seed (int): Seed for synthetic-data commands.
        top_k (int): Size of the top-k report table.
    """

    model_config = SettingsConfigDict(env_prefix=ENV_PREFIX, env_file=".env", extra="ignore")

    input_path: Path
    trolls_path: Optional[Path] = None
    min_retweeters: int = Field(100, ge=1)
    url_filter: UrlFilterMode = UrlFilterMode.NONE
    workers: int = Field(1, ge=1)
    output_dir: Path = Path("out")
    seed: int = 0
    top_k: int = Field(10, ge=0)

    @field_validator("output_dir")
    @classmethod
    def output_dir_creatable(cls, value: Path) -> Path:
        try:
            value.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ValueError(f"output directory '{value}' cannot be created: {e}") from e
        return value


class AuditSettings(BaseSettings):
    """
    Endpoints, credentials and client limits for the account audit.

    The API token is read from `TROLLRANK_API_TOKEN` and is never logged.
    """

    model_config = SettingsConfigDict(env_prefix=ENV_PREFIX, env_file=".env", extra="ignore")

    status_endpoint: str = "http://127.0.0.1:8080/statuses"
    bot_endpoint: str = "http://127.0.0.1:8080/botscores"
    api_token: Optional[SecretStr] = None
    timeout_seconds: float = Field(10.0, gt=0)
    max_retries: int = Field(5, ge=1)
    backoff_initial: float = Field(0.5, ge=0)
    backoff_max: float = Field(8.0, ge=0)
    max_concurrency: int = Field(4, ge=1)
    requests_per_second: float = Field(10.0, gt=0)
    batch_size: int = Field(100, ge=1)
    cache_dir: Optional[Path] = None
    bot_threshold: float = Field(0.5, ge=0.0, le=1.0)
