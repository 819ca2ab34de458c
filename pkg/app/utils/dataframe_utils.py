from pathlib import Path
from typing import Dict, List, Optional, Sequence, TypeVar, Union

import hashlib
import logging
import pandas as pd

from app.utils.exceptions import ArtifactError

logger = logging.getLogger(__name__)

T = TypeVar("T")


def write_tsv(df: pd.DataFrame, file_path: Path) -> int:
    """
    Write a DataFrame as a tab-separated artifact with a header row.

    Column order is taken from the DataFrame as given, so callers fix the
    order when they build the frame.

    Args:
        df (pd.DataFrame): The rows to persist.
        file_path (Path): Destination file; parent directories are created.

    Returns:
        int: The number of data rows written (header excluded).

    Raises:
        ArtifactError: If the file cannot be written.
    """
    try:
        file_path.parent.mkdir(parents=True, exist_ok=True)
        df.to_csv(file_path, sep="\t", index=False, lineterminator="\n")
        logger.debug(f"Wrote {len(df)} rows to '{file_path}'.")
        return len(df)
    except OSError as e:
        logger.error(f"Failed to write '{file_path}': {e}")
        raise ArtifactError(f"Failed to write '{file_path}': {e}") from e


def read_tsv(file_path: Path, dtype: Optional[Union[str, Dict[str, str]]] = None) -> pd.DataFrame:
    """
    Read a tab-separated artifact written by `write_tsv`.

    Empty strings are kept as empty strings rather than NaN so optional
    columns survive the round trip.

    Args:
        file_path (Path): The artifact to read.
        dtype (str | Dict[str, str], optional): Column dtypes to enforce.

    Returns:
        pd.DataFrame: The artifact rows.

    Raises:
        ArtifactError: If the file is missing or cannot be parsed.
    """
    try:
        df = pd.read_csv(file_path, sep="\t", dtype=dtype, keep_default_na=False)
        logger.debug(f"Read {len(df)} rows from '{file_path}'.")
        return df
    except FileNotFoundError as e:
        logger.error(f"Artifact not found: {file_path}")
        raise ArtifactError(f"Artifact not found: {file_path}") from e
    except (pd.errors.ParserError, ValueError) as e:
        logger.error(f"Error parsing artifact: {file_path}")
        raise ArtifactError(f"Error parsing artifact '{file_path}': {e}") from e


def count_tsv_rows(file_path: Path) -> int:
    """Number of data rows in a TSV artifact (header excluded)."""
    with open(file_path, "rb") as file:
        lines = sum(1 for _ in file)
    return max(lines - 1, 0)


def file_sha256(file_path: Path) -> str:
    """Hex SHA-256 digest of a file's bytes."""
    digest = hashlib.sha256()
    with open(file_path, "rb") as file:
        for block in iter(lambda: file.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def chunk_sequence(items: Sequence[T], chunk_size: int = 100) -> List[Sequence[T]]:
    """
    Split a sequence into consecutive chunks.

    Args:
        items (Sequence[T]): The sequence to be split.
        chunk_size (int, optional): Number of items per chunk. Defaults to 100.

    Returns:
        List[Sequence[T]]: Chunks in their original order; the last one may be shorter.

    Raises:
        ValueError: If `chunk_size` is not a positive integer.
    """
    if chunk_size <= 0:
        logger.error("chunk_size must be a positive integer.")
        raise ValueError("chunk_size must be a positive integer.")

    chunks = [items[i:i + chunk_size] for i in range(0, len(items), chunk_size)]
    logger.debug(f"Split {len(items)} items into {len(chunks)} chunks of size {chunk_size}.")
    return chunks
