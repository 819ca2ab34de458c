from pathlib import Path
from typing import Tuple

import logging

import numpy as np

from app.utils.exceptions import ArtifactError

logger = logging.getLogger(__name__)

MAGIC = b"FGR1"
INT64 = np.dtype("<i8")


def write_fgr(file_path: Path, offsets: np.ndarray, targets: np.ndarray, timestamps: np.ndarray) -> int:
    """
    Write forward adjacency in the `FGR1` binary layout.

    Layout: the magic bytes `FGR1`, node count and edge count as
    little-endian int64, then `n + 1` offsets, `m` targets and `m`
    timestamps, all little-endian int64.

    Args:
        file_path (Path): Destination file.
        offsets (np.ndarray): CSR offsets, length n + 1.
        targets (np.ndarray): CSR targets, length m.
        timestamps (np.ndarray): Per-edge seconds, length m.

    Returns:
        int: The number of edges written.
    """
    n_nodes = int(offsets.shape[0]) - 1
    n_edges = int(targets.shape[0])
    if timestamps.shape[0] != n_edges:
        raise ValueError("targets and timestamps must have the same length")
    file_path.parent.mkdir(parents=True, exist_ok=True)
    with open(file_path, "wb") as file:
        file.write(MAGIC)
        file.write(np.array([n_nodes, n_edges], dtype=INT64).tobytes())
        file.write(offsets.astype(INT64, copy=False).tobytes())
        file.write(targets.astype(INT64, copy=False).tobytes())
        file.write(timestamps.astype(INT64, copy=False).tobytes())
    logger.debug(f"Wrote FGR1 graph with {n_nodes} nodes and {n_edges} edges to '{file_path}'.")
    return n_edges


def read_fgr(file_path: Path) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Read a file written by `write_fgr`.

    Returns:
        Tuple[np.ndarray, np.ndarray, np.ndarray]: offsets, targets and timestamps as int64 arrays.

    Raises:
        ArtifactError: If the file is missing, has the wrong magic bytes or is truncated.
    """
    try:
        payload = Path(file_path).read_bytes()
    except OSError as e:
        logger.error(f"Cannot read follower graph '{file_path}': {e}")
        raise ArtifactError(f"Cannot read follower graph '{file_path}': {e}") from e

    if payload[:4] != MAGIC:
        logger.error(f"'{file_path}' is not an FGR1 file.")
        raise ArtifactError(f"'{file_path}' is not an FGR1 file")
    if len(payload) < 20:
        raise ArtifactError(f"'{file_path}' is truncated")

    n_nodes, n_edges = np.frombuffer(payload, dtype=INT64, count=2, offset=4).tolist()
    expected = 20 + 8 * ((n_nodes + 1) + 2 * n_edges)
    if len(payload) != expected:
        logger.error(f"'{file_path}' has {len(payload)} bytes, expected {expected}.")
        raise ArtifactError(f"'{file_path}' has {len(payload)} bytes, expected {expected}")

    body = np.frombuffer(payload, dtype=INT64, offset=20).astype(np.int64)
    offsets = body[: n_nodes + 1]
    targets = body[n_nodes + 1: n_nodes + 1 + n_edges]
    timestamps = body[n_nodes + 1 + n_edges:]
    return offsets, targets, timestamps
