from pathlib import Path
from typing import Callable, Dict, List, Set, Tuple, TypeVar

import logging

import pandas as pd

from app.models.config_models import PipelineConfig, UrlFilterMode
from app.models.graph_models import Metric
from app.models.tweet_models import TrollRegistry
from app.services.cascade_service import analyze_cascades, global_influence, write_cascade_outputs
from app.services.graph_service import (
    averages_frame,
    build_interaction_graph,
    collapse_to_follower_graph,
    compute_graph_stats,
    graph_averages,
    group_averages,
    write_graphs,
)
from app.services.ingest_service import group_cascades, load_troll_registry, read_corpus, write_cascades
from app.services.shapley_service import (
    cascade_shapley,
    global_shapley,
    rank,
    shapley_averages,
    top_k_table,
    topk_frame,
    troll_url_filter,
    write_shapley_outputs,
)
from app.utils.dataframe_utils import count_tsv_rows, file_sha256, write_tsv
from app.utils.exceptions import StageFailure, TrollRankError

logger = logging.getLogger(__name__)

MANIFEST = "manifest.tsv"
MANIFEST_COLUMNS = ["artifact", "rows", "sha256", "status"]

T = TypeVar("T")


class _Manifest:
    """Row counts of the artifacts written so far, per stage."""

    def __init__(self, root: Path):
        self.root = root
        self.rows: Dict[str, int] = {}
        self.stale: Set[str] = set()

    def record(self, stage: str, written: Dict[str, int]) -> None:
        for name, rows in written.items():
            self.rows[f"{stage}/{name}"] = rows

    def mark_stale(self, stage: str) -> None:
        stage_dir = self.root / stage
        if not stage_dir.exists():
            return
        for path in sorted(stage_dir.iterdir()):
            name = f"{stage}/{path.name}"
            self.stale.add(name)
            self.rows.setdefault(name, -1 if path.suffix == ".fgr" else count_tsv_rows(path))

    def write(self) -> Path:
        entries: List[Tuple[str, int, str, str]] = []
        for name in sorted(self.rows):
            path = self.root / name
            if not path.exists():
                continue
            status = "stale" if name in self.stale else "ok"
            entries.append((name, self.rows[name], file_sha256(path), status))
        write_tsv(pd.DataFrame(entries, columns=MANIFEST_COLUMNS), self.root / MANIFEST)
        logger.info(f"Manifest lists {len(entries)} artifacts.")
        return self.root / MANIFEST


def _run_stage(name: str, manifest: _Manifest, body: Callable[[Path], T]) -> T:
    stage_dir = manifest.root / name
    stage_dir.mkdir(parents=True, exist_ok=True)
    logger.info(f"Stage '{name}' started.")
    try:
        return body(stage_dir)
    except TrollRankError as e:
        if e.stage is None:
            e.stage = name
        logger.error(f"Stage '{name}' failed: {e}")
        manifest.mark_stale(name)
        manifest.write()
        raise
    except Exception as e:
        logger.error(f"Stage '{name}' failed: {type(e).__name__}: {e}")
        manifest.mark_stale(name)
        manifest.write()
        raise StageFailure(name, e) from e


def run_pipeline(cfg: PipelineConfig) -> Path:
    """
    Run ingest, graph, statistics, cascade, Shapley and report stages in order.

    Each stage writes into its own directory under `cfg.output_dir`. The
    root `manifest.tsv` lists every artifact with its row count, SHA-256 and
    status; it carries no timestamps, so equal inputs give an identical
    manifest for any worker count. When a stage fails, its outputs are
    listed as stale and the error propagates.

    Args:
        cfg (PipelineConfig): Run settings.

    Returns:
        Path: The manifest file.

    Raises:
        DataError: If the corpus, registry or an artifact cannot be used.
        StageFailure: If a stage fails for any other reason.
    """
    root = cfg.output_dir
    manifest = _Manifest(root)
    logger.info(f"Pipeline run on '{cfg.input_path}' into '{root}' with {cfg.workers} worker(s).")

    def ingest(out: Path):
        registry = load_troll_registry(cfg.trolls_path) if cfg.trolls_path else TrollRegistry()
        corpus = read_corpus(cfg.input_path, cfg.workers)
        cascades = group_cascades(corpus.records, cfg.min_retweeters)
        manifest.record("ingest", write_cascades(cascades, out))
        if not cascades:
            logger.warning("No cascade reaches the retweeter threshold; cascade stages will be empty.")
        return registry, corpus, cascades

    registry, corpus, cascades = _run_stage("ingest", manifest, ingest)

    def graph(out: Path):
        ig = build_interaction_graph(corpus.records, registry)
        fg = collapse_to_follower_graph(ig)
        manifest.record("graph", write_graphs(ig, fg, out))
        return ig, fg

    ig, fg = _run_stage("graph", manifest, graph)

    def stats(out: Path):
        written, coreness = compute_graph_stats(ig, fg, registry, out)
        manifest.record("stats", written)
        return coreness

    coreness = _run_stage("stats", manifest, stats)

    def cascade(out: Path):
        analyses = analyze_cascades(cascades, fg, registry, cfg.workers)
        manifest.record("cascade", write_cascade_outputs(analyses, cascades, registry, out))
        return analyses

    analyses = _run_stage("cascade", manifest, cascade)

    def shapley(out: Path):
        url_filter = troll_url_filter(cascades, registry) if cfg.url_filter == UrlFilterMode.TROLL_URLS else None
        scores = global_shapley([cascade_shapley(a) for a in analyses], url_filter)
        ranking = rank({uid: score.global_value for uid, score in scores.items()}, registry)
        influence = global_influence(a.tree for a in analyses)
        influence_ranking = rank({uid: score.total for uid, score in influence.items()}, registry)
        manifest.record("shapley", write_shapley_outputs(ranking, influence_ranking, registry, out))
        return ranking, influence_ranking

    ranking, influence_ranking = _run_stage("shapley", manifest, shapley)

    def report(out: Path):
        influence_users = [entry.user_id for entry in influence_ranking.entries]
        influence_values = [entry.score for entry in influence_ranking.entries]
        shapley_value, shapley_rank = shapley_averages(ranking, registry)
        influence_degree = group_averages(influence_users, influence_values, registry, Metric.INFLUENCE_DEGREE)
        averages = graph_averages(ig, fg, coreness, registry)
        averages += [shapley_value, ("cascades", influence_degree), shapley_rank]

        core_of = dict(zip(fg.nodes.user_ids[coreness.node_indices].tolist(), coreness.coreness.tolist()))
        rows = top_k_table(ranking, influence_ranking, core_of, cfg.top_k)
        manifest.record("report", {
            "averages.tsv": write_tsv(averages_frame(averages), out / "averages.tsv"),
            "topk.tsv": write_tsv(topk_frame(rows), out / "topk.tsv"),
        })

    _run_stage("report", manifest, report)
    path = manifest.write()
    logger.info(f"Pipeline finished; manifest at '{path}'.")
    return path
