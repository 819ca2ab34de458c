from contextlib import contextmanager
from pathlib import Path
from typing import Dict, Iterator, Optional

import logging

import typer
from pydantic import ValidationError

from app.models.config_models import AuditSettings, PipelineConfig, UrlFilterMode
from app.models.synthetic_models import HubPlan, SyntheticOptions
from app.models.tweet_models import TrollRegistry
from app.services.audit_service import (
    audit_candidates,
    audit_report,
    fetch_bot_scores,
    fetch_statuses,
    load_ranking,
    write_audit_outputs,
)
from app.services.cascade_service import analyze_cascades, global_influence, write_cascade_outputs
from app.services.graph_service import (
    build_interaction_graph,
    collapse_to_follower_graph,
    compute_graph_stats,
    load_follower_graph,
    load_interaction_graph,
    load_node_table,
    registry_from_nodes,
    write_graphs,
)
from app.services.ingest_service import (
    DEFAULT_MIN_RETWEETERS,
    group_cascades,
    load_cascades,
    load_troll_registry,
    read_corpus,
    write_cascades,
)
from app.services.pipeline_service import run_pipeline
from app.services.shapley_service import (
    cascade_shapley,
    global_shapley,
    rank,
    troll_url_filter,
    write_shapley_outputs,
)
from app.services.synthetic_service import gen_synthetic
from app.utils.exceptions import ConfigError, TrollRankError
from app.utils.logging_helper import setup_logging

logger = logging.getLogger(__name__)

app = typer.Typer(name="trollrank", help="Retweet-cascade influence analytics for troll accounts.", no_args_is_help=True)
graph_app = typer.Typer(help="Build the interaction and follower graphs and their statistics.")
cascade_app = typer.Typer(help="Flow graphs, cascade trees, virality and influence-degree.")
shapley_app = typer.Typer(help="Shapley-value ranking of accounts.")
pipeline_app = typer.Typer(help="End-to-end pipeline.")
synth_app = typer.Typer(help="Synthetic corpora with planted cascades.")
app.add_typer(graph_app, name="graph")
app.add_typer(cascade_app, name="cascade")
app.add_typer(shapley_app, name="shapley")
app.add_typer(pipeline_app, name="pipeline")
app.add_typer(synth_app, name="synth")

URL_FILTER_ALIASES = {
    "none": UrlFilterMode.NONE,
    "troll": UrlFilterMode.TROLL_URLS,
    "troll-urls": UrlFilterMode.TROLL_URLS,
}


@contextmanager
def cli_errors() -> Iterator[None]:
    """Translate failures into the documented exit codes with a one-line cause."""
    try:
        yield
    except ValidationError as e:
        typer.echo(f"error: invalid configuration: {e.errors()[0]['msg']}", err=True)
        raise typer.Exit(code=ConfigError.exit_code)
    except TrollRankError as e:
        typer.echo(f"error: {e.describe()}", err=True)
        raise typer.Exit(code=e.exit_code)
    except ValueError as e:
        typer.echo(f"error: {e}", err=True)
        raise typer.Exit(code=ConfigError.exit_code)
    except Exception as e:
        logger.error(f"Unexpected failure: {type(e).__name__}: {e}")
        typer.echo(f"error: {type(e).__name__}: {e}", err=True)
        raise typer.Exit(code=TrollRankError.exit_code)


def _settings(ctx: typer.Context) -> Dict:
    return ctx.obj or {}


def _out_dir(ctx: typer.Context, out: Optional[Path]) -> Path:
    out_dir = out or _settings(ctx).get("out") or Path("out")
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"output directory '{out_dir}' cannot be created: {e}") from e
    return out_dir


def _registry(path: Optional[Path]) -> TrollRegistry:
    return load_troll_registry(path) if path else TrollRegistry()


def _url_filter_mode(value: str) -> UrlFilterMode:
    mode = URL_FILTER_ALIASES.get(value.lower())
    if mode is None:
        raise ConfigError(f"unknown URL filter '{value}' (expected none or troll)")
    return mode


@app.callback()
def main(
    ctx: typer.Context,
    threads: int = typer.Option(1, "--threads", help="Worker processes for parsing and cascade analysis."),
    out: Optional[Path] = typer.Option(None, "--out", help="Default output directory."),
    seed: int = typer.Option(0, "--seed", help="Seed for synthetic data."),
    log_level: str = typer.Option("INFO", "--log-level", help="DEBUG, INFO, WARNING or ERROR."),
) -> None:
    with cli_errors():
        if threads < 1:
            raise ConfigError("--threads must be at least 1")
        setup_logging(log_level)
    ctx.obj = {"threads": threads, "out": out, "seed": seed}


@app.command("ingest")
def ingest(
    ctx: typer.Context,
    input_path: Path = typer.Option(..., "--input", help="JSON Lines corpus."),
    trolls: Optional[Path] = typer.Option(None, "--trolls", help="Troll registry."),
    min_retweeters: int = typer.Option(DEFAULT_MIN_RETWEETERS, "--min-retweeters"),
    out: Optional[Path] = typer.Option(None, "--out"),
) -> None:
    """Recover retweet cascades and write cascades.tsv."""
    with cli_errors():
        if min_retweeters < 1:
            raise ConfigError("--min-retweeters must be at least 1")
        out_dir = _out_dir(ctx, out)
        registry = _registry(trolls)
        corpus = read_corpus(input_path, _settings(ctx).get("threads", 1))
        cascades = group_cascades(corpus.records, min_retweeters)
        write_cascades(cascades, out_dir)
        troll_rooted = sum(registry.is_troll(c.root_user_id) for c in cascades)
        typer.echo(f"{len(cascades)} cascades ({troll_rooted} troll-rooted) written to {out_dir}")


@graph_app.command("build")
def graph_build(
    ctx: typer.Context,
    input_path: Path = typer.Option(..., "--input", help="JSON Lines corpus."),
    trolls: Optional[Path] = typer.Option(None, "--trolls", help="Troll registry."),
    out: Optional[Path] = typer.Option(None, "--out"),
) -> None:
    """Build the interaction multigraph and the follower graph."""
    with cli_errors():
        out_dir = _out_dir(ctx, out)
        registry = _registry(trolls)
        corpus = read_corpus(input_path, _settings(ctx).get("threads", 1))
        ig = build_interaction_graph(corpus.records, registry)
        written = write_graphs(ig, collapse_to_follower_graph(ig), out_dir)
        typer.echo(f"{written['interaction.edges']} interactions, {written['follower.edges']} follower edges")


@graph_app.command("stats")
def graph_stats(
    ctx: typer.Context,
    graph_dir: Path = typer.Option(..., "--graph", help="Directory written by 'graph build'."),
    out: Optional[Path] = typer.Option(None, "--out"),
) -> None:
    """Degree distributions, components and coreness."""
    with cli_errors():
        out_dir = _out_dir(ctx, out)
        nodes = load_node_table(graph_dir)
        ig = load_interaction_graph(graph_dir, nodes)
        fg = load_follower_graph(graph_dir, nodes)
        _, coreness = compute_graph_stats(ig, fg, registry_from_nodes(nodes), out_dir)
        typer.echo(f"core number {coreness.core_number}; statistics written to {out_dir}")


@cascade_app.command("analyze")
def cascade_analyze(
    ctx: typer.Context,
    cascades_dir: Path = typer.Option(..., "--cascades", help="Directory written by 'ingest'."),
    graph_dir: Path = typer.Option(..., "--graph", help="Directory written by 'graph build'."),
    trolls: Optional[Path] = typer.Option(None, "--trolls", help="Troll registry; defaults to the graph's labels."),
    out: Optional[Path] = typer.Option(None, "--out"),
) -> None:
    """Build cascade trees and write trees, virality and influence tables."""
    with cli_errors():
        out_dir = _out_dir(ctx, out)
        nodes = load_node_table(graph_dir)
        registry = load_troll_registry(trolls) if trolls else registry_from_nodes(nodes)
        cascades = load_cascades(cascades_dir)
        analyses = analyze_cascades(
            cascades, load_follower_graph(graph_dir, nodes), registry, _settings(ctx).get("threads", 1)
        )
        write_cascade_outputs(analyses, cascades, registry, out_dir)
        typer.echo(f"{len(analyses)} cascades analyzed")


@shapley_app.command("rank")
def shapley_rank(
    ctx: typer.Context,
    cascades_dir: Path = typer.Option(..., "--cascades", help="Directory written by 'ingest'."),
    graph_dir: Path = typer.Option(..., "--graph", help="Directory written by 'graph build'."),
    trolls: Path = typer.Option(..., "--trolls", help="Troll registry."),
    urls_filter: str = typer.Option("none", "--urls-filter", help="none or troll."),
    out: Optional[Path] = typer.Option(None, "--out"),
) -> None:
    """Rank accounts by global Shapley value."""
    with cli_errors():
        mode = _url_filter_mode(urls_filter)
        out_dir = _out_dir(ctx, out)
        registry = load_troll_registry(trolls)
        cascades = load_cascades(cascades_dir)
        analyses = analyze_cascades(
            cascades, load_follower_graph(graph_dir), registry, _settings(ctx).get("threads", 1)
        )
        url_filter = troll_url_filter(cascades, registry) if mode == UrlFilterMode.TROLL_URLS else None
        scores = global_shapley([cascade_shapley(a) for a in analyses], url_filter)
        ranking = rank({uid: score.global_value for uid, score in scores.items()}, registry)
        influence = global_influence(a.tree for a in analyses)
        influence_ranking = rank({uid: score.total for uid, score in influence.items()}, registry)
        write_shapley_outputs(ranking, influence_ranking, registry, out_dir)
        typer.echo(f"{len(ranking)} accounts ranked")


@app.command("audit")
def audit(
    ctx: typer.Context,
    ranking_path: Path = typer.Option(..., "--ranking", help="ranking.tsv from 'shapley rank'."),
    top: int = typer.Option(100, "--top", help="Number of top-ranked accounts to audit."),
    status_endpoint: Optional[str] = typer.Option(None, "--status-endpoint"),
    bot_endpoint: Optional[str] = typer.Option(None, "--bot-endpoint"),
    cache_dir: Optional[Path] = typer.Option(None, "--cache-dir", help="Journal directory for cached lookups."),
    regular_only: bool = typer.Option(False, "--regular-only", help="Audit the top regular accounts only."),
    out: Optional[Path] = typer.Option(None, "--out"),
) -> None:
    """Check account states and bot scores of the top-ranked accounts."""
    with cli_errors():
        if top < 0:
            raise ConfigError("--top must not be negative")
        overrides = {
            "status_endpoint": status_endpoint,
            "bot_endpoint": bot_endpoint,
            "cache_dir": cache_dir,
        }
        settings = AuditSettings(**{key: value for key, value in overrides.items() if value is not None})
        out_dir = _out_dir(ctx, out)
        ranking = load_ranking(ranking_path)
        user_ids = [entry.user_id for entry in audit_candidates(ranking, top, regular_only).entries]
        statuses = fetch_statuses(user_ids, settings)
        scores = fetch_bot_scores(user_ids, settings)
        summary = audit_report(ranking, top, statuses, scores, settings.bot_threshold, regular_only)
        write_audit_outputs(summary, out_dir)
        typer.echo(
            f"top-{top}: suspended {summary.suspended_fraction}, deleted {summary.deleted_fraction}, "
            f"bots {summary.bot_fraction}"
        )


@pipeline_app.command("run")
def pipeline_run(
    ctx: typer.Context,
    input_path: Path = typer.Option(..., "--input", help="JSON Lines corpus."),
    trolls: Optional[Path] = typer.Option(None, "--trolls", help="Troll registry."),
    min_retweeters: Optional[int] = typer.Option(None, "--min-retweeters"),
    urls_filter: str = typer.Option("none", "--urls-filter", help="none or troll."),
    top_k: Optional[int] = typer.Option(None, "--top-k", help="Rows of the top-k report."),
    out: Optional[Path] = typer.Option(None, "--out"),
) -> None:
    """Run every stage and write the artifact manifest."""
    with cli_errors():
        options = {
            "input_path": input_path,
            "trolls_path": trolls,
            "min_retweeters": min_retweeters,
            "url_filter": _url_filter_mode(urls_filter),
            "workers": _settings(ctx).get("threads", 1),
            "output_dir": out or _settings(ctx).get("out"),
            "seed": _settings(ctx).get("seed", 0),
            "top_k": top_k,
        }
        cfg = PipelineConfig(**{key: value for key, value in options.items() if value is not None})
        manifest = run_pipeline(cfg)
        typer.echo(f"manifest: {manifest}")


@synth_app.command("gen")
def synth_gen(
    ctx: typer.Context,
    users: int = typer.Option(12_000, "--users"),
    cascades: int = typer.Option(100, "--cascades"),
    troll_fraction: float = typer.Option(0.01, "--troll-fraction"),
    retweeters: int = typer.Option(100, "--retweeters", help="Distinct retweeters per cascade."),
    hubs: int = typer.Option(1, "--hubs", help="Planted hub accounts."),
    no_noise: bool = typer.Option(False, "--no-noise", help="Plant clean cascades only."),
    out: Optional[Path] = typer.Option(None, "--out"),
) -> None:
    """Generate a synthetic corpus, troll registry and ground truth."""
    with cli_errors():
        out_dir = _out_dir(ctx, out)
        written = gen_synthetic(
            seed=_settings(ctx).get("seed", 0),
            n_users=users,
            n_cascades=cascades,
            troll_fraction=troll_fraction,
            hub_plan=HubPlan(hub_count=hubs),
            out_dir=out_dir,
            options=SyntheticOptions(retweeters_per_cascade=retweeters, noise=not no_noise),
        )
        typer.echo(f"{written['corpus.jsonl']} posts written to {out_dir}")


if __name__ == "__main__":
    app()
