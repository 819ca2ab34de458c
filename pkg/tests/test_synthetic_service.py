from pathlib import Path
from typing import Dict, Tuple

import pytest

from app.models.synthetic_models import CascadeShape, HubPlan, SyntheticOptions
from app.models.tweet_models import TrollRegistry
from app.services.cascade_service import analyze_cascades
from app.services.graph_service import build_interaction_graph, collapse_to_follower_graph
from app.services.ingest_service import detect_retweet, group_cascades, load_troll_registry, read_corpus
from app.services.shapley_service import cascade_shapley, global_shapley, rank
from app.services.synthetic_service import FIRST_USER_ID, gen_synthetic
from app.utils.dataframe_utils import read_tsv

FILES = ("corpus.jsonl", "trolls.tsv", "ground_truth.tsv")


def generate(out_dir: Path, seed: int = 7, **kwargs) -> Dict[str, int]:
    params = dict(n_users=3_000, n_cascades=12, troll_fraction=0.05)
    params.update(kwargs)
    params.setdefault("options", SyntheticOptions(retweeters_per_cascade=40))
    return gen_synthetic(seed=seed, out_dir=out_dir, **params)


def recovered_parents(out_dir: Path, min_retweeters: int) -> Tuple[Dict[int, int], list]:
    """Child -> parent user id over every recovered tree, plus the analyses."""
    corpus = read_corpus(out_dir / "corpus.jsonl")
    registry = load_troll_registry(out_dir / "trolls.tsv")
    cascades = group_cascades(corpus.records, min_retweeters)
    fg = collapse_to_follower_graph(build_interaction_graph(corpus.records, registry))
    analyses = analyze_cascades(cascades, fg, registry)
    parents: Dict[int, int] = {}
    for analysis in analyses:
        tree = analysis.tree
        for uid, parent in zip(tree.user_ids, tree.parents):
            if parent >= 0:
                parents[uid] = tree.user_ids[parent]
    return parents, analyses


def truth_of(out_dir: Path):
    return read_tsv(out_dir / "ground_truth.tsv", dtype={"root_user_id": str, "true_parent_id": str, "shape": str})


class TestDeterminism:
    def test_same_seed_same_bytes(self, tmp_path: Path):
        generate(tmp_path / "one")
        generate(tmp_path / "two")
        for name in FILES:
            assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()

    def test_different_seed_differs(self, tmp_path: Path):
        generate(tmp_path / "one", seed=1)
        generate(tmp_path / "two", seed=2)
        assert (tmp_path / "one" / "corpus.jsonl").read_bytes() != (tmp_path / "two" / "corpus.jsonl").read_bytes()

    def test_troll_registry(self, tmp_path: Path):
        written = generate(tmp_path, troll_fraction=0.1)
        registry = load_troll_registry(tmp_path / "trolls.tsv")
        assert written["trolls.tsv"] == len(registry) == 300
        assert all(FIRST_USER_ID <= uid < FIRST_USER_ID + 3_000 for uid in registry.ids)

    @pytest.mark.parametrize("kwargs", [{"n_users": 1}, {"n_cascades": 0}, {"troll_fraction": 1.5}])
    def test_invalid_arguments(self, tmp_path: Path, kwargs):
        with pytest.raises(ValueError):
            generate(tmp_path, **kwargs)


class TestRootMapping:
    def test_every_retweet_maps_to_its_root(self, tmp_path: Path):
        gen_synthetic(seed=0, n_users=12_000, n_cascades=100, troll_fraction=0.01, out_dir=tmp_path)
        records = {r.tweet_id: r for r in read_corpus(tmp_path / "corpus.jsonl").records}
        truth = truth_of(tmp_path)

        retweets = truth[truth["shape"] != "fake_rt"]
        assert len(retweets) >= 10_000
        for row in retweets.itertuples(index=False):
            info = detect_retweet(records[row.tweet_id])
            assert info is not None
            assert info.root_user_id == int(row.root_user_id)

        for row in truth[truth["shape"] == "fake_rt"].itertuples(index=False):
            assert detect_retweet(records[row.tweet_id]) is None


class TestTreeRecovery:
    @pytest.mark.parametrize("shape", [CascadeShape.STAR, CascadeShape.CHAIN, CascadeShape.RANDOM])
    def test_planted_parents_recovered(self, tmp_path: Path, shape: CascadeShape):
        options = SyntheticOptions(retweeters_per_cascade=30, shapes=(shape,), noise=False)
        generate(tmp_path, n_cascades=4, hub_plan=HubPlan(hub_count=0), options=options)
        parents, _ = recovered_parents(tmp_path, min_retweeters=30)
        truth = truth_of(tmp_path)
        assert set(truth["shape"]) == {shape.value}
        for row in truth.itertuples(index=False):
            assert parents[row.retweeter_id] == int(row.true_parent_id)

    def test_chain_tree_is_a_path(self, tmp_path: Path):
        options = SyntheticOptions(retweeters_per_cascade=20, shapes=(CascadeShape.CHAIN,), noise=False)
        generate(tmp_path, n_cascades=1, hub_plan=HubPlan(hub_count=0), options=options)
        _, analyses = recovered_parents(tmp_path, min_retweeters=20)
        assert len(analyses) == 1
        assert analyses[0].virality == pytest.approx((21 + 1) / 3)

    def test_star_virality(self, tmp_path: Path):
        options = SyntheticOptions(retweeters_per_cascade=20, shapes=(CascadeShape.STAR,), noise=False)
        generate(tmp_path, n_cascades=1, hub_plan=HubPlan(hub_count=0), options=options)
        _, analyses = recovered_parents(tmp_path, min_retweeters=20)
        assert analyses[0].virality == pytest.approx(2 * 20 / 21)


class TestNoise:
    def test_noise_rows_present(self, tmp_path: Path):
        generate(tmp_path, n_cascades=12)
        shapes = set(truth_of(tmp_path)["shape"])
        assert {"quote", "fake_rt", "duplicate_root"} <= shapes

    def test_noisy_corpus_still_recovers_parents(self, tmp_path: Path):
        generate(tmp_path, n_cascades=12)
        parents, _ = recovered_parents(tmp_path, min_retweeters=40)
        truth = truth_of(tmp_path)
        planted = truth[truth["shape"].isin(["star", "chain", "random", "duplicate_root"])]
        for row in planted.itertuples(index=False):
            assert parents[row.retweeter_id] == int(row.true_parent_id)

    def test_quote_forms_its_own_cascade(self, tmp_path: Path):
        generate(tmp_path, n_cascades=4)
        corpus = read_corpus(tmp_path / "corpus.jsonl")
        truth = truth_of(tmp_path)
        quotes = truth[truth["shape"] == "quote"]
        assert len(quotes) > 0

        cascades = group_cascades(corpus.records, min_retweeters=1)
        for row in quotes.itertuples(index=False):
            holding = [c for c in cascades if row.retweeter_id in c.retweeters and c.root_user_id == int(row.root_user_id)]
            texts = {c.cascade_key[0] for c in holding}
            assert len(texts) == 2
            assert any(text.endswith("so true") for text in texts)

    def test_duplicate_root_merges(self, tmp_path: Path):
        generate(tmp_path, n_cascades=6, hub_plan=HubPlan(hub_count=0))
        corpus = read_corpus(tmp_path / "corpus.jsonl")
        truth = truth_of(tmp_path)
        latecomers = truth[truth["shape"] == "duplicate_root"]
        assert len(latecomers) > 0

        cascades = group_cascades(corpus.records, min_retweeters=40)
        for row in latecomers.itertuples(index=False):
            planted = truth[(truth["cascade_index"] == row.cascade_index) & (truth["shape"] != "duplicate_root")]
            owner = [c for c in cascades if row.retweeter_id in c.retweeters]
            assert len(owner) == 1
            assert set(planted["retweeter_id"]) <= set(owner[0].retweeters)


class TestHubs:
    def test_hub_ranks_first(self, tmp_path: Path):
        generate(tmp_path, n_cascades=10, hub_plan=HubPlan(hub_count=1, cascades_per_hub=2))
        truth = truth_of(tmp_path)
        hub = int(truth[truth["cascade_index"] == 0]["root_user_id"].iloc[0])

        _, analyses = recovered_parents(tmp_path, min_retweeters=40)
        scores = global_shapley([cascade_shapley(a) for a in analyses])
        ranking = rank({uid: s.global_value for uid, s in scores.items()}, TrollRegistry())
        assert ranking.entries[0].user_id == hub
