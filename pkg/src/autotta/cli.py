"""Operator command-line interface.

Subcommands: cache-build, search, eval, report-occurrence, apply.
Worker-pool width is capped by the TTA_WORKERS environment variable.
"""
from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import click
import numpy as np

from .aggregate import AggregationKind, Aggregator, pca_fit
from .cache import (
    CacheError,
    FeatureCache,
    build_cache,
    full_grid,
    read_manifest,
)
from .extractor import DESK_DESCRIPTOR, ExtractorDescriptor, extract
from .policy import PolicyError, compose, format_policy, parse_policy
from .report import (
    ReportError,
    format_report,
    occurrence_rates,
    read_run_log_policies,
    write_rates_tsv,
)
from .retrieval import (
    K_DEFAULTS,
    RetrievalError,
    evaluate_baseline,
    evaluate_policy,
    load_ranking_task,
)
from .reward import RewardConfig, RewardError, load_triplets
from .search import SearchConfig, SearchError, run_search
from .transforms import Image, profile_by_name

EXIT_USAGE = 2

_AGG_NAMES = {
    "mac": AggregationKind.MAC,
    "spoc": AggregationKind.SPOC,
    "gem": AggregationKind.GEM,
    "rmac": AggregationKind.RMAC,
    "crow": AggregationKind.CROW,
}


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        click.echo(f"error: {what} not found: {p}", err=True)
        sys.exit(EXIT_USAGE)
    return p


@click.group()
def main() -> None:
    """Test-time augmentation policy search for content-based image retrieval."""


@main.command("cache-build")
@click.option("--manifest", required=True, help="image_id<TAB>path manifest")
@click.option("--out", "out_path", required=True, help="cache file to write")
@click.option("--profile", type=click.Choice(["trademark", "landmark"]), default="trademark")
@click.option("--aggregation", type=click.Choice(sorted(_AGG_NAMES)), default="mac")
@click.option("--pca-dim", type=int, default=None, help="fit PCA whitening to this dim")
@click.option("--seed", type=int, default=0, help="built-in extractor seed")
def cmd_cache_build(manifest, out_path, profile, aggregation, pca_dim, seed):
    """Build the full-grid feature cache for a manifest of images."""
    manifest_path = _require_file(manifest, "manifest")
    prof = profile_by_name(profile)
    descriptor = ExtractorDescriptor(
        DESK_DESCRIPTOR.name, DESK_DESCRIPTOR.channels, deterministic_seed=seed
    )
    agg = Aggregator(_AGG_NAMES[aggregation])
    try:
        entries = read_manifest(manifest_path)
        pca = None
        if pca_dim is not None:
            corpus = np.stack(
                [agg(extract(Image.open(p), descriptor)) for _, p in entries]
            )
            pca = pca_fit(corpus, pca_dim)
        start = time.perf_counter()
        report = build_cache(entries, full_grid(), descriptor, agg, pca, prof, out_path)
        elapsed = time.perf_counter() - start
    except (CacheError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(
        f"{report.grid_entries} entries (grid) + {report.baseline_entries} baseline "
        f"= {report.header.entry_count} total in {elapsed:.1f}s"
    )
    if report.zero_vector_substitutions:
        click.echo(
            f"warning: {report.zero_vector_substitutions} zero descriptors replaced "
            "with the uniform unit vector",
            err=True,
        )
    for image_id, path, reason in report.errors:
        click.echo(f"warning: skipped image {image_id} ({path}): {reason}", err=True)


@main.command("search")
@click.option("--cache", "cache_path", required=True)
@click.option("--triplets", "triplet_path", required=True)
@click.option("--out", "out_dir", required=True, help="run output directory")
@click.option("--iterations", type=int, default=10_000)
@click.option("--seed", type=int, default=0)
@click.option("--alpha", type=float, default=0.2, help="triplet margin")
@click.option("--subsample", type=int, default=None, help="triplets per iteration")
def cmd_search(cache_path, triplet_path, out_dir, iterations, seed, alpha, subsample):
    """Run the PPO policy search over a prebuilt cache."""
    _require_file(cache_path, "cache")
    _require_file(triplet_path, "triplet manifest")
    try:
        cache = FeatureCache(cache_path)
        triplets = load_triplets(triplet_path)
        config = SearchConfig(
            iterations=iterations,
            seed=seed,
            reward=RewardConfig(margin=alpha, triplet_subsample=subsample),
        )
        result = run_search(cache, triplets, config, out_dir)
    except (CacheError, RewardError, SearchError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(f"best reward {result.best_reward:.6f}")
    click.echo(f"best policy: {format_policy(result.best_policy)}")


@main.command("eval")
@click.option("--policy", "policy_path", required=True)
@click.option("--cache", "cache_path", required=True)
@click.option("--task", "task_path", required=True, help="ranking-task manifest")
@click.option("--k", type=int, default=None, help="override MAP cutoff")
@click.option("--out", "report_path", default=None, help="JSON report path")
def cmd_eval(policy_path, cache_path, task_path, k, report_path):
    """MAP@K with the policy versus the untransformed baseline."""
    _require_file(policy_path, "policy file")
    _require_file(cache_path, "cache")
    _require_file(task_path, "task manifest")
    try:
        cache = FeatureCache(cache_path)
        policy = parse_policy(Path(policy_path).read_text())
        task = load_ranking_task(
            task_path,
            cache.image_ids,
            default_k=K_DEFAULTS[cache.header.profile.name],
        )
        if k is not None:
            task = type(task)(task.queries, task.database_ids, k)
        with_tta = evaluate_policy(policy, cache, task)
        without_tta = evaluate_baseline(cache, task)
    except (CacheError, PolicyError, RetrievalError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(f"MAP@{task.k} with policy:    {with_tta:.6f}")
    click.echo(f"MAP@{task.k} without policy: {without_tta:.6f}")
    if report_path:
        Path(report_path).write_text(
            json.dumps(
                {"k": task.k, "map_with_policy": with_tta, "map_baseline": without_tta},
                sort_keys=True,
            )
            + "\n"
        )


@main.command("report-occurrence")
@click.option("--log", "log_path", required=True, help="search run log")
@click.option("--out", "out_path", default=None, help="plot-ready TSV path")
def cmd_report_occurrence(log_path, out_path):
    """Normal/weighted occurrence rates over unique sampled policies."""
    _require_file(log_path, "run log")
    try:
        policies = read_run_log_policies(log_path)
        normal, weighted = occurrence_rates(policies)
    except (ReportError, PolicyError, json.JSONDecodeError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(format_report(normal, weighted))
    if out_path:
        write_rates_tsv(out_path, normal, weighted)


@main.command("apply")
@click.option("--policy", "policy_path", required=True)
@click.option("--cache", "cache_path", required=True)
@click.option("--ids", "ids_path", required=True, help="one image id per line")
@click.option("--out", "out_path", required=True, help="TSV of id and vector")
def cmd_apply(policy_path, cache_path, ids_path, out_path):
    """Compose policy features for listed images and dump the vectors."""
    _require_file(policy_path, "policy file")
    _require_file(cache_path, "cache")
    _require_file(ids_path, "id list")
    try:
        cache = FeatureCache(cache_path)
        policy = parse_policy(Path(policy_path).read_text())
        image_ids = [
            int(line) for line in Path(ids_path).read_text().split() if line.strip()
        ]
        with open(out_path, "w", encoding="utf-8") as fh:
            for image_id in image_ids:
                vec = compose(policy, image_id, cache)
                fh.write(str(image_id) + "\t" + " ".join(f"{v:.9g}" for v in vec) + "\n")
    except (CacheError, PolicyError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(f"wrote {len(image_ids)} vectors to {out_path}")


if __name__ == "__main__":
    main()
