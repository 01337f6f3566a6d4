"""Command handlers for the Vessel Tracer CLI."""

import argparse
import json
import logging
from pathlib import Path

import numpy as np

from config.settings import (
    EMBED_CACHE_DB_PATH,
    EMBED_CACHE_TTL_HOURS,
    EXTERNAL_EMBEDDER_ENDPOINT,
    EXTERNAL_EMBEDDER_TIMEOUT,
    TRACE_JOBS,
)
from tracer.cache import EmbeddingCache
from tracer.clustering import label_pixels
from tracer.embedder import Embedder, OracleEmbedder
from tracer.errors import InvalidArgumentError, TracerError
from tracer.external import ExternalEmbedder
from tracer.formats import (
    RunConfig,
    composite_instances,
    parse_config,
    parse_scene_spec,
    parse_seed_file,
    read_image,
    read_instance_dir,
    read_label_map,
    read_mask,
    write_json,
    write_outputs,
    write_rgb,
    write_scene,
)
from tracer.loss import fit_free_embeddings
from tracer.metrics import InstanceSetPair, evaluate_instances, instances_from_label_map
from tracer.synthetic import generate_scene
from tracer.tracing import trace_all

logger = logging.getLogger(__name__)


class UsageError(TracerError):
    """The command line itself is wrong."""


def _load_config(path: str | None) -> RunConfig:
    if not path:
        return RunConfig()
    return parse_config(Path(path).read_text(encoding="utf-8"))


def synth_command(args: argparse.Namespace) -> int:
    """Generate a synthetic scene."""
    spec = parse_scene_spec(Path(args.spec).read_text(encoding="utf-8"), rng_seed=args.seed)
    scene = generate_scene(spec)
    write_scene(Path(args.out), scene)
    return 0


def _build_embedder(args: argparse.Namespace, run: RunConfig, seed_ids: list[str]) -> Embedder:
    if args.embedder == "oracle":
        if not args.truth:
            raise UsageError("--truth is required with --embedder oracle")
        masks = read_instance_dir(Path(args.truth))
        missing = [tree_id for tree_id in seed_ids if tree_id not in masks]
        if missing:
            raise InvalidArgumentError(f"No ground-truth mask for tree(s) {missing} in {args.truth}")
        return OracleEmbedder(masks, params=run.oracle, seed=args.seed, loss_params=run.loss)

    endpoint = args.endpoint or EXTERNAL_EMBEDDER_ENDPOINT
    if not endpoint:
        raise UsageError("--endpoint (or EXTERNAL_EMBEDDER_ENDPOINT) is required with --embedder external")
    cache = EmbeddingCache(db_path=EMBED_CACHE_DB_PATH, ttl_hours=EMBED_CACHE_TTL_HOURS) if args.cache else None
    return ExternalEmbedder(
        endpoint, dim=run.oracle.dim, timeout=EXTERNAL_EMBEDDER_TIMEOUT, cache=cache
    )


def trace_command(args: argparse.Namespace) -> int:
    """Trace every seeded tree of an image."""
    run = _load_config(args.config)
    image = read_image(Path(args.image))
    semantic = read_mask(Path(args.semantic))
    if semantic.shape != image.shape[:2]:
        raise InvalidArgumentError(
            f"Semantic mask {semantic.shape} does not match image {image.shape[:2]}"
        )
    seeds = parse_seed_file(Path(args.seeds).read_bytes(), shape=semantic.shape)
    logger.info(f"Tracing {len(seeds)} tree(s) in {args.image}")

    embedder = _build_embedder(args, run, [seed.tree_id for seed in seeds])
    try:
        jobs = args.jobs if args.jobs is not None else TRACE_JOBS
        results = trace_all(image, semantic, seeds, embedder, run.trace, jobs=jobs)
    finally:
        if isinstance(embedder, ExternalEmbedder):
            embedder.close()

    write_outputs(Path(args.out), results)
    truncated = [r.tree_id for r in results if r.truncated]
    if truncated:
        logger.warning(f"Truncated trees: {truncated}")
    return 0


def eval_command(args: argparse.Namespace) -> int:
    """Score predicted instance masks against ground truth."""
    prediction = read_instance_dir(Path(args.pred))
    truth = read_instance_dir(Path(args.truth))
    report = evaluate_instances(
        InstanceSetPair(prediction=list(prediction.values()), truth=list(truth.values()), smooth=args.smooth)
    )
    write_json(Path(args.out), report.to_dict())
    logger.info(
        f"SBD {report.sbd:.4f} (specificity {report.specificity:.4f}, "
        f"sensitivity {report.sensitivity:.4f}, |DiC| {report.dic})"
    )
    return 0


def fit_embeddings_command(args: argparse.Namespace) -> int:
    """Optimise free embeddings for a label map and cluster them back."""
    run = _load_config(args.config)
    labels = read_label_map(Path(args.labels))
    fit = fit_free_embeddings(labels, run.loss, rng_seed=args.seed, dim=run.oracle.dim)
    clusters = label_pixels(fit.field, labels > 0, run.trace.mean_shift)

    truth_instances = instances_from_label_map(labels)
    cluster_instances = instances_from_label_map(clusters)
    report = evaluate_instances(InstanceSetPair(prediction=cluster_instances, truth=truth_instances))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "embeddings.npy", fit.field.astype(np.float32))
    write_rgb(out / "clusters.png", composite_instances(cluster_instances or [clusters > 0]))
    write_json(
        out / "report.json",
        {
            "steps": fit.steps,
            "converged": fit.converged,
            "loss": fit.breakdown.to_dict(),
            "instances": len(truth_instances),
            "clusters": len(cluster_instances),
            "evaluation": report.to_dict(),
        },
    )
    logger.info(
        f"Fitted {len(truth_instances)} instance(s) in {fit.steps} steps; "
        f"mean shift found {len(cluster_instances)} cluster(s), SBD {report.sbd:.4f}"
    )
    return 0


def cache_command(args: argparse.Namespace) -> int:
    """Report on or clear the external embedder reply cache."""
    if not args.stats and not args.clear:
        raise UsageError("cache needs --stats or --clear")
    cache = EmbeddingCache(db_path=EMBED_CACHE_DB_PATH, ttl_hours=EMBED_CACHE_TTL_HOURS)

    # stats are taken before clearing so the report shows what was removed
    stats = cache.get_stats()
    if args.clear == "all":
        deleted = cache.clear_all()
        logger.info(f"Cache cleared: {deleted} entries removed")
        stats["deleted_entries"] = deleted
    elif args.clear == "expired":
        deleted = cache.clear_expired()
        logger.info(f"Expired cache entries cleared: {deleted} removed")
        stats["deleted_entries"] = deleted
    if args.stats:
        print(json.dumps(stats, indent=2, sort_keys=True))
    return 0
