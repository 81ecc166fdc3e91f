"""Command-line entry points for the full workflow.

generate -> crop -> (diagnose | active | passive | active-bench | map | serve)
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .classifier import TileNetClassifier, extract_features
from .engine import ActiveSession, Strategy, ground_truth_oracle, render_run_log
from .experiments import (
    aggregate_metric,
    labeling_time,
    run_active_benchmark,
    run_passive_trial,
    write_benchmark,
)
from .mapping import build_detection_map, detections_to_points, elbow_scan, export_map
from .ranking import RankingSpec, bayes_positive_curve, compute_metric
from .tilestore import (
    BASE_MODALITIES,
    CropGeometry,
    build_tileset,
    fuse_modalities,
    fused_name,
    generate_synthetic_site,
    load_site,
    load_tileset,
    save_site,
    save_tileset,
)


def _split_csv(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _ensure_fused(ts, modalities):
    for m in modalities:
        if m in ts.pixels:
            continue
        sources = tuple(m.split("+"))
        if len(sources) < 2:
            raise SystemExit(f"tileset has no modality {m!r}")
        ts = fuse_modalities(ts, sources)
        if fused_name(sources) != m:
            raise SystemExit(f"fused name {fused_name(sources)!r} != requested {m!r}")
    return ts


def cmd_generate(args) -> int:
    resolutions = {}
    for spec in args.resolution or []:
        mod, _, val = spec.partition("=")
        resolutions[mod] = float(val)
    mosaics, registry = generate_synthetic_site(
        seed=args.seed,
        extent_m=args.extent_m,
        positive_count=args.positives,
        imbalance_target=args.imbalance,
        modalities=_split_csv(args.modalities),
        resolutions=resolutions or None,
        geometry=CropGeometry(args.interval_m, args.stride_m),
    )
    meta = {
        "seed": args.seed,
        "extent_m": args.extent_m,
        "positives": args.positives,
        "imbalance_target": args.imbalance,
    }
    out = save_site(mosaics, registry, args.out, meta=meta)
    print(f"wrote site with {len(registry)} positives to {out}")
    return 0


def cmd_crop(args) -> int:
    mosaics, registry, meta = load_site(args.in_dir)
    geometry = CropGeometry(args.interval_m, args.stride_m)
    provenance = f"site:{Path(args.in_dir).name} seed:{meta.get('seed')}"
    ts = build_tileset(mosaics, geometry, registry, provenance=provenance)
    save_tileset(ts, args.out)
    counts = ts.counts
    rate = counts["positive"] / len(ts) if len(ts) else 0.0
    print(
        f"wrote {len(ts)} tiles ({counts['positive']} positive, {rate:.2%}) to {args.out}"
    )
    return 0


def cmd_diagnose(args) -> int:
    ts = load_tileset(args.tileset)
    compute_metric(ts, RankingSpec())
    curve = bayes_positive_curve(ts)
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["threshold", "p_conditional", "n_at_least_t", "m_t"])
        for pt in curve.points:
            w.writerow([pt.threshold, pt.probability, pt.n_at_least, pt.positives_at_least])
    for note in curve.notes:
        print(f"note: {note}", file=sys.stderr)
    print(
        f"wrote {len(curve.points)} curve points to {args.out} "
        f"(base positive rate {curve.base_rate:.4f})"
    )
    return 0


def cmd_active(args) -> int:
    ts = load_tileset(args.tileset)
    modalities = _split_csv(args.modalities)
    ts = _ensure_fused(ts, modalities)
    strategy = Strategy.from_cli(args.strategy, modalities)
    classifier_params = {"learning_rate": args.lr} if args.lr is not None else None
    session = ActiveSession(
        ts,
        strategy,
        budget=args.budget,
        batch_size=args.batch,
        seed=args.seed,
        classifier_params=classifier_params,
    )
    if args.oracle != "ground-truth":
        raise SystemExit("headless runs support only --oracle ground-truth; use serve for humans")
    session.run(ground_truth_oracle(ts))
    Path(args.out).write_text(render_run_log(session))
    if args.save_model:
        for model, m in zip(session.models, strategy.modalities):
            suffix = f".{m}" if len(session.models) > 1 else ""
            model.save(f"{args.save_model}{suffix}", extra={"modality": m})
    t = labeling_time(session.labels_used)
    print(
        f"labels used {session.labels_used}/{args.budget}, positives found "
        f"{session.positives_found}, queried-positive rate "
        f"{session.queried_positive_rate():.2%}, labeling time {t.render()}"
    )
    return 0


def cmd_passive(args) -> int:
    ts = load_tileset(args.tileset)
    modalities = _split_csv(args.modalities)
    ts = _ensure_fused(ts, modalities)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    trials = []
    for m in modalities:
        for t in range(args.trials):
            trials.append(run_passive_trial(ts, m, seed=args.seed + t))
    with open(outdir / "raw_trials.jsonl", "w") as f:
        for t in trials:
            f.write(t.to_json() + "\n")
    with open(outdir / "passive_summary.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(
            ["strategy", "metric", "mean", "sem", "n", "excluded"]
        )
        for m in modalities:
            per = [t for t in trials if t.strategy_id == f"passive:{m}"]
            for metric in ("accuracy", "precision", "recall", "f1"):
                agg = aggregate_metric([getattr(t, metric) for t in per])
                w.writerow([f"passive:{m}", metric, agg["mean"], agg["sem"], agg["n"], agg["excluded"]])
    print(f"ran {len(trials)} passive trials; results in {outdir}")
    return 0


def cmd_active_bench(args) -> int:
    ts = load_tileset(args.tileset)
    strategies = {}
    for name in args.strategies:
        kind, _, mods = name.partition(":")
        modalities = _split_csv(mods) if mods else ["thermal"]
        ts = _ensure_fused(ts, modalities)
        strategies[name] = Strategy.from_cli(kind, modalities)
    passive = tuple(_split_csv(args.passive)) if args.passive else ()
    ts = _ensure_fused(ts, passive)
    result = run_active_benchmark(
        ts,
        strategies,
        budget=args.budget,
        checkpoint_every=args.checkpoint,
        trials=args.trials,
        batch_size=args.batch,
        base_seed=args.seed,
        passive_modalities=passive,
    )
    out = write_benchmark(result, args.out)
    print(f"benchmarked {len(strategies)} strategies x {args.trials} trials; results in {out}")
    return 0


def cmd_map(args) -> int:
    ts = load_tileset(args.tileset)
    clf = TileNetClassifier.load(args.model)
    modality = args.modality or clf.extra_meta_.get("modality")
    if not modality:
        raise SystemExit("model file does not name a modality; pass --modality")
    ts = _ensure_fused(ts, [modality])
    features = extract_features(ts.require_modality(modality), clf.pool_size) / clf.pixel_scale_
    outputs = clf.proba_features(features)
    points, confs = detections_to_points(ts, outputs, threshold=args.threshold)
    if args.elbow:
        lo, _, hi = args.elbow.partition(":")
        for k, inertia in elbow_scan(points, range(int(lo), int(hi) + 1), seed=args.seed):
            print(f"k={k} inertia={inertia:.2f}")
    if len(points) < args.k:
        raise SystemExit(
            f"only {len(points)} detections above threshold; cannot form {args.k} clusters"
        )
    dmap = build_detection_map(points, confs, k=args.k, seed=args.seed)
    export_map(dmap, args.out, redact_landscape=not args.no_redact, origin_xy=ts.origin_xy)
    print(f"wrote {len(points)} detections in {args.k} clusters to {args.out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.data, ui_dir=args.ui)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rarequery", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="synthesize a multimodal site")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--positives", type=int, required=True)
    g.add_argument("--extent-m", type=float, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--imbalance", type=float, default=0.01)
    g.add_argument("--modalities", default=",".join(BASE_MODALITIES))
    g.add_argument("--resolution", action="append", metavar="MODALITY=METERS")
    g.add_argument("--interval-m", type=float, default=20.0)
    g.add_argument("--stride-m", type=float, default=20.0)
    g.set_defaults(func=cmd_generate)

    c = sub.add_parser("crop", help="crop a site into a labeled tileset")
    c.add_argument("--interval-m", type=float, default=20.0)
    c.add_argument("--stride-m", type=float, default=5.0)
    c.add_argument("--in", dest="in_dir", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_crop)

    d = sub.add_parser("diagnose", help="conditional-positive curve over metric thresholds")
    d.add_argument("--tileset", required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_diagnose)

    a = sub.add_parser("active", help="run one active-learning session headlessly")
    a.add_argument("--tileset", required=True)
    a.add_argument("--strategy", default="multimodal-single")
    a.add_argument("--modalities", default="thermal")
    a.add_argument("--budget", type=int, default=500)
    a.add_argument("--batch", type=int, default=10)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--oracle", default="ground-truth")
    a.add_argument("--out", required=True)
    a.add_argument("--lr", type=float, default=None)
    a.add_argument("--save-model", default=None, metavar="PREFIX")
    a.set_defaults(func=cmd_active)

    pa = sub.add_parser("passive", help="passive trials per modality")
    pa.add_argument("--tileset", required=True)
    pa.add_argument("--trials", type=int, default=30)
    pa.add_argument("--out", required=True)
    pa.add_argument("--modalities", default="thermal,rgb,thermal+rgb")
    pa.add_argument("--seed", type=int, default=0)
    pa.set_defaults(func=cmd_passive)

    b = sub.add_parser("active-bench", help="benchmark query strategies")
    b.add_argument("--tileset", required=True)
    b.add_argument("--trials", type=int, default=30)
    b.add_argument("--out", required=True)
    b.add_argument(
        "--strategies",
        nargs="+",
        default=["multimodal_single:thermal", "random:thermal"],
        help="entries of the form kind:modality[,modality...]",
    )
    b.add_argument("--passive", default="", help="comma list of passive reference modalities")
    b.add_argument("--budget", type=int, default=500)
    b.add_argument("--checkpoint", type=int, default=50)
    b.add_argument("--batch", type=int, default=10)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_active_bench)

    m = sub.add_parser("map", help="cluster detections and export a map")
    m.add_argument("--tileset", required=True)
    m.add_argument("--model", required=True)
    m.add_argument("--k", type=int, default=6)
    m.add_argument("--out", required=True)
    m.add_argument("--threshold", type=float, default=0.5)
    m.add_argument("--modality", default=None)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--elbow", default=None, metavar="LO:HI")
    m.add_argument("--no-redact", action="store_true")
    m.set_defaults(func=cmd_map)

    s = sub.add_parser("serve", help="start the HTTP labeling service")
    s.add_argument("--data", required=True)
    s.add_argument("--port", type=int, default=8080)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--ui", default=None)
    s.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
