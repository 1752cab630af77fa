"""Command-line front end.

Exit codes: 0 success, 2 invalid configuration or input data, 3 missing
input file or model.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import __version__
from .core import (ConfigError, DataError, HanduseError, Laterality, MissingInputError, ModelError,
                   PipelineConfig, load_config)
from .evaluation import FAMILIES, ablation_run, write_scatter_csv
from .features import PcaModel
from .imaging import SkinModel
from .io import ingest_detections, ingest_frames, load_manifest, propose_boxes, write_detections
from .pipeline import (Models, assembled_samples, fit_interaction, fit_pca_on, fit_verifier, labelled_samples,
                       load_models, load_subject, loso_evaluate, run_infer, write_infer_outputs)
from .timeline import Timeline, finalize, metrics, read_timelines_csv, write_metrics_json

log = logging.getLogger("handuse")

EXIT_OK, EXIT_INVALID, EXIT_MISSING = 0, 2, 3


def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=d, help="pipeline config JSON")
    p.add_argument("--seed", type=int, default=d, help="overrides rng_seed from the config")
    p.add_argument("--out-dir", default=d, help="output folder (default: current folder)")
    p.add_argument("--debug-dump", default=d, metavar="DIR", help="write per-frame overlay PNGs here")
    p.add_argument("--jobs", type=int, default=argparse.SUPPRESS if suppress else 1,
                   help="worker processes for frame processing")
    p.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS if suppress else 0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="handuse", description="Hand-object interaction timelines and hand-use "
                                     "metrics from egocentric frame sequences.")
    parser.add_argument("--version", action="version", version=__version__)
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        _global_flags(p, suppress=True)
        return p

    def manifest_args(p, with_verifier=True):
        p.add_argument("--manifest", required=True, help="dataset manifest JSON")
        if with_verifier:
            p.add_argument("--verifier", required=True, help="verifier model file")
        p.add_argument("--subjects", nargs="+", help="restrict to these subject ids")
        p.add_argument("--cache-dir", help="reuse/store extracted observations here")

    p = add("synth", "render a synthetic multi-subject dataset")
    p.add_argument("--subjects", type=int, default=3)
    p.add_argument("--frames", type=int, default=500)
    p.add_argument("--verifier-frames", type=int, default=80)

    p = add("train-verifier", "train the hand verifier from boxes labelled with is_hand")
    p.add_argument("--manifest", help="use the manifest's verifier recording")
    p.add_argument("--frames", help="frame folder (instead of --manifest)")
    p.add_argument("--detections", help="detections JSONL with is_hand (instead of --manifest)")

    p = add("extract", "cache verified, segmented observations for every subject")
    manifest_args(p)

    p = add("fit-pca", "fit the HOG projection on the manifest's subjects")
    manifest_args(p)
    p.add_argument("--csv", action="store_true", help="also write the model as CSV")

    p = add("train-interaction", "train the interaction forest")
    manifest_args(p)
    p.add_argument("--pca", required=True)

    p = add("infer", "timelines and metrics for one recording")
    p.add_argument("--frames", required=True)
    p.add_argument("--detections", help="detections JSONL; omit to use the skin-blob proposer")
    p.add_argument("--verifier", required=True)
    p.add_argument("--pca", required=True)
    p.add_argument("--model", required=True, help="interaction model file")
    p.add_argument("--skin", help="skin table (.bin or .csv); default is the bundled table")
    p.add_argument("--include-other", action="store_true", help="report the other-person timeline in metrics.json")

    p = add("metrics", "hand-use metrics of a timeline CSV or a labels file")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--timelines", help="timeline CSV (frame,time_s,left,right,other)")
    src.add_argument("--labels", help="labels JSONL")
    p.add_argument("--n-frames", type=int, help="recording length, required with --labels")
    p.add_argument("--no-smooth", action="store_true", help="input is already final; skip prolong and smoothing")

    p = add("eval-loso", "leave-one-subject-out evaluation")
    manifest_args(p)

    p = add("ablate", "leave-one-subject-out scores per feature family")
    manifest_args(p)
    p.add_argument("--family", nargs="+", choices=FAMILIES, default=list(FAMILIES))

    p = add("propose", "skin-blob hand boxes for a frame folder")
    p.add_argument("--frames", required=True)
    p.add_argument("--skin")
    return parser


# -- helpers -----------------------------------------------------------------

def _config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(rng_seed=args.seed)
    return cfg


def _out(args) -> Path:
    out = Path(args.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _subjects(args, cfg, models):
    man = load_manifest(args.manifest)
    entries = man.subjects
    if args.subjects:
        entries = tuple(man.subject(s) for s in args.subjects)
    if not entries:
        raise DataError(f"{args.manifest} lists no subjects")
    cfg = cfg if man.fps == cfg.fps else cfg.replace(fps=man.fps)
    cache = Path(args.cache_dir) if args.cache_dir else None
    debug = Path(args.debug_dump) if args.debug_dump else None
    return [load_subject(e, models, cfg, args.jobs, cache, debug) for e in entries], cfg


def _verifier_models(args) -> Models:
    return load_models(args.verifier, need_classifier=False)


# -- commands ----------------------------------------------------------------

def cmd_synth(args, cfg):
    from .synth import write_dataset

    path = write_dataset(_out(args), args.subjects, args.frames, cfg.rng_seed, args.verifier_frames, cfg.fps)
    print(path)


def cmd_train_verifier(args, cfg):
    if args.manifest:
        man = load_manifest(args.manifest)
        if man.verifier_frames is None or man.verifier_detections is None:
            raise DataError(f"{args.manifest} has no verifier recording")
        frames, dets = man.verifier_frames, man.verifier_detections
    elif args.frames and args.detections:
        frames, dets = Path(args.frames), Path(args.detections)
    else:
        raise DataError("give --manifest, or both --frames and --detections")
    model = fit_verifier(frames, dets, cfg, cfg.rng_seed)
    path = _out(args) / "verifier.hrf"
    model.save(path)
    print(path)


def cmd_extract(args, cfg):
    if not args.cache_dir:
        args.cache_dir = str(_out(args) / "cache")
    data, _ = _subjects(args, cfg, _verifier_models(args))
    for d in data:
        print(f"{d.subject_id}: {len(d.obs)} observations, {int(d.obs.valid.sum())} valid")


def cmd_fit_pca(args, cfg):
    data, cfg = _subjects(args, cfg, _verifier_models(args))
    pca = fit_pca_on([d.obs for d in data], cfg, cfg.rng_seed)
    out = _out(args)
    pca.save(out / "pca.hpca")
    if args.csv:
        pca.to_csv(out / "pca.csv")
    print(out / "pca.hpca")


def cmd_train_interaction(args, cfg):
    models = _verifier_models(args)
    if not Path(args.pca).is_file():
        raise MissingInputError(f"PCA model not found: {args.pca}")
    pca = PcaModel.load(args.pca)
    data, cfg = _subjects(args, cfg, models)
    samples = [s for d in data for s in labelled_samples(d.obs, d.labels, d.subject_id, pca)]
    model = fit_interaction(samples, cfg, cfg.rng_seed)
    path = _out(args) / "interaction.hrf"
    model.save(path)
    print(path)


def cmd_infer(args, cfg):
    models = load_models(args.verifier, args.pca, args.model, args.skin)
    frames = ingest_frames(args.frames, cfg.fps)
    size = (frames[0].width, frames[0].height)
    if args.detections:
        dets = ingest_detections(args.detections, size, len(frames))
    else:
        dets = [r for f in frames for r in propose_boxes(f, models.skin, cfg)]
    t0 = time.perf_counter()
    res = run_infer(frames, dets, models, cfg, args.jobs, args.debug_dump)
    per_frame = (time.perf_counter() - t0) / max(1, len(frames))
    write_infer_outputs(res, _out(args), cfg.fps, args.include_other)
    log.info("processed %d frames, %.3f s/frame", len(frames), per_frame)
    for lat in (Laterality.LEFT, Laterality.RIGHT):
        m = res.metrics[lat]
        print(f"{lat.value}: fraction={m.interaction_fraction:.3f} mean_duration_s={m.mean_duration_s:.2f} "
              f"per_hour={m.interactions_per_hour:.1f}")


def cmd_metrics(args, cfg):
    if args.timelines:
        tls = read_timelines_csv(args.timelines, cfg.fps)
    else:
        from .io import ingest_labels
        from .pipeline import truth_timelines

        if args.n_frames is None:
            raise DataError("--labels needs --n-frames")
        tls = truth_timelines(ingest_labels(args.labels), args.n_frames, cfg.fps)
    result = {}
    for lat, tl in tls.items():
        final = tl if args.no_smooth else finalize(tl, cfg)
        if final.has_missing:
            raise DataError(f"{lat.value} timeline has missing frames; drop --no-smooth")
        result[lat] = metrics(final, cfg)
    write_metrics_json(_out(args) / "metrics.json", result)
    print(json.dumps({lat.value: m.to_dict() for lat, m in result.items()}, indent=2, sort_keys=True))


def cmd_eval_loso(args, cfg):
    data, cfg = _subjects(args, cfg, _verifier_models(args))
    rep = loso_evaluate(data, cfg, cfg.rng_seed)
    out = _out(args)
    write_scatter_csv(out / "scatter.csv", rep["scatter"])
    _write_json(out / "evaluation.json", {k: v for k, v in rep.items() if k != "scatter"})
    for hand, s in rep["summary"].items():
        print(f"{hand}: f1={s['f1_mean']:.3f}±{s['f1_std']:.3f} accuracy={s['accuracy_mean']:.3f}"
              f"±{s['accuracy_std']:.3f}")
    for name, c in rep["correlations"].items():
        if c["defined"]:
            print(f"{name}: r={c['pearson_r']:.3f} (p={c['pearson_p_one_tailed']:.3g}) "
                  f"rho={c['spearman_rho']:.3f} (p={c['spearman_p_one_tailed']:.3g})")


def cmd_ablate(args, cfg):
    data, cfg = _subjects(args, cfg, _verifier_models(args))
    samples = assembled_samples(data, cfg, cfg.rng_seed)
    tables = [ablation_run(samples, fam, cfg, cfg.rng_seed) for fam in args.family]
    _write_json(_out(args) / "ablation.json", {"families": tables})
    for t in tables:
        print(f"{t['family']:>6} (dim {t['feature_dim']:3d}): f1={t['mean_f1']:.3f} accuracy={t['mean_accuracy']:.3f}")


def cmd_propose(args, cfg):
    skin = SkinModel.load(args.skin) if args.skin else SkinModel.default()
    frames = ingest_frames(args.frames, cfg.fps)
    recs = [r for f in frames for r in propose_boxes(f, skin, cfg)]
    path = _out(args) / "detections.jsonl"
    write_detections(recs, path)
    print(f"{len(recs)} boxes -> {path}")


COMMANDS = {
    "synth": cmd_synth, "train-verifier": cmd_train_verifier, "extract": cmd_extract, "fit-pca": cmd_fit_pca,
    "train-interaction": cmd_train_interaction, "infer": cmd_infer, "metrics": cmd_metrics,
    "eval-loso": cmd_eval_loso, "ablate": cmd_ablate, "propose": cmd_propose,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(2, args.verbose),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except (MissingInputError, ModelError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except HanduseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
