"""Command-line interface.

One subcommand per pipeline stage plus the end-to-end experiment runner.
Machine-readable results go to files or stdout; progress and warnings go
to stderr. Exit codes: 0 success, 1 invalid input or flags, 2 stage or
runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import augment, dataio, experiments, fixtures, metrics, refselect, stain, tta
from .errors import (
    EmptyRegion,
    ManifestError,
    ParseError,
    StageFailure,
    StainsegError,
)
from .postprocess import PostprocessParams

log = logging.getLogger("stainseg")


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 (not 2) on bad usage, per the CLI contract."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _norm_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("normalization parameters")
    g.add_argument("--io", type=float, default=255.0, help="transmitted-light intensity (default 255)")
    g.add_argument("--beta", type=float, default=0.15, help="tissue OD threshold (default 0.15)")
    g.add_argument("--alpha", type=float, default=1.0, help="angle percentile (default 1.0)")
    g.add_argument("--sat-percentile", type=float, default=99.0,
                   help="saturation percentile for profiles (default 99.0)")


def _norm_params(args) -> stain.NormalizationParams:
    return stain.NormalizationParams(
        io=args.io, beta=args.beta, alpha=args.alpha, sat_percentile=args.sat_percentile
    )


def _post_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("post-processing parameters")
    g.add_argument("--prob-threshold", type=float, default=0.5)
    g.add_argument("--gaussian-sigma", type=float, default=1.0)
    g.add_argument("--marker-h", type=float, default=None,
                   help="h-maxima depth (default: 0.1x the smoothed map's range)")
    g.add_argument("--min-instance-area", type=int, default=10)
    g.add_argument("--opening-radius", type=int, default=1)


def _post_params(args) -> PostprocessParams:
    return PostprocessParams(
        prob_threshold=args.prob_threshold,
        gaussian_sigma=args.gaussian_sigma,
        marker_h=args.marker_h,
        min_instance_area=args.min_instance_area,
        opening_radius=args.opening_radius,
    )


def _ref_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("reference profiles")
    g.add_argument("--refs", nargs="*", default=[], metavar="PROFILE.json",
                   help="explicit reference profile files, in order")
    g.add_argument("--refs-dir", default=None,
                   help="directory of profile JSONs (sorted by filename)")


def _load_refs(args) -> tuple[list[stain.ReferenceProfile], list[Path]]:
    paths = [Path(p) for p in args.refs]
    if args.refs_dir:
        paths += sorted(Path(args.refs_dir).glob("*.json"))
    return [stain.profile_from_json(p.read_text()) for p in paths], paths


def _ensemble_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("ensemble")
    g.add_argument("--weight-original", type=float, default=50.0)
    g.add_argument("--weight-per-reference", type=float, default=7.14)
    g.add_argument("--rot90", action="store_true", help="add 90-degree-rotation variants")
    g.add_argument("--hflip", action="store_true", help="add horizontal-flip variants")


# ---------------------------------------------------------------------------
# Subcommands

def cmd_select_refs(args) -> int:
    manifest = dataio.load_manifest(args.manifest)
    params = _norm_params(args)
    annotated, skipped = [], []
    for entry in manifest.split("train"):
        if entry.mask_path is None or entry.organ is None:
            skipped.append(entry.image_id)
            continue
        annotated.append(refselect.AnnotatedImage(
            image=dataio.read_rgb(entry.image_path),
            mask=dataio.read_labels(entry.mask_path),
            organ=entry.organ,
            image_id=entry.image_id,
        ))
    if skipped:
        log.warning("skipping %d entries without mask/organ: %s", len(skipped), ", ".join(skipped))
    if not annotated:
        raise ManifestError(["no train entries with both mask and organ"])

    problems = []
    rows = []
    for img in annotated:
        try:
            rows.append(refselect.contrast_score(img))
        except EmptyRegion as exc:
            problems.append(f"{img.image_id}: {exc}")
    if problems:
        raise ManifestError(problems)

    chosen = refselect.select_references(annotated, k_per_organ=args.k_per_organ)
    out = Path(args.out_dir)
    profiles_dir = out / "profiles"
    profiles_dir.mkdir(parents=True, exist_ok=True)
    selections: dict[str, list[str]] = {}
    for img in chosen:
        profile = stain.build_reference_profile(img.image, params, source_id=img.image_id)
        (profiles_dir / f"{img.organ}__{img.image_id}.json").write_text(
            stain.profile_to_json(profile)
        )
        selections.setdefault(img.organ, []).append(img.image_id)
    (out / "selections.json").write_text(json.dumps(selections, indent=2, sort_keys=True) + "\n")

    table = refselect.score_table(annotated)
    (out / "scores.json").write_text(json.dumps(
        [{
            "id": s.image_id, "organ": s.organ, "score": s.score,
            "mean_nuclei": s.mean_nuclei, "mean_background": s.mean_background,
        } for s in table],
        indent=2,
    ) + "\n")
    width = max(len(s.image_id) for s in table)
    for s in table:
        mark = "*" if s.image_id in selections.get(s.organ, []) else " "
        print(f"{mark} {s.image_id:<{width}}  {s.organ:<12} score={s.score:.2f}")
    log.info("wrote %d profiles to %s", len(chosen), profiles_dir)
    return 0


def cmd_normalize(args) -> int:
    img = dataio.read_rgb(args.input)
    profile = stain.profile_from_json(Path(args.ref_profile).read_text())
    out = stain.normalize_to_reference(img, profile, _norm_params(args))
    dataio.write_rgb(out, args.out)
    return 0


def cmd_augment_plan(args) -> int:
    profiles, paths = _load_refs(args)
    if not profiles:
        raise ParseError("augment-plan needs at least one reference (--refs/--refs-dir)")
    plan = augment.AugmentationPlan(
        references=profiles, p_passthrough=args.p_passthrough, seed=args.seed
    )
    Path(args.out).write_text(augment.plan_to_json(plan, [str(p) for p in paths]))
    return 0


def cmd_augment_apply(args) -> int:
    manifest = dataio.load_manifest(args.manifest)
    plan_path = Path(args.plan)
    plan = augment.plan_from_json(plan_path.read_text(), base_dir=plan_path.parent)
    params = _norm_params(args)
    train = manifest.split("train")
    if not train:
        raise ManifestError(["manifest has no train entries to materialize"])
    ref = plan.references[0]
    if len(plan.references) > 1:
        log.warning("plan has %d references; offline modes use the first", len(plan.references))

    out = Path(args.out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    entries: list[dataio.ManifestEntry] = []
    failures: list[str] = []

    def emit(image_id: str, img: np.ndarray, src: dataio.ManifestEntry) -> None:
        path = out / "images" / f"{image_id}.png"
        dataio.write_rgb(img, path)
        entries.append(dataio.ManifestEntry(
            image_id=image_id, image_path=path,
            mask_path=src.mask_path, organ=src.organ, split="train",
        ))

    for entry in train:
        img = dataio.read_rgb(entry.image_path)
        if args.mode == "extend":
            emit(entry.image_id, img, entry)
        try:
            normalized = stain.normalize_to_reference(img, ref, params)
        except StainsegError as exc:
            failures.append(f"{entry.image_id}: {exc}")
            continue
        suffix = "__norm" if args.mode == "extend" else ""
        emit(entry.image_id + suffix, normalized, entry)

    dataio.save_manifest(
        dataio.DatasetManifest(name=f"{manifest.name}-{args.mode}", entries=entries),
        out / "manifest.json",
    )
    if failures:
        for f in failures:
            print(f"normalization failed: {f}", file=sys.stderr)
        return 2
    log.info("materialized %d images to %s", len(entries), out)
    return 0


def cmd_emit_variants(args) -> int:
    manifest = dataio.load_manifest(args.manifest)
    profiles, _ = _load_refs(args)
    params = _norm_params(args)
    spec = tta.EnsembleSpec(
        references=profiles,
        weight_original=args.weight_original,
        weight_per_reference=args.weight_per_reference,
        rot90=args.rot90,
        hflip=args.hflip,
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = sorted(
        (e for e in manifest.entries if args.split in ("all", e.split)),
        key=lambda e: e.image_id,
    )
    index = []

    def one(entry: dataio.ManifestEntry) -> dict:
        img = dataio.read_rgb(entry.image_path)
        pad_to = experiments.pad_for_image(img.shape, args.pad)
        written = []
        for v in tta.make_variants(img, spec, params):
            vimg = v.image
            if pad_to is not None:
                vimg, _ = tta.pad_white(vimg, pad_to, pad_to)
            dataio.write_rgb(vimg, out / f"{entry.image_id}__{v.variant_id}.png")
            written.append(v.variant_id)
        return {
            "id": entry.image_id,
            "variants": written,
            "width": img.shape[1],
            "height": img.shape[0],
            "padded": pad_to,
        }

    for entry in entries:
        index.append(one(entry))
    (out / "variants.json").write_text(json.dumps({"images": index}, indent=2) + "\n")
    log.info("emitted variants for %d images to %s", len(index), out)
    return 0


def cmd_infer(args) -> int:
    manifest = dataio.load_manifest(args.manifest)
    profiles, _ = _load_refs(args)
    if args.mode == "ttsn" and not profiles:
        raise ParseError("infer --mode ttsn needs references (--refs/--refs-dir)")
    experiments.infer_maps(
        manifest, args.predictor, profiles, Path(args.out_dir),
        ttsn=args.mode == "ttsn",
        ensemble=experiments.EnsembleSettings(
            references=[], weight_original=args.weight_original,
            weight_per_reference=args.weight_per_reference,
            rot90=args.rot90, hflip=args.hflip,
        ),
        params=_norm_params(args), pad=args.pad, jobs=args.jobs,
    )
    return 0


def cmd_postprocess(args) -> int:
    experiments.maps_to_instances(
        Path(args.maps_dir), Path(args.out_dir), _post_params(args), jobs=args.jobs
    )
    return 0


def cmd_evaluate(args) -> int:
    manifest = dataio.load_manifest(args.gt_manifest)
    report = experiments.evaluate_instances(manifest, Path(args.pred_dir), jobs=args.jobs)
    if args.report:
        Path(args.report).write_text(metrics.report_to_json(report))
    name = args.name or Path(args.pred_dir).name
    print(metrics.format_table([(name, report)]), end="")
    return 0


def cmd_run_experiment(args) -> int:
    cfg = experiments.load_config(args.config)
    overrides = {}
    for key in ("mode", "seed", "out_dir", "jobs", "predictor", "manifest", "pad", "epochs"):
        value = getattr(args, key)
        if value is not None and key != "mode":
            overrides[key] = value
    modes = [cfg.mode] if args.mode in (None, cfg.mode) else (
        list(experiments.MODES) if args.mode == "all" else [args.mode]
    )
    if overrides:
        import dataclasses

        cfg = dataclasses.replace(cfg, **overrides)
    rows = experiments.run_modes(cfg, modes)
    table = metrics.format_table(rows)
    print(table, end="")
    (Path(cfg.out_dir) / "table.txt").write_text(table)
    return 0


def cmd_make_fixture(args) -> int:
    manifest_path = fixtures.make_fixture(
        args.out_dir, seed=args.seed, n_train=args.n_train, n_test=args.n_test,
        size=args.size, shift_degrees=args.shift_degrees,
    )
    print(manifest_path)
    return 0


def cmd_mock_predict(args) -> int:
    prior = fixtures.load_prior(args.profile)
    if args.input:
        if not args.out:
            raise ParseError("--out is required with --in")
        img = dataio.read_rgb(args.input)
        dataio.write_f32m(fixtures.stain_prior_predict(img, prior), args.out)
        return 0
    if not (args.in_dir and args.out_dir):
        raise ParseError("mock-predict needs --in/--out or --in-dir/--out-dir")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for path in sorted(Path(args.in_dir).glob("*.png")):
        img = dataio.read_rgb(path)
        dataio.write_f32m(fixtures.stain_prior_predict(img, prior), out / f"{path.stem}.f32m")
    return 0


# ---------------------------------------------------------------------------
# Parser assembly

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stainseg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="info-level progress on stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("select-refs", help="pick per-organ reference images and fit their profiles")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--k-per-organ", type=int, default=1)
    _norm_flags(p)
    p.set_defaults(func=cmd_select_refs)

    p = sub.add_parser("normalize", help="normalize one image to a reference profile")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--ref-profile", required=True)
    p.add_argument("--out", required=True)
    _norm_flags(p)
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("augment-plan", help="write a seeded augmentation plan JSON")
    _ref_flags(p)
    p.add_argument("--p-passthrough", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_augment_plan)

    p = sub.add_parser("augment-apply", help="materialize an offline-normalized training set")
    p.add_argument("--manifest", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--mode", choices=("replace", "extend"), required=True)
    p.add_argument("--out-dir", required=True)
    _norm_flags(p)
    p.set_defaults(func=cmd_augment_apply)

    p = sub.add_parser("emit-variants", help="write padded variant PNGs for an external predictor")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=("train", "test", "all"), default="test")
    p.add_argument("--pad", choices=experiments.PAD_CHOICES, default="auto")
    p.add_argument("--out-dir", required=True)
    _ref_flags(p)
    _ensemble_flags(p)
    _norm_flags(p)
    p.set_defaults(func=cmd_emit_variants)

    p = sub.add_parser("infer", help="produce probability/distance maps for the test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--predictor", required=True,
                   help="'map-dir:<path>' or 'cmd:<template with {input} {output}>'")
    p.add_argument("--mode", choices=("baseline", "ttsn"), default="baseline")
    p.add_argument("--pad", choices=experiments.PAD_CHOICES, default="auto")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--jobs", type=int, default=1)
    _ref_flags(p)
    _ensemble_flags(p)
    _norm_flags(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("postprocess", help="convert maps to instance label PNGs")
    p.add_argument("--maps-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--jobs", type=int, default=1)
    _post_flags(p)
    p.set_defaults(func=cmd_postprocess)

    p = sub.add_parser("evaluate", help="score predicted instances against ground truth")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-manifest", required=True)
    p.add_argument("--report", default=None, help="write the JSON report here")
    p.add_argument("--name", default=None, help="row label for the printed table")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run-experiment", help="run one (or all) of the five experiment modes")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=experiments.MODES + ("all",), default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--manifest", default=None)
    p.add_argument("--predictor", default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--pad", choices=experiments.PAD_CHOICES, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.set_defaults(func=cmd_run_experiment)

    p = sub.add_parser("make-fixture", help="render the synthetic stain-shift demo dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=7)
    p.add_argument("--n-test", type=int, default=4)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--shift-degrees", type=float, default=20.0)
    p.set_defaults(func=cmd_make_fixture)

    p = sub.add_parser("mock-predict", help="stain-prior mock predictor (fixture tool)")
    p.add_argument("--profile", required=True, help="reference profile JSON acting as the prior")
    p.add_argument("--in", dest="input", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--in-dir", default=None)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_mock_predict)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ParseError, ManifestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except StageFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StainsegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
