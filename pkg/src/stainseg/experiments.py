"""End-to-end experiment runner: the five train/test normalization setups.

A run config names a mode, a dataset manifest, and a predictor handle; the
runner prepares mode-specific training data artifacts, infers maps for the
test split, converts them to instances, and scores them against ground
truth. Every run writes its fully resolved configuration next to its
outputs, and rerunning from that file reproduces the outputs byte for
byte, whatever the job count.

Modes:
  baseline          no normalization anywhere; single predictor call
  offline           training set replaced by copies normalized to the first
                    reference; test-side identical to baseline
  extended_offline  training set doubled (originals + normalized copies)
  nondet            seeded per-(epoch, item) branch draws materialized for
                    the training set; test-side identical to baseline
  nondet_ttsn       nondet preparation plus the weighted test-time
                    normalization ensemble at inference
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import augment, dataio, metrics, postprocess, refselect, stain, tta
from .errors import ParseError, StageFailure, StainsegError

MODES = ("baseline", "offline", "extended_offline", "nondet", "nondet_ttsn")
SCHEMA_VERSION = 1
PAD_CHOICES = ("auto", "1024", "1056", "none")


@dataclass
class EnsembleSettings:
    """Reference list and weights for the test-time ensemble.

    An empty reference list means "derive by contrast-based selection from
    the training split" (k_per_organ profiles per organ).
    """

    references: list[str] = field(default_factory=list)
    weight_original: float = 50.0
    weight_per_reference: float = 7.14
    rot90: bool = False
    hflip: bool = False


@dataclass
class RunConfig:
    mode: str
    manifest: str
    predictor: str
    out_dir: str
    seed: int = 0
    pad: str = "auto"
    jobs: int = 1
    epochs: int = 1
    k_per_organ: int = 1
    normalization: stain.NormalizationParams = field(default_factory=stain.NormalizationParams)
    postprocess: postprocess.PostprocessParams = field(default_factory=postprocess.PostprocessParams)
    ensemble: EnsembleSettings = field(default_factory=EnsembleSettings)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.pad not in PAD_CHOICES:
            raise ValueError(f"pad must be one of {PAD_CHOICES}, got {self.pad!r}")
        if self.jobs < 1:
            raise ValueError(f"jobs must be >= 1, got {self.jobs}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")


# ---------------------------------------------------------------------------
# Config (de)serialization

def config_to_dict(cfg: RunConfig) -> dict:
    n = cfg.normalization
    p = cfg.postprocess
    e = cfg.ensemble
    return {
        "schema_version": SCHEMA_VERSION,
        "mode": cfg.mode,
        "manifest": str(cfg.manifest),
        "predictor": cfg.predictor,
        "out_dir": str(cfg.out_dir),
        "seed": cfg.seed,
        "pad": cfg.pad,
        "jobs": cfg.jobs,
        "epochs": cfg.epochs,
        "k_per_organ": cfg.k_per_organ,
        "rng_algorithm": augment.RNG_ALGORITHM,
        "normalization": {
            "io": n.io, "beta": n.beta, "alpha": n.alpha,
            "sat_percentile": n.sat_percentile,
        },
        "postprocess": {
            "prob_threshold": p.prob_threshold,
            "gaussian_sigma": p.gaussian_sigma,
            "marker_h": p.marker_h,
            "min_instance_area": p.min_instance_area,
            "opening_radius": p.opening_radius,
        },
        "ensemble": {
            "references": [str(r) for r in e.references],
            "weight_original": e.weight_original,
            "weight_per_reference": e.weight_per_reference,
            "rot90": e.rot90,
            "hflip": e.hflip,
        },
    }


_TOP_KEYS = {
    "schema_version", "mode", "manifest", "predictor", "out_dir", "seed",
    "pad", "jobs", "epochs", "k_per_organ", "rng_algorithm",
    "normalization", "postprocess", "ensemble",
}


def config_from_dict(doc: dict, base_dir: str | Path = ".") -> RunConfig:
    """Build a RunConfig, resolving relative paths against base_dir."""
    if not isinstance(doc, dict):
        raise ParseError("run config must be a JSON object")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ParseError(f"unknown config keys: {sorted(unknown)}")
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ParseError(f"unsupported schema_version {version}, expected {SCHEMA_VERSION}")
    for key in ("mode", "manifest", "predictor", "out_dir"):
        if key not in doc:
            raise ParseError(f"run config missing required key {key!r}")
    base = Path(base_dir)

    def resolve(p: str) -> str:
        path = Path(p)
        return str(path if path.is_absolute() else base / path)

    n = doc.get("normalization", {})
    p = doc.get("postprocess", {})
    e = doc.get("ensemble", {})
    try:
        return RunConfig(
            mode=doc["mode"],
            manifest=resolve(doc["manifest"]),
            predictor=doc["predictor"],
            out_dir=resolve(doc["out_dir"]),
            seed=int(doc.get("seed", 0)),
            pad=str(doc.get("pad", "auto")),
            jobs=int(doc.get("jobs", 1)),
            epochs=int(doc.get("epochs", 1)),
            k_per_organ=int(doc.get("k_per_organ", 1)),
            normalization=stain.NormalizationParams(
                io=float(n.get("io", 255.0)),
                beta=float(n.get("beta", 0.15)),
                alpha=float(n.get("alpha", 1.0)),
                sat_percentile=float(n.get("sat_percentile", 99.0)),
            ),
            postprocess=postprocess.PostprocessParams(
                prob_threshold=float(p.get("prob_threshold", 0.5)),
                gaussian_sigma=float(p.get("gaussian_sigma", 1.0)),
                marker_h=None if p.get("marker_h") is None else float(p["marker_h"]),
                min_instance_area=int(p.get("min_instance_area", 10)),
                opening_radius=int(p.get("opening_radius", 1)),
            ),
            ensemble=EnsembleSettings(
                references=[resolve(r) for r in e.get("references", [])],
                weight_original=float(e.get("weight_original", 50.0)),
                weight_per_reference=float(e.get("weight_per_reference", 7.14)),
                rot90=bool(e.get("rot90", False)),
                hflip=bool(e.get("hflip", False)),
            ),
        )
    except (TypeError, ValueError) as exc:
        raise ParseError(f"bad run config value: {exc}") from exc


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return config_from_dict(doc, base_dir=path.parent)


# ---------------------------------------------------------------------------
# Stage helpers

def pad_for_image(shape: tuple[int, ...], pad: str) -> int | None:
    """Target square side for one image, or None for no padding."""
    if pad == "none":
        return None
    if pad in ("1024", "1056"):
        return int(pad)
    longest = max(shape[0], shape[1])
    if longest <= 1024:
        return 1024
    return 1056  # pad_white raises if even this is too small


def _map_jobs(fn, items, jobs: int) -> list:
    """Run fn over items, in order, optionally on a thread pool.

    Results come back in input order so downstream reductions never depend
    on scheduling.
    """
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def resolve_references(
    cfg: RunConfig, manifest: dataio.DatasetManifest, mode_dir: Path
) -> tuple[list[stain.ReferenceProfile], list[Path]]:
    """Load configured reference profiles, or derive them from the train split."""
    if cfg.ensemble.references:
        paths = [Path(r) for r in cfg.ensemble.references]
        return [stain.profile_from_json(p.read_text()) for p in paths], paths

    annotated = []
    for entry in manifest.split("train"):
        if entry.mask_path is None or entry.organ is None:
            continue
        annotated.append(
            refselect.AnnotatedImage(
                image=dataio.read_rgb(entry.image_path),
                mask=dataio.read_labels(entry.mask_path),
                organ=entry.organ,
                image_id=entry.image_id,
            )
        )
    chosen = refselect.select_references(annotated, k_per_organ=cfg.k_per_organ)
    refs_dir = mode_dir / "refs"
    refs_dir.mkdir(parents=True, exist_ok=True)
    profiles, paths = [], []
    for img in chosen:
        profile = stain.build_reference_profile(
            img.image, cfg.normalization, source_id=img.image_id
        )
        path = refs_dir / f"{img.organ}__{img.image_id}.json"
        path.write_text(stain.profile_to_json(profile))
        profiles.append(profile)
        paths.append(path)
    if not profiles:
        raise StainsegError(
            "no reference profiles could be derived: the train split needs "
            "entries with both masks and organ labels"
        )
    return profiles, paths


def prepare_training_data(
    cfg: RunConfig,
    manifest: dataio.DatasetManifest,
    refs: list[stain.ReferenceProfile],
    ref_paths: list[Path],
    mode_dir: Path,
) -> None:
    """Materialize the mode's training-side artifacts."""
    train = manifest.split("train")
    if cfg.mode == "baseline" or not train:
        return

    if cfg.mode in ("offline", "extended_offline"):
        out = mode_dir / "train_prepared"
        (out / "images").mkdir(parents=True, exist_ok=True)
        mode = "replace" if cfg.mode == "offline" else "extend"
        images = [dataio.read_rgb(e.image_path) for e in train]
        ids = [e.image_id for e in train]
        materialized = augment.materialize_offline(
            images, refs[0], cfg.normalization, mode, ids=ids
        )
        out_ids = ids if mode == "replace" else ids + [f"{i}__norm" for i in ids]
        source = train if mode == "replace" else train + train
        entries = []
        for image_id, img, src in zip(out_ids, materialized, source):
            path = out / "images" / f"{image_id}.png"
            dataio.write_rgb(img, path)
            entries.append(
                dataio.ManifestEntry(
                    image_id=image_id,
                    image_path=path,
                    mask_path=src.mask_path,
                    organ=src.organ,
                    split="train",
                )
            )
        dataio.save_manifest(
            dataio.DatasetManifest(name=f"{manifest.name}-{cfg.mode}", entries=entries),
            out / "manifest.json",
        )
        return

    # nondet / nondet_ttsn: seeded plan, per-(epoch, item) draws, one
    # materialized epoch directory per epoch.
    plan = augment.AugmentationPlan(
        references=refs, p_passthrough=0.5, seed=cfg.seed
    )
    (mode_dir / "plan.json").write_text(
        augment.plan_to_json(plan, [str(p.resolve()) for p in ref_paths])
    )
    draws_doc = []
    out = mode_dir / "train_prepared"
    for epoch in range(cfg.epochs):
        epoch_dir = out / f"epoch{epoch:03d}"
        epoch_dir.mkdir(parents=True, exist_ok=True)
        for item, entry in enumerate(train):
            draw = augment.draw_for_item(plan, epoch, item)
            draws_doc.append({
                "epoch": epoch,
                "item": item,
                "id": entry.image_id,
                "branch": "passthrough" if draw.is_passthrough else draw.reference_index,
                "rng_stream": draw.rng_stream_id,
            })
            img = dataio.read_rgb(entry.image_path)
            augmented = augment.apply_augmentation(img, draw, plan, cfg.normalization)
            dataio.write_rgb(augmented, epoch_dir / f"{entry.image_id}.png")
    (mode_dir / "draws.json").write_text(json.dumps(draws_doc, indent=2) + "\n")


def infer_maps(
    manifest: dataio.DatasetManifest,
    predictor_handle: str,
    refs: list[stain.ReferenceProfile],
    maps_dir: Path,
    *,
    ttsn: bool,
    ensemble: EnsembleSettings | None = None,
    params: stain.NormalizationParams | None = None,
    pad: str = "auto",
    jobs: int = 1,
) -> None:
    """Write one 2-channel F32M map per test image (probability, distance)."""
    maps_dir.mkdir(parents=True, exist_ok=True)
    ensemble = ensemble or EnsembleSettings()
    params = params or stain.NormalizationParams()
    predictor = tta.resolve_predictor(predictor_handle)
    test = sorted(manifest.split("test"), key=lambda e: e.image_id)
    spec = tta.EnsembleSpec(
        references=refs if ttsn else [],
        weight_original=ensemble.weight_original,
        weight_per_reference=ensemble.weight_per_reference,
        rot90=ensemble.rot90 if ttsn else False,
        hflip=ensemble.hflip if ttsn else False,
    )

    def one(entry: dataio.ManifestEntry) -> None:
        img = dataio.read_rgb(entry.image_path)
        pad_to = pad_for_image(img.shape, pad)
        prob, dist = tta.run_ttsn(
            img, predictor, spec, params,
            image_id=entry.image_id, pad_to=pad_to,
        )
        stacked = np.stack([prob, dist], axis=-1).astype(np.float32)
        dataio.write_f32m(stacked, maps_dir / f"{entry.image_id}.f32m")

    _map_jobs(one, test, jobs)


def maps_to_instances(
    maps_dir: Path, inst_dir: Path, params: postprocess.PostprocessParams, jobs: int = 1
) -> None:
    inst_dir.mkdir(parents=True, exist_ok=True)
    paths = sorted(maps_dir.glob("*.f32m"))

    def one(path: Path) -> None:
        maps = dataio.read_f32m(path)
        inst = postprocess.instances_from_maps(maps[..., 0], maps[..., 1], params)
        dataio.write_labels(inst, inst_dir / f"{path.stem}.png")

    _map_jobs(one, paths, jobs)


def evaluate_instances(
    manifest: dataio.DatasetManifest, inst_dir: Path, jobs: int = 1
) -> metrics.MetricsReport:
    test = sorted(
        (e for e in manifest.split("test") if e.mask_path is not None),
        key=lambda e: e.image_id,
    )
    if not test:
        raise StainsegError("no test entries with ground-truth masks to evaluate")

    def one(entry: dataio.ManifestEntry) -> tuple[str, metrics.MetricsReport]:
        gt = dataio.read_labels(entry.mask_path)
        pred = dataio.read_labels(inst_dir / f"{entry.image_id}.png")
        return entry.image_id, metrics.score_pair(gt, pred)

    per_image = dict(_map_jobs(one, test, jobs))
    return metrics.aggregate(per_image)


# ---------------------------------------------------------------------------
# Runner

def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageFailure:
        raise
    except Exception as exc:
        raise StageFailure(name, exc) from exc


def run_experiment(cfg: RunConfig) -> metrics.MetricsReport:
    """Execute one mode end to end; returns the aggregate report.

    Outputs land under <out_dir>/<mode>/: effective_config.json, the
    training-data artifacts, maps/, instances/, and report.json.
    """
    mode_dir = Path(cfg.out_dir) / cfg.mode
    mode_dir.mkdir(parents=True, exist_ok=True)
    manifest = dataio.load_manifest(cfg.manifest)

    refs: list[stain.ReferenceProfile] = []
    ref_paths: list[Path] = []
    if cfg.mode != "baseline":
        refs, ref_paths = _stage("references", resolve_references, cfg, manifest, mode_dir)

    # The emitted config must rerun identically from anywhere, so every
    # path in it is absolute.
    predictor = cfg.predictor
    if predictor.startswith("map-dir:"):
        predictor = "map-dir:" + str(Path(predictor[len("map-dir:"):]).resolve())
    effective = replace(
        cfg,
        manifest=str(Path(cfg.manifest).resolve()),
        predictor=predictor,
        out_dir=str(Path(cfg.out_dir).resolve()),
        ensemble=replace(
            cfg.ensemble, references=[str(p.resolve()) for p in ref_paths]
        ),
    )
    (mode_dir / "effective_config.json").write_text(
        json.dumps(config_to_dict(effective), indent=2) + "\n"
    )

    _stage("prepare", prepare_training_data, cfg, manifest, refs, ref_paths, mode_dir)
    _stage(
        "infer", infer_maps, manifest, cfg.predictor, refs, mode_dir / "maps",
        ttsn=cfg.mode == "nondet_ttsn", ensemble=cfg.ensemble,
        params=cfg.normalization, pad=cfg.pad, jobs=cfg.jobs,
    )
    _stage(
        "postprocess", maps_to_instances,
        mode_dir / "maps", mode_dir / "instances", cfg.postprocess, cfg.jobs,
    )
    report = _stage("evaluate", evaluate_instances, manifest, mode_dir / "instances", cfg.jobs)
    (mode_dir / "report.json").write_text(metrics.report_to_json(report))
    return report


def run_modes(cfg: RunConfig, modes: list[str]) -> list[tuple[str, metrics.MetricsReport]]:
    """Run several modes against one out_dir; returns table rows in order."""
    rows = []
    for mode in modes:
        rows.append((mode, run_experiment(replace(cfg, mode=mode))))
    return rows
