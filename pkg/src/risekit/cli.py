"""Command-line front end: explanation runs, metric evaluation, reports.

Configuration precedence is CLI flags > config file > built-in defaults
(4000 masks on a 7x7 grid at p=0.5 for 224x224 inputs). Every command
with a fixed seed is end-to-end reproducible and writes only under the
configured output directory. Exit codes: 0 success, 2 config error,
3 transport/protocol error, 4 data error.
"""

import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import click

from . import baselines, imagegrid, masking, metrics, modelbridge, saliency
from .errors import (
    DataError,
    ImageIOError,
    InvalidConfigError,
    ProbeError,
    ProtocolError,
    RemoteError,
    RiseKitError,
    TransportError,
)

SCORER_URL_ENV = "RISEKIT_SCORER_URL"

DEFAULTS = {
    "masks": 4000,
    "grid_h": 7,
    "grid_w": 7,
    "prob": 0.5,
    "seed": 0,
    "size": 224,
    "norm": "analytic",
    "alpha": 0.5,
    "blur_kernel": metrics.DEFAULT_BLUR_KERNEL,
    "blur_sigma": metrics.DEFAULT_BLUR_SIGMA,
    "saliency_method": "rise",
    "jobs": min(os.cpu_count() or 1, 4),
}


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (TransportError, ProtocolError, RemoteError)):
        return 3
    if isinstance(exc, ProbeError):
        if isinstance(exc.__cause__, (TransportError, ProtocolError, RemoteError)):
            return 3
        return 4
    if isinstance(exc, (DataError, ImageIOError)):
        return 4
    return 2


def parse_config_file(path: Path) -> dict:
    """Parse a TOML-like ``key = value`` file; '#' starts a comment."""
    values: dict[str, object] = {}
    try:
        text = path.read_text()
    except OSError as exc:
        raise InvalidConfigError(f"cannot read config {path}: {exc}") from exc
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfigError(f"{path}:{number}: expected 'key = value'")
        key, _, value = line.partition("=")
        values[key.strip()] = _coerce(value.strip())
    return values


def _coerce(value: str):
    if value.lower() in ("true", "false"):
        return value.lower() == "true"
    if len(value) >= 2 and value[0] == value[-1] and value[0] in "'\"":
        return value[1:-1]
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        return value


def resolve(flag_values: dict, config_path: str | None) -> dict:
    """Merge flags over a config file over the built-in defaults."""
    merged = dict(DEFAULTS)
    if config_path:
        merged.update(parse_config_file(Path(config_path)))
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    return merged


def make_scorer(spec: str | None) -> modelbridge.ScoreFunction:
    """Build a scorer from a spec string.

    Forms: ``synthetic:constant:C``, ``synthetic:region_mean:Y0,X0,Y1,X1``,
    ``synthetic:template_dot:RSAL_PATH[:BIAS]``, ``subprocess:CMD``, and
    ``http:URL`` (bare ``http:`` falls back to $RISEKIT_SCORER_URL).
    """
    if not spec:
        raise InvalidConfigError("no scorer configured; pass --scorer")
    if spec.startswith("synthetic:"):
        kind, _, params = spec[len("synthetic:") :].partition(":")
        try:
            if kind == "constant":
                return modelbridge.ConstantModel(float(params))
            if kind == "region_mean":
                y0, x0, y1, x1 = (int(v) for v in params.split(","))
                return modelbridge.RegionMeanModel(y0, x0, y1, x1)
            if kind == "template_dot":
                path, _, bias = params.partition(":")
                template = imagegrid.load_saliency(path).data
                return modelbridge.TemplateDotModel(template, float(bias) if bias else 0.0)
        except (TypeError, ValueError) as exc:
            raise InvalidConfigError(f"bad synthetic scorer spec {spec!r}: {exc}") from exc
        raise InvalidConfigError(f"unknown synthetic scorer {kind!r}")
    if spec.startswith("subprocess:"):
        return modelbridge.SubprocessScorer(spec[len("subprocess:") :])
    if spec == "http" or spec.startswith(("http:", "https://")):
        rest = spec[len("http:") :] if spec.startswith("http:") else ""
        if spec.startswith("https://") or rest.startswith("//"):
            return modelbridge.HttpScorer(spec)
        url = rest or os.environ.get(SCORER_URL_ENV, "")
        if not url:
            raise InvalidConfigError(
                f"scorer spec {spec!r} names no URL and ${SCORER_URL_ENV} is unset"
            )
        return modelbridge.HttpScorer(url)
    raise InvalidConfigError(f"unrecognized scorer spec {spec!r}")


def parse_target(text) -> modelbridge.TargetSpec:
    """``N`` or ``class:N`` for a class index; ``token:WORD[:CTX,...]`` for conditional."""
    text = str(text)
    if text.startswith("token:"):
        word, _, context = text[len("token:") :].partition(":")
        tokens = tuple(t for t in context.split(",") if t) if context else ()
        return modelbridge.TargetSpec.for_token(word, tokens)
    if text.startswith("class:"):
        text = text[len("class:") :]
    try:
        return modelbridge.TargetSpec.for_class(int(text))
    except ValueError as exc:
        raise InvalidConfigError(f"bad target spec {text!r}") from exc


@dataclass(frozen=True)
class RunConfig:
    """Validated settings shared by the pipeline commands."""

    scorer_spec: str
    images: tuple[Path, ...]
    target: modelbridge.TargetSpec
    mask_config: masking.MaskConfig
    out_dir: Path
    norm: str
    alpha: float
    steps: int | None
    blur_kernel: int
    blur_sigma: float
    saliency_method: str
    strict: bool
    resume: bool
    jobs: int

    @classmethod
    def build(cls, merged: dict, images: tuple[str, ...], need_images: bool = True):
        paths = tuple(Path(p) for p in images)
        if need_images and not paths:
            raise InvalidConfigError("no input images given")
        missing = [str(p) for p in paths if not p.is_file()]
        if missing:
            raise InvalidConfigError(f"missing image paths: {', '.join(missing)}")
        if not merged.get("out"):
            raise InvalidConfigError("no output directory; pass --out")
        size = int(merged["size"])
        mask_config = masking.MaskConfig(
            grid_h=int(merged["grid_h"]),
            grid_w=int(merged["grid_w"]),
            prob_on=float(merged["prob"]),
            num_masks=int(merged["masks"]),
            image_h=size,
            image_w=size,
            seed=int(merged["seed"]),
        )
        return cls(
            scorer_spec=merged.get("scorer"),
            images=paths,
            target=parse_target(merged.get("target", 0)),
            mask_config=mask_config,
            out_dir=Path(merged["out"]),
            norm=str(merged["norm"]),
            alpha=float(merged["alpha"]),
            steps=int(merged["steps"]) if merged.get("steps") else None,
            blur_kernel=int(merged["blur_kernel"]),
            blur_sigma=float(merged["blur_sigma"]),
            saliency_method=str(merged["saliency_method"]),
            strict=bool(merged.get("strict", False)),
            resume=bool(merged.get("resume", False)),
            jobs=max(1, int(merged["jobs"])),
        )

    def pixels_per_step(self) -> int:
        if self.steps:
            return self.steps
        size = self.mask_config.image_h
        return metrics.default_pixels_per_step(size, size)


def _for_each_image(run: RunConfig, worker):
    """Run ``worker(path)`` per image with a bounded pool; honor --strict."""
    failures: list[tuple[Path, Exception]] = []
    produced = []

    def guarded(path: Path):
        try:
            return path, worker(path), None
        except RiseKitError as exc:
            return path, None, exc

    with ThreadPoolExecutor(max_workers=run.jobs) as pool:
        for path, result, exc in pool.map(guarded, run.images):
            if exc is not None:
                if run.strict:
                    raise exc
                click.echo(f"skipping {path}: {exc}", err=True)
                failures.append((path, exc))
            elif result is not None:
                produced.append((path, result))
    if failures and not produced:
        raise failures[-1][1]
    return produced


def _compute_saliency(
    run: RunConfig,
    scorer,
    image: imagegrid.Image,
    target: modelbridge.TargetSpec | None = None,
    ordinal: int = 0,
):
    method = run.saliency_method
    target = target if target is not None else run.target
    if method == "rise":
        request = saliency.ExplainRequest(
            image=image,
            target=target,
            mask_config=run.mask_config,
            normalization=run.norm,
        )
        return saliency.rise_saliency(request, scorer)
    if method == "random":
        smap = baselines.random_saliency(
            image.height, image.width, run.mask_config.seed + ordinal
        )
        return saliency.ExplainResult(
            saliency=smap, num_probes=0, score_unmasked=math.nan, elapsed=0.0
        )
    if method == "sliding_window":
        config = baselines.SlidingWindowConfig(window=64, stride=8)
        smap = baselines.sliding_window_saliency(image, scorer, config, target)
        base = scorer.score_batch(image.data[None], target)[0]
        return saliency.ExplainResult(
            saliency=smap, num_probes=0, score_unmasked=float(base), elapsed=0.0
        )
    raise InvalidConfigError(f"unknown saliency method {method!r}")


def _sidecar(run: RunConfig, result: saliency.ExplainResult) -> dict:
    score = result.score_unmasked
    return {
        "target": run.target.to_json(),
        "num_probes": result.num_probes,
        "seed": run.mask_config.seed,
        "normalization": run.norm,
        "score_unmasked": None if math.isnan(score) else score,
        "elapsed_s": result.elapsed,
    }


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


@click.group()
def main():
    """Black-box saliency maps and causal evaluation metrics."""


_shared_options = [
    click.option("--scorer", help="synthetic:…, subprocess:…, or http:…"),
    click.option("--masks", type=int, help="number of random masks N"),
    click.option(
        "--grid", nargs=2, type=int, default=None, help="mask grid rows cols"
    ),
    click.option("--prob", type=float, help="probability of keeping a cell"),
    click.option("--seed", type=int, help="base RNG seed"),
    click.option("--target", help="class index or token:WORD[:CTX,…]"),
    click.option("--size", type=int, help="working image size (square)"),
    click.option("--out", help="output directory"),
    click.option("--config", "config_path", help="key = value config file"),
    click.option("--strict", is_flag=True, default=None, help="abort on first failure"),
    click.option("--resume", is_flag=True, default=None, help="skip images with sidecars"),
    click.option("--jobs", type=int, help="parallel image workers"),
]


def shared_options(fn):
    for option in reversed(_shared_options):
        fn = option(fn)
    return fn


def _merge_flags(kwargs: dict) -> dict:
    grid = kwargs.pop("grid", None)
    flags = {k: v for k, v in kwargs.items() if v is not None}
    if grid:
        flags["grid_h"], flags["grid_w"] = grid
    return flags


@main.command()
@click.argument("images", nargs=-1, type=click.Path())
@shared_options
@click.option("--norm", type=click.Choice(["analytic", "empirical"]))
@click.option("--alpha", type=float, help="heatmap overlay opacity")
def explain(images, config_path, **kwargs):
    """Explain images: write a heatmap PNG, raw saliency dump, and JSON sidecar."""
    try:
        run = RunConfig.build(resolve(_merge_flags(kwargs), config_path), images)
        scorer = modelbridge.reentrant_view(make_scorer(run.scorer_spec))
        run.out_dir.mkdir(parents=True, exist_ok=True)
        size = run.mask_config.image_h

        def worker(path: Path):
            sidecar_path = run.out_dir / f"{path.stem}.json"
            if run.resume and sidecar_path.exists():
                click.echo(f"resume: {path.stem} already done")
                return "resumed"
            image = imagegrid.load_image(path, size, size)
            result = _compute_saliency(run, scorer, image)
            imagegrid.save_saliency(result.saliency, run.out_dir / f"{path.stem}.rsal")
            overlay = imagegrid.render_heatmap(result.saliency, image, run.alpha)
            imagegrid.save_image(overlay, run.out_dir / f"{path.stem}_heatmap.png")
            _write_json(sidecar_path, _sidecar(run, result))
            click.echo(f"explained {path.stem}: f(I)={result.score_unmasked:.4f}")
            return "done"

        _for_each_image(run, worker)
    except RiseKitError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(exit_code_for(exc))


@main.command()
@click.argument("images", nargs=-1, type=click.Path())
@shared_options
@click.option("--norm", type=click.Choice(["analytic", "empirical"]))
@click.option("--steps", type=int, help="pixels changed per curve step")
@click.option("--blur-kernel", type=int, help="insertion blur kernel (odd)")
@click.option("--blur-sigma", type=float, help="insertion blur sigma")
@click.option(
    "--saliency-method",
    type=click.Choice(["rise", "random", "sliding_window"]),
    help="saliency source for the curves",
)
def evaluate(images, config_path, **kwargs):
    """Deletion/insertion curves per image plus an aggregate AUC report."""
    try:
        run = RunConfig.build(resolve(_merge_flags(kwargs), config_path), images)
        scorer = modelbridge.reentrant_view(make_scorer(run.scorer_spec))
        run.out_dir.mkdir(parents=True, exist_ok=True)
        size = run.mask_config.image_h
        step = run.pixels_per_step()

        def worker(path: Path):
            image = imagegrid.load_image(path, size, size)
            result = _compute_saliency(run, scorer, image)
            del_curve = metrics.deletion(image, result.saliency, scorer, step, run.target)
            ins_curve = metrics.insertion(
                image,
                result.saliency,
                scorer,
                step,
                run.blur_kernel,
                run.blur_sigma,
                run.target,
            )
            stem = path.stem
            metrics.save_curve_csv(del_curve, run.out_dir / f"{stem}_deletion.csv")
            _write_json(
                run.out_dir / f"{stem}_deletion.json",
                metrics.curve_sidecar("deletion", del_curve, step),
            )
            metrics.save_curve_csv(ins_curve, run.out_dir / f"{stem}_insertion.csv")
            _write_json(
                run.out_dir / f"{stem}_insertion.json",
                metrics.curve_sidecar(
                    "insertion", ins_curve, step, run.blur_kernel, run.blur_sigma
                ),
            )
            click.echo(
                f"evaluated {stem}: deletion={del_curve.auc:.4f} "
                f"insertion={ins_curve.auc:.4f}"
            )
            return del_curve.auc, ins_curve.auc

        produced = _for_each_image(run, worker)
        aucs = [r for _, r in produced]
        summary = {
            "mean_deletion_auc": sum(a for a, _ in aucs) / len(aucs),
            "mean_insertion_auc": sum(b for _, b in aucs) / len(aucs),
            "images": len(aucs),
            "saliency_method": run.saliency_method,
            "seed": run.mask_config.seed,
            "num_masks": run.mask_config.num_masks,
            "pixels_per_step": step,
        }
        _write_json(run.out_dir / "evaluate_summary.json", summary)
        click.echo(json.dumps(summary, sort_keys=True))
    except RiseKitError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(exit_code_for(exc))


@main.command()
@click.argument("images", nargs=-1, type=click.Path())
@shared_options
@click.option("--norm", type=click.Choice(["analytic", "empirical"]))
@click.option("--boxes", "boxes_path", required=True, type=click.Path(exists=False))
@click.option(
    "--category-map",
    "category_map_path",
    help="JSON {category: class index}; unmapped categories are skipped",
)
def point(images, config_path, boxes_path, category_map_path, **kwargs):
    """Pointing game against a JSONL bounding-box file; writes a tally JSON."""
    try:
        run = RunConfig.build(resolve(_merge_flags(kwargs), config_path), images)
        if not Path(boxes_path).is_file():
            raise InvalidConfigError(f"boxes file not found: {boxes_path}")
        scorer = modelbridge.reentrant_view(make_scorer(run.scorer_spec))
        run.out_dir.mkdir(parents=True, exist_ok=True)
        size = run.mask_config.image_h
        boxes_by_image = metrics.load_boxes_jsonl(boxes_path)
        category_map = None
        if category_map_path:
            category_map = json.loads(Path(category_map_path).read_text())

        available = {p.stem: p for p in run.images}
        skipped = [
            {"image_id": image_id, "reason": "image not in inputs"}
            for image_id in sorted(boxes_by_image)
            if image_id not in available
        ]

        results: list[tuple[str, bool]] = []
        for stem, path in sorted(available.items()):
            if stem not in boxes_by_image:
                skipped.append({"image_id": stem, "reason": "no boxes for image"})
                continue
            image = imagegrid.load_image(path, size, size)
            by_category: dict[str, list[metrics.BoundingBox]] = {}
            for box in boxes_by_image[stem]:
                by_category.setdefault(box.category, []).append(box)
            for category, boxes in sorted(by_category.items()):
                if category_map is not None and category not in category_map:
                    skipped.append(
                        {"image_id": stem, "category": category, "reason": "unmapped category"}
                    )
                    continue
                target = (
                    modelbridge.TargetSpec.for_class(int(category_map[category]))
                    if category_map is not None
                    else run.target
                )
                result = _compute_saliency(run, scorer, image, target)
                results.append((category, metrics.pointing_game(result.saliency, boxes)))

        tally = metrics.tally_pointing(results)
        report = tally.to_json()
        report["skipped"] = skipped
        _write_json(run.out_dir / "pointing.json", report)
        click.echo(f"pointing mean accuracy: {tally.mean_accuracy:.4f}")
    except RiseKitError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(exit_code_for(exc))


@main.command()
@shared_options
def masks(config_path, **kwargs):
    """Generate a mask batch: write the RMSK cache and print statistics."""
    try:
        merged = resolve(_merge_flags(kwargs), config_path)
        if not merged.get("out"):
            raise InvalidConfigError("no output directory; pass --out")
        out_dir = Path(merged["out"])
        size = int(merged["size"])
        config = masking.MaskConfig(
            grid_h=int(merged["grid_h"]),
            grid_w=int(merged["grid_w"]),
            prob_on=float(merged["prob"]),
            num_masks=int(merged["masks"]),
            image_h=size,
            image_w=size,
            seed=int(merged["seed"]),
        )
        out_dir.mkdir(parents=True, exist_ok=True)
        batch = masking.generate_masks(config)
        masking.save_mask_batch(batch, out_dir / "masks.rmsk")
        stats = masking.mask_statistics(batch)
        summary = {
            "num_masks": config.num_masks,
            "grid": [config.grid_h, config.grid_w],
            "cell": [config.cell_h, config.cell_w],
            "upsampled": [config.upsampled_h, config.upsampled_w],
            "prob_on": config.prob_on,
            "seed": config.seed,
            "global_mean": stats.global_mean,
            "min": stats.min_value,
            "max": stats.max_value,
            "per_pixel_mean_range": [
                float(stats.per_pixel_mean.min()),
                float(stats.per_pixel_mean.max()),
            ],
        }
        _write_json(out_dir / "masks_stats.json", summary)
        click.echo(json.dumps(summary, sort_keys=True))
    except RiseKitError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(exit_code_for(exc))


if __name__ == "__main__":
    main()
