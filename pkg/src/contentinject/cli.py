"""Command-line entry point.

    contentinject <command> [--config FILE] [--section.key=value ...]

Commands: train, invert, reconstruct, inject, diagnose, sweep.  Every command
writes its artifacts plus ``manifest.cfg`` (the fully resolved configuration,
loadable again with ``--config``) into ``paths.output``.

Exit codes: 0 success, 2 configuration error, 3 contract error, 4 numerical
failure.  Failures print one line to stderr:
``error code=<n> kind=<class> field=<key> message=<text>``.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import diagnostics, toyset
from .config import RunConfig, format_flat, load_config, replace
from .denoiser import init_params, load_checkpoint, save_checkpoint, train
from .errors import ConfigError, ContentInjectError, ContractError
from .experiment import PreparedPairs, prepare_pairs, psnr, run_transfer, transfer_metrics
from .imageio import read_ppm, save_tensor, write_image
from .sampler import ddim_invert, reconstruct

log = logging.getLogger("contentinject")

COMMANDS = ("train", "invert", "reconstruct", "inject", "diagnose", "sweep")
METRIC_HEADER = ("pair", "shape_iou_content", "shape_iou_original", "hist_dist_original", "hist_dist_content")
SWEEP_HEADER = (
    "gamma", "omega", "mean_shape_iou_content", "sem_shape_iou_content", "mean_shape_iou_original",
    "mean_hist_dist_original", "mean_hist_dist_content", "shape_win_rate", "color_win_rate",
)
STEP_HEADER = ("t", "t_prev", "branch", "gamma", "sigma", "h_norm", "h_tilde_norm", "dx_norm")


# ---- helpers ---------------------------------------------------------------


def _split_overrides(extra: list[str]) -> dict[str, str]:
    out = {}
    it = iter(extra)
    for tok in it:
        if not tok.startswith("--"):
            raise ConfigError("argv", f"unexpected argument {tok!r}")
        key, sep, value = tok[2:].partition("=")
        if not sep:
            try:
                value = next(it)
            except StopIteration:
                raise ConfigError(key, "missing value") from None
        out[key] = value
    return out


def _output_dir(cfg: RunConfig, command: str) -> Path:
    out = Path(cfg.paths.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.cfg").write_text(format_flat(cfg, header=[f"command: {command}"]))
    return out


def _load_model(cfg: RunConfig):
    params = load_checkpoint(cfg.paths.checkpoint)
    want = cfg.denoiser_config()
    if params.config != want:
        raise ConfigError("paths.checkpoint", f"checkpoint architecture {params.config} != configured {want}")
    return params


def _load_samples(cfg: RunConfig, source: str, n: int, seed: int) -> list[toyset.ToySample]:
    """A toyset directory, a single PPM, or (when unset) freshly generated samples."""
    if not source:
        return toyset.generate(n, seed=seed, resolution=cfg.denoiser.resolution)
    path = Path(source)
    if path.is_dir():
        samples = toyset.read_dataset(path)
    else:
        img = read_ppm(path)
        samples = [toyset.ToySample(img, None, None)]
    res = cfg.denoiser.resolution
    for s in samples:
        if s.image.shape != (3, res, res):
            raise ConfigError("denoiser.resolution", f"{source}: image shape {s.image.shape} != (3, {res}, {res})")
    return samples


def _images(samples) -> np.ndarray:
    return np.stack([s.image for s in samples]).astype(np.float32)


def _pairs(cfg: RunConfig):
    if bool(cfg.paths.original) != bool(cfg.paths.content):
        raise ConfigError("paths.content", "paths.original and paths.content must be given together")
    if cfg.paths.original:
        a = _load_samples(cfg, cfg.paths.original, 0, 0)
        b = _load_samples(cfg, cfg.paths.content, 0, 0)
        if len(a) != len(b):
            raise ContractError(f"{len(a)} original images but {len(b)} content images")
        return list(zip(a, b))
    return toyset.make_pairs(cfg.data.n_pairs, seed=cfg.seed)


def _write_metrics(path: Path, results: np.ndarray, prepared: PreparedPairs) -> None:
    labelled = all(s.content is not None for s in prepared.originals + prepared.contents)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_HEADER)
        if labelled:
            for row in transfer_metrics(results, prepared).rows():
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        else:
            for i, img in enumerate(results):
                w.writerow([i, "", "", repr(toyset.color_hist_distance(np.clip(img, -1, 1), prepared.originals[i].image)),
                            repr(toyset.color_hist_distance(np.clip(img, -1, 1), prepared.contents[i].image))])


def _sem(v: np.ndarray) -> float:
    return float(np.std(v, ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0


# ---- commands --------------------------------------------------------------


def cmd_train(cfg: RunConfig) -> int:
    out = _output_dir(cfg, "train")
    data = _images(_load_samples(cfg, cfg.paths.dataset, cfg.data.n_samples, cfg.seed))
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    params = init_params(cfg.denoiser_config(), np.random.default_rng(seeds[0]))
    losses: list[tuple[int, float]] = []
    params = train(
        params, data, cfg.make_schedule(), cfg.train.steps, np.random.default_rng(seeds[1]),
        batch_size=cfg.train.batch_size, optim=cfg.adam(),
        on_step=lambda k, loss: losses.append((k, loss)), log_every=cfg.train.log_every,
        snapshot_every=cfg.train.snapshot_every,
        on_snapshot=lambda k, p: save_checkpoint(out / f"checkpoint_{k:06d}.npz", p, meta={"steps": k, "seed": cfg.seed}),
    )
    save_checkpoint(cfg.paths.checkpoint, params, meta={"steps": cfg.train.steps, "seed": cfg.seed})
    with (out / "loss.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("step", "loss"))
        w.writerows((k, repr(float(v))) for k, v in losses)
    print(f"checkpoint={cfg.paths.checkpoint} steps={cfg.train.steps}")
    return 0


def cmd_invert(cfg: RunConfig) -> int:
    params = _load_model(cfg)
    out = _output_dir(cfg, "invert")
    images = _images(_load_samples(cfg, cfg.paths.dataset, cfg.data.n_samples, cfg.seed))
    x_T = ddim_invert(images, params, cfg.make_schedule(), cfg.make_plan(inject=False)).x
    save_tensor(out / "x_T.npy", x_T)
    print(f"x_T={out / 'x_T.npy'} shape={'x'.join(map(str, x_T.shape))}")
    return 0


def cmd_reconstruct(cfg: RunConfig) -> int:
    params = _load_model(cfg)
    out = _output_dir(cfg, "reconstruct")
    sched, plan = cfg.make_schedule(), cfg.make_plan(inject=False)
    images = _images(_load_samples(cfg, cfg.paths.dataset, cfg.data.n_samples, cfg.seed))
    x_T = ddim_invert(images, params, sched, plan)
    recon, _ = reconstruct(x_T, params, sched, plan)
    scores = psnr(recon, images)
    with (out / "psnr.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("id", "psnr_db"))
        for i, (img, s) in enumerate(zip(recon, scores)):
            write_image(out / f"recon_{i:05d}.ppm", img)
            w.writerow((i, repr(float(s))))
    print(f"mean_psnr_db={float(np.mean(scores)):.4f} n={len(scores)}")
    return 0


def _write_steps(path: Path, records) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(STEP_HEADER)
        for r in records:
            norms = [("" if v is None else repr(float(np.mean(v)))) for v in (r.h_norm, r.h_tilde_norm, r.dx_norm)]
            w.writerow([r.t, r.t_prev, r.branch, repr(r.gamma), repr(r.sigma), *norms])


def cmd_inject(cfg: RunConfig) -> int:
    params = _load_model(cfg)
    out = _output_dir(cfg, "inject")
    sched, plan = cfg.make_schedule(), cfg.make_plan()
    prepared = prepare_pairs(_pairs(cfg), params, sched, plan)
    result = run_transfer(prepared, cfg.injection_config(), params, sched, plan, cfg.seed)
    for i, img in enumerate(result.x0):
        write_image(out / f"result_{i:05d}.ppm", img)
    _write_metrics(out / "metrics.csv", result.x0, prepared)
    if cfg.diagnostics.traces:
        _write_steps(out / "steps.csv", result.records)
    print(f"results={len(result.x0)} metrics={out / 'metrics.csv'}")
    return 0


def cmd_sweep(cfg: RunConfig) -> int:
    params = _load_model(cfg)
    out = _output_dir(cfg, "sweep")
    sched, plan = cfg.make_schedule(), cfg.make_plan()
    prepared = prepare_pairs(_pairs(cfg), params, sched, plan)
    gammas = cfg.sweep.gamma or (cfg.injection.gamma,)
    omegas = cfg.sweep.omega or (cfg.injection.omega,)
    rows = []
    for gamma in gammas:
        for omega in omegas:
            run_cfg = replace(cfg, injection__gamma=gamma, injection__omega=omega)
            result = run_transfer(prepared, run_cfg.injection_config(), params, sched, plan, cfg.seed)
            m = transfer_metrics(result.x0, prepared)
            rows.append((gamma, omega, float(m.iou_content.mean()), _sem(m.iou_content),
                         float(m.iou_original.mean()), float(m.hist_original.mean()),
                         float(m.hist_content.mean()), float(m.shape_wins.mean()), float(m.color_wins.mean())))
    with (out / "sweep.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_HEADER)
        w.writerows([r[0], r[1], *map(repr, r[2:])] for r in rows)
    monotone = all(
        all(b[2] >= a[2] - a[3] for a, b in zip(grp, grp[1:]))
        for grp in ([r for r in rows if r[1] == w] for w in omegas)
    )
    print(f"runs={len(rows)} gamma_monotone={'yes' if monotone else 'no'} sweep={out / 'sweep.csv'}")
    return 0


def cmd_diagnose(cfg: RunConfig) -> int:
    params = _load_model(cfg)
    out = _output_dir(cfg, "diagnose")
    n = cfg.data.n_samples
    x_T = np.random.default_rng(cfg.seed).standard_normal((n,) + params.config.image_shape).astype(np.float32)
    trace = diagnostics.record_trace(x_T, params, cfg.make_schedule(), cfg.make_plan(inject=False))
    report = diagnostics.homo_hetero(trace, cfg.diagnostics.pairing_shift)
    diagnostics.write_trace_csv(trace, out / "trace.csv")
    diagnostics.write_report_csv(report, out / "report.csv")
    gap = report.gap(int(0.8 * cfg.schedule.T))
    print(f"rows={len(report.rows)} homo_minus_hetero={gap:.4f} report={out / 'report.csv'}")
    return 0


HANDLERS = {
    "train": (cmd_train, ()),
    "invert": (cmd_invert, ("checkpoint",)),
    "reconstruct": (cmd_reconstruct, ("checkpoint",)),
    "inject": (cmd_inject, ("checkpoint",)),
    "diagnose": (cmd_diagnose, ("checkpoint",)),
    "sweep": (cmd_sweep, ("checkpoint",)),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="contentinject",
        description="Training-free content injection for a toy diffusion model.",
        epilog="Any configuration key can be overridden as --section.key=value, e.g. --injection.gamma=0.6.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="flat section.key=value configuration file")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _fail(exc: ContentInjectError) -> int:
    field = getattr(exc, "field", "")
    msg = str(exc).replace("\n", " ")
    if field and msg.startswith(f"{field}: "):
        msg = msg[len(field) + 2:]
    print(f"error code={exc.exit_code} kind={type(exc).__name__} field={field or '-'} message={msg}",
          file=sys.stderr)
    return exc.exit_code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, _split_overrides(extra))
        handler, required = HANDLERS[args.command]
        cfg.validate(require_paths=required)
        with warnings.catch_warnings():
            if not args.verbose:
                warnings.simplefilter("ignore", RuntimeWarning)
            return handler(cfg)
    except ContentInjectError as exc:
        return _fail(exc)
    except FloatingPointError as exc:
        print(f"error code=4 kind=NumericalError field=- message={exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
