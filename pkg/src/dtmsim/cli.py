"""Command-line surface: prepare, train, generate, analyze-mixing, energy.

Every command reads a TOML run config, validates it up front, and embeds
the resolved config (defaults included) into its output manifests so runs
can be diffed and reproduced.  Exit codes: 0 success, 2 validation error,
3 runtime error.
"""

from __future__ import annotations

import csv
import json
import os
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

import click
import numpy as np

from . import data as dio
from . import diagnostics as diag
from . import hardware
from .boltzmann import load_model, save_model
from .dtm import AcpConfig, DtmModel, TrainConfig, generate, pack_visible, train
from .forward import NoiseSchedule
from .gibbs import SampleTrace, load_trace, save_trace
from .grid import build_grid, build_pattern, load_grid, save_grid

EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

_DEFAULTS = {
    "graph": {"L": 16, "pattern": "G8", "n_visible": 64, "n_labels": 0, "seed": 0},
    "schedule": {"T": 4, "kappa_x": 1.0, "kappa_l": None, "dt": 1.0},
    "train": {"epochs": 30, "batch_size": 64, "learning_rate": 0.05,
              "optimizer": "sgd", "K_grad": 20, "lambda_init": 0.01,
              "acp_epsilon": 0.03, "acp_delta": 0.2, "acp_lambda_min": 1e-4,
              "acp_probe_interval": 5, "acp_enabled": True, "seed": 0},
    "sample": {"K_mix": 250, "n_samples": 64, "seed": 0},
    "dataset": {"kind": "synthetic", "n_samples": 2048, "n_modes": 3,
                "flip_prob": 0.02, "threshold": 127, "seed": 0,
                "images": None, "labels": None, "conditional": False,
                "label_repetitions": 5},
    "energy": {},
}


class ConfigError(ValueError):
    pass


def load_config(path) -> dict:
    with open(path, "rb") as f:
        raw = tomllib.load(f)
    cfg = {}
    for section, defaults in _DEFAULTS.items():
        merged = dict(defaults)
        extra = raw.get(section, {})
        unknown = set(extra) - set(defaults) if defaults else set()
        if unknown and section != "energy":
            raise ConfigError(f"[{section}] has unknown keys: {sorted(unknown)}")
        merged.update(extra)
        cfg[section] = merged
    return cfg


def _fail(err: Exception, code: int, error_json: bool):
    if error_json:
        print(json.dumps({"error": type(err).__name__, "message": str(err)}),
              file=sys.stderr)
    else:
        print(f"error: {err}", file=sys.stderr)
    sys.exit(code)


def _build_schedule(cfg) -> NoiseSchedule:
    sc = cfg["schedule"]
    return NoiseSchedule(T=sc["T"], kappa_x=sc["kappa_x"],
                         kappa_l=sc["kappa_l"], dt=sc["dt"])


def _build_train_config(cfg) -> TrainConfig:
    tr = cfg["train"]
    return TrainConfig(
        epochs=tr["epochs"], batch_size=tr["batch_size"],
        learning_rate=tr["learning_rate"], optimizer=tr["optimizer"],
        K_grad=tr["K_grad"], lambda_init=tr["lambda_init"],
        acp=AcpConfig(epsilon=tr["acp_epsilon"], delta=tr["acp_delta"],
                      lambda_min=tr["acp_lambda_min"],
                      probe_interval=tr["acp_probe_interval"]),
        acp_enabled=tr["acp_enabled"], seed=tr["seed"])


@click.group()
@click.option("--threads", type=int, default=None,
              help="Worker pool size (default: physical cores).")
@click.option("--error-json", is_flag=True,
              help="Emit machine-readable errors on stderr.")
@click.pass_context
def main(ctx, threads, error_json):
    """Denoising thermodynamic model toolkit."""
    ctx.ensure_object(dict)
    ctx.obj["threads"] = threads or os.cpu_count()
    ctx.obj["error_json"] = error_json


@main.command()
@click.argument("config_path", type=click.Path(exists=True))
@click.option("--out", type=click.Path(), required=True,
              help="Output dataset path (binary + .json manifest).")
@click.pass_context
def prepare(ctx, config_path, out):
    """Build a spin dataset from IDX files or the synthetic generator."""
    try:
        cfg = load_config(config_path)
        ds_cfg = cfg["dataset"]
        if ds_cfg["kind"] == "idx":
            if not ds_cfg["images"]:
                raise ConfigError("dataset.images is required for kind='idx'")
            images = dio.parse_idx(Path(ds_cfg["images"]).read_bytes())
            samples = dio.binarize(images, ds_cfg["threshold"])
            labels = None
            if ds_cfg["labels"]:
                raw = dio.parse_idx(Path(ds_cfg["labels"]).read_bytes())
                labels = dio.one_hot_labels(
                    raw, int(raw.max()) + 1, ds_cfg["label_repetitions"])
            elif ds_cfg["conditional"]:
                raise ConfigError("conditional=true requires dataset.labels")
            meta = {"source": ds_cfg["images"], "threshold": ds_cfg["threshold"],
                    "config": cfg["dataset"]}
            ds = dio.SpinDataset(samples=samples, label_codes=labels, meta=meta)
        elif ds_cfg["kind"] == "synthetic":
            samples, mode_ids, protos = dio.synthetic_modes(
                ds_cfg["n_samples"], cfg["graph"]["n_visible"],
                ds_cfg["n_modes"], ds_cfg["flip_prob"], ds_cfg["seed"])
            labels = None
            if ds_cfg["conditional"]:
                labels = dio.one_hot_labels(mode_ids, ds_cfg["n_modes"],
                                            ds_cfg["label_repetitions"])
            meta = {"source": "synthetic", "prototypes": protos.tolist(),
                    "config": cfg["dataset"]}
            ds = dio.SpinDataset(samples=samples, label_codes=labels, meta=meta)
        else:
            raise ConfigError(f"unknown dataset kind {ds_cfg['kind']!r}")
    except (ConfigError, dio.DataError, ValueError, OSError) as err:
        _fail(err, EXIT_VALIDATION, ctx.obj["error_json"])
    dio.save_dataset(ds, out)
    click.echo(f"wrote {ds.n} samples x {ds.samples.shape[1]} bits to {out}")


@main.command(name="train")
@click.argument("config_path", type=click.Path(exists=True))
@click.option("--dataset", "dataset_path", type=click.Path(exists=True),
              required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True,
              help="Checkpoint directory.")
@click.pass_context
def cmd_train(ctx, config_path, dataset_path, out_dir):
    """Train a model; writes per-step checkpoints, manifest, and a log CSV."""
    try:
        cfg = load_config(config_path)
        schedule = _build_schedule(cfg)
        tcfg = _build_train_config(cfg)
        gc = cfg["graph"]
        ds = dio.load_dataset(dataset_path)
        n_labels = 0 if ds.label_codes is None else ds.label_codes.shape[1]
        graph = build_grid(gc["L"], build_pattern(gc["pattern"]),
                           gc["n_visible"], n_labels, gc["seed"])
        data = pack_visible(graph, ds.samples, ds.label_codes)
    except (ConfigError, ValueError, OSError) as err:
        _fail(err, EXIT_VALIDATION, ctx.obj["error_json"])

    try:
        model = DtmModel.create(graph, schedule, seed=tcfg.seed)
        model, log, acp = train(model, data, tcfg)

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_grid(graph, out / "graph.dtmg")
        for t, m in enumerate(model.steps, start=1):
            save_model(m, out / f"step_{t:02d}.dtmb", meta={"step": t})
        manifest = {"config": cfg, "T": schedule.T,
                    "acp_lambda": acp.lam.tolist(),
                    "n_train": int(len(data))}
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
        with open(out / "training_log.csv", "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=["epoch", "layer", "lam",
                                                   "autocorr"])
            writer.writeheader()
            writer.writerows(log.epochs)
    except Exception as err:  # noqa: BLE001 - surfaced with exit code 3
        _fail(err, EXIT_RUNTIME, ctx.obj["error_json"])
    click.echo(f"checkpoints written to {out_dir}")


def _load_checkpoints(ckpt_dir, cfg):
    out = Path(ckpt_dir)
    manifest = json.loads((out / "manifest.json").read_text())
    graph = load_grid(out / "graph.dtmg")
    sc = manifest["config"]["schedule"]
    schedule = NoiseSchedule(T=sc["T"], kappa_x=sc["kappa_x"],
                             kappa_l=sc["kappa_l"], dt=sc["dt"])
    steps = [load_model(out / f"step_{t:02d}.dtmb", graph)
             for t in range(1, schedule.T + 1)]
    return DtmModel(steps=steps, schedule=schedule, graph=graph), manifest


@main.command(name="generate")
@click.argument("checkpoint_dir", type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--n-samples", type=int, default=None)
@click.option("--k-mix", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--label", type=int, default=None,
              help="Class label for conditional generation.")
@click.option("--steps-frames", is_flag=True,
              help="Also record the visible state after every reverse step.")
@click.option("--pgm-dir", type=click.Path(), default=None,
              help="Write PGM images (square layouts only).")
@click.pass_context
def cmd_generate(ctx, checkpoint_dir, out_path, n_samples, k_mix, seed, label,
                 steps_frames, pgm_dir):
    """Sample from a trained model."""
    try:
        model, manifest = _load_checkpoints(checkpoint_dir, None)
        sample_cfg = manifest["config"]["sample"]
        n_samples = n_samples or sample_cfg["n_samples"]
        k_mix = k_mix or sample_cfg["K_mix"]
        seed = sample_cfg["seed"] if seed is None else seed
        condition = None
        if label is not None:
            ds_cfg = manifest["config"]["dataset"]
            n_label_bits = len(model.graph.label_nodes)
            rep = ds_cfg["label_repetitions"]
            if n_label_bits == 0:
                raise ConfigError("model has no label nodes")
            n_classes = n_label_bits // rep
            if not 0 <= label < n_classes:
                raise ConfigError(f"label must lie in [0, {n_classes})")
            condition = dio.one_hot_labels(np.array([label]), n_classes, rep)[0]
    except (ConfigError, ValueError, OSError, KeyError) as err:
        _fail(err, EXIT_VALIDATION, ctx.obj["error_json"])
    try:
        pixels, frames = generate(model, n_samples, seed, K_mix=k_mix,
                                  condition=condition,
                                  record_steps=steps_frames)
        trace = SampleTrace(frames=pixels[:, None, :],
                            frame_sweeps=np.array([k_mix * model.schedule.T]),
                            final=pixels)
        save_trace(trace, out_path, manifest_extra={
            "config": manifest["config"], "n_samples": int(n_samples),
            "K_mix": int(k_mix), "seed": int(seed),
            "conditional_label": label})
        if steps_frames:
            for i, fr in enumerate(frames):
                step_trace = SampleTrace(frames=fr[:, None, :],
                                         frame_sweeps=np.array([i]),
                                         final=fr)
                save_trace(step_trace, f"{out_path}.step{i}")
        if pgm_dir:
            side = int(np.sqrt(pixels.shape[1]))
            if side * side != pixels.shape[1]:
                raise ConfigError("--pgm-dir requires a square pixel count")
            Path(pgm_dir).mkdir(parents=True, exist_ok=True)
            for i, img in enumerate(dio.export_pgm(pixels, side, side)):
                (Path(pgm_dir) / f"sample_{i:04d}.pgm").write_bytes(img)
    except ConfigError as err:
        _fail(err, EXIT_VALIDATION, ctx.obj["error_json"])
    except Exception as err:  # noqa: BLE001
        _fail(err, EXIT_RUNTIME, ctx.obj["error_json"])
    click.echo(f"wrote {n_samples} samples to {out_path}")


@main.command(name="analyze-mixing")
@click.argument("trace_path", type=click.Path(exists=True))
@click.option("--out", "out_prefix", type=click.Path(), required=True)
@click.option("--max-lag", type=int, default=128)
@click.option("--fit-lo", type=int, default=None,
              help="Low edge of the log-linear fit window (default max_lag // 4).")
@click.option("--proj-seed", type=int, default=0)
@click.pass_context
def cmd_analyze(ctx, trace_path, out_prefix, max_lag, fit_lo, proj_seed):
    """Autocorrelation curve, slow-eigenvalue fit, and mixing estimate."""
    try:
        trace = load_trace(trace_path)
        if trace.frames.shape[1] < max_lag + 1:
            raise ConfigError(
                f"trace has {trace.frames.shape[1]} frames; need {max_lag + 1}")
    except (ConfigError, ValueError, OSError) as err:
        _fail(err, EXIT_VALIDATION, ctx.obj["error_json"])
    try:
        obs = diag.ProjectionObservable.create(trace.frames.shape[2],
                                               seed=proj_seed)
        res = diag.autocorrelation(trace.frames, obs, max_lag)
        lo = fit_lo if fit_lo is not None else max(4, max_lag // 4)
        res = diag.fit_sigma2(res, (lo, max_lag))
        with open(str(out_prefix) + ".csv", "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["lag", "r"])
            writer.writerows(zip(res.lags.tolist(), res.r.tolist()))
        report = {"status": res.status, "sigma2": res.sigma2,
                  "mixing_iterations": res.mixing_iterations,
                  "fit_window": res.fit_window, "fit_r2": res.fit_r2}
        with open(str(out_prefix) + ".json", "w") as f:
            json.dump(report, f, indent=2)
    except Exception as err:  # noqa: BLE001
        _fail(err, EXIT_RUNTIME, ctx.obj["error_json"])
    click.echo(json.dumps(report))


@main.command(name="energy")
@click.option("--scenario", type=str, default="reference",
              help="'reference' or a TOML scenario file path.")
@click.option("--out", "out_prefix", type=click.Path(), default=None)
@click.pass_context
def cmd_energy(ctx, scenario, out_prefix):
    """Physical energy ledger for a sampling program scenario."""
    try:
        overrides = {}
        if scenario == "reference":
            sc = hardware.appendix_reference_scenario()
        else:
            with open(scenario, "rb") as f:
                raw = tomllib.load(f)
            sc = {k: raw[k] for k in ("T", "K", "N", "N_data", "L", "pattern")}
            overrides = raw.get("params", {})
        params = hardware.ProcessParams(**overrides)
        ledger = hardware.program_energy(sc["T"], sc["K"], sc["N"],
                                         sc["N_data"], sc["L"], sc["pattern"],
                                         params)
    except (KeyError, TypeError, ValueError, OSError) as err:
        _fail(err, EXIT_VALIDATION, ctx.obj["error_json"])
    text = hardware.format_ledger(ledger)
    click.echo(text)
    if out_prefix:
        with open(str(out_prefix) + ".json", "w") as f:
            json.dump(ledger.as_dict(), f, indent=2)
        with open(str(out_prefix) + ".txt", "w") as f:
            f.write(text + "\n")


if __name__ == "__main__":
    main()
