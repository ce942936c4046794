"""Command-line entry point.

Subcommands: synth, train, predict, evaluate, compare, simulate, aggregate.
Every subcommand is deterministic given (flags, files, seed); outputs land
under --out as CSV/key=value reports with companion PNG figures.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import baselines, data, edgecloud, metrics, network, plots, training
from .network import NetConfig
from .training import TrainConfig

# Defaults that a config file or flag may override; numeric network/training
# values follow the published training configuration, the rest are artifact
# design decisions.
DEFAULTS = {
    "k": 1,
    "tau": 21,
    "n": 104,
    "hidden": 64,
    "ell": 4,
    "e_th": 5e-5,
    "it_max": 1000,
    "m": 4,
    "lr": 1e-3,
    "clip_norm": 5.0,
    "length": 500,
    "delta_r_t": 0.005,
    "horizon": 20,
    "retrain_budget": 3,
    "upload_every": 25,
    "train_latency": 10,
    "lead": 100,
    "trials": 20,
}
_INT_KEYS = {"k", "tau", "n", "hidden", "ell", "it_max", "m", "length",
             "horizon", "retrain_budget", "upload_every", "train_latency",
             "lead", "trials"}


class CliError(Exception):
    """Fatal runtime error; message printed, exit code 1."""


def parse_config_file(path) -> dict:
    """key=value per line; '#' starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in DEFAULTS:
                raise CliError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = int(value) if key in _INT_KEYS else float(value)
    return out


def resolve_config(args) -> dict:
    """Merge defaults < config file < explicit flags; track provenance."""
    merged = dict(DEFAULTS)
    source = {k: "default" for k in merged}
    if getattr(args, "config", None):
        for k, v in parse_config_file(args.config).items():
            merged[k] = v
            source[k] = "config-file"
    for k in DEFAULTS:
        flag = getattr(args, k, None)
        if flag is not None:
            merged[k] = int(flag) if k in _INT_KEYS else float(flag)
            source[k] = "flag"
    if getattr(args, "verbose", False):
        for k in sorted(merged):
            print(f"# {k}={merged[k]} ({source[k]})")
    return merged


def train_config(cfg: dict) -> TrainConfig:
    net = NetConfig(k=cfg["k"], tau=cfg["tau"], n=cfg["n"],
                    hidden=cfg["hidden"], ell=cfg["ell"])
    return TrainConfig(net=net, e_th=cfg["e_th"], it_max=cfg["it_max"],
                       m=cfg["m"], lr=cfg["lr"], clip_norm=cfg["clip_norm"])


def _outdir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def load_trace_dir(path) -> dict[str, data.DeviceTrace]:
    traces = {}
    for name in sorted(os.listdir(path)):
        if name.endswith(".csv"):
            trace = data.load_csv(os.path.join(path, name))
            traces[trace.device_id] = trace
    if not traces:
        raise CliError(f"no trace CSVs found in {path}")
    return traces


def cmd_synth(args) -> int:
    cfg = resolve_config(args)
    window = cfg["tau"] + cfg["n"]
    if cfg["length"] < window:
        raise CliError(f"length {cfg['length']} < tau+n = {window}")
    out = _outdir(args)
    traces = {}
    for name, preset in data.PRESETS.items():
        preset = replace(preset, length=cfg["length"])
        traces[name] = data.synth_degradation(preset, name)
        data.save_csv(traces[name], os.path.join(out, f"{name}.csv"))
    with open(os.path.join(out, "presets.txt"), "w") as fh:
        fh.write(data.preset_catalogue_text())
    plots.save_traces_figure(traces, os.path.join(out, "traces.png"))
    print(f"wrote {len(traces)} preset traces to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    tcfg = train_config(cfg)
    traces = load_trace_dir(args.data)
    if args.holdout not in traces:
        raise CliError(f"holdout {args.holdout!r} not found in {args.data}")
    test = traces.pop(args.holdout)
    if not traces:
        raise CliError("need at least one non-holdout training trace")
    out = _outdir(args)
    if tcfg.it_max == 0:
        print("warning: it_max=0, emitting the untrained initial model", file=sys.stderr)
    result = training.train(traces, test, tcfg, seed=args.seed)
    snap = edgecloud.ModelSnapshot.from_model(1, result.best_model, result.normalizer)
    edgecloud.save_model(snap, os.path.join(out, "model.bin"))
    training.save_history_csv(result.history, os.path.join(out, "history.csv"))
    if result.history:
        plots.save_history_figure(result.history, os.path.join(out, "history.png"))
        final_train = result.history[-1][1]
        print(f"final_train_mse={final_train:.6g}")
    print(f"best_test_mse={result.best_test_error:.6g}")
    if np.isfinite(result.best_test_error) and result.best_test_error > 0:
        print(f"best_test_log_mse={metrics.log_mse(result.best_test_error):.6g}")
    return 0


def cmd_predict(args) -> int:
    snap = edgecloud.load_model(args.model)
    trace = data.load_csv(args.trace)
    cfg = snap.config
    if len(trace) < cfg.tau:
        raise CliError(f"trace has {len(trace)} samples, need at least tau={cfg.tau}")
    horizon = args.horizon if args.horizon is not None else cfg.n
    if horizon > cfg.n:
        raise CliError(f"horizon {horizon} exceeds model output length n={cfg.n}")
    out = _outdir(args)
    path = os.path.join(out, "prediction.csv")
    last_index = int(trace.indices[-1])
    with open(path, "w", newline="") as fh:
        fh.write("index,predicted_delta_r_ohms\n")
        if horizon > 0:
            nz = snap.normalizer
            x = nz.normalize(trace.delta_r[-cfg.tau :]).reshape(1, cfg.tau, 1)
            tape = network.forward_batch(snap.to_model(), x, mode="rollout")
            preds = nz.denormalize(tape.z[0, :horizon, 0])
            for j, p in enumerate(preds, start=1):
                fh.write(f"{last_index + j},{float(p):.12g}\n")
    print(f"wrote {path}")
    return 0


def _rollout_eval(snap, trace, start):
    cfg = snap.config
    w = cfg.tau + cfg.n
    if start < 0 or start + w > len(trace):
        raise CliError(f"window [{start}, {start + w}) outside trace of length {len(trace)}")
    nz = snap.normalizer
    values = nz.normalize(trace.delta_r)
    x = values[start : start + cfg.tau].reshape(1, cfg.tau, 1)
    tape = network.forward_batch(snap.to_model(), x, mode="rollout")
    predicted = nz.denormalize(tape.z[0, :, 0])
    actual = trace.delta_r[start + cfg.tau : start + w]
    return actual, predicted


def cmd_evaluate(args) -> int:
    snap = edgecloud.load_model(args.model)
    trace = data.load_csv(args.trace)
    actual, predicted = _rollout_eval(snap, trace, args.start)
    report = metrics.build_report(actual, predicted)
    out = _outdir(args)
    with open(os.path.join(out, "report.txt"), "w") as fh:
        fh.write(metrics.report_keyvalue(report))
    metrics.save_residuals_csv(report, os.path.join(out, "residuals.csv"))
    plots.save_prediction_figure(
        actual, predicted, args.start + snap.config.tau,
        os.path.join(out, "evaluation.png"),
    )
    # normalized-scale MSE alongside the ohm-scale one in the report file
    nz = snap.normalizer
    norm_mse = training.mse(nz.normalize(predicted), nz.normalize(actual))
    print(metrics.report_keyvalue(report), end="")
    print(f"normalized_mse={norm_mse!r}")
    return 0


def cmd_compare(args) -> int:
    cfg = resolve_config(args)
    snap = edgecloud.load_model(args.model)
    trace = data.load_csv(args.trace)
    rows = baselines.detection_comparison(
        snap.to_model(), snap.normalizer, trace.delta_r, cfg["lead"],
        seed=args.seed, device_id=trace.device_id,
    )
    out = _outdir(args)
    baselines.comparison_csv(rows, os.path.join(out, "comparison.csv"))
    text = baselines.comparison_text(rows)
    with open(os.path.join(out, "comparison.txt"), "w") as fh:
        fh.write(text)
    plots.save_comparison_figure(rows, os.path.join(out, "comparison.png"))
    print(text, end="")
    return 0


def cmd_simulate(args) -> int:
    cfg = resolve_config(args)
    traces = load_trace_dir(args.data)
    if args.holdout not in traces:
        raise CliError(f"holdout {args.holdout!r} not found in {args.data}")
    spec = edgecloud.ScenarioSpec(
        devices=tuple(sorted(traces)),
        holdout=args.holdout,
        delta_r_t=cfg["delta_r_t"],
        horizon=cfg["horizon"],
        retrain_budget=cfg["retrain_budget"],
        upload_every=cfg["upload_every"],
        train_latency=cfg["train_latency"],
        train=train_config(cfg),
    )
    report = edgecloud.run_scenario(spec, traces, seed=args.seed)
    out = _outdir(args)
    edgecloud.save_event_log_csv(report, os.path.join(out, "events.csv"))
    summary = edgecloud.report_summary_text(report)
    with open(os.path.join(out, "summary.txt"), "w") as fh:
        fh.write(summary)
    plots.save_simulation_figure(report, os.path.join(out, "simulation.png"))
    print(summary, end="")
    return 0


def cmd_aggregate(args) -> int:
    cfg = resolve_config(args)
    traces = load_trace_dir(args.data)
    if args.holdout not in traces:
        raise CliError(f"holdout {args.holdout!r} not found in {args.data}")
    m_values = [int(s) for s in args.m_values.split(",")]
    curve = edgecloud.aggregation_experiment(
        traces, args.holdout, m_values, cfg["trials"], train_config(cfg), seed=args.seed
    )
    out = _outdir(args)
    path = os.path.join(out, "aggregation.csv")
    with open(path, "w", newline="") as fh:
        fh.write("m,mean_mse\n")
        for m, mse_val in curve:
            fh.write(f"{m},{mse_val:.6g}\n")
    plots.save_aggregation_figure(curve, os.path.join(out, "aggregation.png"))
    monotone = all(curve[i + 1][1] < curve[i][1] for i in range(len(curve) - 1))
    for m, mse_val in curve:
        print(f"m={m} mean_mse={mse_val:.6g}")
    print(f"monotone_trend={'true' if monotone else 'false'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deeprace",
        description="Power-device degradation forecasting toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--verbose", action="store_true")
        for key in DEFAULTS:
            if f"--{key.replace('_', '-')}" in p._option_string_actions:
                continue  # subcommand already registered this flag explicitly
            p.add_argument(
                f"--{key.replace('_', '-')}",
                dest=key,
                type=int if key in _INT_KEYS else float,
                default=None,
                help=argparse.SUPPRESS,
            )

    p = sub.add_parser("synth", help="write the bundled synthetic device traces")
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="leave-one-out training on a trace directory")
    p.add_argument("--data", required=True, help="directory of trace CSVs")
    p.add_argument("--holdout", required=True, help="device id held out for testing")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="rollout prediction from a trace's tail")
    p.add_argument("--model", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--horizon", type=int, default=None)
    common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score a model on one trace window")
    p.add_argument("--model", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--start", type=int, default=0)
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="detection-point error vs classical baselines")
    p.add_argument("--model", required=True)
    p.add_argument("--trace", required=True)
    common(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("simulate", help="edge-cloud retraining scenario")
    p.add_argument("--data", required=True)
    p.add_argument("--holdout", required=True)
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("aggregate", help="held-out MSE vs devices per batch")
    p.add_argument("--data", required=True)
    p.add_argument("--holdout", required=True)
    p.add_argument("--m-values", default="1,2,3,4")
    common(p)
    p.set_defaults(func=cmd_aggregate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
