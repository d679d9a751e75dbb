"""Batch command-line interface for the whole pipeline.

Configuration resolves in three layers of increasing precedence:
hardcoded defaults, a JSON file passed with --config, then explicit
flags. Unknown keys in the file are rejected. Every command writes a
manifest JSON with its fully resolved configuration next to its primary
output, and all metric tables are tab-separated UTF-8 with a header row
whose floats round-trip exactly through repr.

Exit codes: 0 success, 2 configuration error, 3 data-format error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .dataio import load_dataset, save_dataset
from .errors import (
    ConfigError,
    ContractError,
    FormatError,
    NumericalError,
    ValidationError,
)
from .metrics import score_report
from .model import VARIANTS, infer
from .shiftlab import (
    DomainSpec,
    ShiftSpec,
    SyntheticSpec,
    apply_shift,
    generate_synthetic,
    integrity_score,
)
from .trainer import (
    TrainConfig,
    evaluate,
    joint_gradient_check,
    load_checkpoint,
    save_checkpoint,
    train,
)

DEFAULT_MASK_RATIOS = (0.05, 0.10, 0.30, 0.50, 0.70, 0.80)
OUTDIR_ENV = "EEGIMPUTE_OUTDIR"

_REQUIRED = object()


def _parse_bool(text):
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _train_config_keys():
    casts = {float: float, int: int, str: str, bool: _parse_bool}
    keys = {}
    for field in dataclasses.fields(TrainConfig):
        keys[field.name] = (casts[type(field.default)], field.default)
    return keys


TRAIN_KEYS = _train_config_keys()


def _resolve(args, keys):
    """defaults < JSON --config file < explicit flags."""
    resolved = {name: default for name, (_, default) in keys.items()}
    if getattr(args, "config", None):
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config} is not valid JSON: {exc}")
        if not isinstance(file_cfg, dict):
            raise ConfigError(f"config file {args.config} must hold a JSON object")
        unknown = sorted(set(file_cfg) - set(keys))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        for name, value in file_cfg.items():
            cast, _ = keys[name]
            resolved[name] = cast(value)
    for name in keys:
        flag_value = getattr(args, name, None)
        if flag_value is not None:
            resolved[name] = flag_value
    missing = sorted(n for n, v in resolved.items() if v is _REQUIRED)
    if missing:
        raise ConfigError(f"missing required settings: {missing}")
    return resolved


def _add_flags(parser, keys):
    parser.add_argument("--config", default=None, help="JSON file with settings")
    parser.add_argument(
        "--outdir",
        default=None,
        help=f"output directory (default: ${OUTDIR_ENV} or the working directory)",
    )
    for name, (cast, default) in keys.items():
        flag = "--" + name.replace("_", "-")
        shown = "(required)" if default is _REQUIRED else repr(default)
        parser.add_argument(
            flag, dest=name, type=cast, default=None, help=f"default {shown}"
        )


def _outpath(args, name):
    base = args.outdir or os.environ.get(OUTDIR_ENV) or "."
    path = name if os.path.isabs(name) else os.path.join(base, name)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    return path


def _write_manifest(primary_path, command, resolved):
    payload = {"command": command, "resolved": resolved}
    path = str(primary_path) + ".manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


def _cell(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    # np.float64 subclasses float but reprs as np.float64(...), so always
    # convert before taking repr.
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_table(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(_cell(v) for v in row) + "\n")


def _parse_domains(text):
    """name[:keep[:gain[:latency]]] entries separated by semicolons."""
    domains = []
    for chunk in str(text).split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = chunk.split(":")
        if len(parts) > 4:
            raise ConfigError(f"bad domain entry {chunk!r}")
        name = parts[0]
        keep = float(parts[1]) if len(parts) > 1 else 1.0
        gain = float(parts[2]) if len(parts) > 2 else 0.05
        latency = int(parts[3]) if len(parts) > 3 else 2
        domains.append(
            DomainSpec(
                name,
                channel_keep_fraction=keep,
                gain_sigma=gain,
                latency_max=latency,
            )
        )
    if not domains:
        raise ConfigError("at least one domain is required")
    return tuple(domains)


def _parse_shift(chunk):
    parts = [p.strip() for p in chunk.split(":")]
    kind = parts[0]
    if kind == "bandpass":
        if len(parts) != 3:
            raise ConfigError(f"bandpass shift needs low:high, got {chunk!r}")
        return ShiftSpec(kind="bandpass", band=(float(parts[1]), float(parts[2])))
    if kind == "noise":
        if len(parts) not in (3, 4):
            raise ConfigError(f"noise shift needs mode:sigma[:seed], got {chunk!r}")
        seed = int(parts[3]) if len(parts) == 4 else 0
        return ShiftSpec(kind="noise", mode=parts[1], sigma=float(parts[2]), seed=seed)
    if kind == "channel_mask":
        if len(parts) not in (2, 3):
            raise ConfigError(f"channel_mask shift needs fraction[:seed], got {chunk!r}")
        seed = int(parts[2]) if len(parts) == 3 else 0
        return ShiftSpec(kind="channel_mask", fraction=float(parts[1]), seed=seed)
    raise ConfigError(f"unknown shift kind {kind!r} in {chunk!r}")


def _parse_shift_list(text):
    return [
        (chunk.strip(), _parse_shift(chunk.strip()))
        for chunk in str(text).split(";")
        if chunk.strip()
    ]


def _parse_ratio_list(text):
    try:
        ratios = [float(chunk) for chunk in str(text).split(",") if chunk.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad ratio list {text!r}: {exc}")
    if not ratios:
        raise ConfigError("ratio list is empty")
    for r in ratios:
        if not 0.0 <= r <= 1.0:
            raise ConfigError(f"mask ratio {r} outside [0,1]")
    return ratios


def _train_config_from(resolved):
    return TrainConfig(**{name: resolved[name] for name in TRAIN_KEYS})


# -- subcommands --------------------------------------------------------

GENDATA_KEYS = {
    "out": (str, _REQUIRED),
    "num_classes": (int, 4),
    "channels": (int, 64),
    "num_samples": (int, 64),
    "sample_rate_hz": (float, 64.0),
    "rank": (int, 8),
    "noise_sigma": (float, 0.1),
    "phase_jitter": (float, 0.15),
    "num_recordings": (int, 100),
    "seed": (int, 0),
    "index_offset": (int, 0),
    "domains": (str, "site_a"),
}


def cmd_gendata(args):
    resolved = _resolve(args, GENDATA_KEYS)
    spec = SyntheticSpec(
        num_classes=resolved["num_classes"],
        channels=resolved["channels"],
        num_samples=resolved["num_samples"],
        sample_rate_hz=resolved["sample_rate_hz"],
        domains=_parse_domains(resolved["domains"]),
        rank=resolved["rank"],
        noise_sigma=resolved["noise_sigma"],
        phase_jitter=resolved["phase_jitter"],
        num_recordings=resolved["num_recordings"],
        seed=resolved["seed"],
        index_offset=resolved["index_offset"],
    )
    recordings = generate_synthetic(spec)
    out = _outpath(args, resolved["out"])
    save_dataset(recordings, out)
    _write_manifest(out, "gendata", resolved)
    print(f"wrote {len(recordings)} recordings to {out}")
    return 0


TRAIN_CMD_KEYS = dict(TRAIN_KEYS)
TRAIN_CMD_KEYS.update({"data": (str, _REQUIRED), "out": (str, _REQUIRED)})


def cmd_train(args):
    resolved = _resolve(args, TRAIN_CMD_KEYS)
    recordings = load_dataset(resolved["data"])
    config = _train_config_from(resolved)
    model, state, history = train(config, recordings)
    out = _outpath(args, resolved["out"])
    save_checkpoint(model, state, config, out)
    trace_path = out + ".trace.tsv"
    _write_table(
        trace_path,
        ["step", "decomposition", "fidelity", "consistency", "classification", "total"],
        [
            [i, h["decomposition"], h["fidelity"], h["consistency"],
             h["classification"], h["total"]]
            for i, h in enumerate(history)
        ],
    )
    _write_manifest(out, "train", resolved)
    final = history[-1]["total"] if history else float("nan")
    print(f"trained {state.step} steps; final total loss {final!r}; saved {out}")
    return 0


INFER_KEYS = {
    "checkpoint": (str, _REQUIRED),
    "data": (str, _REQUIRED),
    "out": (str, "predictions.tsv"),
    "metrics_out": (str, "metrics.tsv"),
}


def cmd_infer(args):
    resolved = _resolve(args, INFER_KEYS)
    model, _, config = load_checkpoint(resolved["checkpoint"])
    recordings = load_dataset(resolved["data"])
    predictions = [infer(model, rec) for rec in recordings]
    out = _outpath(args, resolved["out"])
    k = config.num_classes
    _write_table(
        out,
        ["index", "true_label", "predicted_label", "imputed_channels"]
        + [f"p{c}" for c in range(k)],
        [
            [i, int(rec.label), p.label,
             ",".join(str(j) for j in p.imputed_channels) or "-"]
            + [float(v) for v in p.probabilities]
            for i, (rec, p) in enumerate(zip(recordings, predictions))
        ],
    )
    report = score_report(
        [int(r.label) for r in recordings], [p.label for p in predictions], k
    )
    metrics_path = _outpath(args, resolved["metrics_out"])
    _write_table(
        metrics_path,
        ["metric", "value"],
        [
            ["accuracy", report["accuracy"]],
            ["macro_f1", report["macro_f1"]],
            ["macro_precision", report["macro_precision"]],
            ["macro_recall", report["macro_recall"]],
            ["cohen_kappa", report["cohen_kappa"]],
        ],
    )
    _write_manifest(out, "infer", resolved)
    print(f"accuracy {report['accuracy']!r} on {len(recordings)} recordings; wrote {out}")
    return 0


SHIFT_KEYS = {
    "data": (str, _REQUIRED),
    "out": (str, _REQUIRED),
    "kind": (str, _REQUIRED),
    "band_low": (float, 1.0),
    "band_high": (float, 25.0),
    "sigma": (float, 0.1),
    "mode": (str, "broadband"),
    "fraction": (float, 0.5),
    "seed": (int, 0),
}


def cmd_shift(args):
    resolved = _resolve(args, SHIFT_KEYS)
    spec = ShiftSpec(
        kind=resolved["kind"],
        band=(resolved["band_low"], resolved["band_high"]),
        sigma=resolved["sigma"],
        mode=resolved["mode"],
        fraction=resolved["fraction"],
        seed=resolved["seed"],
    )
    recordings = [apply_shift(rec, spec) for rec in load_dataset(resolved["data"])]
    out = _outpath(args, resolved["out"])
    save_dataset(recordings, out)
    _write_manifest(out, "shift", resolved)
    print(f"applied {resolved['kind']} shift to {len(recordings)} recordings; wrote {out}")
    return 0


EVALSHIFT_KEYS = {
    "checkpoint": (str, _REQUIRED),
    "data": (str, _REQUIRED),
    "shifts": (str, ""),
    "out": (str, "shift_report.tsv"),
}


def cmd_evaluate_shift(args):
    resolved = _resolve(args, EVALSHIFT_KEYS)
    model, _, config = load_checkpoint(resolved["checkpoint"])
    recordings = load_dataset(resolved["data"])
    shifts = _parse_shift_list(resolved["shifts"])

    def run(recs):
        preds = [infer(model, rec) for rec in recs]
        hits = sum(int(p.label == int(r.label)) for p, r in zip(preds, recs))
        feats = np.stack([p.features for p in preds])
        return hits / len(recs), feats

    clean_acc, clean_feats = run(recordings)
    rows = [["clean", clean_acc, 0.0, 1.0]]
    for label, spec in shifts:
        shifted = [apply_shift(rec, spec) for rec in recordings]
        acc, feats = run(shifted)
        integrity = integrity_score(clean_feats, feats).score
        rows.append([label, acc, acc - clean_acc, integrity])
    out = _outpath(args, resolved["out"])
    _write_table(out, ["shift", "accuracy", "delta", "integrity"], rows)
    _write_manifest(out, "evaluate-shift", resolved)
    print(f"clean accuracy {clean_acc!r}; {len(shifts)} shifts; wrote {out}")
    return 0


MASKSWEEP_KEYS = dict(TRAIN_KEYS)
MASKSWEEP_KEYS.update(
    {
        "data": (str, _REQUIRED),
        "test_data": (str, _REQUIRED),
        "ratios": (str, ",".join(str(r) for r in DEFAULT_MASK_RATIOS)),
        "out": (str, "masksweep.tsv"),
    }
)


def cmd_masksweep(args):
    resolved = _resolve(args, MASKSWEEP_KEYS)
    train_recs = load_dataset(resolved["data"])
    test_recs = load_dataset(resolved["test_data"])
    ratios = _parse_ratio_list(resolved["ratios"])
    rows = []
    for ratio in ratios:
        config = dataclasses.replace(_train_config_from(resolved), mask_ratio=ratio)
        model, _, _ = train(config, train_recs)
        acc, _ = evaluate(model, test_recs)
        rows.append([ratio, acc])
    out = _outpath(args, resolved["out"])
    _write_table(out, ["mask_ratio", "accuracy"], rows)
    _write_manifest(out, "masksweep", resolved)
    print(f"swept {len(ratios)} mask ratios; wrote {out}")
    return 0


ABLATE_KEYS = dict(TRAIN_KEYS)
ABLATE_KEYS.update(
    {
        "data": (str, _REQUIRED),
        "test_data": (str, _REQUIRED),
        "variants": (str, ",".join(VARIANTS)),
        "out": (str, "ablation.tsv"),
    }
)


def cmd_ablate(args):
    resolved = _resolve(args, ABLATE_KEYS)
    train_recs = load_dataset(resolved["data"])
    test_recs = load_dataset(resolved["test_data"])
    variants = [v.strip() for v in resolved["variants"].split(",") if v.strip()]
    rows = []
    for variant in variants:
        config = dataclasses.replace(_train_config_from(resolved), variant=variant)
        model, _, _ = train(config, train_recs)
        train_acc, _ = evaluate(model, train_recs)
        test_acc, _ = evaluate(model, test_recs)
        rows.append([variant, train_acc, test_acc])
    out = _outpath(args, resolved["out"])
    _write_table(out, ["variant", "train_accuracy", "test_accuracy"], rows)
    _write_manifest(out, "ablate", resolved)
    print(f"ablated {len(variants)} variants; wrote {out}")
    return 0


GRADCHECK_KEYS = {
    "seed": (int, 0),
    "threshold": (float, 1e-4),
    "out": (str, "gradcheck.tsv"),
}


def cmd_gradcheck(args):
    resolved = _resolve(args, GRADCHECK_KEYS)
    worst = joint_gradient_check(seed=resolved["seed"])
    passed = worst < resolved["threshold"]
    out = _outpath(args, resolved["out"])
    _write_table(
        out,
        ["seed", "worst_rel_err", "threshold", "status"],
        [[resolved["seed"], worst, resolved["threshold"], "pass" if passed else "fail"]],
    )
    _write_manifest(out, "gradcheck", resolved)
    print(f"worst rel err {worst!r} (threshold {resolved['threshold']!r}); wrote {out}")
    if not passed:
        raise NumericalError(
            f"joint gradient check failed: {worst!r} >= {resolved['threshold']!r}"
        )
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="eegimpute",
        description="EEG imputation pipeline: data, training, inference, shifts.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, keys, func in [
        ("gendata", GENDATA_KEYS, cmd_gendata),
        ("train", TRAIN_CMD_KEYS, cmd_train),
        ("infer", INFER_KEYS, cmd_infer),
        ("shift", SHIFT_KEYS, cmd_shift),
        ("evaluate-shift", EVALSHIFT_KEYS, cmd_evaluate_shift),
        ("masksweep", MASKSWEEP_KEYS, cmd_masksweep),
        ("ablate", ABLATE_KEYS, cmd_ablate),
        ("gradcheck", GRADCHECK_KEYS, cmd_gradcheck),
    ]:
        p = sub.add_parser(name)
        _add_flags(p, keys)
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValidationError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
