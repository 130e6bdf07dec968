"""Command-line interface.

Commands: ``synth``, ``train``, ``detect``, ``evaluate``, ``sample`` and
``inspect``.  Options may also come from a YAML config file (``--config``)
with one mapping per command; command-line flags win.  Log verbosity is read
from ``HIERFACE_LOG_LEVEL``.

Exit codes
----------
0  success
1  unexpected internal error
2  usage error (bad or missing flags)
3  ParseError: unreadable or malformed input file
4  SchemaViolation: input file has the wrong layout
5  CardinalityMismatch: labels or states do not fit the model
6  other model or numerical error
7  parameter EM monotonicity violation (trace is still written)
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import exceptions as exc
from .learning import LearnConfig, structure_em
from .learning.config import CONSTRAINT_PRESETS
from .model import (
    EXPRESSION,
    POSE,
    dumps_model,
    infer_batch,
    load_model,
    query_joint_states,
    query_state_given_label,
    state_node,
)
from .shapes import error_summary, flatten, load_dataset, make_folds, normalized_error, save_dataset
from .synth import PRESETS, make_generator, synthesize

log = logging.getLogger("hierface")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_SCHEMA = 4
EXIT_CARDINALITY = 5
EXIT_MODEL = 6
EXIT_MONOTONICITY = 7

DETECTIONS_FORMAT = "hierface-detections"

# defaults applied after merging flags and config file
DEFAULTS = {
    "synth": {"preset": "coupled", "expressions": 3, "poses": 3, "states": 3, "strength": 0.85,
              "state_spread": 0.12, "shape_sd": 0.02, "noise_sd": 0.06, "generator_seed": None},
    "train": {"state_range": [2, 6], "constraints": "default", "beta_full": False,
              "max_structure_iters": 20, "max_em_iters": 50, "em_tol": 1e-6, "kmeans_restarts": 10,
              "select_states": False},
    "detect": {"policy": "mean"},
    "evaluate": {"policy": "mean", "state_range": [2, 6], "constraints": "default", "beta_full": False,
                 "max_structure_iters": 20, "max_em_iters": 50, "em_tol": 1e-6, "kmeans_restarts": 10,
                 "select_states": False},
    "sample": {},
    "inspect": {"node": "Z_m", "given": "E", "pair": ["Z_eb", "Z_m"]},
}
REQUIRED = {
    "synth": ["out", "n", "seed"],
    "train": ["data", "out_model", "seed"],
    "detect": ["model", "data", "out"],
    "evaluate": ["data"],
    "sample": ["model", "component", "n", "seed", "out"],
    "inspect": ["model"],
}


class UsageError(Exception):
    pass


def _add_train_flags(p):
    p.add_argument("--states", type=int, help="fixed number of hidden states for every component")
    p.add_argument("--select-states", action="store_true", default=None,
                   help="choose state counts on a held-out split")
    p.add_argument("--state-range", type=int, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--constraints", choices=CONSTRAINT_PRESETS)
    p.add_argument("--beta-full", action="store_true", default=None,
                   help="learn measurement offset and gain instead of tying them to identity")
    p.add_argument("--max-structure-iters", type=int)
    p.add_argument("--max-em-iters", type=int)
    p.add_argument("--em-tol", type=float)
    p.add_argument("--kmeans-restarts", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="hierface", description=__doc__.split("\n")[0])
    parser.add_argument("--config", help="YAML file with per-command options")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="sample a synthetic dataset from a generator model")
    p.add_argument("--out", help="dataset file to write")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--generator-model", help="sample from this model file instead of a preset")
    p.add_argument("--generator-seed", type=int, help="seed of the preset generator (default: --seed)")
    p.add_argument("--save-generator", help="also write the generator model here")
    p.add_argument("--expressions", type=int)
    p.add_argument("--poses", type=int)
    p.add_argument("--states", type=int)
    p.add_argument("--strength", type=float)
    p.add_argument("--state-spread", type=float)
    p.add_argument("--shape-sd", type=float)
    p.add_argument("--noise-sd", type=float)

    p = sub.add_parser("train", help="learn a model by structural EM")
    p.add_argument("--data")
    p.add_argument("--out-model")
    p.add_argument("--trace", help="trace file (default: <out-model>.trace.jsonl)")
    p.add_argument("--report", help="CSV file for the final score report")
    p.add_argument("--seed", type=int)
    _add_train_flags(p)

    p = sub.add_parser("detect", help="infer true landmarks from measurements")
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--policy", choices=["mean", "mode"])
    p.add_argument("--clamp-expression", type=int)
    p.add_argument("--clamp-pose", type=int)
    p.add_argument("--seed", type=int, help="accepted for uniformity; detection is deterministic")

    p = sub.add_parser("evaluate", help="normalized landmark errors, from detections or by k-fold")
    p.add_argument("--data")
    p.add_argument("--detections")
    p.add_argument("--kfold", type=int, help="train and detect on k folds instead of reading detections")
    p.add_argument("--seed", type=int)
    p.add_argument("--policy", choices=["mean", "mode"])
    p.add_argument("--out-csv", help="per-component summary CSV")
    p.add_argument("--points-csv", help="per-point mean error CSV")
    _add_train_flags(p)

    p = sub.add_parser("sample", help="draw shapes from one component's hidden states")
    p.add_argument("--model")
    p.add_argument("--component")
    p.add_argument("--state", type=int, help="state index (default: every state)")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = sub.add_parser("inspect", help="print structure and state probability tables")
    p.add_argument("--model")
    p.add_argument("--node", help="state node for the conditional table")
    p.add_argument("--given", choices=[EXPRESSION, POSE])
    p.add_argument("--pair", nargs=2, metavar=("A", "B"))
    p.add_argument("--out-dir", help="directory for CSV output")
    return parser


def resolve_options(args):
    """Merge flags over config-file values over defaults."""
    cmd = args.command
    opts = dict(DEFAULTS[cmd])
    if args.config:
        try:
            conf = yaml.safe_load(Path(args.config).read_text()) or {}
        except OSError as e:
            raise exc.ParseError(f"cannot read config file {args.config}: {e.strerror or e}") from e
        except yaml.YAMLError as e:
            raise exc.ParseError(f"{args.config}: invalid YAML ({e})") from e
        section = conf.get(cmd, {}) if isinstance(conf, dict) else {}
        if not isinstance(section, dict):
            raise UsageError(f"config section '{cmd}' must be a mapping")
        opts.update({k.replace("-", "_"): v for k, v in section.items()})
    for k, v in vars(args).items():
        if v is not None and k not in ("command", "config"):
            opts[k] = v
    missing = [k for k in REQUIRED[cmd] if opts.get(k) is None]
    if missing:
        raise UsageError(f"{cmd}: missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))
    return opts


def learn_config_from(opts):
    return LearnConfig(
        state_counts=opts.get("states"),
        state_count_range=tuple(opts["state_range"]),
        max_param_em_iters=int(opts["max_em_iters"]),
        param_em_rel_tol=float(opts["em_tol"]),
        max_structure_iters=int(opts["max_structure_iters"]),
        kmeans_restarts=int(opts["kmeans_restarts"]),
        seed=int(opts["seed"]),
        constraints=opts["constraints"],
        beta_tied=not opts["beta_full"],
    )


def _write(path, text):
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _csv_text(rows):
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _fmt(x):
    return repr(float(x))


# -- commands -------------------------------------------------------------------

def cmd_synth(opts):
    if opts["n"] < 1:
        raise UsageError("--n must be at least 1")
    if opts.get("generator_model"):
        gen = load_model(opts["generator_model"])
    else:
        gseed = opts["generator_seed"] if opts["generator_seed"] is not None else opts["seed"]
        gen = make_generator(
            edges=PRESETS[opts["preset"]], n_expressions=opts["expressions"], n_poses=opts["poses"],
            n_states=opts["states"], strength=opts["strength"], state_spread=opts["state_spread"],
            shape_sd=opts["shape_sd"], noise_sd=opts["noise_sd"], seed=gseed,
        )
    ds = synthesize(gen, opts["n"], opts["seed"])
    save_dataset(ds, opts["out"])
    if opts.get("save_generator"):
        _write(opts["save_generator"], dumps_model(gen))
    print(f"wrote {len(ds)} samples to {opts['out']}")
    return EXIT_OK


def structure_text(model):
    lines = ["structure:"]
    edges = model.network.edges
    if not edges:
        lines.append("  (no edges)")
    for a, b in edges:
        lines.append(f"  {a} -> {b}")
    return "\n".join(lines)


def cmd_train(opts):
    data = load_dataset(opts["data"])
    config = learn_config_from(opts)
    trace_path = opts.get("trace") or str(opts["out_model"]) + ".trace.jsonl"
    if opts.get("select_states"):
        config = LearnConfig(**{**config.__dict__, "state_counts": None})
    elif config.state_counts is None:
        lo, hi = config.state_count_range
        if lo == hi:
            config = LearnConfig(**{**config.__dict__, "state_counts": lo})
        else:
            raise UsageError("train: give --states K or --select-states")
    try:
        model, trace = structure_em(data, config)
    except exc.MonotonicityViolation as e:
        if e.trace is not None:
            e.trace.write(trace_path)
        raise
    _write(opts["out_model"], dumps_model(model))
    trace.write(trace_path)
    final = [r for r in trace.records if r["kind"] == "param"][-1]
    rows = [["field", "value"]] + [[k, final[k]] for k in
                                   ("expected_bic", "expected_loglik", "penalty", "dim", "n", "entropy", "marginal_bic")]
    if opts.get("report"):
        _write(opts["report"], _csv_text(rows))
    print(structure_text(model))
    print(f"states: {model.metadata['training']['state_counts']}")
    for k, v in rows[1:]:
        print(f"{k:>16}: {v}")
    print(f"stopped: {trace.reason}")
    return EXIT_OK


def _check_compatible(model, data):
    if model.partition != data.partition:
        raise exc.CardinalityMismatch("model and dataset use different component partitions")
    if model.cardinalities != data.cardinalities:
        raise exc.CardinalityMismatch(
            f"model has (|E|, |P|) = {model.cardinalities}, dataset has {data.cardinalities}"
        )


def detections_text(model, data, result, policy, clamp):
    header = {
        "format": DETECTIONS_FORMAT,
        "num_points": model.partition.num_points,
        "policy": policy,
        "clamp": {k: v for k, v in clamp.items() if v is not None},
        "components": list(model.partition.components),
    }
    lines = [json.dumps(header)]
    est = flatten(result.estimate(policy))
    em, eo = flatten(result.estimate_mean), flatten(result.estimate_mode)
    for i in range(len(data)):
        lines.append(json.dumps({
            "index": i,
            "estimate": est[i].tolist(),
            "estimate_mean": em[i].tolist(),
            "estimate_mode": eo[i].tolist(),
            "state_marginals": {c: result.state_marginals[c][i].tolist() for c in model.partition.components},
            "log_evidence": float(result.log_evidence[i]),
        }))
    return "\n".join(lines) + "\n"


def run_detection(model, data, clamp=None):
    _check_compatible(model, data)
    return infer_batch(model, data.measurement, clamp)


def cmd_detect(opts):
    model = load_model(opts["model"])
    data = load_dataset(opts["data"])
    clamp = {EXPRESSION: opts.get("clamp_expression"), POSE: opts.get("clamp_pose")}
    result = run_detection(model, data, clamp)
    _write(opts["out"], detections_text(model, data, result, opts["policy"], clamp))
    print(f"wrote {len(data)} detections to {opts['out']} "
          f"(mean log evidence {float(np.mean(result.log_evidence)):.4f})")
    return EXIT_OK


def load_detections(path, num_points):
    from .shapes import _read_jsonl

    rows = _read_jsonl(path, "detections")
    header, recs = rows[0], rows[1:]
    if header.get("format") != DETECTIONS_FORMAT:
        raise exc.SchemaViolation(f"{path}: not a detections file")
    out = {}
    for key in ("estimate_mean", "estimate_mode"):
        arr = np.empty((len(recs), num_points, 2))
        for i, r in enumerate(recs):
            vals = r.get(key)
            if not isinstance(vals, list) or len(vals) != 2 * num_points:
                raise exc.SchemaViolation(f"detection {i}: field '{key}' must hold {2 * num_points} numbers")
            arr[i] = np.asarray(vals, dtype=float).reshape(num_points, 2)
        out[key[len("estimate_"):]] = arr
    return out


def evaluation_tables(data, estimates):
    """Summary rows (Table-1 layout) and per-point mean errors for each estimate."""
    iod = data.interocular()
    comps = list(data.partition.components)
    named = {"measurement": data.measurement, **estimates}
    summary = [["method"] + comps + ["overall"]]
    points = [["point"] + list(named)]
    per_point = {}
    for name, est in named.items():
        err = normalized_error(est, data.truth, iod)
        s = error_summary(err, data.partition)
        summary.append([name] + [_fmt(s[c]) for c in comps] + [_fmt(s["overall"])])
        per_point[name] = err.mean(axis=0)
    for i in range(data.partition.num_points):
        points.append([i] + [_fmt(per_point[name][i]) for name in named])
    return summary, points


def _print_table(rows):
    widths = [max(len(str(r[j])) if j == 0 else 10 for r in rows) for j in range(len(rows[0]))]
    for i, r in enumerate(rows):
        cells = []
        for j, v in enumerate(r):
            if i and j and isinstance(v, str) and v[:1] in "-0123456789":
                try:
                    v = f"{float(v):.6f}"
                except ValueError:
                    pass
            cells.append(str(v).rjust(widths[j]) if j else str(v).ljust(widths[j]))
        print("  ".join(cells))


def cmd_evaluate(opts):
    data = load_dataset(opts["data"])
    if opts.get("kfold"):
        if opts.get("seed") is None:
            raise UsageError("evaluate --kfold requires --seed")
        if not opts.get("states") and not opts.get("select_states"):
            raise UsageError("evaluate --kfold: give --states K or --select-states")
        config = learn_config_from(opts)
        if opts.get("select_states"):
            config = LearnConfig(**{**config.__dict__, "state_counts": None})
        plan = make_folds(data, int(opts["kfold"]), int(opts["seed"]))
        mean = np.empty_like(data.truth)
        mode = np.empty_like(data.truth)
        for k in range(len(plan)):
            train, test = plan.train_test(k)
            model, _ = structure_em(data.subset(train), config)
            res = run_detection(model, data.subset(test))
            mean[test] = res.estimate_mean
            mode[test] = res.estimate_mode
            log.info("fold %d/%d done", k + 1, len(plan))
        estimates = {"mean": mean, "mode": mode}
    elif opts.get("detections"):
        estimates = load_detections(opts["detections"], data.partition.num_points)
        if estimates["mean"].shape[0] != len(data):
            raise exc.SchemaViolation(
                f"{opts['detections']} has {estimates['mean'].shape[0]} detections for {len(data)} samples"
            )
    else:
        raise UsageError("evaluate: give --detections PATH or --kfold K")
    summary, points = evaluation_tables(data, estimates)
    if opts.get("out_csv"):
        _write(opts["out_csv"], _csv_text(summary))
    if opts.get("points_csv"):
        _write(opts["points_csv"], _csv_text(points))
    print(f"mean normalized error (selected policy: {opts['policy']})")
    _print_table(summary)
    return EXIT_OK


def cmd_sample(opts):
    model = load_model(opts["model"])
    comp = opts["component"]
    if comp not in model.components:
        raise exc.IndexOutOfRange(f"unknown component {comp!r}; choose from {list(model.components)}")
    cm = model.components[comp]
    states = [opts["state"]] if opts.get("state") is not None else list(range(cm.num_states))
    n = int(opts["n"])
    if n < 0:
        raise UsageError("--n must be non-negative")
    rows = [["state", "sample", "point", "x", "y"]]
    point_ids = model.partition.groups[comp]
    for z in states:
        draws = cm.sample_state_shapes(z, n, [int(opts["seed"]), z])
        for s, flat_shape in enumerate(draws):
            for j, pid in enumerate(point_ids):
                rows.append([z, s, pid, _fmt(flat_shape[2 * j]), _fmt(flat_shape[2 * j + 1])])
    _write(opts["out"], _csv_text(rows))
    print(f"wrote {n} samples x {len(states)} state(s) of {comp} to {opts['out']}")
    return EXIT_OK


def inspect_tables(model, node, given, pair):
    cond_rows = [[f"{node}\\{given}"] + [str(v) for v in range(model.network.card(given))]]
    cols = [query_state_given_label(model, node, {given: v}) for v in range(model.network.card(given))]
    for z in range(model.network.card(node)):
        cond_rows.append([z] + [_fmt(c[z]) for c in cols])
    a, b = pair
    joint = query_joint_states(model, a, b)
    joint_rows = [[f"{a}\\{b}"] + [str(v) for v in range(joint.shape[1])]]
    for i in range(joint.shape[0]):
        joint_rows.append([i] + [_fmt(v) for v in joint[i]])
    struct_rows = [["parent", "child"]] + [list(e) for e in model.network.edges]
    return struct_rows, cond_rows, joint_rows


def cmd_inspect(opts):
    model = load_model(opts["model"])
    node, given, pair = opts["node"], opts["given"], opts["pair"]
    for name in [node, given, *pair]:
        if name not in model.network.index:
            raise exc.IndexOutOfRange(f"unknown node {name!r}; nodes are {list(model.network.nodes)}")
    struct_rows, cond_rows, joint_rows = inspect_tables(model, node, given, pair)
    print(structure_text(model))
    print(f"\nP({node} | {given}), one column per {given} value")
    _print_table(cond_rows)
    print(f"\nP({pair[0]}, {pair[1]})")
    _print_table(joint_rows)
    if opts.get("out_dir"):
        out = Path(opts["out_dir"])
        out.mkdir(parents=True, exist_ok=True)
        _write(out / "structure.csv", _csv_text(struct_rows))
        _write(out / "conditional.csv", _csv_text(cond_rows))
        _write(out / "joint.csv", _csv_text(joint_rows))
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "detect": cmd_detect,
    "evaluate": cmd_evaluate,
    "sample": cmd_sample,
    "inspect": cmd_inspect,
}


def main(argv=None):
    level = os.environ.get("HIERFACE_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        opts = resolve_options(args)
        return COMMANDS[args.command](opts)
    except UsageError as e:
        print(f"hierface: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except exc.ParseError as e:
        print(f"hierface: parse error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except exc.SchemaViolation as e:
        print(f"hierface: schema violation: {e}", file=sys.stderr)
        return EXIT_SCHEMA
    except exc.CardinalityMismatch as e:
        print(f"hierface: cardinality mismatch: {e}", file=sys.stderr)
        return EXIT_CARDINALITY
    except exc.MonotonicityViolation as e:
        print(f"hierface: {e}", file=sys.stderr)
        return EXIT_MONOTONICITY
    except exc.HierfaceError as e:
        print(f"hierface: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
