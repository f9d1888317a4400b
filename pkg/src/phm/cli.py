"""Command-line interface.

Subcommands:

* ``verify`` -- run the named check suites, write a JSON report, exit
  nonzero if any check fails.
* ``params`` -- parameter audit table for an attention-stack config
  (human table on stdout, machine CSV on disk).
* ``train``  -- run one experiment spec, persist record + checkpoint.
* ``bench``  -- time the dense and implicit matvec paths across backends.

Exit codes: 0 success, 1 check or run failure, 2 usage/parse errors.
Seed resolution: ``--seed`` flag, else PHM_SEED env var, else 0.
"""

import argparse
import json
import os
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from . import kernels
from .container import ContainerError
from .experiments import (
    ExperimentSpec, RunError, SpecError, param_audit, run_experiment,
)
from .rng import make_rng
from .tensor import ShapeError
from .verify import run_all_checks

_AUDIT_KEYS = {"layers", "d", "d_ff", "heads", "n_values"}
_DEFAULT_AUDIT = {"layers": 4, "d": 512, "d_ff": 2048, "heads": 8,
                  "n_values": [1, 2, 4, 8, 16]}


def _resolve_seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("PHM_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise SpecError(f"PHM_SEED must be an integer, got {env!r}")
    return 0


def _out_dir(args, default: str) -> Path:
    out = Path(args.out) if args.out else Path(default)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------

def cmd_verify(args) -> int:
    seed = _resolve_seed(args)
    results = run_all_checks(seed=seed)
    out = _out_dir(args, ".")
    report_path = out / "verify_report.json"
    report_path.write_text(
        json.dumps([r.as_dict() for r in results], indent=2) + "\n")
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.check}  max_err={r.max_err:.3e}")
    failed = [r.check for r in results if not r.passed]
    print(f"report: {report_path}")
    if failed:
        print(f"failed checks: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------------------
# params
# ---------------------------------------------------------------------------

def _load_audit_config(args) -> dict:
    cfg = dict(_DEFAULT_AUDIT)
    if args.spec:
        try:
            raw = json.loads(Path(args.spec).read_text())
        except json.JSONDecodeError as exc:
            raise SpecError(
                f"{args.spec}: line {exc.lineno} column {exc.colno}: {exc.msg}")
        if not isinstance(raw, dict):
            raise SpecError(f"{args.spec}: top level must be an object")
        unknown = set(raw) - _AUDIT_KEYS
        if unknown:
            raise SpecError(f"{args.spec}: unknown keys {sorted(unknown)}")
        cfg.update(raw)
    if args.n:
        cfg["n_values"] = args.n
    return cfg


def cmd_params(args) -> int:
    cfg = _load_audit_config(args)
    rows = param_audit(cfg["n_values"], layers=cfg["layers"], d=cfg["d"],
                       d_ff=cfg["d_ff"], heads=cfg["heads"])
    print(f"config: layers={cfg['layers']} d={cfg['d']} "
          f"d_ff={cfg['d_ff']} heads={cfg['heads']} (embeddings excluded)")
    print(f"{'n':>4}  {'params':>12}  {'savings':>8}")
    for row in rows:
        print(f"{row['n']:>4}  {row['params']:>12}  {row['savings_pct']:>7.1f}%")
    out = _out_dir(args, ".")
    csv_path = out / "params.csv"
    lines = ["n,params,savings_pct"]
    lines += [f"{r['n']},{r['params']},{r['savings_pct']:.4f}" for r in rows]
    csv_path.write_text("\n".join(lines) + "\n")
    print(f"csv: {csv_path}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    spec = ExperimentSpec.from_json(args.spec)
    if args.seed is not None or os.environ.get("PHM_SEED") is not None:
        spec.seed = _resolve_seed(args)
        spec.validate()
    out = _out_dir(args, f"runs/{spec.task}-{spec.spec_hash()[:8]}")
    try:
        record = run_experiment(spec, out_dir=out)
    except RunError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        print(f"partial record: {out}", file=sys.stderr)
        return 1
    print(f"task={spec.task} n={spec.n} steps={record.steps[-1]} "
          f"final_loss={record.final_loss:.6e}")
    if record.final_metric is not None:
        metric = "accuracy" if spec.task.endswith("seq") else "eval_mse"
        print(f"{metric}={record.final_metric:.6e}")
    print(f"artifacts: {out}")
    return 0


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

def _parse_dims(text: str):
    """'KxD[,KxD...]' -> list of (k, d)."""
    pairs = []
    for part in text.split(","):
        try:
            k_s, d_s = part.lower().split("x")
            pairs.append((int(k_s), int(d_s)))
        except ValueError:
            raise SpecError(f"bad dims {part!r}; expected KxD like 512x512")
    return pairs


def _time_ns(fn, repeats: int, warmup: int) -> float:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        samples.append(time.perf_counter_ns() - t0)
    return statistics.median(samples)


def _tracked_bytes(fn) -> int:
    with kernels.track_allocations() as log:
        fn()
    return log.total_bytes


def cmd_bench(args) -> int:
    n_values = args.n or [1, 2, 4, 8]
    dims = _parse_dims(args.dims) if args.dims else [(512, 512)]
    repeats, warmup = args.repeats, 3
    backends = kernels.available_backends()
    rng = make_rng(_resolve_seed(args))
    rows = []
    for k, d in dims:
        for n in n_values:
            if d % n or k % n:
                raise SpecError(f"n={n} does not divide dims {k}x{d}")
            a = rng.uniform(-1, 1, size=(n, n, n))
            s = rng.uniform(-1, 1, size=(n, k // n, d // n))
            x = rng.uniform(-1, 1, size=d)
            x2 = np.ascontiguousarray(x.reshape(1, n, d // n))

            def dense():
                return kernels.compose(a, s) @ x

            y_ref = dense()
            # guard: every path must agree numerically before timing
            for name, mod in backends.items():
                y = mod.apply_forward(a, s, x2).reshape(k)
                rel = np.abs(y - y_ref).max() / max(np.abs(y_ref).max(), 1e-300)
                if rel > 1e-12:
                    print(f"bench guard failed: implicit[{name}] deviates "
                          f"rel={rel:.3e} at n={n} dims={k}x{d}", file=sys.stderr)
                    return 1
            rows.append({
                "n": n, "k": k, "d": d, "path": "dense",
                "backend": kernels.backend_name(),
                "median_ns": _time_ns(dense, repeats, warmup),
                "peak_bytes": _tracked_bytes(dense),
            })
            for name, mod in backends.items():
                fn = lambda: mod.apply_forward(a, s, x2)
                rows.append({
                    "n": n, "k": k, "d": d, "path": "implicit",
                    "backend": name,
                    "median_ns": _time_ns(fn, repeats, warmup),
                    "peak_bytes": _tracked_bytes(fn),
                })
    header = "n,k,d,path,backend,median_ns,peak_bytes"
    lines = [header]
    for r in rows:
        lines.append(f"{r['n']},{r['k']},{r['d']},{r['path']},{r['backend']},"
                     f"{r['median_ns']:.0f},{r['peak_bytes']}")
    print("\n".join(lines))
    if args.out:
        out = _out_dir(args, ".")
        (out / "bench.csv").write_text("\n".join(lines) + "\n")
        print(f"csv: {out / 'bench.csv'}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _int_list(text: str):
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated ints, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phm",
        description="Kronecker-sum structured layers: verification, "
                    "parameter audits, experiments, benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="seed (fallback: PHM_SEED env, then 0)")
        p.add_argument("-v", "--verbose", action="store_true")

    p_verify = sub.add_parser("verify", help="run all named check suites")
    common(p_verify)

    p_params = sub.add_parser("params", help="parameter audit vs the n=1 baseline")
    common(p_params)
    p_params.add_argument("--spec", help="JSON config: layers,d,d_ff,heads,n_values")
    p_params.add_argument("--n", type=_int_list, help="comma-separated n values")

    p_train = sub.add_parser("train", help="run one experiment spec")
    common(p_train)
    p_train.add_argument("--spec", required=True, help="experiment spec JSON")

    p_bench = sub.add_parser("bench", help="time dense vs implicit matvec")
    common(p_bench)
    p_bench.add_argument("--n", type=_int_list, help="comma-separated n values")
    p_bench.add_argument("--dims", help="KxD[,KxD...] output-by-input sizes")
    p_bench.add_argument("--repeats", type=int, default=30)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"verify": cmd_verify, "params": cmd_params,
                "train": cmd_train, "bench": cmd_bench}
    try:
        return handlers[args.command](args)
    except (SpecError, ContainerError, ShapeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
