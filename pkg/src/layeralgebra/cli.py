"""Command-line entry point: ``layeralgebra {verify,count,bench,matrix-dump}``.

Exit status: 0 on success, 1 when a check fails, 2 on a usage or
configuration error. Options can also come from a flat ``key = value`` file
passed with ``--config``; flags given on the command line win.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from . import arch as arch_mod
from . import bench as bench_mod
from . import matrix_forms as mf
from .errors import LayerAlgebraError
from .layers import KINDS, LayerSpec, WindowGeometry, init_params
from .layers.spec import ATTENTION_KINDS, PARTITION, POINTWISE_CONV, SLIDING, TOKEN_MIXING_MLP
from .verify.suites import DEFAULT_SEED, SUITES, run_suites

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2

DUMP_KINDS = ("circulant", "toeplitz") + KINDS


class UsageError(Exception):
    """Bad flags or config; maps to exit status 2."""


# -- config ----------------------------------------------------------------------------------------


def read_config(path: str) -> dict[str, str]:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _coerce(value: str, like: Any) -> Any:
    if isinstance(like, bool):
        return value.lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(value)
    if isinstance(like, list):
        return value.split()
    return value


def merge_config(args: argparse.Namespace, defaults: dict[str, Any]) -> argparse.Namespace:
    """Fill options left unset on the command line from the config file, then defaults."""
    file_values = read_config(args.config) if getattr(args, "config", None) else {}
    for key, default in defaults.items():
        if getattr(args, key, None) is not None:
            continue
        if key in file_values:
            try:
                setattr(args, key, _coerce(file_values[key], default))
            except ValueError:
                raise UsageError(f"config value for {key!r} is not valid: {file_values[key]!r}") from None
        else:
            setattr(args, key, default)
    unknown = set(file_values) - set(defaults)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return args


# -- output ---------------------------------------------------------------------------------------


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _emit_json(doc: Any, out: Optional[str]) -> None:
    _emit(json.dumps(doc, indent=2, sort_keys=False) + "\n", out)


# -- commands ------------------------------------------------------------------------------------

VERIFY_DEFAULTS = {"suite": [], "layer": "", "seed": DEFAULT_SEED, "out": ""}


def cmd_verify(args: argparse.Namespace) -> int:
    args = merge_config(args, VERIFY_DEFAULTS)
    names = args.suite or list(SUITES)
    bad = [n for n in names if n not in SUITES]
    if bad:
        raise UsageError(f"unknown suite(s) {', '.join(bad)}; choose from {', '.join(SUITES)}")
    layer = args.layer or None
    if layer is not None and layer not in KINDS:
        raise UsageError(f"unknown layer kind {layer!r}")
    doc = run_suites(names, args.seed, layer)
    _emit_json(doc, args.out or None)
    return EXIT_OK if doc["passed"] else EXIT_CHECK_FAILED


COUNT_DEFAULTS = {
    "arch": "", "compare": [], "input": 224, "predictor_mode": arch_mod.PER_CHANNEL,
    "flop_convention": arch_mod.DEFAULT_CONVENTION, "out": "",
}


def _build(name: str, input_size: int, predictor_mode: str) -> arch_mod.ArchSpec:
    if name not in arch_mod.ARCHS:
        raise UsageError(f"unknown arch {name!r}; choose from {', '.join(arch_mod.ARCHS)}")
    return arch_mod.build_arch(name, input_size, predictor_mode)


def cmd_count(args: argparse.Namespace) -> int:
    args = merge_config(args, COUNT_DEFAULTS)
    if args.flop_convention not in arch_mod.FLOP_CONVENTIONS:
        raise UsageError(f"unknown FLOP convention {args.flop_convention!r}")
    if args.compare:
        if len(args.compare) != 2:
            raise UsageError("--compare takes exactly two arch names")
        a, b = (_build(n, args.input, args.predictor_mode) for n in args.compare)
        doc = {"comparison": arch_mod.compare(a, b, args.input, args.flop_convention)}
    elif args.arch:
        spec = _build(args.arch, args.input, args.predictor_mode)
        report = arch_mod.count_flops(spec, args.input, args.flop_convention)
        doc = report.to_dict()
        doc["by_kind"] = report.by_kind()
        doc["by_stage"] = report.by_stage()
    else:
        raise UsageError("count needs --arch NAME or --compare A B")
    _emit_json(doc, args.out or None)
    return EXIT_OK


BENCH_DEFAULTS = {
    "kind": list(bench_mod.DEFAULT_KINDS), "input": "1x56x56x96", "reps": bench_mod.MIN_REPS,
    "warmup": 3, "seed": 0, "precision": "fp32", "kernel": bench_mod.DEFAULT_WINDOW,
    "heads": bench_mod.DEFAULT_HEADS, "format": "", "out": "",
}


def _parse_shape(text: str, rank: int) -> tuple[int, ...]:
    try:
        dims = tuple(int(t) for t in str(text).lower().replace(",", "x").split("x"))
    except ValueError:
        raise UsageError(f"cannot parse shape {text!r}") from None
    if len(dims) != rank or min(dims) < 1:
        raise UsageError(f"expected {rank} positive extents like {'x'.join(['4'] * rank)}, got {text!r}")
    return dims


def cmd_bench(args: argparse.Namespace) -> int:
    args = merge_config(args, BENCH_DEFAULTS)
    if args.precision != "fp32":
        raise UsageError("benchmarks run in fp32")
    if args.reps < bench_mod.MIN_REPS:
        raise UsageError(f"--reps must be at least {bench_mod.MIN_REPS}")
    for k in args.kind:
        if k not in KINDS:
            raise UsageError(f"unknown layer kind {k!r}")
    shape = _parse_shape(args.input, 4)
    reports = bench_mod.run_bench(args.kind, shape, args.reps, args.warmup, args.seed,
                                  args.kernel, args.heads)
    fmt = args.format or ("csv" if str(args.out).endswith(".csv") else "json")
    if fmt == "csv":
        _emit(bench_mod.to_csv(reports), args.out or None)
    else:
        doc = {"reports": [r.to_dict() for r in reports]}
        order = bench_mod.faster(reports, "depthwise_conv", "local_attention")
        if order is not None:
            doc["depthwise_faster_than_attention"] = order
        _emit_json(doc, args.out or None)
    return EXIT_OK


DUMP_DEFAULTS = {
    "kind": "circulant", "kernel": 3, "n": "4", "channels": 1, "heads": 1, "padding": "circular",
    "layout": mf.CHANNEL_MAJOR, "seed": 0, "format": "", "out": "",
}


def dump_operator(kind: str, kernel: int, n: str, channels: int = 1, heads: int = 1,
                  padding: str = "circular", seed: int = 0) -> mf.DenseOperator:
    """Build the operator ``matrix-dump`` writes.

    ``circulant`` and ``toeplitz`` are single-channel 1-D operators whose
    kernel holds 1..K, so entry values name the kernel tap. Layer kinds act on
    an n x n (or HxW) map with a K x K window and random seeded weights.
    """
    if kind not in DUMP_KINDS:
        raise UsageError(f"unknown dump kind {kind!r}; choose from {', '.join(DUMP_KINDS)}")
    taps = np.arange(1, kernel + 1, dtype=float)
    if kind == "circulant":
        return mf.circulant_from_kernel(taps, int(n))
    if kind == "toeplitz":
        return mf.depthwise_dense_operator(taps[None], int(n), "zero")
    h, w = _parse_shape(n, 2) if "x" in str(n) else (int(n), int(n))
    mode = PARTITION if kind in ATTENTION_KINDS else SLIDING
    window = (1, 1) if kind in (POINTWISE_CONV, TOKEN_MIXING_MLP) else (kernel, kernel)
    spec = LayerSpec(kind, channels, heads, WindowGeometry(*window, mode, padding))
    params = init_params(spec, seed, spatial=(h, w)).replace(pw_bias=None)
    x = np.random.default_rng(seed).uniform(-1.0, 1.0, (1, h, w, channels))
    return mf.layer_dense_operator(x, spec, params)


def operator_document(op: mf.DenseOperator) -> dict:
    return {
        "provenance": op.provenance,
        "layout": op.layout,
        "shape": list(op.shape),
        "positions": op.positions,
        "channels_in": op.channels_in,
        "channels_out": op.channels_out,
        "nonzeros": op.nonzeros(),
        "sparsity": op.sparsity(),
        "structural_sparsity": op.structural_sparsity(),
        "matrix": op.matrix.tolist(),
    }


def operator_text(op: mf.DenseOperator) -> str:
    lines = [
        f"# provenance: {op.provenance}",
        f"# layout: {op.layout}",
        f"# shape: {op.shape[0]}x{op.shape[1]} (positions={op.positions}, "
        f"channels_in={op.channels_in}, channels_out={op.channels_out})",
        f"# nonzeros: {op.nonzeros()}",
        f"# sparsity: {op.sparsity():.6f}",
        f"# structural_sparsity: {op.structural_sparsity():.6f}",
    ]
    cells = [[("0" if v == 0 else f"{v:.6g}") for v in row] for row in op.matrix]
    width = max(len(c) for row in cells for c in row)
    lines += [" ".join(c.rjust(width) for c in row) for row in cells]
    return "\n".join(lines) + "\n"


def cmd_matrix_dump(args: argparse.Namespace) -> int:
    args = merge_config(args, DUMP_DEFAULTS)
    if args.layout not in mf.LAYOUTS:
        raise UsageError(f"unknown layout {args.layout!r}")
    op = mf.to_layout(dump_operator(args.kind, args.kernel, args.n, args.channels, args.heads,
                                    args.padding, args.seed), args.layout)
    fmt = args.format or ("json" if str(args.out).endswith(".json") else "text")
    if fmt == "json":
        _emit_json(operator_document(op), args.out or None)
    else:
        _emit(operator_text(op), args.out or None)
    return EXIT_OK


# -- parser ------------------------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="layeralgebra", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="flat key = value file; flags override it")
        p.add_argument("--out", help="write here instead of stdout")

    p = sub.add_parser("verify", help="run verification suites (all by default)")
    p.add_argument("--suite", action="append", help=f"one of {', '.join(SUITES)}; repeatable")
    p.add_argument("--layer", help="restrict instances to one layer kind")
    p.add_argument("--seed", type=int)
    common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("count", help="parameter and FLOP counts of a named architecture")
    p.add_argument("--arch", help=f"one of {', '.join(arch_mod.ARCHS)}")
    p.add_argument("--compare", nargs=2, metavar=("BASELINE", "CANDIDATE"))
    p.add_argument("--input", type=int, help="input resolution (default 224)")
    p.add_argument("--predictor-mode", choices=(arch_mod.PER_CHANNEL, arch_mod.PER_GROUP))
    p.add_argument("--flop-convention", choices=arch_mod.FLOP_CONVENTIONS)
    common(p)
    p.set_defaults(func=cmd_count)

    p = sub.add_parser("bench", help="median forward latency of layer kinds at one shape")
    p.add_argument("--kind", action="append", help="layer kind; repeatable")
    p.add_argument("--input", help="BxHxWxC (default 1x56x56x96)")
    p.add_argument("--reps", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--precision")
    p.add_argument("--kernel", type=int, help="window extent (default 7)")
    p.add_argument("--heads", type=int)
    p.add_argument("--format", choices=("json", "csv"))
    common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("matrix-dump", help="write a layer's dense connection matrix")
    p.add_argument("--kind", help=f"one of {', '.join(DUMP_KINDS)}")
    p.add_argument("--kernel", type=int, help="kernel / window extent")
    p.add_argument("--n", help="positions (1-D kinds) or map side / HxW (layer kinds)")
    p.add_argument("--channels", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--padding", choices=("circular", "zero"))
    p.add_argument("--layout", choices=mf.LAYOUTS)
    p.add_argument("--seed", type=int)
    p.add_argument("--format", choices=("json", "text"))
    common(p)
    p.set_defaults(func=cmd_matrix_dump)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (UsageError, LayerAlgebraError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
