"""
Command-line interface.

Every subcommand writes one result file plus ``<result>.manifest.json``
recording the argv, parameters, seed, package version and SHA-256 of the
outputs. Results contain nothing time- or locale-dependent, so re-running a
manifest's argv reproduces the files byte for byte.

Exit codes: 0 success, 2 usage or parameter error, 3 empty selection or
zero-probability conditioning, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .analysis import (
    AveragingKind,
    AveragingScheme,
    average_conditioned,
    ballistic_fit,
    civilization_recurrence,
    monitored_recurrence_single,
    similarity,
    symmetric_reference,
    variance_series_conditioned,
    variance_series_joint,
    variance_series_single,
)
from .tm_emulator import ClickStream, EmptySelection, EmulatorConfig, reconstruct_conditioned, simulate_runs
from .two_photon import (
    ConditioningSpec,
    Convention,
    ZeroConditioningProbability,
    conditioned_distribution,
    conditioned_survivor,
)
from .walk_core import Coin, Distribution, Mode, WalkerState, evolve, mode_distribution

OUTPUT_DIR_ENV = "CONDWALK_OUTPUT_DIR"

EXIT_OK, EXIT_USAGE, EXIT_EMPTY, EXIT_IO = 0, 2, 3, 4


class UsageError(ValueError):
    pass


def _fmt(p: float) -> str:
    return f"{p:.12g}"


def write_results(
    data: Distribution | Sequence[Distribution],
    fmt: str,
    path: str | Path,
    meta: dict[str, Any] | None = None,
) -> Path:
    """
    Write one or more distributions as CSV (``step,x,coin,probability``) or
    JSON (``{"meta": ..., "distribution": [...]}``). Rows are ordered by
    step, then position, then H before V.
    """
    dists = [data] if isinstance(data, Distribution) else list(data)
    rows = []
    for d in dists:
        for k, p in d.items():
            x, c = (k[0], k[1].name) if isinstance(k, tuple) else (k, "")
            rows.append((d.step, x, c, p))
    path = Path(path)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "x", "coin", "probability"])
        w.writerows((s, x, c, _fmt(p)) for s, x, c, p in rows)
        text = buf.getvalue()
    elif fmt == "json":
        payload = {
            "meta": meta or {},
            "distribution": [{"step": s, "x": x, "coin": c, "probability": p} for s, x, c, p in rows],
        }
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    else:
        raise UsageError(f"unknown format {fmt!r}")
    path.write_text(text)
    return path


def read_results(path: str | Path) -> list[Distribution]:
    """Read distributions written by :func:`write_results`, one per step."""
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        rows = [(r["step"], r["x"], r["coin"], r["probability"]) for r in json.loads(text)["distribution"]]
    else:
        rows = [(int(r["step"]), int(r["x"]), r["coin"], float(r["probability"])) for r in csv.DictReader(io.StringIO(text))]
    by_step: dict[int, dict] = {}
    for s, x, c, p in rows:
        key = Mode(x, Coin.parse(c)) if c else x
        by_step.setdefault(s, {})[key] = p
    return [Distribution(s, e) for s, e in sorted(by_step.items())]


def write_table(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]], fmt: str, meta: dict) -> Path:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows([_fmt(v) if isinstance(v, float) else v for v in r] for r in rows)
        text = buf.getvalue()
    else:
        payload = {"meta": meta, "rows": [dict(zip(header, r)) for r in rows]}
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    path.write_text(text)
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(result: Path, command: str, argv: Sequence[str], params: dict, seed: int | None, extra: dict) -> Path:
    manifest = {
        "command": command,
        "argv": list(argv),
        "parameters": params,
        "rng_seed": seed,
        "version": __version__,
        "results": extra,
        "outputs": {result.name: _sha256(result)},
    }
    out = result.with_name(result.name + ".manifest.json")
    out.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return out


# argument parsing helpers


def _mode(text: str) -> Mode:
    try:
        return Mode.parse(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def _steps(text: str) -> list[int]:
    """``"1..6"`` or ``"1,3,5"``."""
    try:
        if ".." in text:
            a, b = text.split("..")
            return list(range(int(a), int(b) + 1))
        return [int(s) for s in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a range like 1..6 or a list like 1,3,5, got {text!r}")


def _nonneg(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be nonnegative")
    return v


def _initial(args) -> WalkerState:
    if args.symmetric:
        return WalkerState.localized(args.init.x, (1, 1j))
    return WalkerState.basis(args.init.x, args.init.c)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="condwalk", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output", "-o", type=Path, help="result file (default: <command>.<format> in $%s or cwd)" % OUTPUT_DIR_ENV)
    common.add_argument("--format", choices=["csv", "json"], default="csv")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument(
        "--convention", choices=[c.value for c in Convention], default=None,
        help="conditioning convention (default: projector; annihilation for emulate)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("walk", parents=[common], help="single-photon walk distribution")
    p.add_argument("--steps", type=_nonneg, required=True)
    p.add_argument("--init", type=_mode, default=Mode(0, Coin.H))
    p.add_argument("--symmetric", action="store_true", help="use coin (H + iV)/sqrt(2) at the --init position")
    p.add_argument("--per-step", action="store_true")

    p = sub.add_parser("condition", parents=[common], help="survivor distribution after a photon loss")
    p.add_argument("--loss-step", type=int, required=True)
    p.add_argument("--loss-mode", type=_mode, required=True)
    p.add_argument("--out-step", type=int, required=True)
    p.add_argument("--per-step", action="store_true")

    p = sub.add_parser("average", parents=[common], help="loss-averaged survivor distribution")
    p.add_argument("--loss-steps", type=_steps, required=True)
    p.add_argument("--out-step", type=int, required=True)
    p.add_argument("--scheme", choices=[k.value for k in AveragingKind], default="uniform")
    p.add_argument("--compare", choices=["symmetric-single"], default=None)

    p = sub.add_parser("variance", parents=[common], help="variance series and ballistic slope")
    p.add_argument("--kind", choices=["single", "joint", "conditioned"], default="single")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--init", type=_mode, default=Mode(0, Coin.H))
    p.add_argument("--symmetric", action="store_true")
    p.add_argument("--loss-step", type=int)
    p.add_argument("--loss-mode", type=_mode)
    p.add_argument("--window", type=_steps, default=[10, 50], help="fit window lo,hi")

    p = sub.add_parser("recurrence", parents=[common], help="monitored return probability of one walker")
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--init", type=_mode, default=Mode(0, Coin.H))
    p.add_argument("--symmetric", action="store_true")

    p = sub.add_parser("civilization", parents=[common], help="two-walker conditioned recurrence")
    p.add_argument("--horizon", type=int, required=True)

    p = sub.add_parser("emulate", parents=[common], help="Monte-Carlo click stream of the loop experiment")
    defaults = EmulatorConfig()
    p.add_argument("--runs", type=_nonneg, default=defaults.runs)
    p.add_argument("--max-step", type=int, default=defaults.max_step)
    p.add_argument("--outcoupling", type=float, default=defaults.outcoupling_prob)
    p.add_argument("--efficiency", type=float, default=defaults.detector_efficiency)
    p.add_argument("--klyshko", type=float, default=defaults.setup_klyshko)
    p.add_argument("--generation-prob", type=float, default=defaults.pair_generation_prob)
    p.add_argument("--dead-time", type=float, default=defaults.dead_time_ns)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--binary", action="store_true", help="write the packed binary framing instead of CSV")

    p = sub.add_parser("reconstruct", parents=[common], help="conditioned distribution from a click stream")
    p.add_argument("--events", type=Path, required=True)
    p.add_argument("--loss-step", type=int, required=True)
    p.add_argument("--loss-mode", type=_mode, required=True)
    p.add_argument("--out-step", type=int, required=True)

    p = sub.add_parser("similarity", parents=[common], help="similarity of two distribution files")
    p.add_argument("p", type=Path)
    p.add_argument("q", type=Path)
    return parser


def _default_output(args, ext: str) -> Path:
    if args.output is not None:
        return args.output
    return Path(os.environ.get(OUTPUT_DIR_ENV, ".")) / f"{args.command}.{ext}"


def _params(args) -> dict:
    skip = {"output", "command", "seed"}
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in skip:
            continue
        out[k] = str(v) if isinstance(v, (Mode, Path)) else v
    return out


def _run(args, argv: Sequence[str]) -> int:
    conv = Convention.parse(args.convention or Convention.PROJECTOR)
    meta = {"command": args.command, "parameters": _params(args), "version": __version__}
    extra: dict[str, Any] = {}
    cmd = args.command

    if cmd == "walk":
        state = _initial(args)
        if args.per_step:
            dists = [mode_distribution(state)]
            for _ in range(args.steps):
                state = evolve(state, 1)
                dists.append(mode_distribution(state))
        else:
            dists = [mode_distribution(evolve(state, args.steps))]
        result = write_results(dists, args.format, _default_output(args, args.format), meta)

    elif cmd == "condition":
        cond = ConditioningSpec(args.loss_step, args.loss_mode, conv)
        if args.per_step:
            if args.out_step < args.loss_step:
                raise UsageError("output step precedes loss step")
            outcome = conditioned_survivor(cond)
            state, dists = outcome.survivor, [mode_distribution(outcome.survivor)]
            for _ in range(args.loss_step, args.out_step):
                state = evolve(state, 1)
                dists.append(mode_distribution(state))
            weight = outcome.weight
        else:
            dist, weight = conditioned_distribution(cond, args.out_step)
            dists = [dist]
        extra["weight"] = weight
        meta["results"] = extra
        result = write_results(dists, args.format, _default_output(args, args.format), meta)

    elif cmd == "average":
        scheme = AveragingScheme(AveragingKind(args.scheme))
        dist = average_conditioned(args.loss_steps, args.out_step, scheme, conv)
        if args.compare == "symmetric-single":
            extra["similarity"] = similarity(dist, symmetric_reference(args.out_step))
            print(f"similarity to symmetric single-photon walk: {extra['similarity']:.6f}")
        meta["results"] = extra
        result = write_results(dist, args.format, _default_output(args, args.format), meta)

    elif cmd == "variance":
        if args.kind == "single":
            series = variance_series_single(_initial(args), args.steps)
        elif args.kind == "joint":
            series = variance_series_joint(args.steps)
        else:
            if args.loss_step is None or args.loss_mode is None:
                raise UsageError("--kind conditioned needs --loss-step and --loss-mode")
            outcome = conditioned_survivor(ConditioningSpec(args.loss_step, args.loss_mode, conv))
            series = variance_series_conditioned(outcome, args.steps)
        if len(args.window) != 2:
            raise UsageError("--window takes lo,hi")
        lo, hi = args.window
        if hi <= args.steps:
            extra["slope"] = ballistic_fit(series, (lo, hi))
            print(f"log-log slope over steps {lo}-{hi}: {extra['slope']:.6f}")
        meta["results"] = extra
        rows = [(t, v) for t, v in sorted(series.items())]
        result = write_table(_default_output(args, args.format), ["step", "variance"], rows, args.format, meta)

    elif cmd == "recurrence":
        series = monitored_recurrence_single(_initial(args), args.horizon)
        rows = [(t, series[t]) for t in range(1, args.horizon + 1)]
        result = write_table(_default_output(args, args.format), ["T", "return_probability"], rows, args.format, meta)

    elif cmd == "civilization":
        series = civilization_recurrence(args.horizon, conv)
        rows = [(t, series[t]) for t in range(1, args.horizon + 1)]
        result = write_table(_default_output(args, args.format), ["T", "return_probability"], rows, args.format, meta)

    elif cmd == "emulate":
        cfg = EmulatorConfig(
            outcoupling_prob=args.outcoupling,
            detector_efficiency=args.efficiency,
            dead_time_ns=args.dead_time,
            setup_klyshko=args.klyshko,
            pair_generation_prob=args.generation_prob,
            max_step=args.max_step,
            runs=args.runs,
            rng_seed=args.seed,
            convention=Convention.parse(args.convention or Convention.ANNIHILATION),
        )
        stream = simulate_runs(cfg, workers=args.workers)
        path = _default_output(args, "bin" if args.binary else "csv")
        if args.binary:
            path.write_bytes(stream.to_bytes())
        else:
            path.write_text(stream.to_csv())
        extra.update({k: v for k, v in stream.diagnostics.__dict__.items()})
        extra["clicks"] = len(stream)
        result = path

    elif cmd == "reconstruct":
        stream = ClickStream.load(args.events)
        dist, counts = reconstruct_conditioned(stream, args.loss_step, args.loss_mode, args.out_step)
        extra["counts"] = {str(m): k for m, k in counts.items()}
        meta["results"] = extra
        result = write_results(dist, args.format, _default_output(args, args.format), meta)

    elif cmd == "similarity":
        (p,), (q,) = read_results(args.p)[-1:], read_results(args.q)[-1:]
        extra["similarity"] = similarity(p, q)
        print(f"similarity: {extra['similarity']:.6f}")
        result = write_table(_default_output(args, args.format), ["similarity"], [(extra["similarity"],)], args.format, meta)

    else:  # pragma: no cover - argparse restricts choices
        raise UsageError(cmd)

    write_manifest(result, cmd, argv, _params(args), args.seed, extra)
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return _run(args, argv)
    except (ZeroConditioningProbability, EmptySelection) as e:
        print(f"condwalk {args.command}: {e}", file=sys.stderr)
        return EXIT_EMPTY
    except OSError as e:
        print(f"condwalk {args.command}: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"condwalk {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
