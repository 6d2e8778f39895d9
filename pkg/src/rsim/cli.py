"""``rsim`` command line.

Exit codes: 0 ok, 1 usage or I/O, 2 shape, 3 numerical, 4 ill-conditioned,
5 training failure. Set ``RSIM_LOG`` to error, info or debug for diagnostics
on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__, harness, toyenv, trainer
from .cca import DEFAULT_VARIANCE_KEEP, cca, mean_cca_distance, svcca
from .errors import (
    BundleError, DataError, DegenerateInputError, FormatError, IllConditionedError,
    NumericalError, RsimError, ShapeError, TrainingError,
)
from .linalg import DEFAULT_REL_TOL
from .matrix_io import load_matrix, save_bundle, save_matrix
from .pwcca import MODES, pwcca_distance

log = logging.getLogger("rsim")

EXIT_OK, EXIT_USAGE, EXIT_SHAPE, EXIT_NUMERICAL, EXIT_ILL, EXIT_TRAINING = range(6)
STOCHASTIC = {"compare", "study", "split", "probe"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _out_dir(args) -> Path:
    if not args.out:
        raise UsageError(f"{args.command} needs --out")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- subcommands ---------------------------------------------------------------

def cmd_distance(args) -> int:
    x = load_matrix(args.a)
    y = load_matrix(args.b)
    result = {"method": args.method}
    if args.method == "pwcca":
        d = pwcca_distance(x, y, mode=args.mode, rel_tol=args.rel_tol)
        r = d.cca
        result.update(d.as_dict())
    else:
        r = cca(x, y, args.rel_tol) if args.method == "cca" else svcca(x, y, args.keep, args.rel_tol)
        result["value"] = mean_cca_distance(r)
        result["rho"] = [float(v) for v in r.rho]
    result["kept"] = [r.kept_x, r.kept_y]
    result["ill_conditioned"] = r.ill_conditioned
    if r.ill_conditioned and not args.allow_ill_conditioned:
        raise IllConditionedError(str(r.warning))
    sys.stdout.write(_dump(result))
    return EXIT_OK


def _compare_kwargs(args) -> dict:
    return dict(
        mode=args.mode, rel_tol=args.rel_tol, variance_keep=args.keep,
        n_resamples=args.resamples, level=args.level, seed=args.seed,
        allow_ill_conditioned=args.allow_ill_conditioned, jobs=args.jobs,
    )


def cmd_compare(args) -> int:
    out = _out_dir(args)
    a = harness.ModelGroup.from_directory(args.a, label=args.label_a)
    b = harness.ModelGroup.from_directory(args.b, label=args.label_b)
    report = harness.compare_groups(a, b, args.method, **_compare_kwargs(args))
    report.write(out)
    log.info("wrote %s", out / "report.json")
    return EXIT_OK


def cmd_split(args) -> int:
    out = _out_dir(args)
    world = toyenv.load_world(args.world)
    split = toyenv.make_split(world.object_ids, args.seed)
    (out / "split.json").write_text(_dump({**split.to_dict(), "seed": args.seed}))
    return EXIT_OK


def cmd_probe(args) -> int:
    out = _out_dir(args)
    world = toyenv.load_world(args.world)
    probes = trainer.build_probeset(world, args.count, args.seed)
    save_matrix(probes.to_matrix(), out / "probes.rsm")
    poses = [{"cell": list(c), "heading": h} for c, h in probes.poses]
    (out / "probes.json").write_text(_dump({"seed": args.seed, "count": probes.count, "poses": poses}))
    return EXIT_OK


def cmd_convert(args) -> int:
    if not args.out:
        raise UsageError("convert needs --out (the output file)")
    m = load_matrix(args.input)
    save_matrix(m, args.out, format=args.to)
    return EXIT_OK


def _write_curves(path: Path, nets) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "episode", "return"])
        for net in nets:
            for i, ret in enumerate(net.history):
                w.writerow([net.name, i, repr(ret)])


def cmd_study(args) -> int:
    out = _out_dir(args)
    world = toyenv.load_world(args.world) if args.world else toyenv.load_demo_world()
    if args.config == "demo":
        config = trainer.TrainConfig.load(trainer.demo_config_path())
    else:
        config = trainer.TrainConfig.load(args.config) if args.config else trainer.TrainConfig()
    n_seeds = args.n_seeds or config.seeds
    split_seed = args.seed if args.split_seed is None else args.split_seed
    split = toyenv.make_split(world.object_ids, split_seed)
    log.info("split A=%s B=%s", split.a, split.b)

    study = trainer.run_study(world, split, n_seeds, config, seed=args.seed, transfer=args.transfer, jobs=args.jobs)

    toyenv.save_world(world, out / "world.json")
    (out / "config.json").write_text(_dump(config.to_dict()))
    (out / "split.json").write_text(_dump({**split.to_dict(), "seed": split_seed}))
    save_matrix(study.probes.to_matrix(), out / "probes.rsm")
    for side, nets, group in (("A", study.nets_a, study.group_a), ("B", study.nets_b, study.group_b)):
        for net, bundle in zip(nets, group.bundles):
            net.save(out / "nets" / net.name)
            save_bundle(bundle, out / "bundles" / side / net.name)
    _write_curves(out / "training_curves.csv", study.nets_a + study.nets_b)

    evals = [("A", n) for n in study.nets_a] + [("B", n) for n in study.nets_b]
    if args.transfer:
        for net in study.transfer_nets:
            net.save(out / "nets" / net.name)
        _write_curves(out / "transfer_curves.csv", study.transfer_nets)
        evals += [("B", n) for n in study.transfer_nets]
    with open(out / "eval.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "side", "mean_return"])
        for i, (side, net) in enumerate(evals):
            ret = trainer.evaluate(net, world, split.side(side), config.eval_episodes, [args.seed, 3, i])
            w.writerow([net.name, side, repr(ret)])

    extra = {
        "study": {
            "split": split.to_dict(),
            "n_seeds": n_seeds,
            "probe_count": study.probes.count,
            "probe_set": "distinct views at seeded random (cell, heading) poses",
            "train_config": config.to_dict(),
        }
    }
    report = harness.compare_groups(study.group_a, study.group_b, args.method, extra_config=extra,
                                    **_compare_kwargs(args))
    report.write(out)

    files = sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    (out / "manifest.json").write_text(_dump({
        "rsim_version": __version__, "seed": args.seed, "transfer": args.transfer, "files": files,
    }))
    return EXIT_OK


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, help="seed for every random draw (required by stochastic commands)")
    common.add_argument("--jobs", type=int, default=1, help="worker cap for pairwise distances / training")
    common.add_argument("--out", help="output directory (output file for convert)")
    common.add_argument("--allow-ill-conditioned", action="store_true",
                        help="accept comparisons with too few probe inputs for the neuron count")

    sim = _Parser(add_help=False)
    sim.add_argument("--method", choices=harness.METHODS, default="pwcca")
    sim.add_argument("--mode", choices=MODES, default="symmetric", help="PWCCA weighting view")
    sim.add_argument("--keep", type=float, default=DEFAULT_VARIANCE_KEEP, help="SVCCA variance fraction")
    sim.add_argument("--rel-tol", type=float, default=DEFAULT_REL_TOL)

    boot = _Parser(add_help=False)
    boot.add_argument("--resamples", type=int, default=1000)
    boot.add_argument("--level", type=float, default=0.95)

    parser = _Parser(prog="rsim", description="Representation similarity tools and gridworld studies.")
    parser.add_argument("--version", action="version", version=f"rsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("distance", parents=[common, sim], help="distance between two matrices")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.set_defaults(func=cmd_distance)

    p = sub.add_parser("compare", parents=[common, sim, boot], help="within/cross group comparison")
    p.add_argument("--a", required=True, help="directory of group-A bundles")
    p.add_argument("--b", required=True, help="directory of group-B bundles")
    p.add_argument("--label-a", default="A")
    p.add_argument("--label-b", default="B")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("study", parents=[common, sim, boot], help="split, train, probe and compare end to end")
    p.add_argument("--world", help="world file (default: the bundled demo world)")
    p.add_argument("--config", help="training config file, or 'demo' for the bundled demo config")
    p.add_argument("--n-seeds", type=int)
    p.add_argument("--split-seed", type=int)
    p.add_argument("--transfer", action="store_true", help="also retrain heads on B over frozen A encoders")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("split", parents=[common], help="random equal split of the world's targets")
    p.add_argument("--world", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("probe", parents=[common], help="build a probe observation set")
    p.add_argument("--world", required=True)
    p.add_argument("--count", type=int, default=500)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("convert", parents=[common], help="convert a matrix between binary and text")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--to", choices=("binary", "text"), required=True)
    p.set_defaults(func=cmd_convert)
    return parser


def _exit_code(exc: Exception) -> int:
    if isinstance(exc, IllConditionedError):
        return EXIT_ILL
    if isinstance(exc, TrainingError):
        return EXIT_TRAINING
    if isinstance(exc, (ShapeError, BundleError, FormatError)):
        return EXIT_SHAPE
    if isinstance(exc, (NumericalError, DegenerateInputError, DataError)):
        return EXIT_NUMERICAL
    return EXIT_USAGE


def main(argv=None) -> int:
    level = os.environ.get("RSIM_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command in STOCHASTIC and args.seed is None:
        parser.error(f"{args.command} requires --seed")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"rsim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RsimError, ValueError, OSError) as exc:
        print(f"rsim {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
