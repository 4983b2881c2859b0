"""Command line: run | sweep | verify <config>, plot <artifact-dir>."""
import argparse
import sys

from .. import evaluation as ev
from ..core import ModelError
from ..learning import TrainingDiverged
from .config import ConfigError, load_config
from .plots import emit_plots
from .runner import run_experiment, sweep_kappa, verify

EXIT_OK, EXIT_ERROR, EXIT_CERT = 0, 1, 2


def build_parser():
    p = argparse.ArgumentParser(prog="netmpg", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (("run", "train at one kappa"), ("sweep", "relative error across kappa"),
                       ("verify", "exhaustive lemma certificates")):
        s = sub.add_parser(name, help=text)
        s.add_argument("config")
        s.add_argument("--seed", type=int)
        s.add_argument("--output-dir")
        s.add_argument("--exact-advantages", action="store_true", default=None)
    s = sub.add_parser("plot", help="render PNGs from an artifact directory")
    s.add_argument("artifact_dir")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "plot":
            for path in emit_plots(args.artifact_dir):
                print(path)
            return EXIT_OK
        cfg = load_config(args.config).with_overrides(
            seed=args.seed, output_dir=args.output_dir, exact_advantages=args.exact_advantages)
        if args.command == "run":
            art = run_experiment(cfg)
            print(art.convergence_csv)
        elif args.command == "sweep":
            art = sweep_kappa(cfg)
            print(art.epsilon_csv)
        else:
            report = verify(cfg)
            print(report.path)
            if not report.passed:
                for c in report.failures:
                    print("FAILED " + c.record(), file=sys.stderr)
                if report.missing:
                    print("MISSING " + ",".join(report.missing), file=sys.stderr)
                return EXIT_CERT
        return EXIT_OK
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc.args[0]}", file=sys.stderr)
    except (ConfigError, ModelError, ev.OracleInfeasible, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
