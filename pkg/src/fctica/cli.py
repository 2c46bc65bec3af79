"""Command-line front end.

Commands share one flat ``key = value`` config (see :mod:`fctica.config`)
and read or write fixed subdirectories of ``out_dir``::

    fctica simulate        --config run.cfg
    fctica estimate-priors --config run.cfg
    fctica fit             --config run.cfg [--method vb2]
    fctica posterior-fc    --config run.cfg [--method vb2]
    fctica evaluate        --config run.cfg
    fctica run-all         --config run.cfg

Progress goes to standard error and result paths to standard output.

Exit codes: 0 ok, 1 unexpected error, 2 config error, 3 data error,
4 numerical failure, 5 non-convergence (fits are still written).
"""
import argparse
import logging
import sys

from threadpoolctl import threadpool_limits

from . import pipeline
from .config import SCHEMA, load_config
from .exceptions import (
    ConfigError,
    ContainerFormatError,
    ConvergenceError,
    DataError,
    FcticaError,
    NumericalError,
)

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL, EXIT_CONVERGENCE = 0, 1, 2, 3, 4, 5

logger = logging.getLogger("fctica")


def _methods(cfg, args):
    method = getattr(args, "method", None)
    if method:
        return [method]
    return list(cfg.methods)


def cmd_simulate(cfg, args):
    print(pipeline.simulate(cfg, args.threads))
    return EXIT_OK


def cmd_estimate_priors(cfg, args):
    print(pipeline.estimate_priors(cfg, args.threads))
    return EXIT_OK


def cmd_fit(cfg, args):
    status = EXIT_OK
    for m in _methods(cfg, args):
        path, failures = pipeline.fit(cfg, m, args.threads)
        print(path)
        if failures:
            logger.warning("%s: %d fit(s) did not converge", m, failures)
            status = EXIT_CONVERGENCE
    return status


def cmd_posterior_fc(cfg, args):
    methods = [m for m in _methods(cfg, args) if m in pipeline.VB_METHODS]
    if getattr(args, "method", None) and not methods:
        raise ConfigError("posterior-fc needs --method vb1 or vb2")
    for m in methods:
        print(pipeline.posterior(cfg, m, args.threads))
    return EXIT_OK


def cmd_evaluate(cfg, args):
    for p in pipeline.evaluate(cfg):
        print(p)
    return EXIT_OK


def cmd_run_all(cfg, args):
    status = EXIT_OK
    for step in (cmd_simulate, cmd_estimate_priors, cmd_fit, cmd_posterior_fc, cmd_evaluate):
        rc = step(cfg, args)
        status = max(status, rc)
    return status


def cmd_show_config(cfg, args):
    sys.stdout.write(cfg.to_text())
    return EXIT_OK


COMMANDS = {
    "simulate": (cmd_simulate, "simulate a training and test study"),
    "estimate-priors": (cmd_estimate_priors, "spatial template and FC priors from training data"),
    "fit": (cmd_fit, "fit test subjects with dr, tica, vb1 and/or vb2"),
    "posterior-fc": (cmd_posterior_fc, "FC credible intervals from VB fits"),
    "evaluate": (cmd_evaluate, "accuracy, coverage and reliability tables"),
    "run-all": (cmd_run_all, "every step above in order"),
    "show-config": (cmd_show_config, "print the fully resolved config"),
}


def build_parser():
    p = argparse.ArgumentParser(
        prog="fctica",
        description="Template ICA with population priors on functional connectivity.",
        epilog="Config keys: " + ", ".join(SCHEMA),
    )
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", "-c", help="key = value config file")
        sp.add_argument(
            "--set", "-s", action="append", default=[], metavar="KEY=VALUE",
            help="override one config key (repeatable)",
        )
        sp.add_argument("--threads", type=int, default=1, help="worker threads over subjects")
        sp.add_argument("--quiet", "-q", action="store_true", help="only warnings on stderr")
        if name in ("fit", "posterior-fc"):
            sp.add_argument("--method", choices=("dr", "tica", "vb1", "vb2"))
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.WARNING if args.quiet else logging.INFO,
        format="fctica: %(message)s",
    )
    if args.threads < 1:
        logger.error("--threads must be at least 1")
        return EXIT_CONFIG
    fn = COMMANDS[args.command][0]
    try:
        cfg = load_config(args.config, args.set)
        # results must not depend on the BLAS thread count
        with threadpool_limits(limits=1):
            return fn(cfg, args)
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        return EXIT_CONFIG
    except (DataError, ContainerFormatError, FileNotFoundError) as exc:
        logger.error("data error: %s", exc)
        return EXIT_DATA
    except NumericalError as exc:
        logger.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except ConvergenceError as exc:
        logger.error("did not converge: %s", exc)
        return EXIT_CONVERGENCE
    except FcticaError as exc:
        logger.error("%s", exc)
        return EXIT_ERROR
    except OSError as exc:
        logger.error("I/O error: %s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
