"""Command-line entry point: ``poiphnn <subcommand> ...``.

Exit codes: 0 success, 1 domain failure (infeasible instance, failed
repair, unlabeled instances), 2 usage or configuration error. The log level
comes from the ``POIPHNN_LOG_LEVEL`` environment variable (default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import __version__
from .bench import ExperimentPlan, generate_labels, load_labeled, run_experiment
from .generators import CflptcParams, QmkpParams, RandQcpParams, generate, params_to_dict
from .hnn import (
    CheckpointError, ConfigError, ModelConfig, TrainConfig, load_checkpoint, mean_loss, save_checkpoint, train,
)
from .hypergraph import MODES, encode, graph_stats
from .model import InstanceError, InstanceFormatError, binarize, read_instance, write_instance
from .search import RepairConfig, SearchConfig, solve_with_model
from .subsolver import SOLVERS, CapacityError, SolverConfigError, solve_instance

log = logging.getLogger("poiphnn")

LOG_ENV = "POIPHNN_LOG_LEVEL"
DEFAULT_SEED = 0

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
_USAGE_ERRORS = (ConfigError, SolverConfigError, CheckpointError, InstanceFormatError, FileNotFoundError)


class _Parser(argparse.ArgumentParser):
    """Raises instead of exiting so ``main`` can return the exit code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


class _UsageError(Exception):
    pass


def _seed(args) -> int:
    if args.seed is None:
        log.warning("no --seed given; using default seed %d", DEFAULT_SEED)
        return DEFAULT_SEED
    return args.seed


def _emit(doc) -> None:
    json.dump(doc, sys.stdout, indent=2)
    sys.stdout.write("\n")


def _write_manifest(out_dir: Path, doc: dict) -> None:
    (out_dir / "manifest.json").write_text(json.dumps({"package_version": __version__, **doc}, indent=2) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    seed0 = _seed(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written, params = [], []
    for k in range(args.count):
        s = seed0 + k
        if args.family == "qmkp":
            p = QmkpParams(args.n_items, args.n_dims, density=args.density, seed=s)
        elif args.family == "randqcp":
            p = RandQcpParams(args.n_vertices, args.n_hyperedges, seed=s)
        else:
            p = CflptcParams(args.customers, args.facilities, seed=s, explicit_e=args.explicit_e)
        inst = generate(p)
        path = out / f"{inst.name}.poip.json"
        write_instance(inst, path)
        written.append(path.name)
        params.append(params_to_dict(p))
    _write_manifest(out, {"command": "generate", "family": args.family, "files": written, "params": params})
    _emit({"written": len(written), "out_dir": str(out)})
    return EXIT_OK


def cmd_labels(args) -> int:
    res = generate_labels(args.data_dir, args.solver, args.time_limit, args.node_limit)
    labeled = sum(r.labeled for r in res)
    _emit({
        "labeled": labeled,
        "excluded": [{"path": r.path, "reason": r.reason} for r in res if not r.labeled],
    })
    return EXIT_OK if labeled == len(res) else EXIT_FAILURE


def cmd_train(args) -> int:
    seed = _seed(args)
    data = load_labeled(args.data_dir)
    if not data:
        raise ConfigError(f"no labeled instances under {args.data_dir}; run `labels` first")
    cfg = ModelConfig.for_ablation(args.ablation, seed=seed)
    tc = TrainConfig(
        learning_rate=args.lr, weight_decay=args.weight_decay, batch_size=args.batch_size,
        epochs=args.epochs, seed=seed,
    )
    pairs = [(inst, y) for inst, y, _ in data]
    st, curve = train(pairs, tc, cfg)
    save_checkpoint(st, cfg, args.out)
    _emit({
        "checkpoint": str(args.out),
        "instances": len(pairs),
        "epochs": tc.epochs,
        "final_loss": curve[-1] if curve else mean_loss(pairs, st, cfg),
        "loss_curve": curve,
    })
    return EXIT_OK


def cmd_solve(args) -> int:
    inst = read_instance(args.instance)
    if args.model is None:
        binst, mapping = binarize(inst)
        res = solve_instance(binst, args.solver, time_limit=args.time_limit, node_limit=args.node_limit)
        doc = {
            "instance": inst.name, "sense": inst.sense, "solver": args.solver,
            "status": res.status.value, "nodes": res.nodes, "elapsed": res.elapsed,
            "objective": None, "assignment": None,
        }
        if res.best is not None:
            x = mapping.decode(res.best)
            doc["objective"] = inst.objective_value(x)
            doc["assignment"] = x.tolist()
        ok = res.best is not None
    else:
        if not 0 < args.neigh_frac <= 1:
            raise ConfigError("--neigh-frac must lie in (0, 1]")
        seed = _seed(args)
        st, cfg = load_checkpoint(args.model)
        n_bin = binarize(inst)[0].n
        rcfg = RepairConfig(
            alpha0=args.repair_alpha0,
            subproblem_time_limit=args.sub_time, subproblem_node_limit=args.node_limit,
            total_time_limit=args.total_time,
        )
        scfg = SearchConfig(
            neighborhood_size=max(1, min(n_bin, math.ceil(round(args.neigh_frac * n_bin, 9)))),
            subproblem_time_limit=args.sub_time, subproblem_node_limit=args.node_limit,
            total_time_limit=args.total_time, max_iterations=args.max_iterations, seed=seed,
        )
        report = solve_with_model(inst, (st, cfg), args.solver, rcfg, scfg)
        doc = report.to_dict()
        ok = report.ok
    if args.report:
        Path(args.report).write_text(json.dumps(doc, indent=2) + "\n")
    _emit(doc)
    return EXIT_OK if ok else EXIT_FAILURE


def cmd_bench(args) -> int:
    plan = ExperimentPlan.load(args.plan)
    summary = run_experiment(plan, args.out)
    _emit(summary)
    return EXIT_OK


def cmd_inspect(args) -> int:
    inst = read_instance(args.instance)
    target = inst
    if args.binarize:
        target = binarize(inst)[0]
    hg = encode(target, args.mode)
    stats = graph_stats(hg)
    if args.dump_graph:
        Path(args.dump_graph).write_text(json.dumps(hg.to_dict()) + "\n")
    _emit({"instance": inst.name, "mode": args.mode, **stats})
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="poiphnn", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--threads", type=int, default=None, help="cap on BLAS/OpenMP threads")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write random benchmark instances")
    g.add_argument("--family", choices=("qmkp", "randqcp", "cflptc"), required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--count", type=int, default=1)
    g.add_argument("--out-dir", required=True)
    g.add_argument("--n-items", type=int, default=20, help="qmkp")
    g.add_argument("--n-dims", type=int, default=3, help="qmkp")
    g.add_argument("--density", type=float, default=0.5, help="qmkp")
    g.add_argument("--n-vertices", type=int, default=20, help="randqcp")
    g.add_argument("--n-hyperedges", type=int, default=14, help="randqcp")
    g.add_argument("--customers", type=int, default=5, help="cflptc")
    g.add_argument("--facilities", type=int, default=3, help="cflptc")
    g.add_argument("--explicit-e", action="store_true", help="cflptc: continuous level variables")
    g.set_defaults(func=cmd_generate)

    lb = sub.add_parser("labels", help="solve instances exactly and store training labels")
    lb.add_argument("--data-dir", required=True)
    lb.add_argument("--solver", choices=sorted(SOLVERS), default="bnb")
    lb.add_argument("--time-limit", type=float)
    lb.add_argument("--node-limit", type=int)
    lb.set_defaults(func=cmd_labels)

    t = sub.add_parser("train", help="train a prediction model on labeled instances")
    t.add_argument("--data-dir", required=True)
    t.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    t.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    t.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    t.add_argument("--weight-decay", type=float, default=TrainConfig.weight_decay)
    t.add_argument("--seed", type=int)
    t.add_argument("--ablation", choices=("none", "no-hyper", "no-vc"), default="none")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("solve", help="solve one instance exactly or with a trained model")
    s.add_argument("instance")
    s.add_argument("--solver", choices=sorted(SOLVERS), default="bnb")
    s.add_argument("--time-limit", type=float, help="exact solving time limit (s)")
    s.add_argument("--node-limit", type=int, help="node limit per solver call")
    s.add_argument("--model", help="checkpoint; enables predict, repair and refine")
    s.add_argument("--repair-alpha0", type=float, default=RepairConfig.alpha0)
    s.add_argument("--neigh-frac", type=float, default=0.5)
    s.add_argument("--sub-time", type=float, help="time limit per subproblem (s)")
    s.add_argument("--total-time", type=float, help="time limit of repair and of refine (s)")
    s.add_argument("--max-iterations", type=int, help="refine iteration cap")
    s.add_argument("--seed", type=int)
    s.add_argument("--report", help="also write the JSON report here")
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("bench", help="run an experiment plan")
    b.add_argument("--plan", required=True)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench)

    i = sub.add_parser("inspect", help="print hypergraph statistics of an instance")
    i.add_argument("instance")
    i.add_argument("--mode", choices=MODES, default="full")
    i.add_argument("--binarize", action="store_true", help="encode the binarized instance")
    i.add_argument("--dump-graph", help="write the hypergraph as JSON")
    i.set_defaults(func=cmd_inspect)
    return p


def _configure_logging() -> None:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        raise ConfigError(f"{LOG_ENV}={level!r} is not a logging level")
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        _configure_logging()
        args = parser.parse_args(argv)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except SystemExit as exc:  # --help and --version
        return int(exc.code or 0)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except _USAGE_ERRORS as exc:
        print(f"poiphnn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InstanceError, CapacityError, ValueError) as exc:
        print(f"poiphnn: failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
