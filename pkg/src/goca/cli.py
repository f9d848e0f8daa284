"""Command-line entry point.

Subcommands: gen-data, optimize-prototypes, solve, train, eval,
lambda-grid, ablate, verify.  Exit codes: 0 success, 1 usage/config
error, 2 numeric failure (non-convergence with --strict), 3
verification failure.  All tabular output is CSV with a header row and
matrices use the plain-text matrix format.
"""

from __future__ import annotations

import argparse
import csv
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np

from . import eval as evalmod
from . import matrixio, oracle
from .guided_ot import clamp_prior, guided_objective, guided_sinkhorn
from .ot_core import Marginals, SolverConfig, sinkhorn
from .prototypes import (
    ProtoOptConfig,
    max_pairwise_cosine,
    optimize_prototypes,
    prototype_loss,
    prototype_loss_grad,
)
from .runconfig import ConfigError, RunConfig, dump_config, load_config
from .ssl_engine import TrainConfig, extract_features, train
from .synth_data import generate

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2
EXIT_VERIFY = 3


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors; the tools reserve 2
    # for numeric failures, so remap to 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _load_run_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    return load_config(path)


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# gen-data


def _cmd_gen_data(args) -> int:
    cfg = _load_run_config(args.config)
    data_cfg = cfg.data if args.seed is None else replace(cfg.data, seed=args.seed)
    dataset = generate(data_cfg)
    os.makedirs(args.out, exist_ok=True)
    matrixio.write_matrix(os.path.join(args.out, "view_a.mat"), dataset.view_a)
    matrixio.write_matrix(os.path.join(args.out, "view_b.mat"), dataset.view_b)
    matrixio.write_labels(os.path.join(args.out, "labels.txt"), dataset.labels)
    print(
        f"wrote {len(dataset)} paired samples "
        f"({data_cfg.num_classes} classes) to {args.out}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# optimize-prototypes


def _cmd_optimize_prototypes(args) -> int:
    cfg = ProtoOptConfig(
        steps=args.steps,
        learning_rate=args.lr,
        restarts=args.restarts,
        seed=args.seed,
    )
    prototypes = optimize_prototypes(args.n, args.dim, cfg)
    matrixio.write_matrix(args.out, prototypes)
    if args.report:
        print(f"loss = {prototype_loss(prototypes):.6f}")
        print(f"max_pairwise_cosine = {max_pairwise_cosine(prototypes):.6f}")
    print(f"wrote {args.n} x {args.dim} prototypes to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# solve


def _cmd_solve(args) -> int:
    cost = matrixio.read_matrix(args.cost)
    cfg = SolverConfig(
        lambda1=args.lambda1,
        lambda2=args.lambda2,
        max_iters=args.max_iters,
        tolerance=args.tolerance,
        log_domain=not args.plain,
    )
    if args.guided:
        if args.prior is None:
            print("error: --guided requires --prior", file=sys.stderr)
            return EXIT_USAGE
        prior = matrixio.read_matrix(args.prior)
        result = guided_sinkhorn(cost, prior, cfg=cfg)
    else:
        result = sinkhorn(cost, cfg=cfg)
    matrixio.write_matrix(args.out, result.plan)
    print(
        f"converged={result.converged} iterations={result.iterations} "
        f"row_residual={result.row_residual:.3e} col_residual={result.col_residual:.3e}"
    )
    if args.strict and not result.converged:
        print("error: solver did not converge", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# ---------------------------------------------------------------------------
# train / eval


def _metric_rows(features_by_condition, labels, num_classes, eval_cfg):
    rows = []
    for condition, feats in features_by_condition.items():
        rep = evalmod.repeated_cluster_metrics(
            feats,
            labels,
            num_classes,
            repeats=eval_cfg.repeats,
            seed=eval_cfg.seed,
            restarts=eval_cfg.kmeans_restarts,
        )
        rows.append(
            [
                condition,
                f"{rep.mean.accuracy:.6f}",
                f"{rep.stderr.accuracy:.6f}",
                f"{rep.mean.nmi:.6f}",
                f"{rep.stderr.nmi:.6f}",
                f"{rep.mean.f1:.6f}",
                f"{rep.stderr.f1:.6f}",
            ]
        )
    return rows


_METRIC_HEADER = ["condition", "acc_mean", "acc_se", "nmi_mean", "nmi_se", "f1_mean", "f1_se"]


def _cmd_train(args) -> int:
    cfg = _load_run_config(args.config)
    train_cfg = cfg.train
    if args.mode is not None:
        train_cfg = replace(train_cfg, mode=args.mode)
    if args.seed is not None:
        train_cfg = replace(train_cfg, seed=args.seed)
    dataset = generate(cfg.data)
    result = train(dataset, train_cfg)

    os.makedirs(args.out, exist_ok=True)
    _write_csv(
        os.path.join(args.out, "loss_trace.csv"),
        ["step", "loss"],
        [[i, format(loss, ".17g")] for i, loss in enumerate(result.trace)],
    )
    for key, value in result.params.items():
        name = key.replace(".", "_")
        mat = value if value.ndim == 2 else value[None, :]
        matrixio.write_matrix(os.path.join(args.out, f"enc_{name}.mat"), mat)
    if isinstance(result.prototypes, tuple):
        matrixio.write_matrix(os.path.join(args.out, "prototypes_a.mat"), result.prototypes[0])
        matrixio.write_matrix(os.path.join(args.out, "prototypes_b.mat"), result.prototypes[1])
    else:
        matrixio.write_matrix(os.path.join(args.out, "prototypes.mat"), result.prototypes)

    features = extract_features(result.params, result.mode, dataset)
    rows = _metric_rows(features, dataset.labels, cfg.data.num_classes, cfg.eval)
    _write_csv(os.path.join(args.out, "metrics.csv"), _METRIC_HEADER, rows)
    print(f"trained mode={result.mode} for {len(result.trace)} steps; wrote {args.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    features = matrixio.read_matrix(args.features)
    labels = matrixio.read_labels(args.labels)
    if features.shape[0] != labels.shape[0]:
        print("error: features and labels disagree on sample count", file=sys.stderr)
        return EXIT_USAGE
    k = args.k if args.k is not None else int(np.unique(labels).size)
    rep = evalmod.repeated_cluster_metrics(
        features, labels, k, repeats=args.repeats, seed=args.seed
    )
    rows = [
        ["accuracy", f"{rep.mean.accuracy:.6f}", f"{rep.stderr.accuracy:.6f}"],
        ["nmi", f"{rep.mean.nmi:.6f}", f"{rep.stderr.nmi:.6f}"],
        ["f1", f"{rep.mean.f1:.6f}", f"{rep.stderr.f1:.6f}"],
    ]
    if args.queries is not None:
        if args.query_labels is None:
            print("error: --queries requires --query-labels", file=sys.stderr)
            return EXIT_USAGE
        queries = matrixio.read_matrix(args.queries)
        q_labels = matrixio.read_labels(args.query_labels)
        # retrieval is cosine-based, so rows are normalized here even when
        # the stored features are raw
        def unit(rows_):
            return rows_ / np.maximum(np.linalg.norm(rows_, axis=1, keepdims=True), 1e-12)

        recall = evalmod.recall_at_k(unit(queries), unit(features), q_labels, labels, args.recall_k)
        rows.append([f"recall@{args.recall_k}", f"{recall:.6f}", "0.000000"])
    _write_csv(args.metrics, ["metric", "mean", "stderr"], rows)
    for row in rows:
        print(f"{row[0]} = {row[1]} (se {row[2]})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# ablate / lambda-grid


def _seeded_configs(cfg: RunConfig, seed_offset: int) -> TrainConfig:
    proto = replace(cfg.proto, seed=cfg.proto.seed + seed_offset)
    return replace(cfg.train, seed=cfg.train.seed + seed_offset, proto=proto)


def _train_and_eval(cfg: RunConfig, mode: str, seed_offset: int) -> list[dict]:
    """One training run followed by repeated-k-means scoring per condition."""
    dataset = generate(cfg.data)
    train_cfg = replace(_seeded_configs(cfg, seed_offset), mode=mode)
    result = train(dataset, train_cfg)
    features = extract_features(result.params, mode, dataset)
    rows = []
    for condition, feats in features.items():
        rep = evalmod.repeated_cluster_metrics(
            feats,
            dataset.labels,
            cfg.data.num_classes,
            repeats=cfg.eval.repeats,
            seed=cfg.eval.seed,
            restarts=cfg.eval.kmeans_restarts,
        )
        rows.append(
            {
                "seed": seed_offset,
                "mode": mode,
                "condition": condition,
                "accuracy": rep.mean.accuracy,
                "accuracy_se": rep.stderr.accuracy,
                "nmi": rep.mean.nmi,
                "f1": rep.mean.f1,
            }
        )
    return rows


def _ablate_cell(packed):
    cfg, mode, seed_offset = packed
    return _train_and_eval(cfg, mode, seed_offset)


def run_ablation(cfg: RunConfig, seeds: int = 5, jobs: int = 1) -> list[dict]:
    """Train every mode on identical data/seeds and score all test conditions."""
    cells = [(cfg, mode, s) for s in range(seeds) for mode in ("sview", "avg", "sep", "goca")]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_ablate_cell, cells))
    else:
        results = [_ablate_cell(cell) for cell in cells]
    return [row for rows in results for row in rows]


def ablation_medians(rows: list[dict]) -> dict[tuple[str, str], float]:
    """Median accuracy per (mode, condition) across seeds."""
    grouped: dict[tuple[str, str], list[float]] = {}
    for row in rows:
        grouped.setdefault((row["mode"], row["condition"]), []).append(row["accuracy"])
    return {key: statistics.median(values) for key, values in grouped.items()}


def _cmd_ablate(args) -> int:
    cfg = _load_run_config(args.config)
    rows = run_ablation(cfg, seeds=args.seeds, jobs=args.jobs)
    _write_csv(
        args.out,
        ["seed", "mode", "condition", "accuracy", "accuracy_se", "nmi", "f1"],
        [
            [
                r["seed"],
                r["mode"],
                r["condition"],
                f"{r['accuracy']:.6f}",
                f"{r['accuracy_se']:.6f}",
                f"{r['nmi']:.6f}",
                f"{r['f1']:.6f}",
            ]
            for r in rows
        ],
    )
    for (mode, condition), acc in sorted(ablation_medians(rows).items()):
        print(f"{mode:>6} {condition:>6} median accuracy {acc:.4f}")
    print(f"wrote {args.out}")
    return EXIT_OK


def _grid_cell(packed):
    cfg, lambda1, lambda2, seeds = packed
    solver = replace(cfg.solver, lambda1=lambda1, lambda2=lambda2)
    cell_cfg = RunConfig(
        data=cfg.data,
        proto=cfg.proto,
        solver=solver,
        train=replace(cfg.train, solver=solver),
        eval=cfg.eval,
    )
    accs = []
    for s in range(seeds):
        rows = _train_and_eval(cell_cfg, "goca", s)
        accs.append(next(r["accuracy"] for r in rows if r["condition"] == "fused"))
    return {"lambda1": lambda1, "lambda2": lambda2, "accuracy": statistics.median(accs)}


def run_lambda_grid(
    cfg: RunConfig,
    lambda1_values: list[float],
    lambda2_values: list[float],
    seeds: int = 1,
    jobs: int = 1,
) -> list[dict]:
    """Fused-feature accuracy of guided training per (lambda1, lambda2) cell."""
    cells = [(cfg, l1, l2, seeds) for l1 in lambda1_values for l2 in lambda2_values]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_grid_cell, cells))
    return [_grid_cell(cell) for cell in cells]


def _parse_float_list(raw: str) -> list[float]:
    return [float(part) for part in raw.split(",") if part.strip()]


def _cmd_lambda_grid(args) -> int:
    cfg = _load_run_config(args.config)
    l1s = _parse_float_list(args.lambda1_list)
    l2s = _parse_float_list(args.lambda2_list)
    rows = run_lambda_grid(cfg, l1s, l2s, seeds=args.seeds, jobs=args.jobs)
    _write_csv(
        args.out,
        ["lambda1", "lambda2", "accuracy"],
        [[r["lambda1"], r["lambda2"], f"{r['accuracy']:.6f}"] for r in rows],
    )
    best = max(rows, key=lambda r: r["accuracy"])
    print(
        f"best cell lambda1={best['lambda1']} lambda2={best['lambda2']} "
        f"accuracy={best['accuracy']:.4f}"
    )
    print(f"wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify


def _verification_battery(seed: int) -> list[tuple[str, bool, str]]:
    rng = np.random.default_rng(seed)
    checks: list[tuple[str, bool, str]] = []

    def record(name: str, worst: float, tol: float):
        checks.append((name, worst <= tol, f"worst {worst:.3e} vs tol {tol:.0e}"))

    marg2 = Marginals.uniform(2, 2)
    worst = 0.0
    for _ in range(50):
        cost = rng.uniform(-1.0, 1.0, size=(2, 2))
        for lam in (0.02, 0.1, 0.5):
            plan = sinkhorn(cost, marg2, SolverConfig(lambda1=lam)).plan
            ref = oracle.golden_section_2x2(cost, None, marg2.row, marg2.col, lam)
            worst = max(worst, float(np.max(np.abs(plan - ref))))
    record("plain 2x2 vs golden-section", worst, 1e-6)

    worst = 0.0
    for _ in range(50):
        cost = rng.uniform(-1.0, 1.0, size=(2, 2))
        prior = clamp_prior(rng.uniform(0.0, 1.0, size=(2, 2)) ** 3)
        for lam2 in (0.01, 0.03, 1.0):
            cfg = SolverConfig(lambda1=0.02, lambda2=lam2)
            plan = guided_sinkhorn(cost, prior, marg2, cfg).plan
            ref = oracle.golden_section_2x2(cost, prior, marg2.row, marg2.col, 0.02, lam2)
            worst = max(worst, float(np.max(np.abs(plan - ref))))
    record("guided 2x2 vs golden-section", worst, 1e-6)

    worst = 0.0
    for size in (3, 4):
        marg = Marginals.uniform(size, size)
        for _ in range(10):
            cost = rng.uniform(-1.0, 1.0, size=(size, size))
            lam = float(rng.choice([0.1, 0.5]))
            plan = sinkhorn(cost, marg, SolverConfig(lambda1=lam)).plan
            ref = oracle.mirror_descent_small(cost, None, marg.row, marg.col, lam)
            worst = max(worst, float(np.max(np.abs(plan - ref))))
    record("plain 3x3/4x4 vs mirror descent", worst, 1e-5)

    worst = 0.0
    for _ in range(20):
        size = int(rng.integers(2, 5))
        marg = Marginals.uniform(size, size)
        cost = rng.uniform(-1.0, 1.0, size=(size, size))
        prior = clamp_prior(rng.uniform(0.0, 1.0, size=(size, size)))
        cfg = SolverConfig(lambda1=0.02, lambda2=0.03)
        guided = guided_sinkhorn(cost, prior, marg, cfg).plan
        reduced = sinkhorn(
            cost - cfg.lambda2 * np.log(clamp_prior(prior, cfg.prior_floor)),
            marg,
            SolverConfig(lambda1=cfg.lambda1 + cfg.lambda2),
        ).plan
        worst = max(worst, float(np.max(np.abs(guided - reduced))))
    record("kernel reduction of the guided problem", worst, 1e-8)

    worst = 0.0
    for _ in range(10):
        cost = rng.uniform(-1.0, 1.0, size=(3, 3))
        marg = Marginals.uniform(3, 3)
        prior = clamp_prior(rng.uniform(0.0, 1.0, size=(3, 3)))
        plain = sinkhorn(cost, marg, SolverConfig(lambda1=0.02)).plan
        guided = guided_sinkhorn(cost, prior, marg, SolverConfig(lambda1=0.02, lambda2=0.0)).plan
        worst = max(worst, float(np.max(np.abs(plain - guided))))
    record("lambda2 = 0 reduces to plain", worst, 1e-9)

    worst = 0.0
    for _ in range(10):
        cost = rng.uniform(-1.0, 1.0, size=(3, 3))
        marg = Marginals.uniform(3, 3)
        prior = clamp_prior(rng.uniform(0.1, 1.0, size=(3, 3)))
        cfg = SolverConfig(lambda1=0.02, lambda2=0.5)
        base = guided_sinkhorn(cost, prior, marg, cfg).plan
        for factor in (1e-3, 1e3):
            scaled = guided_sinkhorn(cost, factor * prior, marg, cfg).plan
            worst = max(worst, float(np.max(np.abs(base - scaled))))
    record("prior-scale invariance", worst, 1e-9)

    worst = 0.0
    for _ in range(5):
        cost = rng.uniform(-1.0, 1.0, size=(3, 3))
        marg = Marginals.uniform(3, 3)
        base = np.exp(rng.uniform(-1.0, 1.0, size=(3, 3)))
        for _ in range(200):
            base *= (marg.row / base.sum(axis=1))[:, None]
            base *= (marg.col / base.sum(axis=0))[None, :]
        cfg = SolverConfig(lambda1=0.02, lambda2=1e3)
        plan = guided_sinkhorn(cost, base, marg, cfg).plan
        worst = max(worst, float(np.max(np.abs(plan - base))))
    record("strong prior dominates", worst, 1e-3)

    worst = 0.0
    count = 0
    while count < 5:
        w = rng.standard_normal((5, 4))
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        sims = w @ w.T
        np.fill_diagonal(sims, -np.inf)
        top2 = np.sort(sims, axis=1)[:, -2:]
        if np.min(top2[:, 1] - top2[:, 0]) < 1e-3:
            continue  # near-tied argmax: subgradient not unique
        count += 1
        analytic = prototype_loss_grad(w).ravel()
        fd = oracle.finite_diff_grad(lambda vec: prototype_loss(vec.reshape(5, 4)), w.ravel())
        scale = max(float(np.max(np.abs(fd))), 1e-12)
        worst = max(worst, float(np.max(np.abs(analytic - fd))) / scale)
    record("prototype subgradient vs finite differences", worst, 1e-4)

    return checks


def _cmd_verify(args) -> int:
    checks = _verification_battery(args.seed)
    failures = 0
    for name, passed, detail in checks:
        state = "PASS" if passed else "FAIL"
        print(f"{state}  {name}  ({detail})")
        if not passed:
            failures += 1
    if failures:
        print(f"{failures} verification check(s) failed", file=sys.stderr)
        return EXIT_VERIFY
    print("all verification checks passed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="goca", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic two-view benchmark")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("optimize-prototypes", help="place maximally separated unit prototypes")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--restarts", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--report", action="store_true")
    p.set_defaults(func=_cmd_optimize_prototypes)

    p = sub.add_parser("solve", help="solve one assignment instance from matrix files")
    p.add_argument("--cost", required=True)
    p.add_argument("--guided", action="store_true")
    p.add_argument("--prior")
    p.add_argument("--lambda1", type=float, default=0.02)
    p.add_argument("--lambda2", type=float, default=0.03)
    p.add_argument("--tolerance", type=float, default=1e-8)
    p.add_argument("--max-iters", type=int, default=10_000)
    p.add_argument("--plain", action="store_true", help="multiplicative updates instead of log domain")
    p.add_argument("--strict", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("train", help="train one mode on the synthetic benchmark")
    p.add_argument("--mode", choices=["sview", "avg", "sep", "goca"])
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score stored features against labels")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--queries")
    p.add_argument("--query-labels")
    p.add_argument("--recall-k", type=int, default=1)
    p.add_argument("--k", type=int, help="number of clusters (default: number of label values)")
    p.add_argument("--repeats", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--metrics", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("lambda-grid", help="sweep (lambda1, lambda2) cells of guided training")
    p.add_argument("--config")
    p.add_argument("--lambda1-list", default="0.01,0.02,0.03,0.04")
    p.add_argument("--lambda2-list", default="0.01,0.02,0.03,0.04")
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_lambda_grid)

    p = sub.add_parser("ablate", help="train and score every mode on identical seeds/data")
    p.add_argument("--config")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("verify", help="run the oracle battery and report pass/fail")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("dump-config", help="print the canonical config with defaults")
    p.add_argument("--config")
    p.set_defaults(func=lambda args: (print(dump_config(_load_run_config(args.config)), end=""), EXIT_OK)[1])

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entry_point() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
