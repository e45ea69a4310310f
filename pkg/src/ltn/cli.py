"""Command-line interface: ``ltn <subcommand> [options]``.

Exit codes: 0 success, 1 invalid input or usage, 2 numerical failure.
Every option can also be set through an environment variable named
``LTN_<OPTION>`` (upper case, dashes as underscores); the flag wins.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import io
from .errors import AlignmentError, DomainError, LTNError, NumericalError, ValidationError
from .phylo import PhyloTree, balanced_tree, read_newick

__all__ = ["main", "build_parser"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def _env(dest, default):
    return os.environ.get(f"LTN_{dest.upper()}", default)


def _opt(p, *flags, **kw):
    dest = kw.get("dest") or flags[0].lstrip("-").replace("-", "_")
    if kw.get("action") in ("store_true", "store_false"):
        env = os.environ.get(f"LTN_{dest.upper()}")
        if env is not None:
            kw["default"] = env.strip().lower() in ("1", "true", "yes", "on")
    else:
        kw["default"] = _env(dest, kw.get("default"))
        if kw.get("required") and kw["default"] is not None:
            kw["required"] = False
    p.add_argument(*flags, **kw)


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def _nonneg_int(s):
    v = int(s)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {s}")
    return v


def _common(p):
    _opt(p, "--out", required=True, help="output directory")
    _opt(p, "--quiet", action="store_true", help="no progress output; errors as JSON lines only")


def _chain_opts(p, default_lambda="10"):
    _opt(p, "--lambda", dest="lam", type=float, default=default_lambda, help="glasso shrinkage (initial value if random)")
    _opt(p, "--lambda-random", action="store_true", help="give lambda a Gamma(r, s) prior")
    _opt(p, "--lambda-r", type=float, default="1.0")
    _opt(p, "--lambda-s", type=float, default="0.01")
    _opt(p, "--iters", type=_positive_int, default="10000")
    _opt(p, "--burnin", type=_nonneg_int, default=None, help="default: half of --iters")
    _opt(p, "--thin", type=_positive_int, default="1")
    _opt(p, "--seed", type=int, default="0")
    _opt(p, "--chains", type=_positive_int, default="1", help="independent chains run concurrently")
    _opt(p, "--checkpoint-every", type=_positive_int, default="1000")
    _opt(p, "--resume", action="store_true", help="continue from the checkpoint in --out")
    _opt(p, "--binarize", action="store_true", help="resolve multifurcations in the tree")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="ltn", description="Logistic-tree normal models for microbiome count data.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a synthetic OTU table")
    _opt(p, "--kind", choices=["ln-hub", "ln-block", "ln-sparse", "dtm", "ltn"], default="ln-sparse")
    _opt(p, "--scenario", choices=["none", "null", "single", "multi"], default="none")
    _opt(p, "--K", type=_positive_int, default="20", help="number of OTUs")
    _opt(p, "--n", type=_positive_int, default="200", help="number of samples")
    _opt(p, "--N", type=_positive_int, default="100000", help="reads per sample")
    _opt(p, "--tree", help="Newick file; default is a balanced tree")
    _opt(p, "--theta", type=float, default="0.5", help="DTM branch mean")
    _opt(p, "--tau", type=float, default="10", help="DTM concentration")
    _opt(p, "--seed", type=int, default="0")
    _common(p)

    p = sub.add_parser("fit-cov", help="fit the covariance model")
    _opt(p, "--counts", required=True)
    _opt(p, "--tree", required=True)
    _opt(p, "--c", type=float, default="10")
    _opt(p, "--save-psi", action="store_true")
    _opt(p, "--mc-draws", type=_positive_int, default="50000", help="Monte Carlo draws for the clr covariance")
    _opt(p, "--per-draw", action="store_true", help="also average per-draw clr covariances")
    _chain_opts(p)
    _common(p)

    p = sub.add_parser("fit-mixed", help="fit the mixed-effects model and test for a group difference")
    _opt(p, "--counts", required=True)
    _opt(p, "--tree", required=True)
    _opt(p, "--groups", required=True, help="TSV with the 0/1 group indicator")
    _opt(p, "--group-column", help="column of --groups to use (default: first)")
    _opt(p, "--covariates", help="TSV of fixed-effect covariates")
    _opt(p, "--covariate-columns", help="comma-separated subset of --covariates")
    _opt(p, "--reffects", help="TSV with random-effect labels (default: one per sample)")
    _opt(p, "--reffect-column", help="column of --reffects to use (default: first)")
    _opt(p, "--no-intercept", action="store_true")
    _opt(p, "--p0", type=float, default="0.5")
    _opt(p, "--c-beta", type=float, default="10")
    _opt(p, "--threshold", type=float, default="0.95")
    _chain_opts(p)
    _common(p)

    p = sub.add_parser("transform", help="log-ratio transform of a count or composition table")
    _opt(p, "--counts", required=True, help="TSV of counts or compositions (samples x OTUs)")
    _opt(p, "--tree", help="required for tlr and ilr")
    _opt(p, "--kind", choices=["tlr", "ilr", "clr", "alr"], default="tlr")
    _opt(p, "--pseudocount", type=float, default=None, help="added before closure (default: 0.5 for integer counts, 0 otherwise)")
    _opt(p, "--binarize", action="store_true")
    _common(p)

    p = sub.add_parser("evaluate", help="loss report between two matrices")
    _opt(p, "--estimate", required=True)
    _opt(p, "--truth", required=True)
    _opt(p, "--entrywise-l1", action="store_true")
    _opt(p, "--out", help="optional output directory")
    _opt(p, "--quiet", action="store_true")

    p = sub.add_parser("roc", help="ROC curve from null and alternative scores")
    _opt(p, "--null", required=True)
    _opt(p, "--alt", required=True)
    _common(p)

    p = sub.add_parser("geweke", help="joint-distribution test of a sampler")
    _opt(p, "--model", choices=["toy", "cov", "mixed"], default="toy")
    _opt(p, "--iters", type=_positive_int, default="20000")
    _opt(p, "--skip", action="append", default=None, help="update block to skip (mutation test)")
    _opt(p, "--seed", type=int, default="0")
    _common(p)
    return ap


# -- helpers ------------------------------------------------------------------


def _status(args, msg):
    if not getattr(args, "quiet", False):
        print(f"ltn: {msg}", file=sys.stderr, flush=True)


def _progress(args, label=""):
    if getattr(args, "quiet", False):
        return None

    def report(t, total):
        print(f"ltn: {label}iteration {t}/{total}", file=sys.stderr, flush=True)

    return report


def _out_dir(path) -> Path:
    out = Path(path)
    if out.exists() and not out.is_dir():
        raise ValidationError(f"--out {out} exists and is not a directory")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_tree(path, binarize=False) -> PhyloTree:
    if not Path(path).is_file():
        raise ValidationError(f"tree file not found: {path}")
    return read_newick(path, binarize=binarize)


def _read_counts(path):
    if not Path(path).is_file():
        raise ValidationError(f"count table not found: {path}")
    return io.read_otu_table(path)


def _one_column(path, column, sample_ids, what):
    ids, cols, rows = io.read_table(path)
    if not cols:
        raise ValidationError(f"{path}: no {what} column")
    name = column or cols[0]
    if name not in cols:
        raise ValidationError(f"{path}: column {name!r} not found")
    j = cols.index(name)
    pos = {s: i for i, s in enumerate(ids)}
    missing = [s for s in sample_ids if s not in pos]
    if missing:
        raise ValidationError(f"{path}: no row for sample(s) {missing[:5]}")
    return [rows[pos[s]][j] for s in sample_ids]


def _chain_seeds(seed, k):
    if k == 1:
        return [seed]
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(k)]


def _run_chains(worker, payloads, k):
    if k == 1:
        return [worker(payloads[0])]
    with ProcessPoolExecutor(max_workers=min(k, os.cpu_count() or 1)) as ex:
        return list(ex.map(worker, payloads))


def _burnin(args):
    if args.burnin is None:
        return args.iters // 2
    return args.burnin


# -- subcommands --------------------------------------------------------------


def _cmd_simulate(args):
    from . import simgen
    from .samplers import rng_stream
    from .transforms import cov_to_corr, ilr_basis

    out = _out_dir(args.out)
    labels = [f"otu{j + 1}" for j in range(args.K)]
    tree = _read_tree(args.tree, binarize=True) if args.tree else balanced_tree(labels)
    if args.K < 2 and not args.tree:
        raise ValidationError("--K must be at least 2")
    rng = rng_stream(args.seed)
    meta = {"kind": args.kind, "seed": args.seed, "n": args.n, "N": args.N, "scenario": args.scenario}
    truth = None
    if args.kind.startswith("ln-"):
        tmpl = simgen.gen_precision(args.kind[3:], tree.d, rng)
        table, mean = simgen.gen_ln_dataset(tree, tmpl.omega, rng, n=args.n, N=args.N)
        V = ilr_basis(tree)
        truth = cov_to_corr(V.T @ np.linalg.inv(tmpl.omega) @ V)
        meta.update(omega0=tmpl.omega.tolist(), mean=mean.tolist(), edges=tmpl.edges, precision_meta=tmpl.meta)
    elif args.kind == "ltn":
        tmpl = simgen.gen_precision("sparse", tree.d, rng)
        mu = rng.normal(0.0, 1.0, tree.d)
        table, _ = simgen.gen_ltn_dataset(tree, mu, tmpl.omega, rng, n=args.n, N=args.N)
        meta.update(omega0=tmpl.omega.tolist(), mu=mu.tolist())
    else:
        if not 0 < args.theta < 1 or not args.tau > 0:
            raise ValidationError("need 0 < --theta < 1 and --tau > 0")
        table, _ = simgen.gen_dtm_dataset(tree, args.theta, args.tau, rng, n=args.n, N=args.N)
        meta.update(theta=args.theta, tau=args.tau)

    if args.scenario != "none":
        scen = simgen.ScenarioSpec.named(args.scenario)
        table, s, cols = simgen.apply_group_shift(table, scen, rng)
        meta.update(shifted=[table.labels[c] for c in cols], multiplier=scen.multiplier)
        with open(out / "groups.tsv", "w", encoding="utf-8") as fh:
            fh.write("sample\tgroup\n")
            for sid, v in zip(table.sample_ids, s):
                fh.write(f"{sid}\t{int(v)}\n")

    io.write_otu_table(out / "counts.tsv", table)
    (out / "tree.nwk").write_text(tree.to_newick() + "\n", encoding="utf-8")
    if truth is not None:
        io.write_matrix_csv(out / "truth_clr_corr.csv", truth, header=list(tree.labels))
    with open(out / "metadata.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
    io.write_manifest(out, {k: v for k, v in vars(args).items()}, tree=tree)
    _status(args, f"wrote {table.n} x {table.K} table to {out / 'counts.tsv'}")
    return 0


def _cov_worker(payload):
    from .cov_model import fit_cov

    table, tree, config, run_dir, resume, quiet, label = payload
    prog = None if quiet else (lambda t, T: print(f"ltn: {label}iteration {t}/{T}", file=sys.stderr, flush=True))
    return fit_cov(table, tree, config, run_dir=run_dir, resume=resume, progress=prog)


def _cmd_fit_cov(args):
    from .cov_model import CovModelConfig, summarize_cov

    out = _out_dir(args.out)
    tree = _read_tree(args.tree, args.binarize)
    table = _read_counts(args.counts)
    table.aligned(tree)
    seeds = _chain_seeds(args.seed, args.chains)
    configs = [
        CovModelConfig(
            c=args.c,
            lam=args.lam,
            lam_fixed=not args.lambda_random,
            r=args.lambda_r,
            s=args.lambda_s,
            iterations=args.iters,
            burnin=_burnin(args),
            thin=args.thin,
            seed=sd,
            save_psi=args.save_psi,
            checkpoint_every=args.checkpoint_every,
        )
        for sd in seeds
    ]
    dirs = [out] if args.chains == 1 else [out / f"chain{i + 1}" for i in range(args.chains)]
    inputs = {"counts": io.file_sha256(args.counts), "tree": io.file_sha256(args.tree)}
    with io.run_lock(out):
        io.write_manifest(out, {**vars(args), "chain_seeds": seeds}, tree=tree, inputs=inputs)
        payloads = [
            (table, tree, cfg, d, args.resume, args.quiet, "" if args.chains == 1 else f"chain {i + 1}: ")
            for i, (cfg, d) in enumerate(zip(configs, dirs))
        ]
        results = _run_chains(_cov_worker, payloads, args.chains)
        d = tree.d
        for draws, cdir in zip(results, dirs):
            io.write_draws(cdir, draws, names=["mu", "omega", "lam"] + (["psi"] if args.save_psi else []))
        pooled = io.PosteriorDraws(
            iteration=np.concatenate([r.iteration for r in results]),
            arrays={k: np.concatenate([r[k] for r in results]) for k in ("mu", "omega")},
        )
        summ = summarize_cov(pooled, tree, M=args.mc_draws, per_draw=args.per_draw, seed=args.seed)
        io.write_matrix_csv(out / "clr_corr.csv", summ.clr.corr, header=list(tree.labels))
        io.write_matrix_csv(out / "clr_cov.csv", summ.clr.cov, header=list(tree.labels))
        body = {
            "model": "cov",
            "d": d,
            "labels": list(tree.labels),
            "nodes": tree.node_table(),
            "config": asdict(configs[0]),
            "chain_seeds": seeds,
            "draws": len(pooled),
            **summ.to_dict(),
        }
        if summ.clr_draws is not None:
            body["clr_corr_per_draw_mean"] = np.mean([g.corr for g in summ.clr_draws], axis=0).tolist()
        with open(out / "summary.json", "w", encoding="utf-8") as fh:
            json.dump(body, fh, indent=2)
    _status(args, f"saved {len(pooled)} draws to {out}")
    return 0


def _mixed_worker(payload):
    from .mixed_model import fit_mixed

    table, tree, design, config, run_dir, resume, quiet, label = payload
    prog = None if quiet else (lambda t, T: print(f"ltn: {label}iteration {t}/{T}", file=sys.stderr, flush=True))
    return fit_mixed(table, tree, design, config, run_dir=run_dir, resume=resume, progress=prog)


def _cmd_fit_mixed(args):
    from .mixed_model import MixedConfig, MixedDesign, compute_pmap_pjap

    out = _out_dir(args.out)
    tree = _read_tree(args.tree, args.binarize)
    table = _read_counts(args.counts)
    table.aligned(tree)
    ids = list(table.sample_ids)
    s_raw = _one_column(args.groups, args.group_column, ids, "group")
    try:
        s = np.array([float(v) for v in s_raw])
    except ValueError:
        raise ValidationError(f"{args.groups}: group indicators must be 0 or 1") from None
    Z, znames = None, None
    if args.covariates:
        cols = args.covariate_columns.split(",") if args.covariate_columns else None
        Z, znames = io.read_covariates(args.covariates, columns=cols, sample_ids=ids)
    g = _one_column(args.reffects, args.reffect_column, ids, "random-effect") if args.reffects else ids
    design = MixedDesign.build(s, g, Z=Z, intercept=not args.no_intercept, covariate_names=znames)
    if not 0 < args.threshold <= 1:
        raise ValidationError("--threshold must lie in (0, 1]")
    seeds = _chain_seeds(args.seed, args.chains)
    configs = [
        MixedConfig(
            p0=args.p0,
            lam=args.lam,
            lam_fixed=not args.lambda_random,
            r=args.lambda_r,
            s=args.lambda_s,
            c_beta=args.c_beta,
            iterations=args.iters,
            burnin=_burnin(args),
            thin=args.thin,
            seed=sd,
            threshold=args.threshold,
            checkpoint_every=args.checkpoint_every,
        )
        for sd in seeds
    ]
    dirs = [out] if args.chains == 1 else [out / f"chain{i + 1}" for i in range(args.chains)]
    inputs = {k: io.file_sha256(getattr(args, k)) for k in ("counts", "tree", "groups", "covariates", "reffects") if getattr(args, k)}
    with io.run_lock(out):
        io.write_manifest(out, {**vars(args), "chain_seeds": seeds}, tree=tree, inputs=inputs)
        payloads = [
            (table, tree, design, cfg, d, args.resume, args.quiet, "" if args.chains == 1 else f"chain {i + 1}: ")
            for i, (cfg, d) in enumerate(zip(configs, dirs))
        ]
        results = _run_chains(_mixed_worker, payloads, args.chains)
        for (draws, _), cdir in zip(results, dirs):
            io.write_draws(cdir, draws, names=["alpha", "beta", "phi_alpha", "phi_eps", "omega"])
        alpha = np.concatenate([r[0]["alpha"] for r in results])
        report = compute_pmap_pjap(alpha, args.threshold)
        io.write_matrix_csv(out / "pmap.csv", report.pmap[None, :], header=[f"node{a}" for a in range(tree.d)])
        (out / "pjap.txt").write_text(f"{report.pjap!r}\n", encoding="utf-8")
        if args.chains > 1:
            io.write_matrix_csv(out / "alpha.csv", alpha, header=[f"alpha[{a}]" for a in range(tree.d)])
        body = {
            "model": "mixed",
            "config": asdict(configs[0]),
            "chain_seeds": seeds,
            "covariates": design.covariate_names,
            "groups": design.group_labels,
            "draws": int(alpha.shape[0]),
            **report.to_dict(tree),
        }
        with open(out / "report.json", "w", encoding="utf-8") as fh:
            json.dump(body, fh, indent=2)
    _status(args, f"PJAP = {report.pjap:.4f}{' (flagged)' if report.flagged else ''}")
    return 0


def _cmd_transform(args):
    from . import transforms

    out = _out_dir(args.out)
    if not Path(args.counts).is_file():
        raise ValidationError(f"input table not found: {args.counts}")
    ids, cols, X = io.read_numeric_table(args.counts)
    counts_like = bool(np.all(X == np.round(X)))
    pc = args.pseudocount if args.pseudocount is not None else (0.5 if counts_like else 0.0)
    if pc < 0:
        raise ValidationError("--pseudocount must be nonnegative")
    if args.kind in ("tlr", "ilr"):
        if not args.tree:
            raise ValidationError(f"--tree is required for {args.kind}")
        tree = _read_tree(args.tree, args.binarize)
        if set(cols) != set(tree.labels):
            raise AlignmentError("table columns do not match tree leaves")
        X = X[:, [cols.index(lab) for lab in tree.labels]]
        header = [f"node{a}" for a in range(tree.d)]
    else:
        header = list(cols) if args.kind == "clr" else [f"{c}/{cols[-1]}" for c in cols[:-1]]
    X = X + pc
    totals = X.sum(axis=1, keepdims=True)
    if np.any(totals == 0):
        raise DomainError("a sample has zero total; pass --pseudocount")
    P = X / totals
    Y = getattr(transforms, args.kind)(P, tree) if args.kind in ("tlr", "ilr") else getattr(transforms, args.kind)(P)
    path = out / f"{args.kind}.tsv"
    io.write_numeric_table(path, ids, header, Y)
    _status(args, f"wrote {path}")
    return 0


def _read_square(path):
    if not Path(path).is_file():
        raise ValidationError(f"file not found: {path}")
    data, _ = io.read_matrix_csv(path)
    return data


def _cmd_evaluate(args):
    from .evaluation import cov_losses

    rep = cov_losses(_read_square(args.estimate), _read_square(args.truth), entrywise_l1=args.entrywise_l1)
    body = rep.to_dict()
    text = json.dumps(body, indent=2)
    if args.out:
        out = _out_dir(args.out)
        (out / "loss.json").write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def _read_scores(path):
    if not Path(path).is_file():
        raise ValidationError(f"file not found: {path}")
    data, _ = io.read_matrix_csv(path)
    return data.ravel()


def _cmd_roc(args):
    from .evaluation import roc_from_scores

    out = _out_dir(args.out)
    roc = roc_from_scores(_read_scores(args.null), _read_scores(args.alt))
    pts = np.column_stack([roc.thresholds, roc.fpr, roc.tpr])
    io.write_matrix_csv(out / "roc.csv", pts, header=["threshold", "fpr", "tpr"])
    (out / "auc.txt").write_text(f"{roc.auc!r}\n", encoding="utf-8")
    print(json.dumps({"auc": roc.auc, "points": int(len(pts))}))
    return 0


def _cmd_geweke(args):
    from . import evaluation
    from .samplers import rng_stream

    out = _out_dir(args.out)
    model = {
        "toy": evaluation.normal_toy_model,
        "cov": evaluation.cov_geweke_model,
        "mixed": evaluation.mixed_geweke_model,
    }[args.model]()
    res = evaluation.geweke_test(model, args.iters, rng_stream(args.seed), skip=tuple(args.skip or ()))
    body = {
        "model": args.model,
        "iterations": args.iters,
        "skip": args.skip or [],
        "max_abs_z": res.max_abs_z,
        "z": dict(zip(res.names, map(float, res.z))),
    }
    (out / "geweke.json").write_text(json.dumps(body, indent=2) + "\n", encoding="utf-8")
    print(json.dumps({"model": args.model, "max_abs_z": res.max_abs_z}))
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "fit-cov": _cmd_fit_cov,
    "fit-mixed": _cmd_fit_mixed,
    "transform": _cmd_transform,
    "evaluate": _cmd_evaluate,
    "roc": _cmd_roc,
    "geweke": _cmd_geweke,
}


def _fail(kind, exc, quiet):
    if quiet:
        print(json.dumps({"status": "error", "kind": kind, "message": str(exc)}), file=sys.stderr)
    else:
        print(f"ltn: {kind} error: {exc}", file=sys.stderr)


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    quiet = "--quiet" in argv or _env("quiet", "").lower() in ("1", "true", "yes", "on")
    try:
        args = build_parser().parse_args(argv)
        return _COMMANDS[args.command](args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except NumericalError as exc:
        _fail("numerical", exc, quiet)
        return 2
    except (LTNError, ValueError, OSError) as exc:
        _fail("validation", exc, quiet)
        return 1


if __name__ == "__main__":
    sys.exit(main())
