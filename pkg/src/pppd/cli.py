"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .core import InputError, LimitState, NumericalError, PairedDataset, _jsonable

THREADS_ENV = "PPPD_THREADS"


def _limit_state(args):
    if args.limit_state == "full":
        return {"kind": "full"}
    if args.threshold is None:
        raise InputError(f"--threshold is required for --limit-state {args.limit_state}")
    return {"kind": args.limit_state, "threshold": args.threshold}


def _json_arg(text):
    if text is None:
        return {}
    if os.path.exists(text):
        with open(text) as fh:
            return json.load(fh)
    return json.loads(text)


def cmd_sample(args):
    from .models import make_model
    from .pipeline import DEFAULTS, run_sampler, write_levels

    model = make_model(args.model, _json_arg(args.model_params))
    ls = LimitState.from_spec(_limit_state(args))
    sampler = dict(DEFAULTS["sampler"], method=args.method, n=args.n, p0=args.p0, n0=args.n0,
                   seed=args.seed, step_size=args.step_size, n_leapfrog=args.n_leapfrog,
                   max_levels=args.max_levels)
    ds = run_sampler(model, ls, sampler)
    ds.save(args.out, packed=args.packed)
    write_levels(ds, args.out)
    print(f"{len(ds)} samples -> {args.out} (p_estimate {ds.meta.get('p_estimate')})")


def cmd_embed(args):
    from .pipeline import DEFAULTS, embed_dataset, write_embedding

    ds = PairedDataset.load(args.inp)
    emb = dict(DEFAULTS["embedding"], method=args.method, epsilon=args.epsilon, alpha=args.alpha,
               tau=args.tau, n_t=args.nt, knn=args.knn, dt=args.dt,
               layers=[int(s) for s in args.layers.split(",")], epochs=args.epochs, seed=args.seed,
               taus=[int(s) for s in args.taus.split(",")] if args.taus else [])
    psi, side, extra, ae = embed_dataset(ds.y, emb)
    base = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(base, exist_ok=True)
    write_embedding(args.out, psi)
    with open(os.path.join(base, "spectrum.json"), "w") as fh:
        json.dump(_jsonable(side), fh, indent=2)
    for tau, coords in sorted(extra.items()):
        write_embedding(os.path.join(base, f"embedding_tau{tau}.csv"), coords)
    if ae is not None:
        from .autoencoder import decode

        ae.save(os.path.join(base, "autoencoder.json"))
        if args.reconstruction:
            import numpy as np

            np.savetxt(os.path.join(base, "reconstruction.csv"), decode(ae, psi), fmt="%.17g",
                       delimiter=",")
    print(f"embedding {psi.shape} -> {args.out}")


def cmd_cluster(args):
    from .pipeline import DEFAULTS, cluster_features, partition_json, read_embedding

    psi = read_embedding(args.inp)
    cl = dict(DEFAULTS["clustering"], method=args.method, k=args.k, kmax=args.kmax, seed=args.seed,
              restarts=args.restarts, min_pts=args.min_pts, eps_radius=args.eps_radius,
              dimension=args.dimension, attach_noise=args.attach_noise)
    part, jump = cluster_features(psi, cl)
    obj = partition_json(part, jump)
    with open(args.out, "w") as fh:
        json.dump(obj, fh)
    print(f"k = {obj['k_star']}, participation factors {[round(g, 3) for g in obj['participation_factors']]}")


def _assemble(args):
    from .decomposition import assemble_report
    from .models import make_model
    from .pipeline import load_partition, read_embedding

    ds = PairedDataset.load(args.dataset)
    psi = read_embedding(args.embedding)
    part, jump = load_partition(args.partition)
    spec_path = os.path.join(os.path.dirname(os.path.abspath(args.embedding)), "spectrum.json")
    emb_meta = None
    if os.path.exists(spec_path):
        with open(spec_path) as fh:
            emb_meta = json.load(fh)
    model = None
    if ds.meta.get("model_id"):
        model = make_model(ds.meta["model_id"], ds.meta.get("model_params"))
    opts = {"gmm": getattr(args, "gmm", "feature"), "jump": jump, "embedding_meta": emb_meta,
            "input_spec": model.input_spec if model else None}
    return assemble_report(ds, psi, part, opts), model


def cmd_decompose(args):
    report, _ = _assemble(args)
    with open(args.out, "w") as fh:
        json.dump(_jsonable(report.to_json()), fh, indent=2)
    print(f"report with {len(report.patterns)} patterns -> {args.out}")


def cmd_report(args):
    from .export import export_plots

    report, model = _assemble(args)
    res = export_plots(report, args.out, model=model, figures=not args.no_figures)
    for note in res["omitted"]:
        print(f"omitted: {note}")
    print(f"{len(res['files'])} files -> {args.out}")


def cmd_run(args):
    from .pipeline import PipelineConfig, run_pipeline

    cfg = PipelineConfig.load(args.config)
    man = run_pipeline(cfg, resume_from=args.resume_from, out_dir=args.out)
    print(json.dumps({"timings": man.timings, "n_model_evals": man.n_model_evals}))


def build_parser():
    p = argparse.ArgumentParser(prog="pppd", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None,
                   help=f"BLAS threads (0 = auto; default from ${THREADS_ENV})")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", help="draw in-state samples")
    s.add_argument("--model", required=True)
    s.add_argument("--model-params", help="JSON string or file")
    s.add_argument("--limit-state", choices=["full", "max-abs", "linear"], default="full")
    s.add_argument("--threshold", type=float)
    s.add_argument("--method", choices=["direct", "smc"], default="direct")
    s.add_argument("--p0", type=float, default=0.1)
    s.add_argument("--n0", type=int, default=1000)
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--step-size", type=float, default=0.1)
    s.add_argument("--n-leapfrog", type=int, default=5)
    s.add_argument("--max-levels", type=int, default=40)
    s.add_argument("--packed", action="store_true", help="store y as packed binary")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("embed", help="map responses to feature coordinates")
    e.add_argument("--method", choices=["diffusion", "autoencoder"], default="diffusion")
    e.add_argument("--epsilon", type=float)
    e.add_argument("--alpha", type=float, default=1.0)
    e.add_argument("--tau", type=int, default=1)
    e.add_argument("--taus", help="extra timescales, comma separated")
    e.add_argument("--nt", type=int, default=4)
    e.add_argument("--knn", type=int)
    e.add_argument("--dt", type=float, default=1.0, help="quadrature weight on squared distances")
    e.add_argument("--layers", default="100,30,3")
    e.add_argument("--epochs", type=int, default=1000)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--reconstruction", action="store_true")
    e.add_argument("--in", dest="inp", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_embed)

    c = sub.add_parser("cluster", help="cluster feature coordinates")
    c.add_argument("--in", dest="inp", required=True)
    c.add_argument("--method", choices=["kmeans", "dbscan"], default="kmeans")
    c.add_argument("--k", type=int)
    c.add_argument("--kmax", type=int, default=10)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--restarts", type=int, default=10)
    c.add_argument("--dimension", choices=["effective", "nominal"], default="effective")
    c.add_argument("--min-pts", type=int)
    c.add_argument("--eps-radius", type=float)
    c.add_argument("--attach-noise", action="store_true",
                   help="give density-clustering noise the label of the nearest clustered sample")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_cluster)

    for name, func, helptext in (("decompose", cmd_decompose, "assemble the pattern report"),
                                 ("report", cmd_report, "export plot tables and figures")):
        d = sub.add_parser(name, help=helptext)
        d.add_argument("--dataset", required=True)
        d.add_argument("--embedding", required=True)
        d.add_argument("--partition", required=True)
        d.add_argument("--gmm", choices=["off", "feature", "response-diag"], default="feature")
        if name == "report":
            d.add_argument("--no-figures", action="store_true")
        d.add_argument("--out", required=True)
        d.set_defaults(func=func)

    r = sub.add_parser("run", help="run the full pipeline from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--resume-from", choices=["sample", "embed", "cluster", "decompose", "report"])
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)
    return p


def _threads(flag):
    if flag is not None:
        return flag
    env = os.environ.get(THREADS_ENV)
    return int(env) if env else 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .pipeline import ConfigError
    from .sampling import SamplingError

    try:
        n = _threads(args.threads)
        if n > 0:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(n):
                args.func(args)
        else:
            args.func(args)
    except (ConfigError, InputError, KeyError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, SamplingError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
