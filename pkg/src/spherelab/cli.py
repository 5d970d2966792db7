"""``spherelab`` command-line entry point.

Every subcommand accepts ``--seed``, ``--out`` (a directory, or ``-`` for
standard output) and ``--config`` (a JSON object of flag values, or a
``manifest.json`` from an earlier run; explicit flags win).  Runs that write
to a directory also write ``manifest.json`` with the resolved configuration.

Exit codes: 0 success, 1 input/output or runtime failure, 2 usage error,
3 invalid numeric argument or domain violation.  Failures print one JSON
line ``{"error": kind, "message": ...}`` on standard error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from spherelab import __version__
from spherelab.errors import DegenerateInputError, DomainError, InvalidArgumentError, SpherelabError

EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_DOMAIN = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- formatting helpers ---------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def _csv(header, rows) -> str:
    out = [",".join(header)]
    out.extend(",".join(_fmt(v) for v in row) for row in rows)
    return "\n".join(out) + "\n"


def _json(obj) -> str:
    def clean(o):
        if isinstance(o, dict):
            return {str(k): clean(v) for k, v in o.items()}
        if isinstance(o, (list, tuple, np.ndarray)):
            return [clean(v) for v in o]
        if isinstance(o, (np.floating, float)):
            return None if not np.isfinite(o) else float(o)
        if isinstance(o, np.integer):
            return int(o)
        return o

    return json.dumps(clean(obj), indent=2, sort_keys=False) + "\n"


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise InvalidArgumentError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> list[int]:
    vals = _floats(text)
    if any(int(v) != v for v in vals):
        raise InvalidArgumentError(f"expected comma-separated integers, got {text!r}")
    return [int(v) for v in vals]


def _count(text) -> int:
    """Integer flag that also accepts ``1e6`` style input."""
    try:
        v = float(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from exc
    if int(v) != v:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    return int(v)


class Output:
    """Destination of one run: a directory or standard output."""

    def __init__(self, out: str, overwrite: bool):
        self.stdout = out == "-"
        self.dir = None if self.stdout else Path(out)
        self.overwrite = overwrite
        self.written: list[str] = []

    def prepare(self):
        if self.dir is not None:
            self.dir.mkdir(parents=True, exist_ok=True)

    def write(self, name: str, text: str, primary: bool = True):
        if self.stdout:
            if primary:
                sys.stdout.write(text)
            return
        path = self.dir / name
        if path.exists() and not self.overwrite:
            raise FileExistsError(f"{path} exists; pass --overwrite to replace it")
        path.write_text(text)
        self.written.append(name)


# -- densities and manifolds for the k-NN commands --------------------------------------


def _manifold(name: str):
    from spherelab.knn_lab import Manifold

    if name == "circle":
        return Manifold.circle()
    if name == "sphere2":
        return Manifold.sphere2()
    if name.startswith("euclidean"):
        m = name[len("euclidean") :] or "2"
        return Manifold.euclidean(int(m))
    raise InvalidArgumentError(f"unknown manifold {name!r}")


def _density(text: str, manifold):
    """``uniform``, ``vmf:KAPPA[:ANGLE]`` or ``gaussian[:SCALE]``."""
    from spherelab.knn_lab import CIRCLE, Density

    head, _, rest = text.partition(":")
    parts = [p for p in rest.split(":") if p]
    if head == "uniform":
        return Density.uniform(manifold)
    if head == "vmf":
        if not parts:
            raise InvalidArgumentError("vmf density needs a concentration, e.g. vmf:2")
        kappa = float(parts[0])
        if manifold.kind == CIRCLE:
            mean = float(parts[1]) if len(parts) > 1 else 0.0
        else:
            mean = np.array([0.0, 0.0, 1.0])
        return Density.vmf(manifold, mean, kappa)
    if head == "gaussian":
        scale = float(parts[0]) if parts else 1.0
        return Density.gaussian(np.zeros(manifold.m), scale**2 * np.eye(manifold.m))
    raise InvalidArgumentError(f"unknown density {text!r}")


def _queries(values, manifold) -> np.ndarray:
    default = np.zeros(manifold.ambient_dim)
    default[0] = 1.0
    rows = [_floats(v) for v in (values or [])] or [list(default)]
    Q = np.array(rows, dtype=np.float64)
    if Q.shape[1] != manifold.ambient_dim:
        raise InvalidArgumentError(f"queries need {manifold.ambient_dim} coordinates")
    if manifold.kind != "euclidean":
        norms = np.linalg.norm(Q, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-8):
            raise InvalidArgumentError("queries on the circle or sphere must be unit vectors")
    return Q


# -- subcommands -----------------------------------------------------------------------


def cmd_rho(args, out: Output):
    from spherelab.target import ProjectionTarget, select_target

    if args.grid < 1:
        raise InvalidArgumentError("--grid must be >= 1")
    target = {"auto": select_target, "exact": ProjectionTarget.exact, "gaussian": ProjectionTarget.gaussian}[args.target](args.dim)
    t = -1.0 + (2.0 * np.arange(args.grid) + 1.0) / args.grid
    pdf = target.pdf(t)
    cf = target.cf(args.freq_scale * t)
    out.write("rho.csv", _csv(["t", "pdf", "cf"], zip(t, np.atleast_1d(pdf), np.atleast_1d(cf))))


def _read_samples(path: str, column: int) -> np.ndarray:
    with open(path) as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidArgumentError(f"{path} is empty")
    try:
        float(rows[0][column])
        body = rows
    except ValueError:
        body = rows[1:]
    except IndexError as exc:
        raise InvalidArgumentError(f"{path} has no column {column}") from exc
    try:
        return np.array([float(r[column]) for r in body if r], dtype=np.float64)
    except (ValueError, IndexError) as exc:
        raise InvalidArgumentError(f"{path}: cannot read numeric column {column}") from exc


def cmd_ep_test(args, out: Output):
    from spherelab.epps_pulley import EPConfig, ep_statistic, null_distribution
    from spherelab.target import ProjectionTarget, select_target

    x = _read_samples(args.input, args.column)
    target = {"auto": select_target, "exact": ProjectionTarget.exact, "gaussian": ProjectionTarget.gaussian}[args.target](args.dim)
    cfg = EPConfig(args.weight_variance, args.quad_nodes)
    res = {"n": int(x.size), "statistic": ep_statistic(x, target, cfg)}
    if args.null_reps > 0:
        null = null_distribution(target, x.size, args.null_reps, cfg, seed=args.seed)
        res["null_median"] = float(np.median(null))
        res["null_p99"] = float(np.quantile(null, 0.99))
    out.write("ep_test.json", _json(res))


def cmd_train_toy(args, out: Output):
    from spherelab.epps_pulley import EPConfig
    from spherelab.sphere import cloud_to_csv, random_mixture_components, sample_uniform_sphere, sample_vmf_mixture
    from spherelab.susreg import MultiViewBatch, TrainConfig, make_views, train_toy
    from spherelab.target import select_target

    if args.init == "uniform":
        base = sample_uniform_sphere(args.dim, args.n, seed=args.seed)
    else:
        comps = random_mixture_components(args.dim, args.components, args.kappa, seed=args.seed)
        base = sample_vmf_mixture(comps, args.n, seed=args.seed)
    if args.views > 1:
        batch = make_views(base, args.views, args.global_views, args.view_noise, seed=args.seed)
    else:
        batch = MultiViewBatch(base.data, 1)
    cfg = TrainConfig(
        steps=args.steps,
        learning_rate=args.lr,
        lam=args.lam,
        num_slices=args.slices,
        seed=args.seed,
        resample_slices_each_step=not args.fixed_slices,
        ep=EPConfig(quad_nodes=args.quad_nodes),
    )
    res = train_toy(batch, cfg, select_target(args.dim))
    h = res.history
    cols = ["step", "inv_loss", "susreg_loss", "total_loss", "resultant_length"]
    out.write("history.csv", _csv(cols, zip(*(h[c] for c in cols))))
    out.write("final.csv", cloud_to_csv(res.final_cloud()), primary=False)


def cmd_knn_bias(args, out: Output):
    from spherelab.knn_lab import bias_leading_term, knn_radius, pointwise_bias_mc, target_function

    man = _manifold(args.manifold)
    dens = _density(args.density, man)
    f = target_function(args.target, man)
    Q = _queries(args.query, man)
    header = [f"q{i}" for i in range(Q.shape[1])] + ["bias_mc", "stderr", "bias_leading", "radius"]
    rows = []
    for q in Q:
        mean, se = pointwise_bias_mc(man, dens, f, q, args.k, args.n, args.reps, args.seed, args.estimator)
        lead = bias_leading_term(man, dens, f, q, args.k, args.n, correction=args.radius_correction)
        r = knn_radius(man, dens, q, args.k, args.n, correction=args.radius_correction)
        rows.append([*q, mean, se, lead, r])
    out.write("knn_bias.csv", _csv(header, rows))


def cmd_knn_isb(args, out: Output):
    from spherelab.knn_lab import isb_leading, isb_mc, target_function

    man = _manifold(args.manifold)
    dens = _density(args.density, man)
    f = target_function(args.target, man)
    grid = man.grid(args.grid_size)
    rows = []
    for k in _ints(args.k):
        est = isb_mc(man, dens, f, k, args.n, args.reps, grid, args.seed, args.estimator, detail=True)
        lead = isb_leading(man, dens, f, k, args.n)
        rows.append([k, args.n, est.value, est.stderr, lead, est.value / lead if lead else float("nan")])
    out.write("knn_isb.csv", _csv(["k", "n", "isb_mc", "stderr", "isb_leading", "ratio"], rows))


def cmd_knn_minimax(args, out: Output):
    from spherelab.knn_lab import minimax_probe

    man = _manifold("circle")
    dens = [_density(d, man) for d in args.densities.split(",")]
    rows = minimax_probe(man, dens, args.c, _floats(args.slopes), args.k, args.n, args.reps, args.seed, args.method)
    out.write(
        "knn_minimax.csv",
        _csv(
            ["density", "slope", "isb", "isb_leading", "sup_laplacian"],
            [[r.density, r.slope, r.isb, r.isb_leading, r.sup_laplacian] for r in rows],
        ),
    )


def cmd_knn_fig1(args, out: Output):
    from spherelab.knn_lab import neighborhood_anisotropy

    man = _manifold(args.manifold)
    if man.ambient_dim != 2:
        raise InvalidArgumentError("knn-fig1 works in the plane (euclidean2 or circle)")
    dens = _density(args.density, man)
    rows = []
    for q in _queries(args.query, man):
        a = neighborhood_anisotropy(man, dens, q, args.k, args.n, args.reps, args.seed, args.estimator)
        rows.append([q[0], q[1], a.shift[0], a.shift[1], a.stderr[0], a.stderr[1], a.eig_ratio, a.predicted[0], a.predicted[1]])
    header = ["query_x", "query_y", "shift_x", "shift_y", "stderr_x", "stderr_y", "ecc", "pred_x", "pred_y"]
    out.write("knn_fig1.csv", _csv(header, rows))


def cmd_krr_spectrum(args, out: Output):
    from spherelab.krr_lab import KernelSpec, covariance_spectrum, parse_distribution, worst_case_isb
    from spherelab.rng import substream

    dist = parse_distribution(args.dist)
    kernel = KernelSpec.linear() if args.kernel == "linear" else KernelSpec.exponential(args.kappa)
    if args.reps < 1:
        raise InvalidArgumentError("--reps must be >= 1")
    mu1 = []
    top = None
    for r in range(args.reps):
        x = dist.sample(args.dim, args.batch, seed=int(substream(args.seed, "krr_rep", r).integers(2**62)))
        rep = covariance_spectrum(x, kernel, top=min(16, args.batch - 1))
        mu1.append(rep.mu1)
        if top is None:
            top = rep.eigenvalues[:16]
    mu1 = np.array(mu1)
    mean = float(mu1.mean())
    se = float(mu1.std(ddof=1) / np.sqrt(mu1.size)) if mu1.size > 1 else float("nan")
    res = {
        "distribution": dist.label,
        "dim": args.dim,
        "batch": args.batch,
        "reps": args.reps,
        "eigenvalues_top16": list(top),
        "mu1_mean": mean,
        "mu1_stderr": se,
        "worst_case_isb": {f"{lam:g}": worst_case_isb(mean, lam) for lam in _floats(args.lambdas)},
    }
    out.write("krr_spectrum.json", _json(res))


def _read_labels(path: str) -> np.ndarray:
    with open(path) as fh:
        vals = [row[0].strip() for row in csv.reader(fh) if row and row[0].strip()]
    if vals and vals[0].lower() in ("label", "labels", "id"):
        vals = vals[1:]
    return np.array(vals)


def cmd_retrieval_eval(args, out: Output):
    from spherelab.metrics import evaluate_retrieval
    from spherelab.sphere import cloud_from_csv, normalize

    emb = normalize(cloud_from_csv(args.embeddings, on_sphere=False).data).data
    labels = _read_labels(args.labels)
    res = evaluate_retrieval(emb, labels, args.batch, _ints(args.k))
    out.write("retrieval.json", _json(res))


def cmd_sample(args, out: Output):
    from spherelab import sphere
    from spherelab.target import sample_target, select_target

    d, n, seed = args.dim, args.n, args.seed
    if args.dist == "uniform":
        cloud = sphere.sample_uniform_sphere(d, n, seed)
    elif args.dist == "vmf":
        mu = np.zeros(d)
        mu[0] = 1.0
        cloud = sphere.sample_vmf(mu, args.kappa, n, seed)
    elif args.dist == "vmf-mixture":
        comps = sphere.random_mixture_components(d, args.components, args.kappa, seed)
        cloud = sphere.sample_vmf_mixture(comps, n, seed)
    elif args.dist == "radial":
        from spherelab.krr_lab import parse_distribution

        law = parse_distribution("radial:" + args.radial).law
        cloud = sphere.sample_radial(sphere.sample_uniform_sphere(d, n, seed), law, seed)
    else:
        t = sample_target(select_target(d), n, seed)
        out.write("sample.csv", _csv(["t"], ([v] for v in t)))
        return
    if args.hist_bins > 0:
        out.write("projections.csv", _projection_histograms(cloud, args.directions, args.hist_bins, seed))
        return
    out.write("sample.csv", sphere.cloud_to_csv(cloud))


def _projection_histograms(cloud, count: int, bins: int, seed: int) -> str:
    from spherelab.rng import substream
    from spherelab.target import select_target

    d = cloud.d
    target = select_target(d)
    g = substream(seed, "hist_directions", d, count).standard_normal((count, d))
    dirs = g / np.linalg.norm(g, axis=1, keepdims=True)
    edges = np.linspace(-1.0, 1.0, bins + 1)
    mids = 0.5 * (edges[1:] + edges[:-1])
    ref = target.pdf(mids)
    rows = []
    for j, a in enumerate(dirs):
        hist, _ = np.histogram(cloud.data @ a, bins=edges, density=True)
        rows.extend([j, lo, hi, h, r] for lo, hi, h, r in zip(edges[:-1], edges[1:], hist, np.atleast_1d(ref)))
    return _csv(["direction", "bin_left", "bin_right", "density", "rho_pdf"], rows)


# -- parser ----------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--out", default="-", help="output directory, or - for standard output")
    p.add_argument("--config", default=None, help="JSON file of flag values (or a manifest.json)")
    p.add_argument("--overwrite", action="store_true", help="replace existing output files")


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = _Parser(prog="spherelab", description="Spherical uniformity and k-NN/KRR bias experiments.")
    parser.add_argument("--version", action="version", version=f"spherelab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    subs = {}

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(func=func)
        subs[name] = p
        return p

    p = add("rho", cmd_rho, "Projection density and characteristic function on a grid.")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--grid", type=int, default=201, help="number of midpoints in (-1, 1)")
    p.add_argument("--target", choices=["auto", "exact", "gaussian"], default="auto")
    p.add_argument("--freq-scale", type=float, default=10.0, help="cf is evaluated at s = freq_scale * t")

    p = add("ep-test", cmd_ep_test, "Epps-Pulley statistic of scalar samples against the projection law.")
    p.add_argument("--input", required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--column", type=int, default=0)
    p.add_argument("--null-reps", type=int, default=0)
    p.add_argument("--target", choices=["auto", "exact", "gaussian"], default="auto")
    p.add_argument("--weight-variance", type=float, default=1.0)
    p.add_argument("--quad-nodes", type=int, default=129)

    p = add("train-toy", cmd_train_toy, "Gradient descent of free embeddings under SUSReg and invariance losses.")
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--n", type=_count, default=4096)
    p.add_argument("--slices", type=int, default=1024)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--init", choices=["uniform", "vmf-mixture"], default="vmf-mixture")
    p.add_argument("--components", type=int, default=3)
    p.add_argument("--kappa", type=float, default=20.0)
    p.add_argument("--views", type=int, default=1)
    p.add_argument("--global-views", type=int, default=1)
    p.add_argument("--view-noise", type=float, default=0.05)
    p.add_argument("--quad-nodes", type=int, default=17)
    p.add_argument("--fixed-slices", action="store_true", help="draw the directions once instead of every step")

    def knn_common(p, manifold, density, target):
        p.add_argument("--manifold", default=manifold, help="circle, sphere2 or euclideanM")
        p.add_argument("--density", default=density, help="uniform, vmf:KAPPA[:ANGLE] or gaussian[:SCALE]")
        if target:
            p.add_argument("--target", default=target, help="cos, sin, y1, y2, x0, x1, ... or constant")
        p.add_argument("--estimator", choices=["plain", "conditional"], default="plain")

    p = add("knn-bias", cmd_knn_bias, "Pointwise k-NN bias: Monte Carlo against the leading term.")
    knn_common(p, "circle", "uniform", "cos")
    p.add_argument("--query", action="append", help="query point as comma-separated coordinates (repeatable)")
    p.add_argument("--k", type=int, default=500)
    p.add_argument("--n", type=_count, default=200000)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--radius-correction", action="store_true")

    p = add("knn-isb", cmd_knn_isb, "Integrated squared bias: Monte Carlo against the leading term.")
    knn_common(p, "circle", "uniform", "cos")
    p.set_defaults(estimator="conditional")
    p.add_argument("--k", default="500", help="comma-separated neighbour counts")
    p.add_argument("--n", type=_count, default=200000)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--grid-size", type=int, default=256)

    p = add("knn-minimax", cmd_knn_minimax, "ISB of the ramp family across slopes and densities.")
    p.add_argument("--densities", default="uniform,vmf:2")
    p.add_argument("--c", type=float, default=875.0, help="Laplacian bound of the target class")
    p.add_argument("--slopes", default="1,4,16")
    p.add_argument("--k", type=int, default=32)
    p.add_argument("--n", type=_count, default=1000000)
    p.add_argument("--reps", type=int, default=30)
    p.add_argument("--method", choices=["quadrature", "mc"], default="quadrature")

    p = add("knn-fig1", cmd_knn_fig1, "Centroid shift and scatter of k-NN neighbourhoods.")
    knn_common(p, "euclidean2", "gaussian", None)
    p.set_defaults(estimator="conditional")
    p.add_argument("--query", action="append")
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--n", type=_count, default=100000)
    p.add_argument("--reps", type=int, default=500)

    p = add("krr-spectrum", cmd_krr_spectrum, "Top covariance-operator eigenvalues from Gram matrices.")
    p.add_argument("--dist", default="uniform", help="uniform, point, vmf:KAPPA[:COMPONENTS] or radial:R@W,...")
    p.add_argument("--kernel", choices=["exponential", "linear"], default="exponential")
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--batch", type=int, default=2000)
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--lambdas", default="0.01,0.1,1.0")

    p = add("retrieval-eval", cmd_retrieval_eval, "Recall@K and mAP within consecutive batches.")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--batch", type=int, default=100)
    p.add_argument("--k", default="1,3,5")

    p = add("sample", cmd_sample, "Draw a point cloud (or projection histograms of it).")
    p.add_argument("--dist", choices=["uniform", "vmf", "vmf-mixture", "radial", "target"], default="uniform")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--n", type=_count, required=True)
    p.add_argument("--kappa", type=float, default=10.0)
    p.add_argument("--components", type=int, default=3)
    p.add_argument("--radial", default="0.5@0.5,1.3228756555322954@0.5")
    p.add_argument("--hist-bins", type=int, default=0, help="emit projection histograms with this many bins")
    p.add_argument("--directions", type=int, default=8)

    for p in subs.values():
        _common(p)
    return parser, subs


def _load_config(path: str, command: str) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise InvalidArgumentError(f"{path}: expected a JSON object")
    if "config" in cfg and "command" in cfg:
        if cfg["command"] != command:
            raise InvalidArgumentError(f"{path} is a manifest for {cfg['command']!r}, not {command!r}")
        cfg = cfg["config"]
    return {k.replace("-", "_"): v for k, v in cfg.items()}


_NOT_CONFIG = {"func", "command", "config", "out", "overwrite"}


def _config_path(argv) -> str | None:
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _parse(argv) -> argparse.Namespace:
    parser, subs = build_parser()
    argv = list(argv)
    command = next((t for t in argv if not t.startswith("-")), None)
    path = _config_path(argv)
    if path and command in subs:
        # config values become defaults, so explicit flags still win
        sp = subs[command]
        cfg = _load_config(path, command)
        known = {a.dest for a in sp._actions}
        unknown = sorted(set(cfg) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        cfg = {k: v for k, v in cfg.items() if k not in _NOT_CONFIG}
        for a in sp._actions:
            if a.dest in cfg:
                a.required = False
        sp.set_defaults(**cfg)
    return parser.parse_args(argv)


def _manifest(args) -> str:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_CONFIG}
    return _json({"command": args.command, "version": __version__, "config": cfg})


def _os_message(exc: OSError) -> str:
    return f"{exc.strerror}: {exc.filename}" if exc.filename else str(exc)


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def main(argv=None) -> int:
    try:
        args = _parse(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        return _fail("usage", str(exc), EXIT_USAGE)
    except SpherelabError as exc:
        return _fail(exc.kind, str(exc), EXIT_DOMAIN if isinstance(exc, ValueError) else EXIT_RUNTIME)
    except OSError as exc:
        return _fail("io", _os_message(exc), EXIT_RUNTIME)
    threads = os.environ.get("SPHERELAB_THREADS")
    try:
        if threads:
            from spherelab.epps_pulley import set_threads

            set_threads(int(threads))
        out = Output(args.out, args.overwrite)
        out.prepare()
        args.func(args, out)
        if not out.stdout:
            out.write("manifest.json", _manifest(args))
    except (InvalidArgumentError, DomainError, DegenerateInputError) as exc:
        return _fail(exc.kind, str(exc), EXIT_DOMAIN)
    except SpherelabError as exc:
        return _fail(exc.kind, str(exc), EXIT_RUNTIME)
    except FileNotFoundError as exc:
        return _fail("io", f"no such file: {exc.filename}", EXIT_RUNTIME)
    except OSError as exc:
        return _fail("io", _os_message(exc), EXIT_RUNTIME)
    except ValueError as exc:
        return _fail("invalid-argument", str(exc), EXIT_DOMAIN)
    return 0


if __name__ == "__main__":
    sys.exit(main())
