"""Deterministic command-line driver.

Reads a JSON config, dispatches to the library, and writes CSV/JSON artifacts
atomically (temp file + rename).  Identical configs produce byte-identical
outputs: floats are serialised with 17 significant digits, JSON keys are
sorted, and every emitted file embeds the config hash.

Exit codes: 0 success, 2 validation failure, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import itertools
import json
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from . import bounds as bd
from . import carleman as carl
from . import cost as ct
from . import nonlinear_ode as node
from . import pde as rd
from . import propagator as prop
from . import stencil as st
from .errors import NumericFailure, ValidationError

SCHEMA_VERSION = 1
WORKER_ENV = "CARLEMANLAB_WORKERS"

COMMANDS = ("linearize", "evolve", "bounds", "pde", "cost", "figures", "sweep")

#: numeric knobs and their documented defaults; physical parameters have none
NUMERIC_DEFAULTS = {
    "N": None,  # derived from epsilon when absent
    "K": 10,
    "dt": None,
    "n_steps": None,
    "epsilon": 0.01,
    "gamma_mode": "norm_uin",
    "gamma": None,
    "reference_tol": 1e-10,
    "lambda_f1": None,
    "lambda_fm": None,
    "record_every": None,
}


# ---------------------------------------------------------------------------
# deterministic serialisation
# ---------------------------------------------------------------------------

def format_number(x: Any) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def canonical_config_text(config: dict) -> str:
    return json.dumps(config, sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_config_text(config).encode()).hexdigest()


def atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp_", text=True)
    try:
        with os.fdopen(fd, "w") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(
    path: str, header: list[str], rows: list[list], digest: str, config: dict | None = None
) -> None:
    lines = [f"# config_hash={digest}"]
    if config is not None:
        lines.append(f"# config={canonical_config_text(config)}")
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(format_number(x) for x in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_json(path: str, payload: dict, digest: str, config: dict) -> None:
    body = {
        "schema_version": SCHEMA_VERSION,
        "config_hash": digest,
        "config": config,
        **payload,
    }
    atomic_write_text(path, json.dumps(body, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# config ingestion
# ---------------------------------------------------------------------------

def _require(section: dict, keys: list[str], where: str) -> None:
    missing = [k for k in keys if k not in section]
    if missing:
        raise ValidationError(f"{where} section is missing required keys: {missing}")


def ode_from_config(section: dict) -> node.NonlinearODE:
    """Problem schema: n, M, dense F1 rows, FM coordinate triplets, u_in, T."""
    _require(section, ["n", "M", "F1", "FM", "u_in", "T"], "ode")
    n, M = int(section["n"]), int(section["M"])
    fm_spec = section["FM"]
    entries = fm_spec["entries"] if isinstance(fm_spec, dict) else fm_spec
    rows = [int(e[0]) for e in entries]
    cols = [int(e[1]) for e in entries]
    vals = [float(e[2]) for e in entries]
    import scipy.sparse as sp

    FM = sp.csr_matrix((vals, (rows, cols)), shape=(n, n**M))
    return node.NonlinearODE(
        n=n, M=M, F1=np.asarray(section["F1"], dtype=float), FM=FM,
        u_in=np.asarray(section["u_in"], dtype=float), T=float(section["T"]),
    )


def ode_to_config(ode: node.NonlinearODE) -> dict:
    """Inverse of :func:`ode_from_config`, used when exporting discretisations."""
    if ode.n > 512:
        raise ValidationError("config export keeps F1 dense; n > 512 is not exportable")
    rows, cols, vals = ode.fm_coordinates
    f1 = ode.F1.toarray() if hasattr(ode.F1, "toarray") else np.asarray(ode.F1)
    return {
        "n": ode.n,
        "M": ode.M,
        "F1": f1.tolist(),
        "FM": {"entries": [[int(r), int(c), float(v)] for r, c, v in zip(rows, cols, vals)]},
        "u_in": ode.u_in.tolist(),
        "T": ode.T,
    }


_PROFILES: dict[str, Callable[[np.ndarray, float], np.ndarray]] = {
    "raised_cosine": lambda x, amp: amp * np.prod(1.0 + np.cos(2.0 * np.pi * x), axis=1),
    "constant": lambda x, amp: np.full(x.shape[0], amp),
}


def pde_from_config(section: dict) -> rd.ReactionDiffusionProblem:
    _require(section, ["diffusion", "c", "b", "M", "d", "m", "k", "T", "initial"], "pde")
    init_spec = section["initial"]
    if "values" in init_spec:
        initial: rd.InitialCondition = np.asarray(init_spec["values"], dtype=float)
    elif "profile" in init_spec:
        name = init_spec["profile"]
        if name not in _PROFILES:
            raise ValidationError(
                f"unknown initial profile {name!r}; known: {sorted(_PROFILES)}"
            )
        amp = float(init_spec.get("amplitude", 1.0))
        profile = _PROFILES[name]
        initial = lambda x, _p=profile, _a=amp: _p(x, _a)  # noqa: E731
    else:
        raise ValidationError("pde initial condition needs 'profile' or 'values'")
    return rd.ReactionDiffusionProblem(
        diffusion=float(section["diffusion"]),
        c=float(section["c"]),
        b=float(section["b"]),
        M=int(section["M"]),
        d=int(section["d"]),
        m=int(section["m"]),
        k=int(section["k"]),
        initial=initial,
        T=float(section["T"]),
    )


def numerics_from_config(config: dict) -> dict:
    out = dict(NUMERIC_DEFAULTS)
    out.update(config.get("numerics", {}))
    unknown = set(out) - set(NUMERIC_DEFAULTS)
    if unknown:
        raise ValidationError(f"unknown numerics keys: {sorted(unknown)}")
    return out


def resolve_problem(config: dict) -> tuple[node.NonlinearODE, rd.ReactionDiffusionProblem | None]:
    if "pde" in config:
        problem = pde_from_config(config["pde"])
        return rd.discretize(problem), problem
    if "ode" in config:
        return ode_from_config(config["ode"]), None
    raise ValidationError("config needs an 'ode' or 'pde' section")


def resolve_gamma(numerics: dict, ode: node.NonlinearODE) -> float:
    mode = numerics["gamma_mode"]
    if mode == "norm_uin":
        return float(np.linalg.norm(ode.u_in))
    if mode == "gamma_max":
        return node.max_stable_gamma(ode)
    if mode == "explicit":
        if numerics["gamma"] is None:
            raise ValidationError("gamma_mode 'explicit' needs a 'gamma' value")
        return float(numerics["gamma"])
    raise ValidationError(f"unknown gamma_mode {mode!r}")


def resolve_order(numerics: dict, ode: node.NonlinearODE) -> int:
    if numerics["N"] is not None:
        return int(numerics["N"])
    R = node.r_ratio(ode)
    return bd.required_carleman_order(R, ode.M, float(numerics["epsilon"]))


def validate_config(config: dict) -> None:
    if not isinstance(config, dict):
        raise ValidationError("config must be a JSON object")
    version = config.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ValidationError(f"unsupported schema_version {version}")
    command = config.get("command")
    if command not in COMMANDS:
        raise ValidationError(f"command must be one of {COMMANDS}, got {command!r}")


# ---------------------------------------------------------------------------
# command handlers
# ---------------------------------------------------------------------------

@dataclass
class RunContext:
    config: dict
    out_dir: str
    workers: int
    strict_stability: bool
    digest: str

    def path(self, suffix: str) -> str:
        prefix = self.config.get("output", {}).get("prefix", "run")
        return os.path.join(self.out_dir, f"{prefix}_{suffix}")


def _cmd_linearize(ctx: RunContext) -> None:
    ode, problem = resolve_problem(ctx.config)
    numerics = numerics_from_config(ctx.config)
    gamma = resolve_gamma(numerics, ode)
    N = resolve_order(numerics, ode)
    mat = carl.assemble(node.rescale(ode, gamma), N)
    payload: dict[str, Any] = {
        "results": {
            "n": ode.n,
            "M": ode.M,
            "N": N,
            "gamma": gamma,
            "total_dimension": mat.total_dimension,
            "gershgorin_max_eig_bound": mat.gershgorin_max_eig_bound(),
            "spectral_norm_bound": mat.spectral_norm_bound(),
            "R": node.r_ratio(ode),
        }
    }
    if mat.total_dimension <= mat.dense_cap:
        payload["results"]["max_row_nonzeros"] = mat.sparsity_count()
    lam_f1, lam_fm = numerics["lambda_f1"], numerics["lambda_fm"]
    if problem is not None:
        lam_f1 = ct.pde_lambda_f1(problem) if lam_f1 is None else lam_f1
        lam_fm = abs(problem.b) if lam_fm is None else lam_fm
    if lam_f1 is not None and lam_fm is not None:
        payload["results"]["lambda_carleman"] = carl.lambda_value(
            N, ode.M, gamma, float(lam_f1), float(lam_fm)
        )
    if ctx.config.get("export_dense", False):
        mtx_path = ctx.path("matrix.mtx")
        carl.export_matrix_market(mat, mtx_path)
        payload["results"]["matrix_market_file"] = os.path.basename(mtx_path)
    write_json(ctx.path("linearize.json"), payload, ctx.digest, ctx.config)


def _run_pipeline(ctx: RunContext) -> dict:
    """Shared evolve machinery: returns summary metrics and trajectory rows."""
    ode, _ = resolve_problem(ctx.config)
    numerics = numerics_from_config(ctx.config)
    gamma = resolve_gamma(numerics, ode)
    N = resolve_order(numerics, ode)
    mat = carl.assemble(node.rescale(ode, gamma), N)
    config = prop.PropagationConfig(
        total_time=ode.T,
        taylor_order=int(numerics["K"]),
        dt=numerics["dt"],
        n_steps=numerics["n_steps"],
        strict_stability=ctx.strict_stability,
        record_every=numerics["record_every"],
    )
    y0 = carl.initial_vector(ode.u_in, gamma, N)
    result = prop.evolve(mat, y0, config)
    reference = node.reference_solve(
        ode, T=ode.T, tol=float(numerics["reference_tol"]), t_eval=result.times
    )
    u_hat = gamma * result.block1
    err = np.linalg.norm(u_hat - reference.u, axis=1)
    rows = []
    for i, t in enumerate(result.times):
        rows.append(
            [t, result.y_norms[i], float(np.linalg.norm(result.block1[i])),
             result.block1_share[i]] + list(u_hat[i])
        )
    bound_T = bd.component_error_bound(ode, N, 1, ode.T, gamma=gamma)
    reference_rows = [
        [t] + list(u) for t, u in zip(reference.t, reference.u)
    ]
    return {
        "rows": rows,
        "reference_rows": reference_rows,
        "n": ode.n,
        "N": N,
        "gamma": gamma,
        "dt": result.dt,
        "n_steps": result.n_steps,
        "K": int(numerics["K"]),
        "stability_bound": result.stability_bound,
        "final_share": float(result.block1_share[-1]),
        "final_y_norm": float(result.y_norms[-1]),
        "measured_error_T": float(err[-1]),
        "max_measured_error": float(err.max()),
        "component_bound_j1_T": float(bound_T) * gamma,
    }


def _cmd_evolve(ctx: RunContext) -> None:
    summary = _run_pipeline(ctx)
    rows = summary.pop("rows")
    reference_rows = summary.pop("reference_rows")
    n = summary["n"]
    header = ["t", "y_norm", "y1_norm", "share_1"] + [f"u_hat_{i+1}" for i in range(n)]
    write_csv(ctx.path("trajectory.csv"), header, rows, ctx.digest, ctx.config)
    ref_header = ["t"] + [f"u_{i+1}" for i in range(n)]
    write_csv(ctx.path("reference.csv"), ref_header, reference_rows, ctx.digest, ctx.config)
    write_json(ctx.path("evolve.json"), {"results": summary}, ctx.digest, ctx.config)


def _cmd_bounds(ctx: RunContext) -> None:
    ode, _ = resolve_problem(ctx.config)
    numerics = numerics_from_config(ctx.config)
    gamma = resolve_gamma(numerics, ode)
    N = numerics["N"]
    report = bd.make_bound_report(
        ode, gamma=gamma, N=None if N is None else int(N),
        eps=float(numerics["epsilon"]),
    )
    write_json(ctx.path("bounds.json"), {"results": report.as_dict()}, ctx.digest, ctx.config)
    rows = []
    lam = abs(report.lam0)
    for j in sorted(report.eta_bounds):
        k = bd.omega_index(report.N, ode.M, j)
        f_vals = np.asarray(bd.f_value(j, k, ode.M, lam * report.times))
        for t, f_val, bound in zip(report.times, f_vals, report.eta_bounds[j]):
            rows.append([t, j, k, float(f_val), float(bound)])
    write_csv(
        ctx.path("bound_sweep.csv"), ["t", "j", "k", "f_value", "bound"],
        rows, ctx.digest, ctx.config,
    )


def _cmd_pde(ctx: RunContext) -> None:
    if "pde" not in ctx.config:
        raise ValidationError("the 'pde' command needs a pde section")
    problem = pde_from_config(ctx.config["pde"])
    ode = rd.discretize(problem)
    report = rd.stability_report(problem, ode)
    payload: dict[str, Any] = {"results": {"stability": report.as_dict()}}
    inputs = rd.DiscretisationErrorInputs(
        derivative_bound=rd.estimate_derivative_bound(problem)
    )
    payload["results"]["derivative_bound_estimate"] = inputs.derivative_bound
    try:
        payload["results"]["required_grid_points"] = rd.required_grid_points(
            problem, inputs, float(numerics_from_config(ctx.config)["epsilon"])
        )
    except ValidationError as exc:
        payload["results"]["required_grid_points"] = None
        payload["results"]["required_grid_points_note"] = str(exc)
    if problem.c < 0:
        numerics = numerics_from_config(ctx.config)
        N = resolve_order(numerics, ode)
        g_value = st.g_kappa(problem.k)
        maxnorm_T = bd.maxnorm_error_bound(problem, N, 1, problem.T, g_value)
        payload["results"]["maxnorm_bound"] = {
            "N": N,
            "g_kappa": g_value,
            "eta1_at_T": None if np.isinf(maxnorm_T) else float(maxnorm_T),
            "converges_in_N": bool(np.isfinite(maxnorm_T)),
            "note": "heuristic: presumes a non-increasing max-norm",
        }
    write_json(ctx.path("stability.json"), payload, ctx.digest, ctx.config)
    write_json(ctx.path("ode_config.json"), {"ode": ode_to_config(ode)}, ctx.digest, ctx.config)


def _cmd_cost(ctx: RunContext) -> None:
    numerics = numerics_from_config(ctx.config)
    eps = float(numerics["epsilon"])
    if "pde" in ctx.config:
        problem = pde_from_config(ctx.config["pde"])
        estimate = ct.pde_cost_estimate(problem, problem.T, eps)
        fm_norm = abs(problem.b)
        lam_f1 = ct.pde_lambda_f1(problem)
        extra = {
            "diffusion": problem.diffusion, "d": problem.d, "n": problem.n,
            "sparsity": 2 * problem.k + 1, "decay": abs(problem.c), "M": problem.M,
        }
    else:
        ode = ode_from_config(ctx.config["ode"])
        gamma = resolve_gamma(numerics, ode)
        lam_f1 = numerics["lambda_f1"]
        lam_fm = numerics["lambda_fm"]
        if lam_f1 is None:
            lam_f1 = node.operator_spectral_norm(ode.F1)
        if lam_fm is None:
            lam_fm = node.fm_spectral_norm(ode)
        estimate = ct.ode_cost_estimate(
            ode, gamma, ode.T, eps, float(lam_f1), float(lam_fm)
        )
        fm_norm = node.fm_spectral_norm(ode)
        extra = {"diffusion": 1.0, "d": 1, "n": ode.n, "sparsity": 3,
                 "decay": abs(node.lambda0(ode.F1)), "M": ode.M}
    comparison = ct.prior_work_comparison(
        u_in_norm=estimate.u_in_norm,
        u_T_norm=estimate.u_T_norm,
        T=float(ctx.config.get("pde", ctx.config.get("ode"))["T"]),
        eps=eps,
        N=estimate.N,
        lam_f1=float(lam_f1),
        fm_norm=fm_norm,
        M=int(extra["M"]),
        diffusion=float(extra["diffusion"]),
        d=int(extra["d"]),
        n=int(extra["n"]),
        sparsity=int(extra["sparsity"]),
        decay=float(extra["decay"]),
        this_work_calls=estimate.calls_block_encoding,
    )
    payload = {
        "results": {
            "estimate": estimate.as_dict(),
            "prior_work": [row.as_dict() for row in comparison],
        }
    }
    write_json(ctx.path("cost.json"), payload, ctx.digest, ctx.config)


def _cmd_figures(ctx: RunContext) -> None:
    figure = ctx.config.get("figure")
    params = ctx.config.get("figure_params", {})
    if figure == "maxnorm":
        k_list = params.get("k_list", [2, 3, 4])
        tau_max = float(params.get("tau_max", 1.0))
        n_tau = int(params.get("n_tau", 400))
        m = int(params.get("m", 64))
        rows = []
        for k in k_list:
            taus, norms = st.semigroup_inf_norm_curve(k, tau_max=tau_max, n_tau=n_tau, m=m)
            rows.extend([[k, t, v] for t, v in zip(taus, norms)])
        write_csv(ctx.path("maxnorm.csv"), ["k", "tau", "inf_norm"], rows, ctx.digest, ctx.config)
    elif figure == "fdconv":
        k_list = params.get("k_list", [1, 2])
        m_list = params.get("m_list", [16, 32, 64, 128])
        table = st.convergence_study(k_list, m_list)
        rows = [[r.order, r.points, r.err_max, r.err_2] for r in table]
        write_csv(ctx.path("fdconv.csv"), ["k", "m", "err_max", "err_2"], rows, ctx.digest, ctx.config)
    elif figure == "eigs":
        k = int(params.get("k", 1))
        m = int(params.get("m", 16))
        eigs = st.laplacian_eigenvalues_periodic(k, m)
        rows = [[k, m, ell, val] for ell, val in enumerate(eigs)]
        write_csv(ctx.path("eigs.csv"), ["k", "m", "ell", "eigenvalue"], rows, ctx.digest, ctx.config)
    else:
        raise ValidationError(
            f"unknown figure {figure!r}; known: maxnorm, fdconv, eigs"
        )


_SWEEP_AXES = {
    "N": ("numerics", "N"),
    "K": ("numerics", "K"),
    "dt": ("numerics", "dt"),
    "epsilon": ("numerics", "epsilon"),
    "gamma": ("numerics", "gamma"),
    "m": ("pde", "m"),
    "k": ("pde", "k"),
}


def _cmd_sweep(ctx: RunContext) -> None:
    axes = ctx.config.get("axes", [])
    for axis in axes:
        if axis.get("name") not in _SWEEP_AXES:
            raise ValidationError(
                f"unknown sweep axis {axis.get('name')!r}; known: {sorted(_SWEEP_AXES)}"
            )
    names = [axis["name"] for axis in axes]
    value_lists = [axis["values"] for axis in axes] or [[None]]
    points = list(itertools.product(*value_lists)) if axes else [()]

    def run_point(values: tuple) -> dict:
        import copy

        config = copy.deepcopy(ctx.config)
        for name, value in zip(names, values):
            section, key = _SWEEP_AXES[name]
            config.setdefault(section, {})[key] = value
            if name == "gamma":
                config["numerics"]["gamma_mode"] = "explicit"
        sub = RunContext(
            config=config, out_dir=ctx.out_dir, workers=1,
            strict_stability=ctx.strict_stability, digest=ctx.digest,
        )
        summary = _run_pipeline(sub)
        summary.pop("rows")
        summary.pop("reference_rows")
        return summary

    if ctx.workers > 1 and len(points) > 1:
        with ThreadPoolExecutor(max_workers=ctx.workers) as pool:
            summaries = list(pool.map(run_point, points))
    else:
        summaries = [run_point(p) for p in points]

    metric_keys = [
        "measured_error_T", "max_measured_error", "component_bound_j1_T",
        "final_share", "final_y_norm", "N", "dt", "n_steps",
    ]
    header = names + metric_keys
    rows = [
        list(point) + [summary[k] for k in metric_keys]
        for point, summary in zip(points, summaries)
    ]
    write_csv(ctx.path("sweep.csv"), header, rows, ctx.digest, ctx.config)


_HANDLERS = {
    "linearize": _cmd_linearize,
    "evolve": _cmd_evolve,
    "bounds": _cmd_bounds,
    "pde": _cmd_pde,
    "cost": _cmd_cost,
    "figures": _cmd_figures,
    "sweep": _cmd_sweep,
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def run(config: dict, out_dir: str, workers: int = 1, strict_stability: bool = True) -> None:
    validate_config(config)
    ctx = RunContext(
        config=config,
        out_dir=out_dir,
        workers=workers,
        strict_stability=strict_stability,
        digest=config_hash(config),
    )
    os.makedirs(out_dir, exist_ok=True)
    _HANDLERS[config["command"]](ctx)


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="carlemanlab",
        description="Carleman-linearisation laboratory: deterministic runs from a JSON config.",
    )
    parser.add_argument("command", nargs="*", help="optional command [target] overriding the config")
    parser.add_argument("--config", help="path to the JSON run config")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--workers", type=int, default=None, help="sweep worker cap")
    parser.add_argument(
        "--strict-stability", type=_parse_bool, default=True,
        help="require a non-positive Gershgorin bound before evolving",
    )
    args = parser.parse_args(argv)

    try:
        if args.config:
            with open(args.config) as handle:
                config = json.load(handle)
        else:
            config = {}
        if args.command:
            config["command"] = args.command[0]
            if len(args.command) > 1 and args.command[0] == "figures":
                config["figure"] = args.command[1]
        config.setdefault("schema_version", SCHEMA_VERSION)
        config.setdefault("seed", 0)
        workers = args.workers
        if workers is None:
            workers = int(os.environ.get(WORKER_ENV, "1"))
        run(config, args.out, workers=workers, strict_stability=args.strict_stability)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except (OSError, json.JSONDecodeError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
