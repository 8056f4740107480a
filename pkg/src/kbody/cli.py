"""Command-line front end.

Body specifications come in as JSON files, computations go out as
canonical JSON (sorted keys, compact separators) or CSV with frozen
column orders.  When --out is given, the report is also written to that
path and a matplotlib figure is rendered next to it with the same stem
and a .png suffix.

Exit codes: 0 success, 1 computation error (structured error record on
stdout), 2 invalid input.
"""

from __future__ import annotations

import csv
import io
import json
import os
import sys
from dataclasses import dataclass

import click
import numpy as np

from . import bodies as _bodies
from . import busemann as _busemann
from . import ibody as _ibody
from . import ineq as _ineq
from . import radon as _radon
from .errors import InvalidSpec, KBodyError
from .symmetry import derive_seed

__all__ = ["RunConfig", "main", "run"]


@dataclass
class RunConfig:
    seed: int = 0
    grid: int = 20000
    subgrid: int = 4000
    opgrid: int = 500
    reg: float = 1e-3
    tol: float | None = None
    threads: int = 1
    fmt: str = "json"
    out: str | None = None

    def __post_init__(self):
        if min(self.grid, self.subgrid, self.opgrid) < 1:
            raise InvalidSpec("grid sizes must be >= 1")
        if self.threads < 1:
            raise InvalidSpec("threads must be >= 1")
        if self.fmt not in ("json", "csv"):
            raise InvalidSpec("format must be json or csv")


def _common(fn):
    fn = click.option("--seed", type=int, default=0, show_default=True,
                      help="Base RNG seed; equal seeds give identical bytes.")(fn)
    fn = click.option("--grid", type=int, default=20000, show_default=True,
                      help="Ambient sphere quadrature size.")(fn)
    fn = click.option("--subgrid", type=int, default=4000, show_default=True,
                      help="Sub-sphere quadrature size.")(fn)
    fn = click.option("--opgrid", type=int, default=500, show_default=True,
                      help="Operator / tabulation grid size.")(fn)
    fn = click.option("--reg", type=float, default=1e-3, show_default=True,
                      help="Relative Tikhonov regularization.")(fn)
    fn = click.option("--tol", type=float, default=None,
                      help="Override calibrated tolerances.")(fn)
    fn = click.option("--threads", type=int, default=1, show_default=True,
                      help="BLAS worker budget (advisory).")(fn)
    fn = click.option("--format", "fmt", type=click.Choice(["json", "csv"]),
                      default="json", show_default=True)(fn)
    fn = click.option("--out", type=click.Path(dir_okay=False), default=None,
                      help="Write the report here and a figure beside it.")(fn)
    return fn


def _config(kw) -> RunConfig:
    cfg = RunConfig(seed=kw.pop("seed"), grid=kw.pop("grid"),
                    subgrid=kw.pop("subgrid"), opgrid=kw.pop("opgrid"),
                    reg=kw.pop("reg"), tol=kw.pop("tol"),
                    threads=kw.pop("threads"), fmt=kw.pop("fmt"),
                    out=kw.pop("out"))
    if cfg.threads > 1:
        try:
            import threadpoolctl  # noqa: F401  (advisory only)
        except ImportError:
            pass
    return cfg


def _load_body(path: str) -> _bodies.StarBody:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            spec = json.load(fh)
    except OSError as exc:
        raise InvalidSpec(f"cannot read body file: {exc}", path) from exc
    except json.JSONDecodeError as exc:
        raise InvalidSpec(f"not valid JSON: {exc}", path) from exc
    return _bodies.body_from_spec(spec, base_dir=os.path.dirname(path) or ".")


def _parse_xi(text: str, ambient: int) -> np.ndarray:
    try:
        xi = np.array([float(t) for t in text.split(",")], dtype=float)
    except ValueError as exc:
        raise InvalidSpec(f"--xi must be comma-separated floats: {exc}") from exc
    if xi.size != ambient:
        raise InvalidSpec(f"--xi needs {ambient} coordinates, got {xi.size}")
    nrm = float(np.linalg.norm(xi))
    if nrm <= 0:
        raise InvalidSpec("--xi must be non-zero")
    return xi / nrm


def _parse_density(text: str | None, body: _bodies.StarBody, base: str):
    if text is None or text == "lebesgue":
        return _bodies.Lebesgue()
    kind, _, rest = text.partition(":")
    if kind == "gaussian":
        try:
            return _bodies.Gaussian(float(rest or 1.0))
        except ValueError as exc:
            raise InvalidSpec(f"bad gaussian width {rest!r}") from exc
    if kind == "power":
        parts = rest.split(",")
        try:
            l = float(parts[0])
        except (IndexError, ValueError) as exc:
            raise InvalidSpec(f"bad power exponent in {text!r}") from exc
        M = (_load_body(os.path.join(base, parts[1])) if len(parts) > 1
             else _bodies.Ball(body.dims))
        return _bodies.RadialPower(M, l)
    raise InvalidSpec(f"unknown density {text!r} "
                      "(use lebesgue, gaussian:s, power:l[,body.json])")


# ---------------------------------------------------------------------------
# Canonical serialization.
# ---------------------------------------------------------------------------

def _canon(value):
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.ndarray):
        return [_canon(v) for v in value.tolist()]
    if isinstance(value, dict):
        return {str(k): _canon(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_canon(v) for v in value]
    return value


def _json_text(record: dict) -> str:
    return json.dumps(_canon(record), sort_keys=True,
                      separators=(",", ":")) + "\n"


def _csv_text(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(c)) for c in columns])
    return buf.getvalue()


def _cell(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _emit(cfg: RunConfig, record: dict, rows: list[dict] | None = None,
          columns: list[str] | None = None, figure=None) -> None:
    """Print the report; with --out also write it and render a figure."""
    if cfg.fmt == "csv" and rows is not None:
        text = _csv_text(rows, columns)
    else:
        text = _json_text(record)
    sys.stdout.write(text)
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        if figure is not None:
            _render_figure(figure, os.path.splitext(cfg.out)[0] + ".png")


def _render_figure(spec, path: str) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    kind = spec["kind"]
    fig, ax = plt.subplots(figsize=(6.0, 4.0), dpi=120)
    if kind == "profile":
        for label, ys in spec["series"]:
            ax.plot(np.arange(len(ys)), np.sort(ys), label=label, lw=1.0)
        ax.set_xlabel("grid node (sorted)")
        ax.set_ylabel(spec.get("ylabel", "value"))
        ax.legend()
    elif kind == "bars":
        names = [n for n, _ in spec["values"]]
        vals = [v for _, v in spec["values"]]
        ax.bar(names, vals, color="#4878a8")
        ax.set_ylabel(spec.get("ylabel", "value"))
    elif kind == "stem":
        ys = np.asarray(spec["values"], dtype=float)
        nz = np.flatnonzero(ys > 0)
        ax.vlines(nz, 0.0, ys[nz], color="#4878a8", lw=1.0)
        ax.set_xlabel("atom index")
        ax.set_ylabel("weight")
    elif kind == "table":
        data = np.asarray(spec["matrix"], dtype=float)
        ax.imshow(data, cmap="RdYlGn", vmin=0.0, vmax=1.0, aspect="auto")
        ax.set_xticks(range(data.shape[1]),
                      [str(k) for k in spec["cols"]])
        ax.set_yticks(range(data.shape[0]),
                      [str(n) for n in spec["rows"]])
        ax.set_xlabel("kappa")
        ax.set_ylabel("n")
        for (i, j), v in np.ndenumerate(data):
            ax.text(j, i, "yes" if v > 0.5 else "no",
                    ha="center", va="center", fontsize=9)
    ax.set_title(spec.get("title", ""))
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _fail(exc: Exception, code: int) -> None:
    record = {"error": type(exc).__name__, "message": str(exc)}
    sys.stdout.write(_json_text(record))
    sys.exit(code)


def _guard(fn):
    """Map module errors to exit 1 and bad input to exit 2."""

    def wrapper(**kw):
        try:
            fn(**kw)
        except InvalidSpec as exc:
            _fail(exc, 2)
        except (KBodyError, ArithmeticError, ValueError) as exc:
            _fail(exc, 1)

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _operator(body, cfg) -> _radon.RadonOperator:
    return _radon.build_radon_operator(body.dims, cfg.opgrid, cfg.reg,
                                       seed=cfg.seed)


# ---------------------------------------------------------------------------
# Subcommands.
# ---------------------------------------------------------------------------

@click.group()
def main():
    """Balanced star bodies: sections, intersection bodies, inequalities."""


@main.command()
@click.argument("body_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--xi", required=True, help="Comma-separated direction.")
@_common
@_guard
def section(body_file, xi, **kw):
    """Central section volume of a body at a direction."""
    cfg = _config(kw)
    body = _load_body(body_file)
    direction = _parse_xi(xi, body.dims.ambient)
    val, err = _radon.section_volume_with_error(body, direction, cfg.subgrid,
                                                rng=cfg.seed)
    radius = (body.dims.kappa * val
              / _radon.surface_area(body.dims.kappa)) ** (1.0 / body.dims.kappa)
    record = {
        "kappa": body.dims.kappa, "n": body.dims.n,
        "xi": [float(x) for x in direction],
        "section": float(val), "stderr": float(err),
        "radius": float(radius), "seed": cfg.seed,
    }
    row = dict(record)
    row["xi"] = " ".join(repr(float(x)) for x in direction)
    _emit(cfg, record, [row],
          ["kappa", "n", "xi", "section", "stderr", "radius", "seed"],
          figure={"kind": "bars", "title": "central section",
                  "values": [("section", val), ("3*stderr", 3 * err)]})


@main.command()
@click.argument("body_file", type=click.Path(exists=True, dir_okay=False))
@_common
@_guard
def volume(body_file, **kw):
    """Volume of a body by polar-coordinate quadrature."""
    cfg = _config(kw)
    body = _load_body(body_file)
    rule = _radon.sphere_quadrature(body.dims.ambient, cfg.grid,
                                    "symmetrized_mc", cfg.seed, body.dims)
    val, err = _bodies.volume_with_error(body, rule)
    record = {"kappa": body.dims.kappa, "n": body.dims.n,
              "volume": float(val), "stderr": float(err), "seed": cfg.seed}
    _emit(cfg, record, [record],
          ["kappa", "n", "volume", "stderr", "seed"],
          figure={"kind": "bars", "title": "volume",
                  "values": [("volume", val), ("3*stderr", 3 * err)]})


@main.command()
@click.argument("body_file", type=click.Path(exists=True, dir_okay=False))
@_common
@_guard
def ibody(body_file, **kw):
    """Tabulate the intersection body on a fresh grid."""
    cfg = _config(kw)
    body = _load_body(body_file)
    tab = _ibody.intersection_body_of(body, cfg.opgrid, cfg.subgrid, cfg.seed)
    columns = [f"x{i + 1}" for i in range(body.dims.ambient)] + ["radial"]
    rows = [dict(zip(columns, [float(c) for c in node] + [float(r)]))
            for node, r in zip(tab.nodes, tab.values)]
    record = {
        "kappa": body.dims.kappa, "n": body.dims.n,
        "grid_size": int(tab.nodes.shape[0]),
        "radial_min": float(np.min(tab.values)),
        "radial_max": float(np.max(tab.values)),
        "seed": cfg.seed,
    }
    if cfg.out:
        stem = os.path.splitext(cfg.out)[0]
        csv_path = stem + ".grid.csv"
        _bodies.write_grid_csv(csv_path, tab.nodes, tab.values)
        record["csv"] = csv_path
    _emit(cfg, record, rows, columns,
          figure={"kind": "profile", "title": "intersection body radial values",
                  "ylabel": "radial", "series": [("I(K)", tab.values)]})


@main.command()
@click.argument("body_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--method", type=click.Choice(["ellipsoid", "measure"]),
              default="measure", show_default=True)
@_common
@_guard
def membership(body_file, method, **kw):
    """Certify membership in the intersection-body class."""
    cfg = _config(kw)
    body = _load_body(body_file)
    if method == "measure":
        op = _operator(body, cfg)
        cert = _ibody.membership_measure_nnls(body, op, tol=cfg.tol)
    else:
        grid = _ibody.make_orbit_grid(body.dims, cfg.opgrid,
                                      derive_seed(cfg.seed, "mem-grid"))
        directions = grid.nodes[:: max(1, grid.size // 256)]
        atoms = _ibody.default_ellipsoid_dictionary(body.dims, directions)
        cert = _ibody.membership_ellipsoid_nnls(body, atoms, tol=cfg.tol,
                                                nodes=grid.nodes,
                                                seed=cfg.seed)
    record = cert.to_dict()
    record.pop("dual_witness", None)
    record["seed"] = cfg.seed
    weights = cert.weights if cert.weights is not None else np.zeros(1)
    _emit(cfg, record, [record],
          ["method", "verdict", "residual", "tol_member", "tol_reject",
           "seed"],
          figure={"kind": "stem", "title": f"{method} weights "
                  f"({cert.verdict})", "values": weights})


@main.command()
@click.argument("k_file", type=click.Path(exists=True, dir_okay=False))
@click.argument("l_file", type=click.Path(exists=True, dir_okay=False))
@_common
@_guard
def bp(k_file, l_file, **kw):
    """Section domination vs volume comparison for two bodies."""
    cfg = _config(kw)
    K = _load_body(k_file)
    L = _load_body(l_file)
    op = _operator(K, cfg)
    report = _ineq.bp_check(K, L, op, profile_size=cfg.subgrid,
                            vol_size=cfg.grid, seed=cfg.seed)
    record = report.to_dict()
    record["seed"] = cfg.seed
    sk, _ = _radon.section_profile(K, op, cfg.subgrid,
                                   derive_seed(cfg.seed, "bp-sections"))
    sl, _ = _radon.section_profile(L, op, cfg.subgrid,
                                   derive_seed(cfg.seed, "bp-sections"))
    _emit(cfg, record, [record],
          ["section_margin", "section_tol", "volume_K", "volume_L",
           "volume_tol", "implication_holds", "seed"],
          figure={"kind": "profile", "title": "section profiles",
                  "ylabel": "section volume",
                  "series": [("K", sk), ("L", sl)]})


@main.command()
@click.argument("body_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--eps", type=float, default=None,
              help="Perturbation size; default runs a line search.")
@_common
@_guard
def counterexample(body_file, eps, **kw):
    """Shrink all sections of a rejected body while growing its volume."""
    cfg = _config(kw)
    L = _load_body(body_file)
    op = _operator(L, cfg)
    report = _ibody.construct_counterexample(L, op, epsilon=eps,
                                             profile_size=cfg.subgrid,
                                             vol_size=cfg.grid, seed=cfg.seed)
    record = report.to_dict()
    record["seed"] = cfg.seed
    K = report.body
    if cfg.out:
        stem = os.path.splitext(cfg.out)[0]
        csv_path = stem + ".grid.csv"
        radial = np.asarray(K.radial(op.nodes), dtype=float)
        _bodies.write_grid_csv(csv_path, op.nodes, radial)
        record["csv"] = csv_path
    sec_seed = derive_seed(cfg.seed, "sections")
    sk, _ = _radon.section_profile(K, op, cfg.subgrid, sec_seed)
    sl, _ = _radon.section_profile(L, op, cfg.subgrid, sec_seed)
    _emit(cfg, record, [record],
          ["epsilon", "max_section_excess", "section_tol", "volume_gap",
           "volume_gap_err", "volume_gap_reject", "volume_gap_reject_err",
           "convexity_ok", "sound", "seed"],
          figure={"kind": "profile", "title": "sections after perturbation",
                  "ylabel": "section volume",
                  "series": [("K", sk), ("L", sl)]})


@main.command()
@click.argument("body_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--density", default=None,
              help="lebesgue (default), gaussian:s, or power:l[,body.json].")
@_common
@_guard
def hyperplane(body_file, density, **kw):
    """Maximal-section bound for a certified body."""
    cfg = _config(kw)
    K = _load_body(body_file)
    op = _operator(K, cfg)
    cert = _ibody.membership_measure_nnls(K, op, tol=cfg.tol)
    dens = _parse_density(density, K, os.path.dirname(body_file) or ".")
    if isinstance(dens, _bodies.Lebesgue):
        report = _ineq.hyperplane_inequality(K, cert, op,
                                             profile_size=cfg.subgrid,
                                             vol_size=cfg.grid, seed=cfg.seed)
    else:
        report = _ineq.measure_hyperplane_inequality(
            K, dens, cert, op, profile_size=cfg.subgrid, vol_size=cfg.grid,
            seed=cfg.seed)
    record = report.to_dict()
    record["verdict"] = cert.verdict
    record["seed"] = cfg.seed
    _emit(cfg, record, [record],
          ["lhs", "rhs", "slack", "constant_used", "satisfied", "tol",
           "seed"],
          figure={"kind": "bars", "title": "hyperplane inequality",
                  "values": [("lhs", report.lhs), ("rhs", report.rhs)]})


@main.command()
@click.argument("body_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--trials", type=int, default=200, show_default=True)
@_common
@_guard
def busemann(body_file, trials, **kw):
    """Triangle-inequality check of the section boundary curve."""
    cfg = _config(kw)
    K = _load_body(body_file)
    check = _busemann.busemann_check(K, trials=trials, rng=cfg.seed,
                                     size=cfg.subgrid)
    record = check.to_dict()
    record["seed"] = cfg.seed
    _emit(cfg, record, [record],
          ["violation", "tol", "trials", "seed"],
          figure={"kind": "bars", "title": "triangle inequality",
                  "values": [("violation", check.violation),
                             ("tol", check.tol)]})


@main.command()
@click.option("--n", "n", type=int, required=True)
@click.option("--kappa", type=int, required=True)
@_common
@_guard
def constants(n, kappa, **kw):
    """Sharp section constant and its proven bracket."""
    cfg = _config(kw)
    ratio = _ineq.constant_ratio(n, kappa)
    import math as _math

    record = {"ratio": ratio, "lower": _math.exp(-kappa / 2.0), "upper": 1.0}
    _emit(cfg, record, [record], ["ratio", "lower", "upper"],
          figure={"kind": "bars", "title": f"constant (n={n}, kappa={kappa})",
                  "values": [("lower", record["lower"]),
                             ("ratio", ratio), ("upper", 1.0)]})


@main.command()
@click.option("--nmax", type=int, default=4, show_default=True)
@click.option("--kmax", type=int, default=3, show_default=True)
@_common
@_guard
def casetable(nmax, kmax, **kw):
    """Which (n, kappa) make every convex body an intersection body."""
    cfg = _config(kw)
    entries = _ibody.case_table(nmax, kmax)
    rows = [{"n": e.n, "kappa": e.kappa,
             "all_convex_are_intersection": e.all_convex_are_intersection}
            for e in entries]
    record = {"table": rows}
    matrix = [[1.0 if _ibody.convex_case_table(n, k).all_convex_are_intersection
               else 0.0 for k in range(1, kmax + 1)]
              for n in range(2, nmax + 1)]
    _emit(cfg, record, rows, ["n", "kappa", "all_convex_are_intersection"],
          figure={"kind": "table", "title": "all convex are intersection",
                  "matrix": matrix, "rows": list(range(2, nmax + 1)),
                  "cols": list(range(1, kmax + 1))})


def run(argv) -> int:
    """Programmatic entry point returning the exit code."""
    try:
        main.main(args=list(argv), standalone_mode=False)
    except SystemExit as exc:
        return int(exc.code or 0)
    except click.ClickException as exc:
        exc.show()
        return 2
    except (KBodyError, ArithmeticError, ValueError) as exc:
        _fail_noexit(exc)
        return 1
    return 0


def _fail_noexit(exc: Exception) -> None:
    sys.stdout.write(_json_text({"error": type(exc).__name__,
                                 "message": str(exc)}))


if __name__ == "__main__":
    main()
