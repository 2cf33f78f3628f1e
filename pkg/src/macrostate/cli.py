"""Command-line driver: ``macrostate {gaps,fit,partition,synth,validate}``.

Every command writes its outputs to ``--output-dir`` together with
``config.txt``, a ``key=value`` echo of the effective configuration that
``--config`` accepts back.  Errors are reported as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import io
from .errors import InvalidInput, MacrostateError, NoSeparableStructure
from .laplacian import DEFAULT_FLOOR_RATIO, DEFAULT_OUTLIER_RATIO, NORMALIZATIONS
from .mixture import hard_labels
from .pipeline import (
    RunConfig,
    fit_system,
    load_source,
    load_truth,
    run_scan,
    scan_selections,
    system_builder,
    validate_fit,
    write_truth,
)
from .qp import CORE_LEVEL, DEFAULT_N_STARTS, DEFAULT_TOL, RANK_TOL
from .spectra import DEFAULT_GAP_CUTOFF, DEFAULT_M_MAX, write_gap_csv
from .synthetic import PROFILES, SyntheticSpec, generate_synthetic_mixture
from .validation import kmeans_baseline, relative_error, silhouette

log = logging.getLogger("macrostate")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NO_STRUCTURE = 2

BOOL_FLAGS = ("id_column", "crisp", "undirected", "verbose")


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def _add_input(p, default_kind="grid"):
    g = p.add_argument_group("input")
    g.add_argument("--input-kind", choices=("grid", "items", "graph"), default=default_kind)
    g.add_argument("--input", help="grid JSON, item CSV or edge-list TSV")
    g.add_argument("--id-column", action="store_true", help="first item CSV column is an identifier")
    g.add_argument("--round-dedup", type=float, default=None, metavar="STEP",
                   help="round item coordinates to multiples of STEP and drop duplicates")
    g.add_argument("--undirected", action="store_true", help="edge list is already symmetric")
    g.add_argument("--truth", help="CSV of weighted ground-truth components, one column each")


def _add_system(p):
    g = p.add_argument_group("system")
    g.add_argument("--beta", type=float, default=1.0)
    g.add_argument("--kernel", default="gaussian")
    g.add_argument("--scale", type=float, default=1.0, help="kernel length scale")
    g.add_argument("--hard-threshold", type=float, default=0.0, help="zero kernel entries below this")
    g.add_argument("--normalization", choices=NORMALIZATIONS, default=None)
    g.add_argument("--outlier-ratio", type=float, default=DEFAULT_OUTLIER_RATIO, help="0 disables")
    g.add_argument("--floor-ratio", type=float, default=DEFAULT_FLOOR_RATIO)
    g.add_argument("--method", choices=("auto", "dense", "iterative"), default="auto")


def _add_gaps(p):
    g = p.add_argument_group("model order")
    g.add_argument("--m-max", type=int, default=DEFAULT_M_MAX)
    g.add_argument("--gap-cutoff", type=float, default=DEFAULT_GAP_CUTOFF)


def _add_optimizer(p):
    g = p.add_argument_group("optimiser")
    g.add_argument("--m", type=int, default=None, help="skip gap selection and use this m")
    g.add_argument("--n-starts", type=int, default=DEFAULT_N_STARTS)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tol", type=float, default=DEFAULT_TOL)
    g.add_argument("--rank-tol", type=float, default=RANK_TOL)
    g.add_argument("--core-level", type=float, default=CORE_LEVEL)
    g.add_argument("--crisp", action="store_true", help="report hard-thresholded components")


def _add_common(p):
    p.add_argument("--config", help="key=value file; explicit flags override it")
    p.add_argument("--output-dir", default=".")
    p.add_argument("--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="macrostate", description="Macrostate clustering toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gaps", help="tabulate spectral gaps over a beta grid")
    _add_common(p)
    _add_input(p)
    _add_system(p)
    _add_gaps(p)
    p.add_argument("--beta-grid", default=None, metavar="START:STOP:COUNT[:log]")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_gaps)

    p = sub.add_parser("fit", help="fit a macrostate mixture model")
    _add_common(p)
    _add_input(p)
    _add_system(p)
    _add_gaps(p)
    _add_optimizer(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("partition", help="partition a graph")
    _add_common(p)
    _add_input(p, default_kind="graph")
    _add_system(p)
    _add_gaps(p)
    _add_optimizer(p)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("synth", help="generate a synthetic tri-mixture density grid")
    _add_common(p)
    p.add_argument("--dims", default="200,200")
    p.add_argument("--extent", type=float, default=10.0)
    p.add_argument("--profiles", default=",".join(SyntheticSpec.profiles),
                   help=f"comma list from {sorted(PROFILES)}")
    p.add_argument("--bumps", type=int, default=3)
    p.add_argument("--length-range", default="0.8,1.6")
    p.add_argument("--spread", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("validate", help="score an assignment file")
    _add_common(p)
    _add_input(p, default_kind="items")
    p.add_argument("--assignments", required=False, help="assignments CSV written by fit")
    p.add_argument("--kmeans-seed", type=int, default=0)
    p.set_defaults(func=cmd_validate)
    return parser


def read_config(path) -> dict:
    """``key=value`` lines (``#`` comments); keys may use dashes or underscores."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidInput(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value.strip("\"'")
    return out


def _apply_config(sub: argparse.ArgumentParser, values: dict) -> None:
    known = {a.dest for a in sub._actions}
    defaults = {}
    for key, value in values.items():
        if key in ("config", "command", "func"):
            continue
        if key == "directed":
            key, value = "undirected", str(value.lower() in ("false", "0", "no"))
        if key not in known:
            raise InvalidInput(f"unknown config key {key!r}")
        if key in BOOL_FLAGS:
            defaults[key] = str(value).lower() in ("true", "1", "yes")
        elif value.lower() == "none":
            defaults[key] = None
        else:
            defaults[key] = value  # argparse converts string defaults with the option's type
    sub.set_defaults(**defaults)


def parse_args(argv):
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config and known.command:
        subs = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
        if known.command in subs.choices:
            _apply_config(subs.choices[known.command], read_config(known.config))
    return parser.parse_args(argv)


def run_config(args) -> RunConfig:
    return RunConfig(
        input_kind=args.input_kind, input=args.input, beta=args.beta,
        beta_grid=getattr(args, "beta_grid", None), m_max=args.m_max, m=getattr(args, "m", None),
        gap_cutoff=args.gap_cutoff, kernel=args.kernel, scale=args.scale,
        hard_threshold=args.hard_threshold, normalization=args.normalization,
        outlier_ratio=args.outlier_ratio, floor_ratio=args.floor_ratio,
        n_starts=getattr(args, "n_starts", DEFAULT_N_STARTS), seed=getattr(args, "seed", 0),
        tol=getattr(args, "tol", DEFAULT_TOL), rank_tol=getattr(args, "rank_tol", RANK_TOL),
        core_level=getattr(args, "core_level", CORE_LEVEL), id_column=args.id_column,
        round_dedup=args.round_dedup, directed=not args.undirected,
        crisp=getattr(args, "crisp", False), truth=args.truth, method=args.method,
        workers=getattr(args, "workers", 1), output_dir=args.output_dir)


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def _outdir(args) -> Path:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(out: Path, args) -> None:
    """Write the effective flags as ``key=value`` lines."""
    skip = {"command", "func", "config"}
    with open(out / "config.txt", "w", encoding="utf-8") as fh:
        for key, value in sorted(vars(args).items()):
            if key in skip or value is None:
                continue
            if isinstance(value, bool):
                value = str(value).lower()
            fh.write(f"{key.replace('_', '-')}={value}\n")


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _fit_record(result, cfg: RunConfig, args) -> dict:
    sol = result.solution
    model = result.output_model
    return io.model_record(
        model, result.profile.rates, result.profile.gaps,
        m_source="override" if cfg.m else "gap_cutoff",
        start_index=sol.start_index, n_starts=cfg.n_starts, seed=cfg.seed,
        det_abs=sol.det_abs, fw_iterations=sol.iterations, crisp=model.thresholded,
        source_kind=result.system.source_kind, n_points=result.system.n,
        dropped=result.system.dropped, validation=result.validation,
        config={k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command", "config")},
        timestamp=_timestamp())


def _fit(args):
    cfg = run_config(args)
    source = load_source(cfg)
    system = system_builder(source, cfg)(cfg.beta)
    result = fit_system(system, cfg)
    validate_fit(result, source)
    return cfg, source, result


def _write_components(path, result, coords, cell_volume=None) -> None:
    """Weighted components ``a_k f_k`` per point; grids also get densities per unit volume."""
    model = result.output_model
    A = model.weighted_components()
    cols = [A]
    head = [f"component_{a}" for a in range(model.m)]
    if cell_volume is not None:
        cols.append(A / cell_volume)
        head += [f"density_{a}" for a in range(model.m)]
    A = np.hstack(cols)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        lead = ["id"] + ([f"x{k}" for k in range(coords.shape[1])] if coords is not None else [])
        w.writerow(lead + head)
        for j in range(model.n):
            row = [int(result.system.nodes[j])]
            if coords is not None:
                row += [repr(float(c)) for c in coords[j]]
            w.writerow(row + [repr(float(v)) for v in A[j]])


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_gaps(args) -> int:
    cfg = run_config(args)
    out = _outdir(args)
    source = load_source(cfg)
    scan = run_scan(source, cfg)
    if len(scan.errors) == scan.betas.size:
        # nothing could be computed: report the first failure
        raise _Reported(scan.errors[0])
    write_gap_csv(out / "gaps.csv", scan)
    selected = scan_selections(scan, cfg.gap_cutoff)
    io.write_json(out / "gaps.json", {
        "betas": scan.betas, "gap_cutoff": cfg.gap_cutoff, "selected_m": selected,
        "errors": {str(float(scan.betas[c])): e for c, e in sorted(scan.errors.items())},
    })
    _echo_config(out, args)
    if all(m is None for m in selected):
        print(json.dumps(NoSeparableStructure(f"no gap exceeds {cfg.gap_cutoff} at any beta").to_dict()),
              file=sys.stderr)
        return EXIT_NO_STRUCTURE
    return EXIT_OK


def cmd_fit(args) -> int:
    out = _outdir(args)
    cfg, source, result = _fit(args)
    io.write_json(out / "model.json", _fit_record(result, cfg, args))
    coords = source.coordinates()
    coords = coords[result.system.nodes] if coords is not None else None
    ids = source.ids
    ids = [ids[i] for i in result.system.nodes] if ids is not None else list(result.system.nodes)
    io.write_assignments(out / "assignments.csv", result.output_model, ids=ids, coords=coords)
    vol = float(np.prod(source.data.spacing)) if source.kind == "grid" else None
    _write_components(out / "components.csv", result, coords, vol)
    if result.validation:
        io.write_json(out / "validation.json", result.validation)
    _echo_config(out, args)
    return EXIT_OK


def cmd_partition(args) -> int:
    out = _outdir(args)
    cfg, source, result = _fit(args)
    model = result.output_model
    nodes = result.system.nodes
    labels = model.labels
    io.write_json(out / "model.json", _fit_record(result, cfg, args))
    with open(out / "partition.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "cluster"] + [f"w_{a}" for a in range(model.m)])
        for j, node in enumerate(nodes):
            w.writerow([int(node), int(labels[j])] + [repr(float(v)) for v in model.w[j]])
    sizes = np.bincount(labels, minlength=model.m)
    io.write_json(out / "clusters.json", {"m": model.m, "beta": model.beta, "upsilon": model.upsilon,
                                          "sizes": sizes, "dropped_nodes": result.system.dropped})
    # sparsity-pattern plot data: positions in input order and grouped by cluster
    order = np.lexsort((nodes, labels))
    new_pos = np.empty(nodes.size, dtype=np.int64)
    new_pos[order] = np.arange(nodes.size)
    pos = {int(n): j for j, n in enumerate(nodes)}
    g = source.data
    with open(out / "sparsity.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["src", "dst", "src_reordered", "dst_reordered", "src_cluster", "dst_cluster"])
        for s, d in zip(g.src.tolist(), g.dst.tolist()):
            if s in pos and d in pos:
                i, j = pos[s], pos[d]
                w.writerow([s, d, int(new_pos[i]), int(new_pos[j]), int(labels[i]), int(labels[j])])
    _echo_config(out, args)
    return EXIT_OK


def _pair(text, kind=float):
    parts = [kind(p) for p in str(text).split(",") if p.strip()]
    if len(parts) != 2:
        raise InvalidInput(f"expected two comma-separated values, got {text!r}")
    return tuple(parts)


def cmd_synth(args) -> int:
    out = _outdir(args)
    spec = SyntheticSpec(dims=_pair(args.dims, int), extent=args.extent,
                         profiles=tuple(p.strip() for p in args.profiles.split(",") if p.strip()),
                         bumps=args.bumps, length_range=_pair(args.length_range),
                         spread=args.spread, seed=args.seed)
    grid, truth = generate_synthetic_mixture(spec)
    io.save_density_grid(out / "grid.json", grid)
    write_truth(out / "truth.csv", truth)
    _echo_config(out, args)
    return EXIT_OK


def _read_assignments(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], rows[1:]
    wcols = [i for i, h in enumerate(head) if h.startswith("w_")]
    if "label" not in head:
        raise InvalidInput(f"{path} has no label column")
    lab = head.index("label")
    W = np.array([[float(r[i]) for i in wcols] for r in body]) if wcols else None
    labels = np.array([int(r[lab]) for r in body])
    ids = [r[0] for r in body]
    return ids, W, labels


def cmd_validate(args) -> int:
    out = _outdir(args)
    if not args.assignments:
        raise InvalidInput("--assignments is required")
    ids, W, labels = _read_assignments(args.assignments)
    cfg = RunConfig(input_kind=args.input_kind, input=args.input, id_column=args.id_column,
                    round_dedup=args.round_dedup, directed=not args.undirected, truth=args.truth)
    source = load_source(cfg)
    summary = {}
    if source.kind == "items":
        X = source.data.items
        keep = np.array([int(i) for i in ids]) if source.data.ids is None else \
            np.array([list(source.data.ids).index(i) for i in ids])
        X = X[keep]
        rep = silhouette(X, labels)
        io.write_silhouette(out / "silhouette.csv", out / "silhouette.json", rep, ids=ids, labels=labels)
        k = np.unique(labels).size
        km = kmeans_baseline(X, k, seed=args.kmeans_seed)
        summary.update(silhouette=rep.overall_mean, silhouette_kmeans=silhouette(X, km).overall_mean, k=k)
    if source.truth is not None:
        if source.kind != "grid" or W is None:
            raise InvalidInput("relative error needs a grid input and window columns")
        keep = np.array([int(i) for i in ids])
        dens = source.data.values[keep] / source.data.values[keep].sum()
        est = W * dens[:, None]
        summary["relative_error"] = relative_error(est, source.truth[keep])
        hard = np.zeros_like(W)
        hard[np.arange(W.shape[0]), hard_labels(W)] = 1.0
        summary["relative_error_crisp"] = relative_error(hard * dens[:, None], source.truth[keep])
    io.write_json(out / "validation.json", summary)
    _echo_config(out, args)
    return EXIT_OK


class _Reported(Exception):
    """An error already in dictionary form."""

    def __init__(self, payload: dict):
        super().__init__(payload.get("message", ""))
        self.payload = payload


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except MacrostateError as exc:
        print(json.dumps(exc.to_dict()), file=sys.stderr)
        return EXIT_ERROR
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except _Reported as exc:
        print(json.dumps(exc.payload), file=sys.stderr)
    except MacrostateError as exc:
        print(json.dumps(exc.to_dict()), file=sys.stderr)
    except OSError as exc:
        print(json.dumps({"error": "IOError", "message": str(exc)}), file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
