"""File formats: density grids, item tables, edge lists and result exports."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidInput
from .laplacian import DensityGrid, GraphSpec, ItemSet


def _is_number(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


def _read_numeric_csv(path, delimiter=",") -> tuple:
    """Rows of a CSV as strings; a non-numeric first row is returned as the header."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh, delimiter=delimiter)
                if r and not r[0].lstrip().startswith("#") and any(c.strip() for c in r)]
    header = None
    if rows and not all(_is_number(c) for c in rows[0] if c.strip()):
        header, rows = rows[0], rows[1:]
    return header, rows


# --------------------------------------------------------------------------
# density grids
# --------------------------------------------------------------------------

def load_density_grid(path) -> DensityGrid:
    """JSON with ``dims``, ``spacing``, optional ``origin`` and either inline ``values``
    or a companion CSV (``values_file``, default: same stem with ``.csv``)."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        head = json.load(fh)
    for key in ("dims", "spacing"):
        if key not in head:
            raise InvalidInput(f"grid header lacks '{key}'")
    if "values" in head:
        values = np.asarray(head["values"], dtype=float)
    else:
        vpath = path.parent / head.get("values_file", path.with_suffix(".csv").name)
        if not vpath.exists():
            raise InvalidInput(f"grid values file {vpath} not found")
        _, rows = _read_numeric_csv(vpath)
        values = np.array([float(c) for r in rows for c in r if c.strip()])
    return DensityGrid(dims=tuple(head["dims"]), spacing=tuple(head["spacing"]),
                       origin=tuple(head.get("origin", [0.0] * len(head["dims"]))), values=values)


def save_density_grid(path, grid: DensityGrid, companion_csv: bool = False) -> None:
    path = Path(path)
    head = {"dims": list(grid.dims), "spacing": list(grid.spacing), "origin": list(grid.origin)}
    if companion_csv:
        vname = path.with_suffix(".csv").name
        head["values_file"] = vname
        with open(path.parent / vname, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["value"])
            for v in grid.values:
                w.writerow([repr(float(v))])
    else:
        head["values"] = [float(v) for v in grid.values]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(head, fh)
        fh.write("\n")


# --------------------------------------------------------------------------
# items
# --------------------------------------------------------------------------

def round_dedup(items: ItemSet, step: float) -> ItemSet:
    """Round coordinates to multiples of ``step`` and drop repeated rows (first kept)."""
    if not step > 0:
        raise InvalidInput("rounding step must be positive")
    X = np.round(items.items / step) * step
    _, first = np.unique(X, axis=0, return_index=True)
    keep = np.sort(first)
    ids = None if items.ids is None else [items.ids[i] for i in keep]
    return ItemSet(items=X[keep], ids=ids)


def load_items(path, id_column: bool = False, round_step: Optional[float] = None) -> ItemSet:
    """One item per CSV row; the first column is an identifier when ``id_column`` is set."""
    _, rows = _read_numeric_csv(path)
    if not rows:
        raise InvalidInput(f"{path} holds no items")
    ids = None
    if id_column:
        ids = [r[0] for r in rows]
        rows = [r[1:] for r in rows]
    try:
        X = np.array([[float(c) for c in r] for r in rows])
    except ValueError as exc:
        raise InvalidInput(f"non-numeric item coordinate in {path}: {exc}") from exc
    if X.ndim != 2:
        raise InvalidInput("every item row needs the same number of columns")
    items = ItemSet(items=X, ids=ids)
    if round_step is not None:
        items = round_dedup(items, round_step)
    return items


# --------------------------------------------------------------------------
# graphs
# --------------------------------------------------------------------------

def load_graph(path, n_nodes: Optional[int] = None, directed: bool = True) -> GraphSpec:
    """Tab-separated ``src dst [weight]`` with 0-based ids; ``#`` lines are comments."""
    src, dst, wt = [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t") if "\t" in line else line.split()
            if len(parts) not in (2, 3):
                raise InvalidInput(f"{path}:{lineno}: expected 2 or 3 fields")
            try:
                s, d = int(parts[0]), int(parts[1])
                w = float(parts[2]) if len(parts) == 3 else 1.0
            except ValueError as exc:
                raise InvalidInput(f"{path}:{lineno}: {exc}") from exc
            src.append(s)
            dst.append(d)
            wt.append(w)
    if not src:
        raise InvalidInput(f"{path} holds no edges")
    if n_nodes is None:
        n_nodes = max(max(src), max(dst)) + 1
    return GraphSpec(n_nodes=n_nodes, src=np.array(src), dst=np.array(dst),
                     weight=np.array(wt), directed=directed)


# --------------------------------------------------------------------------
# exports
# --------------------------------------------------------------------------

def _clean(x):
    """JSON-ready copy: arrays to lists, numpy scalars to Python numbers."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        x = float(x)
    if isinstance(x, float) and not np.isfinite(x):
        return None
    return x


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(obj), fh, indent=2)
        fh.write("\n")


def model_record(model, rates: Sequence[float], gaps: dict, **extra) -> dict:
    """Model export: beta, m, upsilon, a, M, rates, gaps, then ``extra`` keys."""
    rec = {
        "beta": model.beta,
        "m": model.m,
        "upsilon": model.upsilon,
        "a": model.a,
        "M": model.M,
        "rates": list(rates),
        "gaps": {str(k): v for k, v in sorted(gaps.items())},
    }
    rec.update(extra)
    return _clean(rec)


def write_assignments(path, model, ids: Optional[Sequence] = None,
                      coords: Optional[np.ndarray] = None) -> None:
    """Per-point CSV: id, optional coordinates, window values and hard label."""
    n, m = model.w.shape
    ids = list(range(n)) if ids is None else list(ids)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        head = ["id"]
        if coords is not None:
            head += [f"x{k}" for k in range(coords.shape[1])]
        w.writerow(head + [f"w_{a}" for a in range(m)] + ["label"])
        for j in range(n):
            row = [ids[j]]
            if coords is not None:
                row += [repr(float(c)) for c in coords[j]]
            row += [repr(float(v)) for v in model.w[j]] + [int(model.labels[j])]
            w.writerow(row)


def write_silhouette(csv_path, json_path, report, ids: Optional[Sequence] = None, labels=None) -> None:
    n = report.per_point.size
    ids = list(range(n)) if ids is None else list(ids)
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "label", "silhouette"])
        for j in range(n):
            w.writerow([ids[j], "" if labels is None else int(labels[j]), repr(float(report.per_point[j]))])
    write_json(json_path, {
        "overall_mean": report.overall_mean,
        "per_cluster_mean": {str(c): v for c, v in zip(report.clusters.tolist(), report.per_cluster_mean)},
    })
