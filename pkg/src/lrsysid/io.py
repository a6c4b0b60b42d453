"""File formats: dataset CSV (+ JSON sidecar), model JSON, report JSON."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .errors import DimensionError, LrsysidError
from .models import FUNCS, Dataset, Model, ModelStructure
from .polyalg import Monomial


class FormatError(LrsysidError, ValueError):
    """Malformed input file; the message names the offending row/column."""


def _num(v: float) -> str:
    return repr(float(v))  # shortest round-trip repr: exact in 17 significant digits


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else ("inf" if f > 0 else "-inf" if f < 0 else "nan")
    return obj


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2) + "\n")


# ---------------------------------------------------------------------- datasets


def sidecar_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_suffix(".json")


def write_dataset(data: Dataset, path) -> None:
    """CSV ``t,u1..,y1..,x1..`` plus ``<stem>.json`` with the metadata."""
    path = Path(path)
    T = data.T
    cols = (["t"] + [f"u{i + 1}" for i in range(data.n_u)] + [f"y{i + 1}" for i in range(data.n_y)]
            + ([f"x{i + 1}" for i in range(data.x.shape[1])] if data.x is not None else []))
    blocks = [np.arange(T)[:, None] * data.sample_time, data.u, data.y]
    if data.x is not None:
        blocks.append(data.x)
    M = np.hstack(blocks)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in M:
            w.writerow([_num(v) for v in row])
    meta = dict(data.meta)
    side = {"sample_time": data.sample_time, "seed": meta.pop("seed", None),
            "generator": meta.pop("generator", None), "params": meta}
    dump_json(side, sidecar_path(path))


def read_dataset(path, sample_time: float | None = None) -> Dataset:
    """Inverse of :func:`write_dataset`; the sidecar is optional."""
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from None
    with fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    groups = {"u": [], "y": [], "x": []}
    t_col = None
    for j, name in enumerate(header):
        if name == "t":
            t_col = j
            continue
        key, num = name[:1], name[1:]
        if key not in groups or not num.isdigit():
            raise FormatError(f"{path}: unrecognized column {j + 1} header {name!r}")
        groups[key].append((int(num), j))
    for key in ("u", "y"):
        if not groups[key]:
            raise FormatError(f"{path}: no {key} columns")
    for key, items in groups.items():
        if sorted(n for n, _ in items) != list(range(1, len(items) + 1)):
            raise FormatError(f"{path}: {key} columns must be numbered 1..{len(items)}")
    data = np.empty((len(rows) - 1, len(header)))
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise FormatError(f"{path}: row {i} has {len(row)} fields, expected {len(header)}")
        for j, cell in enumerate(row):
            try:
                data[i - 2, j] = float(cell)
            except ValueError:
                raise FormatError(f"{path}: row {i}, column {j + 1} ({header[j]}): "
                                  f"not a number: {cell!r}") from None
    if not np.all(np.isfinite(data)):
        i, j = np.argwhere(~np.isfinite(data))[0]
        raise FormatError(f"{path}: row {i + 2}, column {j + 1} ({header[j]}) is not finite")

    def take(key):
        items = sorted(groups[key])
        return data[:, [j for _, j in items]] if items else None

    meta, Ts = {}, sample_time
    side = sidecar_path(path)
    if side.exists():
        info = json.loads(side.read_text())
        meta = dict(info.get("params") or {})
        for k in ("seed", "generator"):
            if info.get(k) is not None:
                meta[k] = info[k]
        if Ts is None and info.get("sample_time") is not None:
            Ts = float(info["sample_time"])
    if Ts is None:
        Ts = float(data[1, t_col] - data[0, t_col]) if t_col is not None and len(data) > 1 else 1.0
    try:
        return Dataset(take("u"), take("y"), take("x"), Ts, meta)
    except DimensionError as exc:
        raise FormatError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------- models


def structure_to_dict(ms: ModelStructure) -> dict:
    return {
        "n_x": ms.n_x, "n_u": ms.n_u, "n_y": ms.n_y,
        "degrees": dict(ms.degrees), "separable_f": bool(ms.separable_f), "kind": ms.kind,
        "bases": {fn: [[list(p) for p in m.items] for m in ms.bases[fn]] for fn in FUNCS},
        "index": {fn: ms.index[fn].tolist() for fn in FUNCS},
        "fixed": {fn: ms.fixed[fn].tolist() for fn in FUNCS},
    }


def structure_from_dict(d: dict) -> ModelStructure:
    try:
        bases = {fn: tuple(Monomial([tuple(p) for p in m]) for m in d["bases"][fn]) for fn in FUNCS}
        index = {fn: np.asarray(d["index"][fn], dtype=np.int64).reshape(-1, len(bases[fn]))
                 for fn in FUNCS}
        fixed = {fn: np.asarray(d["fixed"][fn], dtype=float).reshape(index[fn].shape) for fn in FUNCS}
        return ModelStructure(int(d["n_x"]), int(d["n_u"]), int(d["n_y"]), bases, index, fixed,
                              kind=d.get("kind", "custom"), degrees=dict(d.get("degrees") or {}),
                              separable_f=bool(d.get("separable_f", True)))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed model structure: {exc}") from None


def model_to_dict(model: Model) -> dict:
    return {
        "structure": structure_to_dict(model.structure),
        "rho": [float(v) for v in model.rho],
        "P": np.asarray(model.P, float).tolist(),
        "mu": float(model.mu),
    }


def model_from_dict(d: dict) -> Model:
    try:
        ms = structure_from_dict(d["structure"])
        rho = np.asarray(d["rho"], float)
        P = np.asarray(d["P"], float).reshape(-1, ms.n_x) if np.size(d["P"]) else np.zeros((0, 0))
        mu = float(d["mu"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed model file: {exc}") from None
    if rho.size != ms.n_rho:
        raise FormatError(f"model has {rho.size} parameters, structure expects {ms.n_rho}")
    return Model(ms, rho, P, mu)


def save_model(model: Model, path) -> None:
    dump_json(model_to_dict(model), path)


def load_model(path) -> Model:
    try:
        return model_from_dict(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read model {path}: {exc}") from None
