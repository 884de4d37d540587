"""Run configuration files and data export.

Configuration is a single JSON document::

    {
      "model": {
        "patches": [{"lambda": 1.5, "gamma": 1.0}, {"lambda": 2.0, "gamma": 1.0}],
        "adjacency": [[0, 1], [1, 0]],
        "nu_s": 0.0001,
        "nu_i": 0.0001
      },
      "initial": {"s": [0.4, 0.4], "i": [0.1, 0.1], "mass": 1.0},
      "sim": {"n": 1000, "t_max": 10, "seed": 42, "record": "grid:0.1"},
      "ode": {"t_max": 100, "method": "rk45", "rel_tol": 1e-8, "abs_tol": 1e-10},
      "lln": {"populations": [100, 1000], "replicates": 20, "t_max": 10, "seed": 1}
    }

Only ``model`` is required. Unknown keys are rejected.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from . import lln, ssa
from .errors import ParseError, ValidationError
from .model import ContinuousState, Network, PatchParams, ValidatedModel, validate

_SECTIONS = {"model", "initial", "sim", "ode", "lln"}
_MODEL_KEYS = {"patches", "adjacency", "nu_s", "nu_i"}
_PATCH_KEYS = {"lambda", "gamma"}
_INITIAL_KEYS = {"s", "i", "mass"}
_SIM_KEYS = {"n", "t_max", "seed", "record"}
_ODE_KEYS = {"t_max", "method", "dt", "rel_tol", "abs_tol", "record_dt"}
_LLN_KEYS = {"populations", "replicates", "t_max", "grid_dt", "seed"}


@dataclass
class RunConfig:
    model: ValidatedModel
    initial: ContinuousState | None
    mass: float
    sim: dict
    ode: dict
    lln: dict
    normalized: dict

    @property
    def config_hash(self) -> str:
        return config_hash(self.normalized)


def config_hash(normalized: dict) -> str:
    blob = json.dumps(normalized, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# -- field checking -----------------------------------------------------------

def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ValidationError(f"{where}: expected an object, got {type(obj).__name__}")
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ValidationError(f"{where}: unknown key(s) {', '.join(map(repr, unknown))}")


def _number(obj, key, where, *, default=None, required=False, minimum=None, strict=False):
    if key not in obj:
        if required:
            raise ValidationError(f"{where}.{key}: missing required field")
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ValidationError(f"{where}.{key}: expected a finite number, got {v!r}")
    if minimum is not None and (v < minimum or (strict and v == minimum)):
        op = ">" if strict else ">="
        raise ValidationError(f"{where}.{key}: must be {op} {minimum}, got {v!r}")
    return float(v)


def _integer(obj, key, where, *, default=None, required=False, minimum=None):
    if key not in obj:
        if required:
            raise ValidationError(f"{where}.{key}: missing required field")
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValidationError(f"{where}.{key}: expected an integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ValidationError(f"{where}.{key}: must be >= {minimum}, got {v!r}")
    return v


def _vector(obj, key, where, length=None):
    if key not in obj:
        raise ValidationError(f"{where}.{key}: missing required field")
    v = obj[key]
    if not isinstance(v, list) or not all(
        isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x) for x in v
    ):
        raise ValidationError(f"{where}.{key}: expected a list of finite numbers")
    if length is not None and len(v) != length:
        raise ValidationError(f"{where}.{key}: expected {length} entries, got {len(v)}")
    return [float(x) for x in v]


def _parse_model(obj) -> tuple[ValidatedModel, dict]:
    _check_keys(obj, _MODEL_KEYS, "model")
    patches = obj.get("patches")
    if not isinstance(patches, list) or not patches:
        raise ValidationError("model.patches: expected a non-empty list")
    parsed = []
    for j, p in enumerate(patches):
        where = f"model.patches[{j}]"
        _check_keys(p, _PATCH_KEYS, where)
        lam = _number(p, "lambda", where, required=True)
        gamma = _number(p, "gamma", where, required=True)
        for name, v in (("lambda", lam), ("gamma", gamma)):
            if not v > 0:
                raise ValidationError(f"{where}.{name}: patch {j} rate must be > 0, got {v!r}")
        parsed.append(PatchParams(lam, gamma))
    ell = len(parsed)
    adj = obj.get("adjacency")
    if adj is None or adj == [] or adj == [[]]:
        if ell != 1:
            raise ValidationError("model.adjacency: required when there is more than one patch")
        adj = [[0.0]]
    if not isinstance(adj, list) or not all(isinstance(r, list) for r in adj):
        raise ValidationError("model.adjacency: expected a row-major list of rows")
    for r, row in enumerate(adj):
        _vector({"row": row}, "row", f"model.adjacency[{r}]", ell)
    if len(adj) != ell:
        raise ValidationError(f"model.adjacency: expected {ell} rows, got {len(adj)}")
    adj = [[float(x) for x in row] for row in adj]
    nu_s = _number(obj, "nu_s", "model", default=0.0, minimum=0.0)
    nu_i = _number(obj, "nu_i", "model", default=0.0, minimum=0.0)
    model = validate(parsed, Network(np.array(adj), nu_s, nu_i))
    normalized = {
        "patches": [{"lambda": p.lam, "gamma": p.gamma} for p in parsed],
        "adjacency": adj,
        "nu_s": nu_s,
        "nu_i": nu_i,
    }
    return model, normalized


def parse_config_text(text: str) -> RunConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno, exc.colno) from None
    return parse_config_dict(doc)


def parse_config_dict(doc: Any) -> RunConfig:
    _check_keys(doc, _SECTIONS, "config")
    if "model" not in doc:
        raise ValidationError("config.model: missing required section")
    model, norm_model = _parse_model(doc["model"])
    ell = model.ell
    normalized: dict = {"model": norm_model}

    initial = None
    mass = 1.0
    if "initial" in doc:
        sec = doc["initial"]
        _check_keys(sec, _INITIAL_KEYS, "initial")
        s = _vector(sec, "s", "initial", ell)
        i = _vector(sec, "i", "initial", ell)
        if any(x < 0 for x in s + i):
            raise ValidationError("initial: proportions must be nonnegative")
        mass = _number(sec, "mass", "initial", default=1.0, minimum=0.0, strict=True)
        initial = ContinuousState(s, i)
        normalized["initial"] = {"s": s, "i": i, "mass": mass}

    sim = {}
    if "sim" in doc:
        sec = doc["sim"]
        _check_keys(sec, _SIM_KEYS, "sim")
        sim = {
            "n": _integer(sec, "n", "sim", minimum=1),
            "t_max": _number(sec, "t_max", "sim", minimum=0.0),
            "seed": _integer(sec, "seed", "sim", default=0, minimum=0),
            "record": sec.get("record", "every"),
        }
        ssa.parse_recording(str(sim["record"]))
        normalized["sim"] = {k: v for k, v in sim.items() if v is not None}

    ode_sec = {}
    if "ode" in doc:
        sec = doc["ode"]
        _check_keys(sec, _ODE_KEYS, "ode")
        method = sec.get("method", "rk45")
        if method not in ("rk45", "rk4"):
            raise ValidationError(f"ode.method: expected 'rk45' or 'rk4', got {method!r}")
        ode_sec = {
            "t_max": _number(sec, "t_max", "ode", minimum=0.0),
            "method": method,
            "dt": _number(sec, "dt", "ode", minimum=0.0, strict=True),
            "rel_tol": _number(sec, "rel_tol", "ode", default=1e-8, minimum=0.0, strict=True),
            "abs_tol": _number(sec, "abs_tol", "ode", default=1e-10, minimum=0.0, strict=True),
            "record_dt": _number(sec, "record_dt", "ode", minimum=0.0, strict=True),
        }
        if method == "rk4" and ode_sec["dt"] is None:
            raise ValidationError("ode.dt: required for method 'rk4'")
        normalized["ode"] = {k: v for k, v in ode_sec.items() if v is not None}

    lln_sec = {}
    if "lln" in doc:
        sec = doc["lln"]
        _check_keys(sec, _LLN_KEYS, "lln")
        pops = sec.get("populations")
        if pops is not None and (
            not isinstance(pops, list) or not all(isinstance(p, int) and not isinstance(p, bool) and p >= 1 for p in pops)
        ):
            raise ValidationError("lln.populations: expected a list of positive integers")
        lln_sec = {
            "populations": pops,
            "replicates": _integer(sec, "replicates", "lln", minimum=1),
            "t_max": _number(sec, "t_max", "lln", minimum=0.0, strict=True),
            "grid_dt": _number(sec, "grid_dt", "lln", minimum=0.0, strict=True),
            "seed": _integer(sec, "seed", "lln", default=0, minimum=0),
        }
        normalized["lln"] = {k: v for k, v in lln_sec.items() if v is not None}

    return RunConfig(model, initial, mass, sim, ode_sec, lln_sec, normalized)


def parse_config(path) -> RunConfig:
    """Read and validate a JSON run configuration.

    Raises ``ParseError`` (with line and column) for malformed JSON and
    ``ValidationError`` naming the offending field otherwise. ``OSError``
    propagates for unreadable files.
    """
    text = Path(path).read_text(encoding="utf-8")
    return parse_config_text(text)


def write_config(cfg: RunConfig, path=None) -> str:
    """Serialise the normalised configuration (defaults filled in)."""
    text = json.dumps(cfg.normalized, indent=2, sort_keys=True) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8", newline="\n")
    return text


def model_to_dict(model: ValidatedModel) -> dict:
    return {
        "patches": [{"lambda": p.lam, "gamma": p.gamma} for p in model.patches],
        "adjacency": model.adjacency.tolist(),
        "nu_s": model.nu_s,
        "nu_i": model.nu_i,
    }


# -- CSV --------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_trajectory_csv(traj, path, metadata: dict | None = None) -> None:
    """Write ``t,s_1,i_1,...,s_ell,i_ell`` rows preceded by ``#`` metadata lines.

    Accepts any trajectory with ``times`` and a (records, 2*ell) array in
    ``counts`` (integer) or ``values`` (float).
    """
    data = traj.counts if hasattr(traj, "counts") else traj.values
    if len(traj.times) == 0:
        raise ValidationError("cannot write an empty trajectory")
    ell = data.shape[1] // 2
    header = ["t"] + [f"{c}_{j + 1}" for j in range(ell) for c in ("s", "i")]
    order = [c for j in range(ell) for c in (j, ell + j)]
    lines = [f"# {k}: {v}" for k, v in (metadata or {}).items()]
    lines.append(",".join(header))
    is_int = np.issubdtype(data.dtype, np.integer)
    for t, row in zip(traj.times, data):
        cells = [format(float(t), ".17g")]
        cells += [str(int(row[c])) if is_int else format(float(row[c]), ".17g") for c in order]
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_trajectory_csv(path) -> tuple[dict, np.ndarray, np.ndarray]:
    """Inverse of :func:`write_trajectory_csv`: ``(metadata, times, [s..., i...])``."""
    meta = {}
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition(":")
                meta[key.strip()] = value.strip()
            elif line.startswith("t,"):
                continue
            elif line:
                rows.append([float(x) for x in line.split(",")])
    arr = np.array(rows)
    times = arr[:, 0]
    inter = arr[:, 1:]
    ell = inter.shape[1] // 2
    stacked = np.concatenate([inter[:, 0::2], inter[:, 1::2]], axis=1) if ell else inter
    return meta, times, stacked


def write_rows_csv(path, header, rows, metadata: dict | None = None) -> None:
    lines = [f"# {k}: {v}" for k, v in (metadata or {}).items()]
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join("" if v is None else (_fmt(v) if not isinstance(v, str) else v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


# -- JSON -------------------------------------------------------------------

def to_jsonable(obj):
    if isinstance(obj, ContinuousState):
        return {"s": obj.s.tolist(), "i": obj.i.tolist()}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    return obj


def write_json_report(path, command: str, config_hash: str | None, results, diagnostics) -> None:
    doc = {
        "command": command,
        "config_hash": config_hash,
        "results": to_jsonable(results),
        "diagnostics": to_jsonable(diagnostics),
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def analysis_to_dict(report) -> dict:
    return {
        "r0": report.r0,
        "dfe": report.dfe,
        "n_star": report.n_star,
        "ee": report.ee,
        "ee_prevalence": None if report.ee is None else report.ee.prevalence,
        "stability_modulus_at_ee": report.stability_modulus_at_ee,
    }


def lln_rows(result: "lln.LlnResult"):
    header = ["N", "median_sup_error", "mean_sup_error", "max_sup_error", "completed", "failed"]
    rows = [[a.population, a.median, a.mean, a.max, a.completed, a.failed] for a in result.aggregates]
    return header, rows
