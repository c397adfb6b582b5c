"""Model-file and sample-CSV formats.

Models persist as JSON; floats serialize through Python's shortest
round-trip repr, so parsing reproduces every numeric field bit-exactly.
Samples travel as a two-column CSV with the exact header
``subpop_id,value``, UTF-8, LF line endings.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .expfam import FamilyModel, ModelMeta
from .fpca import EigenSystem
from .grid import Domain, GridFn
from .logmap import LogDensityFn
from .presmooth import SubpopSample

FORMAT_VERSION = 1

SAMPLE_HEADER = ["subpop_id", "value"]


class SampleFormatError(ValueError):
    """The sample CSV violates the required layout."""


class ModelFormatError(ValueError):
    """The model file violates the required layout."""


def model_to_dict(model: FamilyModel) -> dict:
    sys = model.sys
    meta = model.meta
    return {
        "format_version": FORMAT_VERSION,
        "domain": {
            "lo": model.domain.lo,
            "hi": model.domain.hi,
            "n_grid": model.domain.n_grid,
        },
        "mu": sys.mu.values.tolist(),
        "eigvals": sys.eigvals.tolist(),
        "eigfns": [f.values.tolist() for f in sys.eigfns],
        "train_scores": sys.scores.tolist(),
        "train_densities": [d.values.tolist() for d in model.train_densities],
        "bandwidth": meta.bandwidth,
        "log_scale": meta.log_scale,
        "delta": meta.delta,
        "provenance": {
            "n": meta.n_train,
            "sizes": list(meta.train_sizes),
            "seed": meta.seed,
            "timestamp": meta.timestamp,
        },
    }


def model_from_dict(payload: dict) -> FamilyModel:
    try:
        version = payload["format_version"]
        if version != FORMAT_VERSION:
            raise ModelFormatError(f"unsupported format version {version}")
        dom = payload["domain"]
        domain = Domain(float(dom["lo"]), float(dom["hi"]), int(dom["n_grid"]))
        mu = LogDensityFn(GridFn(domain, np.array(payload["mu"], dtype=float)))
        eigvals = np.array(payload["eigvals"], dtype=float)
        eigfns = tuple(
            GridFn(domain, np.array(vals, dtype=float)) for vals in payload["eigfns"]
        )
        scores = np.array(payload["train_scores"], dtype=float)
        sys = EigenSystem(mu=mu, eigvals=eigvals, eigfns=eigfns, scores=scores)
        densities = tuple(
            GridFn(domain, np.array(vals, dtype=float))
            for vals in payload["train_densities"]
        )
        prov = payload["provenance"]
        meta = ModelMeta(
            n_train=int(prov["n"]),
            train_sizes=tuple(int(s) for s in prov["sizes"]),
            bandwidth=float(payload["bandwidth"]),
            log_scale=bool(payload["log_scale"]),
            delta=None if payload["delta"] is None else float(payload["delta"]),
            seed=prov.get("seed"),
            timestamp=prov.get("timestamp"),
        )
    except (KeyError, TypeError) as exc:
        raise ModelFormatError(f"malformed model file: {exc}") from exc
    return FamilyModel(sys=sys, domain=domain, train_densities=densities, meta=meta)


def save_model(model: FamilyModel, path) -> None:
    payload = model_to_dict(model)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def load_model(path) -> FamilyModel:
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file is not valid JSON: {exc}") from exc
    return model_from_dict(payload)


def read_samples_csv(path) -> list[SubpopSample]:
    """Parse a sample CSV, grouping rows by subpopulation in first-seen order."""
    groups: dict[str, list[float]] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != SAMPLE_HEADER:
            raise SampleFormatError(
                f"expected header {','.join(SAMPLE_HEADER)!r}, got {header}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise SampleFormatError(f"line {lineno}: expected 2 fields, got {len(row)}")
            sid, raw = row
            try:
                value = float(raw)
            except ValueError as exc:
                raise SampleFormatError(f"line {lineno}: bad value {raw!r}") from exc
            groups.setdefault(sid, []).append(value)
    if not groups:
        raise SampleFormatError(f"no sample rows in {Path(path)}")
    return [SubpopSample(id=sid, obs=np.array(vals)) for sid, vals in groups.items()]


def write_samples_csv(path, samples: list[SubpopSample]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(SAMPLE_HEADER) + "\n")
        for s in samples:
            for v in s.obs:
                fh.write(f"{s.id},{float(v)!r}\n")


def write_density_csv(path, fn: GridFn, value_col: str = "density") -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"t,{value_col}\n")
        for t, v in zip(fn.domain.grid, fn.values):
            fh.write(f"{float(t)!r},{float(v)!r}\n")
