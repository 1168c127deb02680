"""Persistence for chains, decompositions, estimate tables, samples and grids.

Structured artifacts are JSON documents carrying a ``meta`` block with the
config hash and seed; tabular ones start with a ``#`` comment line holding
the same.
"""

import json
import os

import numpy as np
from scipy.stats import gaussian_kde

from .errors import DataError, TooFewSamples
from .estimation import FamilyTable, _FIELDS
from .geometry import ScaleFactor, ShellFamily
from .modes import ModalDecomposition
from .perfect import IidSample


def _meta_line(meta):
    return "# " + " ".join(f"{k}={v}" for k, v in (meta or {}).items())


def _parse_meta_line(line):
    out = {}
    for part in line[1:].split():
        if "=" in part:
            k, v = part.split("=", 1)
            out[k] = v
    return out


def save_json(path, payload, meta=None):
    doc = {"meta": meta or {}, **payload}
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_json(path):
    with open(path) as fh:
        return json.load(fh)


# -- chains


def write_chain_csv(path, samples, labels, meta=None):
    samples = np.asarray(samples, dtype=float)
    with open(path, "w") as fh:
        fh.write(_meta_line(meta) + "\n")
        fh.write(",".join(labels) + "\n")
        for row in samples:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_chain_csv(path):
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    meta = _parse_meta_line(lines[0]) if lines and lines[0].startswith("#") else {}
    body = lines[1:] if meta or (lines and lines[0].startswith("#")) else lines
    labels = body[0].split(",")
    rows = [[float(v) for v in ln.split(",")] for ln in body[1:]]
    return np.array(rows, dtype=float).reshape(-1, len(labels)), labels, meta


# -- decompositions and families


def decomposition_to_dict(dec):
    return {
        "modes": [m.tolist() for m in dec.modes],
        "radii": dec.radii.tolist(),
        "weights": dec.weights.tolist(),
        "factors": [f.lower.tolist() for f in dec.factors],
        "counts": dec.counts.tolist(),
    }


def decomposition_from_dict(d):
    return ModalDecomposition(
        [np.array(m, dtype=float) for m in d["modes"]],
        np.array(d["radii"], dtype=float),
        np.array(d["weights"], dtype=float),
        [ScaleFactor(np.array(f, dtype=float)) for f in d["factors"]],
        np.array(d["counts"], dtype=int),
    )


def family_to_dict(fam):
    return {
        "center": fam.center.tolist(),
        "scale": fam.scale.lower.tolist(),
        "radii_sq": fam.radii_sq.tolist(),
        "sqrt_c1": fam.sqrt_c1,
        "delta": fam.delta,
    }


def family_from_dict(d):
    return ShellFamily(np.array(d["center"]), ScaleFactor(np.array(d["scale"])), np.array(d["radii_sq"]),
                       d.get("sqrt_c1"), d.get("delta"))


def table_to_dict(tab):
    out = {f: getattr(tab, f).tolist() for f in _FIELDS}
    out["mc_size"] = tab.mc_size
    out["eta"] = tab.eta
    return out


def table_from_dict(d):
    return FamilyTable(*(np.array(d[f], dtype=float) for f in _FIELDS), mc_size=int(d["mc_size"]),
                       eta=float(d["eta"]))


def save_estimates(path, families, tables, meta=None):
    payload = {"modes": {str(j): {"family": family_to_dict(f), "table": table_to_dict(t)}
                         for j, (f, t) in enumerate(zip(families, tables))}}
    save_json(path, payload, meta)


def load_estimates(path):
    doc = load_json(path)
    keys = sorted(doc["modes"], key=int)
    fams = [family_from_dict(doc["modes"][k]["family"]) for k in keys]
    tabs = [table_from_dict(doc["modes"][k]["table"]) for k in keys]
    return fams, tabs, doc.get("meta", {})


def save_evidence(path, log_evidence, posterior=None, meta=None):
    payload = {"log_evidence": {str(k): float(v) for k, v in log_evidence.items()}}
    if posterior is not None:
        payload["posterior"] = {str(k): float(v) for k, v in posterior.items()}
    save_json(path, payload, meta)


def load_evidence(path):
    doc = load_json(path)
    return {int(k): float(v) for k, v in doc["log_evidence"].items()}, doc.get("meta", {})


# -- samples


def write_samples(path, samples, meta=None):
    with open(path, "w") as fh:
        fh.write(json.dumps({"meta": meta or {}}) + "\n")
        for s in samples:
            fh.write(json.dumps(s.record()) + "\n")


def read_samples(path):
    samples, meta = [], {}
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if "meta" in rec:
                meta = rec["meta"]
                continue
            samples.append(IidSample.from_record(rec))
    return samples, meta


# -- grids


def emit_density_grid(samples, path=None, n_points=256, meta=None):
    """Gaussian-kernel density of a 1-d sample on ``n_points`` grid points.

    Bandwidth follows Silverman's rule. Returns ``(x, density)`` and writes
    a two-column TSV when ``path`` is given.
    """
    x = np.asarray(samples, dtype=float).reshape(-1)
    if x.size < 100:
        raise TooFewSamples(f"density grid needs at least 100 samples, got {x.size}")
    if not np.std(x) > 0:
        raise DataError("constant sample has zero bandwidth")
    kde = gaussian_kde(x, bw_method="silverman")
    h = float(np.sqrt(kde.covariance[0, 0]))
    grid = np.linspace(x.min() - 4 * h, x.max() + 4 * h, n_points)
    dens = kde(grid)
    if path is not None:
        write_tsv(path, ["x", "density"], np.column_stack([grid, dens]), meta)
    return grid, dens


def write_tsv(path, header, rows, meta=None):
    rows = np.asarray(rows, dtype=float)
    with open(path, "w") as fh:
        fh.write(_meta_line(meta) + "\n")
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join(repr(float(v)) for v in row) + "\n")


def read_tsv(path):
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    meta = _parse_meta_line(lines[0]) if lines[0].startswith("#") else {}
    body = lines[1:] if lines[0].startswith("#") else lines
    header = body[0].split("\t")
    rows = np.array([[float(v) for v in ln.split("\t")] for ln in body[1:]], dtype=float)
    return header, rows.reshape(-1, len(header)), meta
