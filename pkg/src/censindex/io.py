"""Dataset ingestion, run configuration and report persistence."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .exceptions import InvalidInputError
from .fitter import FitConfig, standard_errors
from .selection import largest_event_weight
from .simulation import MODES, SimDesign
from .survival import CensoredSample, km_jump_weights

SEED_ENV = "CENSINDEX_SEED"
_X_COLUMN = re.compile(r"^x([1-9][0-9]*)$")
_MISSING = {"", "na", "nan", "null", "none", "?"}


@dataclass(frozen=True)
class Dataset:
    sample: CensoredSample
    columns: tuple
    path: str
    sha256: str


def _parse_float(text, line, column):
    if text.strip().lower() in _MISSING:
        raise InvalidInputError(f"line {line}: missing value in column {column!r}")
    try:
        value = float(text)
    except ValueError:
        raise InvalidInputError(f"line {line}: column {column!r}: not a number: {text!r}") from None
    if not math.isfinite(value):
        raise InvalidInputError(f"line {line}: column {column!r}: non-finite value {text!r}")
    return value


def _delimiter(header):
    for cand in (",", "\t", ";"):
        if cand in header:
            return cand
    return None  # whitespace


def read_dataset(path):
    """Read a delimited file with header ``z, delta, x1, ..., xd``.

    Lines starting with ``#`` and blank lines are skipped. Errors name the
    offending line (1-based, counting every physical line).
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise InvalidInputError(f"cannot read dataset {path}: {exc}") from None
    try:
        text = raw.decode("utf-8-sig")
    except UnicodeDecodeError:
        raise InvalidInputError(f"{path}: not UTF-8 text") from None
    lines = [(i + 1, ln) for i, ln in enumerate(text.splitlines())
             if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise InvalidInputError("line 1: empty dataset (no header row)")
    header_no, header = lines[0]
    delim = _delimiter(header)

    def split(line):
        if delim is None:
            return line.split()
        return [c.strip() for c in next(csv.reader([line], delimiter=delim))]

    names = [h.strip().lower() for h in split(header)]
    if "z" not in names or "delta" not in names:
        raise InvalidInputError(f"line {header_no}: header must contain 'z' and 'delta', got {names}")
    xcols = {}
    for pos, name in enumerate(names):
        if name in ("z", "delta"):
            continue
        m = _X_COLUMN.match(name)
        if not m:
            raise InvalidInputError(f"line {header_no}: unexpected column {name!r}")
        xcols[int(m.group(1))] = pos
    if len(set(names)) != len(names):
        raise InvalidInputError(f"line {header_no}: duplicate column names")
    d = len(xcols)
    if d == 0 or sorted(xcols) != list(range(1, d + 1)):
        raise InvalidInputError(f"line {header_no}: covariate columns must be x1..xd")
    iz, idelta = names.index("z"), names.index("delta")
    order = [xcols[k] for k in range(1, d + 1)]
    z, delta, x = [], [], []
    for line_no, line in lines[1:]:
        cells = split(line)
        if len(cells) != len(names):
            raise InvalidInputError(
                f"line {line_no}: expected {len(names)} fields, found {len(cells)}"
            )
        z.append(_parse_float(cells[iz], line_no, "z"))
        flag = _parse_float(cells[idelta], line_no, "delta")
        if flag not in (0.0, 1.0):
            raise InvalidInputError(f"line {line_no}: delta must be 0 or 1, got {cells[idelta]!r}")
        delta.append(int(flag))
        x.append([_parse_float(cells[p], line_no, names[p]) for p in order])
    if not z:
        raise InvalidInputError(f"line {header_no + 1}: no data rows after the header")
    sample = CensoredSample(np.array(z), np.array(delta), np.array(x))
    cols = ("z", "delta") + tuple(f"x{k}" for k in range(1, d + 1))
    return Dataset(sample, cols, str(path), hashlib.sha256(raw).hexdigest())


def write_dataset(path, sample):
    """Write ``sample`` in the format accepted by :func:`read_dataset`."""
    d = sample.d
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["z", "delta"] + [f"x{k}" for k in range(1, d + 1)])
        for i in range(sample.n):
            w.writerow([repr(float(sample.z[i])), int(sample.delta[i])]
                       + [repr(float(v)) for v in sample.x[i]])


# configuration

_SIM_KEYS = {"n", "p", "reps", "seed", "mixture_scale", "theta0", "noise", "mode", "n_jobs"}
_TOP_KEYS = {"fit", "simulate", "output_dir"}


@dataclass(frozen=True)
class RunConfig:
    fit: FitConfig
    design: dict
    mode: str
    n_jobs: int
    output_dir: str
    sim_fit: FitConfig = None


def load_document(path):
    """Parse a YAML or JSON configuration file into a mapping (``None`` path gives ``{}``)."""
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InvalidInputError(f"cannot read config {path}: {exc}") from None
    try:
        doc = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"config {path}: {exc}") from None
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise InvalidInputError(f"config {path}: top level must be a mapping")
    return doc


def build_run_config(doc, overrides=None, env=None):
    """Validate a configuration mapping and apply CLI overrides and the seed variable.

    ``overrides`` has optional ``fit`` / ``simulate`` / ``output_dir`` entries
    with the same layout as the document. ``SEED_ENV`` in ``env`` (default
    ``os.environ``) overrides both seeds.
    """
    env = os.environ if env is None else env
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise InvalidInputError(f"unknown configuration keys: {sorted(unknown)}")
    fit_doc = dict(doc.get("fit") or {})
    sim_doc = dict(doc.get("simulate") or {})
    output_dir = doc.get("output_dir", ".")
    overrides = overrides or {}
    fit_doc.update(overrides.get("fit", {}))
    sim_doc.update(overrides.get("simulate", {}))
    output_dir = overrides.get("output_dir") or output_dir
    bad = set(sim_doc) - _SIM_KEYS
    if bad:
        raise InvalidInputError(f"unknown simulate keys: {sorted(bad)}")
    if SEED_ENV in env:
        try:
            seed = int(env[SEED_ENV])
        except ValueError:
            raise InvalidInputError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
        fit_doc["seed"] = seed
        sim_doc["seed"] = seed
    try:
        config = FitConfig.from_dict(fit_doc)
        # the simulation study uses the fixed bandwidth grid unless told otherwise
        sim_config = FitConfig.from_dict({"h_grid": "paper", **fit_doc})
    except TypeError as exc:
        raise InvalidInputError(f"fit configuration: {exc}") from None
    mode = sim_doc.pop("mode", "both")
    if mode not in MODES:
        raise InvalidInputError(f"mode must be one of {MODES}, got {mode!r}")
    n_jobs = int(sim_doc.pop("n_jobs", 1))
    design = {("target_p" if k == "p" else k): v for k, v in sim_doc.items()}
    if "theta0" in design:
        design["theta0"] = tuple(float(v) for v in design["theta0"])
    return RunConfig(config, design, mode, n_jobs, str(output_dir), sim_config)


def make_design(run):
    try:
        return SimDesign(**run.design)
    except TypeError as exc:
        raise InvalidInputError(f"simulate configuration: {exc}") from None


# reports


def _plain(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def write_report(path, records):
    """Write one JSON object per line. Non-finite floats are stored as strings."""
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(_encode(_plain(rec)), sort_keys=True) + "\n")


def _encode(value):
    if isinstance(value, float) and not math.isfinite(value):
        return repr(value)
    if isinstance(value, dict):
        return {k: _encode(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_encode(v) for v in value]
    return value


def _decode(value):
    if value in ("nan", "inf", "-inf"):
        return float(value)
    if isinstance(value, dict):
        return {k: _decode(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_decode(v) for v in value]
    return value


def read_report(path):
    """Inverse of :func:`write_report`."""
    out = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(_decode(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise InvalidInputError(f"{path}: line {line_no}: {exc}") from None
    return out


def fit_records(fit, dataset=None, config=None):
    """Report records for a fit: a ``fit`` record and one ``tau`` record per branch.

    With a ``dataset`` the ``tau`` records also carry the Kaplan-Meier weight
    of the largest retained uncensored observation, raw and renormalised.
    """

    cov, se = standard_errors(fit)
    head = {
        "record": "fit",
        "theta_hat": fit.theta_hat,
        "theta_prelim": fit.theta_prelim,
        "h_hat": fit.h_hat,
        "tau_hat": fit.tau_hat,
        "tau0": fit.tau0,
        "tau1": fit.tau1,
        "h0": fit.h0,
        "c": fit.c,
        "E2": fit.E2,
        "Sigma_hat": fit.Sigma_hat,
        "covariance": cov,
        "standard_errors": se,
        "V_hat": fit.V_hat,
        "Delta_hat": fit.Delta_hat,
        "singular": fit.singular,
        "n": fit.n,
        "N": fit.n_retained,
        "weight_inf": fit.weight_inf,
        "weight_tau": fit.weight_tau,
        "weight_tau_raw": fit.weight_tau_raw,
        "exclusions": fit.exclusions,
        "failures": {repr(float(k)): v for k, v in fit.failures.items()},
        "no_censoring": fit.no_censoring,
    }
    if fit.no_censoring:
        head["note"] = "no censoring: KM path degenerate to empirical"
    if dataset is not None:
        head.update(dataset=dataset.path, sha256=dataset.sha256, columns=list(dataset.columns))
    if config is not None:
        head["config"] = config.to_dict()
    rows = []
    for tau in sorted(fit.branches):
        b = fit.branches[tau]
        rows.append({
            "record": "tau", "tau": tau, "theta": b.theta, "h": b.h, "E2": b.E2,
            "N": b.n_retained, "loglik": b.loglik, "alternations": b.alternations,
            "likelihood_terms": b.n_terms, "likelihood_excluded": b.n_excluded,
            "selected": tau == fit.tau_hat,
        })
        if dataset is not None:
            w = km_jump_weights(dataset.sample)
            rows[-1]["largest_weight"] = largest_event_weight(dataset.sample, w, tau)
            rows[-1]["largest_weight_renorm"] = largest_event_weight(
                dataset.sample, w, tau, renormalise=True)
    return [head] + rows


def simulation_records(report):
    """Report records for a Monte Carlo run: ``design``, one ``mode`` per estimator, ``rep`` rows."""
    out = [{
        "record": "design", **report.design, "lam": report.lam, "mean_N": report.mean_N,
        "weight_inf": report.weight_inf, "weight_tau": report.weight_tau,
        "weight_tau_raw": report.weight_tau_raw, "censor_fraction": report.censor_fraction,
        "n_ok": len(report.records), "n_failed": len(report.failures),
    }]
    for mode, s in report.summaries.items():
        out.append({"record": "mode", "mode": mode, "bias": s.bias, "covariance": s.covariance,
                    "mse": s.mse, "n_ok": s.n_ok})
    for rec in report.records + report.failures:
        out.append({"record": "rep", **rec})
    return out
