"""File formats: longitudinal CSV, draws CSV, reports, and key=value configs.

Every number is written with ``repr(float(x))``, the shortest decimal string
that round-trips, so reruns with the same inputs produce identical bytes.
All writers go through :func:`atomic_write`.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
import warnings
from collections import OrderedDict

import numpy as np

from .model import POPULATION_PARAMETERS, LongitudinalDataset, SubjectRecord
from .sampler import STAT_NAMES, DrawsStore

__all__ = [
    "DRAWS_SCHEMA",
    "CONFIG_VERSION",
    "DataFormatError",
    "fmt",
    "atomic_write",
    "read_dataset_csv",
    "write_dataset_csv",
    "write_draws_csv",
    "read_draws_csv",
    "write_summary_csv",
    "write_diagnostics_json",
    "write_truth_csv",
    "write_study_csv",
    "write_curves_csv",
    "write_validation_csv",
    "write_correlations_csv",
    "read_heldout_csv",
    "write_key_values",
    "read_key_values",
]

DRAWS_SCHEMA = "bablr-draws/1"
CONFIG_VERSION = "1"
DATA_COLUMNS = ("subject_id", "time", "outcome")


class DataFormatError(ValueError):
    """An input file does not follow the expected layout."""


def fmt(x):
    """Shortest round-trip text for a number; ints and bools stay integral."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


def atomic_write(path, text):
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header is not None:
        w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# longitudinal data
# ---------------------------------------------------------------------------


def read_dataset_csv(path):
    """Read a ``subject_id,time,outcome`` file into a LongitudinalDataset.

    Extra columns are ignored.  Rows are grouped by subject in order of first
    appearance and sorted by time; a warning names the subjects whose rows
    were out of order.  All malformed rows are reported together with their
    line numbers.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataFormatError("empty file: no header row")
        header = [h.strip().lstrip("﻿") for h in header]
        missing = [c for c in DATA_COLUMNS if c not in header]
        if missing:
            raise DataFormatError(f"missing column(s): {', '.join(missing)}")
        col = [header.index(c) for c in DATA_COLUMNS]
        groups = OrderedDict()
        errors = []
        for row in reader:
            line = reader.line_num
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) < len(header):
                errors.append(f"line {line}: expected {len(header)} fields, got {len(row)}")
                continue
            sid = row[col[0]].strip()
            if not sid:
                errors.append(f"line {line}: empty subject_id")
                continue
            try:
                t, y = float(row[col[1]]), float(row[col[2]])
            except ValueError:
                errors.append(f"line {line}: non-numeric time or outcome")
                continue
            if not (math.isfinite(t) and math.isfinite(y)):
                errors.append(f"line {line}: non-finite time or outcome")
                continue
            groups.setdefault(sid, []).append((t, y))
    if errors:
        shown = "; ".join(errors[:20])
        more = f" (and {len(errors) - 20} more)" if len(errors) > 20 else ""
        raise DataFormatError(f"malformed rows in {path}: {shown}{more}")
    if not groups:
        raise DataFormatError("empty dataset")
    subjects, unsorted = [], []
    for sid, obs in groups.items():
        arr = np.array(obs)
        order = np.argsort(arr[:, 0], kind="stable")
        if np.any(np.diff(arr[:, 0]) < 0):
            unsorted.append(sid)
        subjects.append(SubjectRecord(sid, arr[order, 0], arr[order, 1]))
    if unsorted:
        warnings.warn(f"times sorted within {len(unsorted)} subject(s): "
                      f"{', '.join(unsorted[:10])}", stacklevel=2)
    return LongitudinalDataset(subjects)


def write_dataset_csv(path, dataset):
    rows = [(s.id, fmt(t), fmt(y))
            for s in dataset.subjects for t, y in zip(s.times, s.outcomes)]
    atomic_write(path, _csv_text(DATA_COLUMNS, rows))


def read_heldout_csv(path):
    """Held-out observations ``[(subject, time, y), ...]`` in the input-CSV layout."""
    data = read_dataset_csv(path)
    return [(s.id, float(t), float(y)) for s in data.subjects
            for t, y in zip(s.times, s.outcomes)]


# ---------------------------------------------------------------------------
# draws
# ---------------------------------------------------------------------------


def write_draws_csv(path, store: DrawsStore):
    """One row per post-warmup draw: chain, iteration, parameters, sampler stats."""
    stats = [k for k in STAT_NAMES if k in store.stats]
    header = ["chain", "iteration", *store.names, *stats]
    lines = [f"# {DRAWS_SCHEMA}\n", ",".join(_quote(h) for h in header) + "\n"]
    for c in range(store.n_chains):
        for i in range(store.n_samples):
            vals = [str(c), str(i)]
            vals.extend(repr(float(v)) for v in store.draws[c, i])
            vals.extend(fmt(store.stats[k][c, i]) for k in stats)
            lines.append(",".join(vals) + "\n")
    atomic_write(path, "".join(lines))


def _quote(name):
    return f'"{name}"' if ("," in name or '"' in name) else name


def read_draws_csv(path):
    """Inverse of :func:`write_draws_csv`; checks the schema line."""
    with open(path, encoding="utf-8", newline="") as fh:
        first = fh.readline().strip()
        if first != f"# {DRAWS_SCHEMA}":
            raise DataFormatError(
                f"{path}: not a draws file of schema {DRAWS_SCHEMA!r} (found {first[:40]!r})")
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["chain", "iteration"]:
            raise DataFormatError(f"{path}: draws header must start with chain,iteration")
        rows = [r for r in reader if r]
    stats = [h for h in header[2:] if h in STAT_NAMES]
    names = header[2:len(header) - len(stats)]
    if not rows:
        raise DataFormatError(f"{path}: no draws")
    try:
        arr = np.array(rows, dtype=float)
    except ValueError:
        raise DataFormatError(f"{path}: non-numeric entry in draws") from None
    chain = arr[:, 0].astype(int)
    n_chains = chain.max() + 1
    n_samples = arr.shape[0] // n_chains
    if n_chains * n_samples != arr.shape[0] or np.any(chain != np.repeat(np.arange(n_chains),
                                                                          n_samples)):
        raise DataFormatError(f"{path}: chains must be complete and in order")
    body = arr[:, 2:].reshape(n_chains, n_samples, -1)
    draws = body[:, :, :len(names)]
    st = {k: body[:, :, len(names) + j] for j, k in enumerate(stats)}
    for k in ("treedepth", "n_leapfrog"):
        if k in st:
            st[k] = st[k].astype(int)
    if "divergent" in st:
        st["divergent"] = st["divergent"].astype(bool)
    return DrawsStore(draws, names, st)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


def write_summary_csv(path, summaries):
    header = ("parameter", "median", "lower95", "upper95", "mean", "sd")
    rows = [(s.name, fmt(s.median), fmt(s.lower), fmt(s.upper), fmt(s.mean), fmt(s.sd))
            for s in summaries]
    atomic_write(path, _csv_text(header, rows))


def write_diagnostics_json(path, report):
    atomic_write(path, json.dumps(report.to_dict(), indent=2, allow_nan=False) + "\n")


def write_truth_csv(path, truth):
    """Population truths, realised subject effects, and target correlations."""
    rows = [(k, fmt(v)) for k, v in truth.population().items()]
    if truth.correlation is not None:
        for a in range(4):
            for b in range(a + 1, 4):
                rows.append((f"rho_u{a + 1}_u{b + 1}", fmt(truth.correlation[a, b])))
    if truth.effects is not None:
        u = truth.effects.as_matrix()
        for k in range(4):
            for sid, v in zip(truth.ids, u[:, k]):
                rows.append((f"u{k + 1}[{sid}]", fmt(v)))
    atomic_write(path, _csv_text(("parameter", "value"), rows))


def write_study_csv(path, report):
    header = ("parameter", "truth", "mean", "se_across_replicates", "bias", "coverage",
              "replicates_ok")
    rows = [(r.parameter, fmt(r.truth), fmt(r.mean), fmt(r.se), fmt(r.bias),
             fmt(r.coverage), str(r.n)) for r in report.rows]
    atomic_write(path, _csv_text(header, rows))


def write_curves_csv(path, curves):
    rows = [(fmt(a), fmt(q), fmt(curves.values[k, j]))
            for j, a in enumerate(curves.age_grid) for k, q in enumerate(curves.quantiles)]
    atomic_write(path, _csv_text(("age", "quantile", "value"), rows))


def write_validation_csv(path, report):
    header = ("subject", "time", "y", "q025", "q50", "q975", "inside")
    rows = [(p.subject_id, fmt(p.time), fmt(p.y), fmt(p.q025), fmt(p.q50), fmt(p.q975),
             "1" if p.inside else "0") for p in report.points]
    atomic_write(path, _csv_text(header, rows))


def write_correlations_csv(path, corr):
    rows = [(label, fmt(m), fmt(s)) for label, m, s in corr.table()]
    atomic_write(path, _csv_text(("pair", "mean", "sd"), rows))


# ---------------------------------------------------------------------------
# key = value documents (configs and run manifests)
# ---------------------------------------------------------------------------


def write_key_values(path, pairs, kind="config"):
    """Write ``key = value`` lines under a versioned header."""
    lines = [f"# bablr {kind}", f"version = {CONFIG_VERSION}"]
    for k, v in pairs:
        if "\n" in str(v):
            raise ValueError(f"value of {k} spans lines")
        lines.append(f"{k} = {v}")
    atomic_write(path, "\n".join(lines) + "\n")


def read_key_values(path):
    """Parse a ``key = value`` document; blank lines and ``#`` comments are skipped."""
    out = OrderedDict()
    with open(path, encoding="utf-8") as fh:
        for n, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataFormatError(f"{path}, line {n}: expected key = value")
            k, v = (s.strip() for s in line.split("=", 1))
            if not k:
                raise DataFormatError(f"{path}, line {n}: empty key")
            if k in out:
                raise DataFormatError(f"{path}, line {n}: duplicate key {k!r}")
            out[k] = v
    version = out.pop("version", None)
    if version is None:
        raise DataFormatError(f"{path}: missing 'version' line")
    if version != CONFIG_VERSION:
        raise DataFormatError(f"{path}: config version {version} is not supported "
                              f"(expected {CONFIG_VERSION})")
    return out


POPULATION_KEYS = POPULATION_PARAMETERS
