"""CSV input table and JSON report helpers.

Input table: comma separated, UTF-8, header row, ``.`` decimal point,
empty string = missing.  Columns ``id, time, status, stratum, sampled``,
covariates ``z.<name>`` (at least one), optional ``pi`` and ``aux.<name>``.
``time``, ``status`` and ``z.*`` may be empty only on unsampled rows.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from .exceptions import SchemaError

REQUIRED = ("id", "time", "status", "stratum", "sampled")
REPORT_SCHEMA_VERSION = "1.0"


@dataclass
class InputTable:
    ids: list
    times: np.ndarray
    status: np.ndarray
    strata: np.ndarray
    sampled: np.ndarray
    covariates: np.ndarray
    covariate_names: list
    aux: np.ndarray
    aux_names: list
    pi: np.ndarray = None

    @property
    def n_subjects(self):
        return len(self.ids)


def _number(text, row, col, kind=float):
    try:
        value = kind(text)
    except ValueError:
        raise SchemaError(f"column {col!r}: cannot parse {text!r} as "
                          f"{kind.__name__}", row=row) from None
    if kind is float and not math.isfinite(value):
        raise SchemaError(f"column {col!r}: value must be finite", row=row)
    return value


def read_input_table(path):
    """Parse an input CSV.

    Raises
    ------
    SchemaError
        With the 1-based data row number of the first offending row.
    OSError
        If the file cannot be read.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in REQUIRED if c not in header]
        if missing:
            raise SchemaError(f"missing required column(s): "
                              f"{', '.join(missing)}", row=0)
        zcols = [c for c in header if c.startswith("z.")]
        acols = [c for c in header if c.startswith("aux.")]
        if not zcols:
            raise SchemaError("no covariate columns (z.*)", row=0)
        has_pi = "pi" in header

        ids, times, status, strata, sampled, zs, auxs, pis = \
            [], [], [], [], [], [], [], []
        for row_no, row in enumerate(reader, start=1):
            if None in row:
                raise SchemaError("row has more fields than the header",
                                  row=row_no)
            for col in ("stratum", "sampled"):
                if row[col] is None or row[col].strip() == "":
                    raise SchemaError(f"column {col!r} must not be empty",
                                      row=row_no)
            xi = _number(row["sampled"], row_no, "sampled", int)
            if xi not in (0, 1):
                raise SchemaError("column 'sampled' must be 0 or 1",
                                  row=row_no)
            j = _number(row["stratum"], row_no, "stratum", int)
            if xi == 1:
                for col in ("time", "status", *zcols):
                    if (row[col] or "").strip() == "":
                        raise SchemaError(
                            f"sampled row has empty {col!r}", row=row_no)

            def opt(col):
                text = (row[col] or "").strip()
                return math.nan if text == "" else _number(text, row_no, col)

            t = opt("time")
            d = opt("status")
            if xi == 1 and t < 0:
                raise SchemaError("time must be nonnegative", row=row_no)
            if xi == 1 and d not in (0.0, 1.0):
                raise SchemaError("status must be 0 or 1", row=row_no)
            p = opt("pi") if has_pi else math.nan
            if has_pi and not math.isnan(p) and not 0 < p <= 1:
                raise SchemaError("pi must lie in (0, 1]", row=row_no)
            ids.append(row["id"])
            times.append(t)
            status.append(d)
            strata.append(j)
            sampled.append(xi)
            zs.append([opt(c) for c in zcols])
            auxs.append([opt(c) for c in acols])
            pis.append(p)
    if not ids:
        raise SchemaError("input table has no data rows", row=0)
    n = len(ids)
    return InputTable(
        ids=ids, times=np.array(times), status=np.array(status),
        strata=np.array(strata, dtype=int),
        sampled=np.array(sampled, dtype=bool),
        covariates=np.array(zs).reshape(n, len(zcols)),
        covariate_names=[c[2:] for c in zcols],
        aux=np.array(auxs).reshape(n, len(acols)), aux_names=acols,
        pi=np.array(pis) if has_pi else None)


def _fmt(x):
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) \
        else repr(float(x))


def write_input_table(path, times, status, covariates, strata, sampled,
                      aux=None, pi=None, ids=None, covariate_names=None,
                      aux_names=None, blank_unsampled=True):
    """Write a cohort in input-table format with round-trip exact floats."""
    covariates = np.asarray(covariates, dtype=float)
    if covariates.ndim == 1:
        covariates = covariates.reshape(-1, 1)
    n, p = covariates.shape
    names = covariate_names or [f"x{k}" for k in range(p)]
    aux = None if aux is None else np.asarray(aux, float).reshape(n, -1)
    anames = aux_names or ([f"aux.a{k}" for k in range(aux.shape[1])]
                           if aux is not None else [])
    header = list(REQUIRED)
    if pi is not None:
        header.append("pi")
    header += anames + [f"z.{c}" for c in names]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(n):
            hide = blank_unsampled and not sampled[i]
            row = [ids[i] if ids is not None else str(i + 1),
                   "" if hide else _fmt(times[i]),
                   "" if hide else str(int(status[i])),
                   str(int(strata[i])), str(int(bool(sampled[i])))]
            if pi is not None:
                row.append(_fmt(pi[i]))
            if aux is not None:
                row += [_fmt(v) for v in aux[i]]
            row += ["" if hide else _fmt(v) for v in covariates[i]]
            writer.writerow(row)
