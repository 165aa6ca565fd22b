import numpy as np
from sklearn.utils import check_array, check_consistent_length


def check_survival_y(y):
    """Split a survival target into ``(time, event)`` float arrays.

    Accepts a structured array with two fields (time first, event second),
    a two-column array, or a ``(time, event)`` tuple.  Entries may be NaN
    for subjects not sampled at phase two.
    """
    if isinstance(y, tuple) and len(y) == 2:
        time, event = (np.asarray(a, dtype=float).ravel() for a in y)
    else:
        y = np.asarray(y)
        if y.dtype.names is not None:
            if len(y.dtype.names) != 2:
                raise ValueError("structured y must have exactly two fields "
                                 "(time, event)")
            event_name, time_name = _field_roles(y.dtype)
            time = y[time_name].astype(float)
            event = y[event_name].astype(float)
        else:
            y = check_array(y, ensure_all_finite=False, dtype=float)
            if y.shape[1] != 2:
                raise ValueError(f"y must have 2 columns (time, event), got "
                                 f"{y.shape[1]}")
            time, event = y[:, 0], y[:, 1]
    check_consistent_length(time, event)
    return time, event


def _field_roles(dtype):
    first, second = dtype.names
    if dtype[first].kind == "b":
        return first, second
    return second, first


def check_covariates(X):
    return check_array(X, ensure_all_finite=False, dtype=float,
                       ensure_2d=True)


def check_sample_weight(sample_weight, n):
    if sample_weight is None:
        return np.ones(n)
    w = np.asarray(sample_weight, dtype=float).ravel()
    if w.shape[0] != n:
        raise ValueError(f"sample_weight has {w.shape[0]} entries, expected "
                         f"{n}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("sample_weight must be finite and nonnegative")
    return w
