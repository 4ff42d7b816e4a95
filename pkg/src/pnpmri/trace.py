"""Per-iteration solver records and their CSV form."""

import csv
import io
import math

import numpy as np

PNP_COLUMNS = ("iter", "nmse_db", "data_fidelity", "ce_res_h", "ce_res_f", "seconds")
RED_COLUMNS = PNP_COLUMNS + ("red_residual_norm",)
MANN_COLUMNS = ("iter", "nmse_db", "stacked_residual", "ce_res_h", "ce_res_f", "seconds")
AMP_COLUMNS = ("iter", "empirical_eta", "se_eta", "nmse_db")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return repr(v)


class SolverTrace:
    """One record per completed iteration.

    Values are written with ``repr`` so that a CSV round-trips every double
    exactly and is byte-identical across reruns.  ``seconds`` is the only
    nondeterministic column; pass ``timing=False`` to blank it.
    """

    def __init__(self, columns=PNP_COLUMNS):
        self.columns = tuple(columns)
        self.records = []

    def append(self, **values):
        unknown = set(values) - set(self.columns)
        if unknown:
            raise KeyError(f"unknown trace columns {sorted(unknown)}")
        self.records.append({c: values.get(c) for c in self.columns})

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def column(self, name) -> np.ndarray:
        return np.array([np.nan if r[name] is None else r[name] for r in self.records], dtype=float)

    def to_csv(self, path=None, timing: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.records:
            w.writerow(["" if (c == "seconds" and not timing) else _fmt(r[c]) for c in self.columns])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as f:
                f.write(text)
        return text
