"""Unbalanced longitudinal panels with missing responses and dropout.

The canonical external format is "long" CSV: one row per subject-occasion
with a subject id, a 1-based time index, a 0/1 dropout flag, ``r`` response
columns (``NA`` or empty when missing) and optional covariate columns.
"""
from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InconsistentRow, InvalidDropout, InvalidInput, ParseError

MISSING_TOKENS = frozenset({"", "NA"})


@dataclass(frozen=True, eq=False)
class SubjectRecord:
    """One subject's sequence of occasions.

    ``y`` is ``(T_i, r)`` with ``nan`` marking missing cells, ``dropout`` the
    0/1 indicators, ``x`` an optional ``(T_i, p)`` covariate matrix.
    """

    id: str
    y: np.ndarray
    dropout: np.ndarray
    x: np.ndarray | None = None

    def __post_init__(self):
        y = np.atleast_2d(np.asarray(self.y, dtype=float))
        d = np.asarray(self.dropout, dtype=bool).reshape(-1)
        T = y.shape[0]
        if T < 1:
            raise InvalidInput(f"subject {self.id!r} has no occasions")
        if d.shape[0] != T:
            raise InvalidInput(f"subject {self.id!r}: dropout length {d.shape[0]} != T={T}")
        if d[0]:
            raise InvalidDropout(self.id, 1, "dropout at the first occasion")
        if T > 1:
            bad = np.flatnonzero(d[:-1] & ~d[1:])
            if bad.size:
                raise InvalidDropout(self.id, int(bad[0]) + 2, "dropout is not monotone")
        if np.isinf(y).any():
            raise InvalidInput(f"subject {self.id!r}: infinite response value")
        obs_on_drop = d & (~np.isnan(y)).any(axis=1)
        if obs_on_drop.any():
            raise InconsistentRow(self.id, int(np.flatnonzero(obs_on_drop)[0]) + 1)
        x = self.x
        if x is not None:
            x = np.asarray(x, dtype=float)
            if x.ndim == 1:
                x = x.reshape(T, -1)
            if x.shape[0] != T:
                raise InvalidInput(f"subject {self.id!r}: covariate rows {x.shape[0]} != T={T}")
            if not np.isfinite(x).all():
                raise InvalidInput(f"subject {self.id!r}: covariates must be complete")
            x.setflags(write=False)
        y.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "dropout", d)
        object.__setattr__(self, "x", x)

    @property
    def T(self) -> int:
        return self.y.shape[0]

    @property
    def observed(self) -> np.ndarray:
        return ~np.isnan(self.y)


@dataclass(frozen=True)
class Padded:
    """Rectangular view of a panel, padded to the longest subject."""

    Y: np.ndarray        # (n, T, r), zeros where missing
    obs: np.ndarray      # (n, T, r) observed mask
    drop: np.ndarray     # (n, T) dropout indicators
    present: np.ndarray  # (n, T) occasion exists (t < T_i)
    X: np.ndarray | None  # (n, T, p) or None
    lengths: np.ndarray  # (n,)

    @property
    def substantive(self) -> np.ndarray:
        """Occasions that exist and are not in dropout."""
        return self.present & ~self.drop


@dataclass(frozen=True, eq=False)
class PanelDataset:
    subjects: tuple
    response_names: tuple = ()
    covariate_names: tuple = ()

    def __post_init__(self):
        subjects = tuple(self.subjects)
        if not subjects:
            raise InvalidInput("a panel needs at least one subject")
        r = subjects[0].y.shape[1]
        has_x = subjects[0].x is not None
        p = subjects[0].x.shape[1] if has_x else 0
        for s in subjects:
            if s.y.shape[1] != r:
                raise InvalidInput(f"subject {s.id!r}: r={s.y.shape[1]}, expected {r}")
            if (s.x is not None) != has_x or (has_x and s.x.shape[1] != p):
                raise InvalidInput(f"subject {s.id!r}: covariate layout differs")
        names = tuple(self.response_names) or tuple(f"y{j + 1}" for j in range(r))
        if len(names) != r:
            raise InvalidInput("response_names length does not match r")
        cnames = tuple(self.covariate_names) or tuple(f"x{j + 1}" for j in range(p))
        if len(cnames) != p:
            raise InvalidInput("covariate_names length does not match p")
        object.__setattr__(self, "subjects", subjects)
        object.__setattr__(self, "response_names", names)
        object.__setattr__(self, "covariate_names", cnames)

    @property
    def n(self) -> int:
        return len(self.subjects)

    @property
    def r(self) -> int:
        return self.subjects[0].y.shape[1]

    @property
    def p(self) -> int:
        x = self.subjects[0].x
        return 0 if x is None else x.shape[1]

    @property
    def has_covariates(self) -> bool:
        return self.p > 0

    def __len__(self):
        return self.n

    def __getitem__(self, i):
        return self.subjects[i]

    def subset(self, indices) -> "PanelDataset":
        """Panel made of the given subject indices (repeats allowed)."""
        return PanelDataset(tuple(self.subjects[i] for i in indices),
                            self.response_names, self.covariate_names)

    @cached_property
    def padded(self) -> Padded:
        n, r, p = self.n, self.r, self.p
        lengths = np.array([s.T for s in self.subjects])
        T = int(lengths.max())
        Y = np.zeros((n, T, r))
        obs = np.zeros((n, T, r), dtype=bool)
        drop = np.zeros((n, T), dtype=bool)
        present = np.arange(T)[None, :] < lengths[:, None]
        X = np.zeros((n, T, p)) if p else None
        for i, s in enumerate(self.subjects):
            Ti = s.T
            o = s.observed
            obs[i, :Ti] = o
            Y[i, :Ti] = np.where(o, s.y, 0.0)
            drop[i, :Ti] = s.dropout
            if X is not None:
                X[i, :Ti] = s.x
                X[i, Ti:] = s.x[-1]
        for a in (Y, obs, drop, present, lengths):
            a.setflags(write=False)
        return Padded(Y, obs, drop, present, X, lengths)


def _split_list(value):
    if value is None:
        return []
    if isinstance(value, str):
        return [v for v in value.replace("|", ",").split(",") if v]
    return list(value)


def _open_text(path_or_stream, mode):
    if isinstance(path_or_stream, (str, os.PathLike)):
        return open(path_or_stream, mode, newline="", encoding="utf-8"), True
    return path_or_stream, False


def parse_long_csv(path_or_stream, schema) -> PanelDataset:
    """Read a long-format CSV into a :class:`PanelDataset`.

    ``schema`` maps ``id``, ``time``, ``drop`` to column names and ``y``
    (and optionally ``x``) to lists of column names.
    """
    id_col = schema.get("id", "id")
    time_col = schema.get("time", "time")
    drop_col = schema.get("drop", "drop")
    y_cols = _split_list(schema.get("y"))
    x_cols = _split_list(schema.get("x"))
    if not y_cols:
        raise InvalidInput("schema must name at least one response column")

    fh, close = _open_text(path_or_stream, "r")
    try:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InvalidInput("empty input") from None
        try:
            pos = {c: header.index(c) for c in [id_col, time_col, drop_col, *y_cols, *x_cols]}
        except ValueError as exc:
            raise InvalidInput(f"column missing from header: {exc}") from None

        rows = {}
        order = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < len(header):
                raise ParseError(lineno, f"expected {len(header)} fields, got {len(row)}")
            sid = row[pos[id_col]].strip()
            try:
                t = int(row[pos[time_col]].strip())
            except ValueError:
                raise ParseError(lineno, "time index is not an integer") from None
            dtok = row[pos[drop_col]].strip()
            if dtok not in ("0", "1"):
                raise ParseError(lineno, f"dropout flag must be 0/1, got {dtok!r}")
            y = []
            for c in y_cols:
                tok = row[pos[c]].strip()
                if tok in MISSING_TOKENS:
                    y.append(np.nan)
                    continue
                try:
                    y.append(float(tok))
                except ValueError:
                    raise ParseError(lineno, f"bad response value {tok!r}") from None
            x = []
            for c in x_cols:
                tok = row[pos[c]].strip()
                if tok in MISSING_TOKENS:
                    raise InvalidInput(f"line {lineno}: missing covariate {c!r} "
                                       "(covariates must be complete)")
                try:
                    x.append(float(tok))
                except ValueError:
                    raise ParseError(lineno, f"bad covariate value {tok!r}") from None
            if sid not in rows:
                rows[sid] = []
                order.append(sid)
            rows[sid].append((t, dtok == "1", y, x))
    finally:
        if close:
            fh.close()

    if not order:
        raise InvalidInput("no data rows")
    subjects = []
    for sid in order:
        recs = sorted(rows[sid], key=lambda rec: rec[0])
        times = [rec[0] for rec in recs]
        if times != list(range(1, len(times) + 1)):
            raise InvalidInput(f"subject {sid!r}: time index must run 1..T_i without gaps "
                               f"or repeats, got {times}")
        d = np.array([rec[1] for rec in recs])
        y = np.array([rec[2] for rec in recs], dtype=float)
        x = np.array([rec[3] for rec in recs], dtype=float) if x_cols else None
        subjects.append(SubjectRecord(sid, y, d, x))
    return PanelDataset(tuple(subjects), tuple(y_cols), tuple(x_cols))


def _fmt(v):
    return "NA" if np.isnan(v) else format(float(v), ".17g")


def to_long_csv(data: PanelDataset, path_or_stream=None, schema=None):
    """Write ``data`` in the long CSV dialect; returns the text if no target."""
    schema = schema or {}
    header = [schema.get("id", "id"), schema.get("time", "time"), schema.get("drop", "drop"),
              *data.response_names, *data.covariate_names]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for s in data.subjects:
        for t in range(s.T):
            row = [s.id, t + 1, int(s.dropout[t])]
            row += [_fmt(v) for v in s.y[t]]
            if s.x is not None:
                row += [format(float(v), ".17g") for v in s.x[t]]
            w.writerow(row)
    text = buf.getvalue()
    if path_or_stream is None:
        return text
    fh, close = _open_text(path_or_stream, "w")
    try:
        fh.write(text)
    finally:
        if close:
            fh.close()
    return None


@dataclass(frozen=True)
class MissingnessSummary:
    dropout_rate: np.ndarray        # per occasion, among subjects still followed
    intermittent_rate: np.ndarray   # per response, over non-dropout cells
    fully_missing_occasions: int    # present, not dropped out, nothing observed


def missingness_summary(data: PanelDataset) -> MissingnessSummary:
    pad = data.padded
    followed = pad.present.sum(axis=0)
    drop_rate = pad.drop.sum(axis=0) / np.maximum(followed, 1)
    subst = pad.substantive
    cells = subst.sum()
    missing = (~pad.obs & subst[..., None]).sum(axis=(0, 1))
    inter = missing / cells if cells else np.zeros(data.r)
    full = int((subst & ~pad.obs.any(axis=2)).sum())
    return MissingnessSummary(drop_rate, inter, full)
