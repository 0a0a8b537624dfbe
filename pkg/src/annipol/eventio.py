"""File formats: event CSV, histogram CSV, fit JSON, cutflow text.

Every writer produces byte-stable output: fixed column order, fixed float
formatting, LF line endings and, for ``.gz`` paths, a zeroed gzip mtime.
"""

from __future__ import annotations

import gzip
import io
import json
from pathlib import Path

import numpy as np
import pandas as pd

from annipol.analysis import DeltaPhiHistogram
from annipol.detector import DETECTOR_IDS, HitTable
from annipol.errors import AnnipolError

EVENT_COLUMNS = ["event_id", "detector", "ix", "iy", "energy_kev", "time_ns"]
TRUTH_COLUMNS = ["truth_theta1", "truth_theta2", "truth_dphi", "truth_thetascat", "truth_first_pixel"]
HIST_COLUMNS = ["bin_low_deg", "bin_high_deg", "raw", "mixed", "corrected", "corrected_err"]


class FormatError(AnnipolError):
    """A file does not follow the expected layout."""


def open_text(path, mode: str = "r"):
    """Open a text file, transparently gzip-compressed when the name ends in ``.gz``."""
    path = Path(path)
    if path.suffix == ".gz":
        if "w" in mode:
            raw = open(path, "wb")
            gz = gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0)
            return _OwningWrapper(gz, raw)
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="ascii", newline="")
    return open(path, mode, encoding="ascii", newline="")


class _OwningWrapper(io.TextIOWrapper):
    """Text wrapper that also closes the underlying raw file."""

    def __init__(self, gz, raw):
        super().__init__(gz, encoding="ascii", newline="")
        self._raw = raw

    def close(self):
        super().close()
        self._raw.close()


def _frame(table: HitTable, truth: bool) -> pd.DataFrame:
    cols = {
        "event_id": table.event_id,
        "detector": np.asarray(DETECTOR_IDS)[table.detector],
        "ix": table.ix,
        "iy": table.iy,
        "energy_kev": table.energy,
        "time_ns": table.time,
    }
    if truth:
        if not table.has_truth:
            raise FormatError("truth columns requested but the table carries no truth")
        for name in TRUTH_COLUMNS:
            cols[name] = getattr(table, name)
    return pd.DataFrame(cols)


class EventWriter:
    """Streams :class:`HitTable` chunks into one event CSV, header first.

    Chunks must arrive in ascending event-id order.
    """

    def __init__(self, path, truth: bool = False):
        self.path = Path(path)
        self.truth = truth
        self._fh = open_text(self.path, "w")
        self._fh.write(",".join(EVENT_COLUMNS + (TRUTH_COLUMNS if truth else [])) + "\n")
        self._last_id = -1
        self.rows = 0

    def write(self, table: HitTable):
        if len(table) == 0:
            return
        if table.event_id[0] <= self._last_id or np.any(np.diff(table.event_id) < 0):
            raise FormatError("event chunks must arrive in ascending event-id order")
        self._last_id = int(table.event_id[-1])
        _frame(table, self.truth).to_csv(self._fh, header=False, index=False,
                                         float_format="%.3f", lineterminator="\n")
        self.rows += len(table)

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_events(path, table: HitTable, truth: bool = False) -> None:
    with EventWriter(path, truth) as w:
        w.write(table)


def read_events(path) -> HitTable:
    """Read an event CSV; truth columns are picked up when present."""
    with open_text(path) as fh:
        header = fh.readline().rstrip("\n").split(",")
        if header[: len(EVENT_COLUMNS)] != EVENT_COLUMNS:
            raise FormatError(f"{path}: unexpected event header {header}")
        extra = header[len(EVENT_COLUMNS):]
        if extra and extra != TRUTH_COLUMNS:
            raise FormatError(f"{path}: unexpected truth columns {extra}")
        dtypes = {"event_id": np.int64, "detector": str, "ix": np.int16, "iy": np.int16,
                  "energy_kev": float, "time_ns": float}
        dtypes.update({c: float for c in TRUTH_COLUMNS[:-1]})
        dtypes["truth_first_pixel"] = np.int8
        try:
            df = pd.read_csv(fh, header=None, names=header, dtype={k: v for k, v in dtypes.items() if k in header})
        except (ValueError, pd.errors.ParserError) as exc:
            raise FormatError(f"{path}: {exc}") from None
    ids = df["event_id"].to_numpy()
    if np.any(np.diff(ids) < 0):
        raise FormatError(f"{path}: rows are not grouped by ascending event_id")
    lookup = {name: k for k, name in enumerate(DETECTOR_IDS)}
    codes, uniq = pd.factorize(df["detector"])
    try:
        det = np.array([lookup[d] for d in uniq], dtype=np.int8)
    except KeyError as exc:
        raise FormatError(f"{path}: unknown detector id {exc}") from None
    table = HitTable(
        event_id=ids,
        detector=det[codes] if len(uniq) else np.empty(0, np.int8),
        ix=df["ix"].to_numpy(np.int16),
        iy=df["iy"].to_numpy(np.int16),
        energy=df["energy_kev"].to_numpy(float),
        time=df["time_ns"].to_numpy(float),
    )
    if np.any(table.energy < 0):
        raise FormatError(f"{path}: negative energy")
    if extra:
        for name in TRUTH_COLUMNS:
            setattr(table, name, df[name].to_numpy())
    return table


def write_histogram(path, hist: DeltaPhiHistogram) -> None:
    n = hist.n_bins
    mixed = hist.mixed_counts * hist.mixed_scale if hist.mixed_counts is not None else np.zeros(n)
    with open_text(path, "w") as fh:
        fh.write(",".join(HIST_COLUMNS) + "\n")
        for k in range(n):
            fh.write(
                f"{hist.bin_edges[k]:.3f},{hist.bin_edges[k + 1]:.3f},{int(hist.raw_counts[k])},"
                f"{mixed[k]:.6f},{hist.corrected_values[k]:.6f},{hist.corrected_errors[k]:.6f}\n"
            )


def read_histogram(path) -> pd.DataFrame:
    with open_text(path) as fh:
        df = pd.read_csv(fh)
    if list(df.columns) != HIST_COLUMNS:
        raise FormatError(f"{path}: unexpected histogram header {list(df.columns)}")
    return df


def dumps_json(obj) -> str:
    """Canonical JSON: insertion key order, two-space indent, trailing newline."""
    return json.dumps(obj, indent=2, allow_nan=True) + "\n"


def write_json(path, obj) -> None:
    with open_text(path, "w") as fh:
        fh.write(dumps_json(obj))


def write_text(path, text: str) -> None:
    with open_text(path, "w") as fh:
        fh.write(text)


def write_csv_rows(path, header, rows, fmt: str = "{:.6f}") -> None:
    """Plain CSV of numeric rows; floats use ``fmt``, ints are written as is."""
    with open_text(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) if isinstance(v, (int, np.integer)) else fmt.format(v) for v in row) + "\n")
