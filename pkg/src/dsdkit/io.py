"""CSV and JSON file formats for prediction tables, noise reports and cleaned labels.

Prediction CSV::

    sample_id,video_id,frame_idx,noisy_label,p0,...,p{m-1}

Floats are written with ``repr`` so a save -> load -> save cycle is byte-identical.
Line numbers in error messages are 1-based file lines (the header is line 1).
"""

from __future__ import annotations

import csv
import io
import json
from os import PathLike
from pathlib import Path
from typing import Iterable

import numpy as np

from dsdkit.errors import ParseError, ValidationError
from dsdkit.trcl import STOCHASTIC_TOL, Flag, NoiseReport, PredictionTable

BASE_COLUMNS = ("sample_id", "video_id", "frame_idx", "noisy_label")
CLEANED_COLUMNS = ("sample_id", "video_id", "frame_idx", "noisy_label", "cleaned_label")


def _parse_int(text: str, column: str, path, line: int) -> int:
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"{column} {text!r} is not an integer", path=path, line=line) from None


def _parse_float(text: str, column: str, path, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"{column} {text!r} is not a number", path=path, line=line) from None
    if not np.isfinite(value) or value < 0:
        raise ParseError(f"{column} = {text} must be finite and non-negative", path=path, line=line)
    return value


def parse_predictions_csv(text: str, *, path=None) -> PredictionTable:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty file", path=path, line=1) from None
    m = len(header) - len(BASE_COLUMNS)
    expected = [*BASE_COLUMNS, *(f"p{k}" for k in range(max(m, 0)))]
    if m < 2 or header != expected:
        raise ParseError(
            f"bad header {','.join(header)!r}; expected sample_id,video_id,frame_idx,noisy_label,p0,...,p{{m-1}} with m >= 2",
            path=path, line=1,
        )

    ids, videos, frames, labels, probs = [], [], [], [], []
    last_frame: dict[str, int] = {}
    seen_ids: set[int] = set()
    for row in reader:
        line = reader.line_num
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", path=path, line=line)
        sid = _parse_int(row[0], "sample_id", path, line)
        vid = row[1]
        frame = _parse_int(row[2], "frame_idx", path, line)
        label = _parse_int(row[3], "noisy_label", path, line)
        p = [_parse_float(v, f"p{k}", path, line) for k, v in enumerate(row[4:])]
        if sid in seen_ids:
            raise ParseError(f"duplicate sample_id {sid}", path=path, line=line)
        if not 0 <= label < m:
            raise ParseError(f"noisy_label {label} outside [0, {m})", path=path, line=line)
        total = sum(p)
        if abs(total - 1.0) > STOCHASTIC_TOL:
            raise ParseError(f"probabilities sum to {total:.6g}, not 1 within {STOCHASTIC_TOL}", path=path, line=line)
        if vid in last_frame and frame <= last_frame[vid]:
            raise ParseError(
                f"frame_idx {frame} of video {vid!r} does not increase (previous {last_frame[vid]})",
                path=path, line=line,
            )
        last_frame[vid] = frame
        seen_ids.add(sid)
        ids.append(sid)
        videos.append(vid)
        frames.append(frame)
        labels.append(label)
        probs.append(p)
    if not ids:
        raise ParseError("no data rows", path=path, line=2)
    return PredictionTable(
        np.asarray(ids, dtype=np.int64),
        tuple(videos),
        np.asarray(frames, dtype=np.int64),
        np.asarray(labels, dtype=np.int64),
        np.asarray(probs, dtype=np.float64),
    )


def load_predictions_csv(path: str | PathLike) -> PredictionTable:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"not UTF-8: {exc}", path=path) from None
    return parse_predictions_csv(text, path=path)


def format_predictions_csv(table: PredictionTable) -> str:
    """Render a table; rows must already satisfy the per-video frame ordering."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([*BASE_COLUMNS, *(f"p{k}" for k in range(table.m))])
    for r in range(table.n):
        writer.writerow([
            int(table.sample_ids[r]),
            table.video_ids[r],
            int(table.frame_idx[r]),
            int(table.noisy_labels[r]),
            *(repr(float(v)) for v in table.probs[r]),
        ])
    return buf.getvalue()


def save_predictions_csv(table: PredictionTable, path: str | PathLike) -> None:
    Path(path).write_text(format_predictions_csv(table), encoding="utf-8")


# --------------------------------------------------------------------------
# noise reports
# --------------------------------------------------------------------------

def format_noise_report(report: NoiseReport) -> str:
    return json.dumps(report.to_dict(), indent=2) + "\n"


def save_noise_report(report: NoiseReport, path: str | PathLike) -> None:
    Path(path).write_text(format_noise_report(report), encoding="utf-8")


def load_noise_report(path: str | PathLike) -> NoiseReport:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path=path, line=exc.lineno) from None
    try:
        return NoiseReport.from_dict(data)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"not a noise report: {exc}", path=path) from None


# --------------------------------------------------------------------------
# cleaned labels
# --------------------------------------------------------------------------

def format_cleaned_csv(table: PredictionTable, flagged: Iterable[Flag]) -> str:
    """One row per sample with its original and cleaned label."""
    cleaned = table.noisy_labels.copy()
    row_of = {int(s): r for r, s in enumerate(table.sample_ids)}
    for f in flagged:
        if f.sample_id not in row_of:
            raise ValidationError(f"flagged sample {f.sample_id} is not in the table")
        cleaned[row_of[f.sample_id]] = f.suggested_label
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CLEANED_COLUMNS)
    for r in range(table.n):
        writer.writerow([
            int(table.sample_ids[r]), table.video_ids[r], int(table.frame_idx[r]),
            int(table.noisy_labels[r]), int(cleaned[r]),
        ])
    return buf.getvalue()


def save_cleaned_csv(table: PredictionTable, flagged: Iterable[Flag], path: str | PathLike) -> None:
    Path(path).write_text(format_cleaned_csv(table, flagged), encoding="utf-8")
