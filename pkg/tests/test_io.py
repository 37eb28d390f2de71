import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsdkit import io, trcl
from dsdkit.errors import ParseError, ValidationError
from dsdkit.trcl import Flag
from dsdkit.verify import random_table

HEADER = "sample_id,video_id,frame_idx,noisy_label,p0,p1\n"
THREE = HEADER + "10,a,0,0,0.9,0.1\n11,a,1,1,0.25,0.75\n12,b,5,0,0.5,0.5\n"


def test_three_row_hand_csv():
    t = io.parse_predictions_csv(THREE)
    assert t.sample_ids.tolist() == [10, 11, 12]
    assert t.video_ids == ("a", "a", "b")
    assert t.frame_idx.tolist() == [0, 1, 5]
    assert t.noisy_labels.tolist() == [0, 1, 0]
    assert t.probs.tolist() == [[0.9, 0.1], [0.25, 0.75], [0.5, 0.5]]
    assert io.format_predictions_csv(t) == THREE


@pytest.mark.parametrize("text, line, fragment", [
    (HEADER + "1,a,0,0,0.5,0.5\n2,a,1,1,0.5,0.4\n", 3, "sum to 0.9"),
    ("id,video_id,frame_idx,noisy_label,p0,p1\n1,a,0,0,1,0\n", 1, "bad header"),
    ("sample_id,video_id,frame_idx,noisy_label,p0\n1,a,0,0,1\n", 1, "bad header"),
    (HEADER + "1,a,3,0,0.5,0.5\n2,b,0,0,0.5,0.5\n3,a,3,1,0.5,0.5\n", 4, "does not increase"),
    (HEADER + "1,a,0,0,0.5,0.5\n1,a,1,1,0.5,0.5\n", 3, "duplicate sample_id"),
    (HEADER + "1,a,0,2,0.5,0.5\n", 2, "noisy_label 2"),
    (HEADER + "1,a,x,0,0.5,0.5\n", 2, "frame_idx"),
    (HEADER + "1,a,0,0,0.5\n", 2, "fields"),
    (HEADER + "1,a,0,0,nan,0.5\n", 2, "p0"),
    (HEADER, 2, "no data rows"),
    ("", 1, "empty"),
])
def test_parse_errors_carry_line_numbers(text, line, fragment):
    with pytest.raises(ParseError, match=fragment) as err:
        io.parse_predictions_csv(text, path="t.csv")
    assert err.value.line == line and f"t.csv:{line}:" in str(err.value)


def test_rows_within_tolerance_are_accepted():
    t = io.parse_predictions_csv(HEADER + "1,a,0,0,0.50005,0.5\n")
    assert t.probs[0, 0] == 0.50005


def test_load_reports_path(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text(HEADER + "1,a,0,0,0.9,0.0\n")
    with pytest.raises(ParseError, match="bad.csv:2"):
        io.load_predictions_csv(path)


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1), st.integers(2, 5), st.integers(5, 40))
def test_csv_round_trip_is_byte_identical(tmp_path_factory, seed, m, n):
    tmp = tmp_path_factory.mktemp("rt")
    t = random_table(np.random.default_rng(seed), max(n, m), m)
    a, b = tmp / "a.csv", tmp / "b.csv"
    io.save_predictions_csv(t, a)
    back = io.load_predictions_csv(a)
    io.save_predictions_csv(back, b)
    assert a.read_bytes() == b.read_bytes()
    assert np.array_equal(back.probs, t.probs) and back.video_ids == t.video_ids


def test_noise_report_round_trip(tmp_path):
    t = random_table(np.random.default_rng(5), 80, 4)
    report = trcl.trcl_pipeline(t, trcl.CleaningConfig(protected_classes=frozenset({1}), iterations=2))
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    io.save_noise_report(report, a)
    io.save_noise_report(io.load_noise_report(a), b)
    assert a.read_bytes() == b.read_bytes()
    data = json.loads(a.read_text())
    assert set(data) == {"flagged", "thresholds", "confusion", "joint", "config", "iterations"}
    assert data["config"]["protected_classes"] == [1] and len(data["iterations"]) == 3


def test_noise_report_errors(tmp_path):
    bad = tmp_path / "r.json"
    bad.write_text("{\n  \"flagged\": [")
    with pytest.raises(ParseError, match="invalid JSON"):
        io.load_noise_report(bad)
    bad.write_text("{}")
    with pytest.raises(ParseError, match="not a noise report"):
        io.load_noise_report(bad)


def test_cleaned_csv():
    t = io.parse_predictions_csv(THREE)
    text = io.format_cleaned_csv(t, [Flag(12, 0, 1, 0.0)])
    assert text == ("sample_id,video_id,frame_idx,noisy_label,cleaned_label\n"
                    "10,a,0,0,0\n11,a,1,1,1\n12,b,5,0,1\n")
    with pytest.raises(ValidationError):
        io.format_cleaned_csv(t, [Flag(99, 0, 1, 0.0)])
