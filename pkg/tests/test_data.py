import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from headgen.data import (Trace, TraceFormatError, TraceSet, TraceValidationError, WindowSet, check_angle,
                          load_trace_csv, load_windows, save_trace_csv, save_windows, validate_trace)


def write(tmp_path, text, name="t.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_two_rows(tmp_path):
    p = write(tmp_path, "timestamp,yaw,pitch,roll\n0.0,10,5,-1\n0.004,11,5,-1\n")
    t = load_trace_csv(p, 250.0)
    assert len(t) == 2
    assert t.yaw.tolist() == [10.0, 11.0]
    assert t.subject_id == "t"
    assert t.rate_hz == 250.0


def test_header_only_is_empty_trace(tmp_path):
    p = write(tmp_path, "timestamp,yaw,pitch,roll\n")
    with pytest.raises(TraceValidationError, match="empty trace"):
        load_trace_csv(p, 250.0)


def test_nan_names_row(tmp_path):
    p = write(tmp_path, "timestamp,yaw,pitch,roll\n0,1,2,3\n1,1,2,3\n2,NaN,2,3\n")
    with pytest.raises(TraceValidationError, match="row 3"):
        load_trace_csv(p, 250.0)


@pytest.mark.parametrize("text", [
    "timestamp,yaw,pitch\n0,1,2\n",
    "timestamp,yaw,pitch,roll,extra\n0,1,2,3,4\n",
    "timestamp,yaw,pitch,roll\n0,1,2\n",
    "timestamp,yaw,pitch,roll\n0,1,x,3\n",
    "",
])
def test_format_errors(tmp_path, text):
    with pytest.raises(TraceFormatError):
        load_trace_csv(write(tmp_path, text), 250.0)


def test_non_monotonic_timestamps(tmp_path):
    p = write(tmp_path, "timestamp,yaw,pitch,roll\n0,1,2,3\n0,1,2,3\n")
    with pytest.raises(TraceValidationError, match="row 2"):
        load_trace_csv(p, 250.0)


def test_validate_warnings():
    ok = Trace("a", 250.0, np.zeros((4, 3)))
    assert validate_trace(ok) == []
    pitchy = Trace("a", 250.0, np.array([[0.0, 95.0, 0.0], [0.0, 0.0, 0.0]]))
    w = validate_trace(pitchy)
    assert len(w) == 1 and "pitch out of range" in w[0]
    roll = Trace("a", 250.0, np.array([[179.0, 0.0, 0.0], [-179.0, 0.0, 0.0]]))
    w = validate_trace(roll)
    assert len(w) == 1 and "possible rollover" in w[0]


def test_check_angle():
    assert check_angle(-180.0, "wrapped") == -180.0
    with pytest.raises(ValueError):
        check_angle(180.0, "wrapped")
    with pytest.raises(ValueError):
        check_angle(90.5, "pitch")
    with pytest.raises(ValueError):
        check_angle(float("inf"))


def test_invariants():
    with pytest.raises(ValueError):
        Trace("a", 0.0, np.zeros((3, 3)))
    with pytest.raises(TraceValidationError):
        Trace("a", 1.0, np.zeros((0, 3)))
    with pytest.raises(ValueError):
        TraceSet((Trace("a", 1.0, np.zeros((3, 3))), Trace("b", 2.0, np.zeros((3, 3)))))
    with pytest.raises(ValueError):
        WindowSet(np.zeros((2, 1, 3)), 1.0)
    with pytest.raises(ValueError):
        WindowSet(np.full((2, 3, 3), np.nan), 1.0)
    t = Trace("a", 1.0, np.zeros((3, 3)))
    with pytest.raises(ValueError):
        t.samples[0, 0] = 1.0


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(*[st.floats(-1e4, 1e4, allow_nan=False)] * 3), min_size=1, max_size=40))
def test_csv_round_trip(tmp_path_factory, rows):
    d = tmp_path_factory.mktemp("rt")
    t = Trace("s", 250.0, np.array(rows))
    save_trace_csv(t, d / "s.csv")
    back = load_trace_csv(d / "s.csv", 250.0)
    assert len(back) == len(rows)
    np.testing.assert_allclose(back.samples, t.samples, atol=1e-9, rtol=0)


def test_window_archive_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    ws = WindowSet(rng.normal(size=(7, 5, 3)), 16.5, {"note": "x"})
    save_windows(ws, tmp_path / "w", {"extra": 1})
    back = load_windows(tmp_path / "w")
    assert np.array_equal(back.data, ws.data)
    assert back.rate_hz == 16.5
    assert back.meta == {"note": "x", "extra": 1}
    raw = (tmp_path / "w" / "data.bin").read_bytes()
    assert np.frombuffer(raw, "<f8")[15] == ws.data[1, 0, 0]  # window-major, step-major, axis-minor


def test_window_archive_truncated(tmp_path):
    save_windows(WindowSet(np.zeros((2, 3, 3)), 1.0), tmp_path / "w")
    p = tmp_path / "w" / "data.bin"
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(ValueError, match="bytes"):
        load_windows(tmp_path / "w")
