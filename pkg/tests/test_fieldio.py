import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from signorini_lab import fieldio
from signorini_lab.grid import ORIGINAL, WeightedField, make_grid

SMALL = make_grid(2, 1.0, 0.25)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, SMALL.shape, elements=st.floats(-1e6, 1e6)), st.floats(-5, 5))
def test_binary_round_trip(values, time):
    f = WeightedField(SMALL, values, time)
    back = fieldio.loads(fieldio.dumps(f))
    assert back.grid == f.grid and back.time == time and back.kind == f.kind
    assert np.array_equal(back.values, f.values)


def test_binary_header_and_kind(tmp_path):
    g = make_grid(3, 1.0, 0.5)
    f = WeightedField(g, np.arange(g.size, dtype=float).reshape(g.shape), -0.25, ORIGINAL)
    path = tmp_path / "f.wfld"
    fieldio.save(f, path)
    blob = path.read_bytes()
    assert blob[:4] == b"WFLD"
    back = fieldio.load(path)
    assert back.kind == ORIGINAL and back.time == -0.25
    # row-major payload: the last axis (y_n) varies fastest
    assert np.array_equal(np.frombuffer(blob[fieldio._HEAD.size:], "<f8"), np.arange(g.size))


def test_corrupt_blobs_rejected():
    blob = fieldio.dumps(WeightedField(SMALL, np.zeros(SMALL.shape)))
    with pytest.raises(ValueError):
        fieldio.loads(blob[:10])
    with pytest.raises(ValueError):
        fieldio.loads(b"XXXX" + blob[4:])
    with pytest.raises(ValueError):
        fieldio.loads(blob[:-8])


def test_csv_round_trip():
    rng = np.random.default_rng(0)
    f = WeightedField(SMALL, rng.standard_normal(SMALL.shape), 0.5)
    text = fieldio.to_csv(f)
    assert text.splitlines()[0] == "y1,y2,value"
    back = fieldio.from_csv(text, SMALL, 0.5)
    assert np.array_equal(back.values, f.values)
    with pytest.raises(ValueError):
        fieldio.from_csv(text, make_grid(2, 1.0, 0.5))
