import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from ami import checkpoint as ck


def test_round_trip_preserves_arrays_and_meta(tmp_path):
    blocks = {"w": np.random.default_rng(0).normal(size=(3, 4)), "i": np.arange(5), "b": np.array([True, False])}
    p = tmp_path / "c.ami"
    ck.save(p, blocks, {"epoch": 3, "name": "x"})
    back, meta = ck.load(p)
    assert meta == {"epoch": 3, "name": "x"}
    for k in blocks:
        assert back[k].tobytes() == blocks[k].tobytes() and back[k].shape == blocks[k].shape


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(max_dims=3, max_side=4)))
def test_any_float_array_round_trips_bitwise(a):
    back, _ = ck.loads(ck.dumps({"a": a}, {}))
    assert back["a"].tobytes() == a.tobytes()


def test_same_content_gives_same_bytes():
    blocks = {"a": np.ones(3), "b": np.zeros((2, 2))}
    assert ck.dumps(blocks, {"k": 1, "j": [1, 2]}) == ck.dumps(dict(blocks), {"j": [1, 2], "k": 1})


def test_bad_magic_and_truncation():
    with pytest.raises(ck.CheckpointError, match="magic"):
        ck.loads(b"not a checkpoint at all")
    buf = ck.dumps({"a": np.ones(10)}, {})
    with pytest.raises(ck.CheckpointError, match="truncated"):
        ck.loads(buf[:-8])


def test_version_and_kind_are_checked():
    buf = ck.dumps({"a": np.ones(1)}, {}, kind="dataset")
    with pytest.raises(ck.CheckpointError, match="expected a 'model'"):
        ck.loads(buf, kind="model")
    tampered = buf.replace(b'"format_version":1', b'"format_version":9')
    with pytest.raises(ck.CheckpointError, match="version"):
        ck.loads(tampered)


def test_unsupported_dtype():
    with pytest.raises(ck.CheckpointError, match="dtype"):
        ck.dumps({"s": np.array(["x"])}, {})
