import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from crcim.nn import tensorio
from crcim.nn.quant import (plane_weights, qmax, quantize, quantize_per_sample, quantize_rows,
                            twos_complement_planes)


def test_quantize_examples():
    q = quantize([0.0, 0.0, 0.0], 4)
    assert q.values.tolist() == [0, 0, 0] and q.scale == 1.0
    q = quantize([-1.0, 1.0], 4)
    assert q.values.tolist() == [-7, 7] and q.scale == pytest.approx(1 / 7)
    with pytest.raises(ValueError):
        quantize([1.0], 1)
    with pytest.raises(ValueError):
        quantize([], 4)


finite = hnp.arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 9)),
                    elements=st.floats(-100, 100, allow_nan=False))


@settings(max_examples=60, deadline=None)
@given(finite, st.integers(2, 8))
def test_round_trip_error_at_most_half_a_step(x, bits):
    for q in (quantize(x, bits), quantize_rows(x, bits), quantize_per_sample(x, bits)):
        err = np.abs(q.dequantize() - x)
        scale = np.broadcast_to(np.asarray(q.scale).reshape(-1, 1) if np.ndim(q.scale) else q.scale, x.shape)
        assert np.all(err <= scale / 2 + 1e-9)
        assert q.values.min() >= -qmax(bits) - 1 and q.values.max() <= qmax(bits)


def test_per_sample_scale_covers_whole_sample():
    x = np.zeros((2, 3, 4))
    x[0, 1, 2] = 5.0
    x[1, 2, 0] = -2.0
    q = quantize_per_sample(x, 8)
    assert np.allclose(q.scale, [5 / 127, 2 / 127])
    assert q.values[0, 1, 2] == 127 and q.values[1, 2, 0] == -127


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 8), st.data())
def test_twos_complement_planes_reassemble(bits, data):
    v = np.array(data.draw(st.lists(st.integers(-(2 ** (bits - 1)), 2 ** (bits - 1) - 1), min_size=1, max_size=30)))
    planes = twos_complement_planes(v, bits)
    assert planes.shape == (bits, v.size) and set(np.unique(planes)) <= {0, 1}
    assert np.array_equal(np.tensordot(plane_weights(bits), planes.astype(float), axes=1), v)


def test_planes_reject_out_of_range():
    with pytest.raises(ValueError):
        twos_complement_planes([8], 4)


def test_tensorio_roundtrip(tmp_path):
    t = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.array([1.5, -2.0]),
         "c": np.array([[1, -2]], dtype=np.int64), "d": np.array([0, 255], dtype=np.uint8),
         "e": np.array([7], dtype=np.int32), "scalar": np.array(3.0)}
    back = tensorio.load(tensorio.save(tmp_path / "t.crt", t))
    assert list(back) == list(t)
    for k in t:
        assert back[k].dtype == t[k].dtype and np.array_equal(back[k], t[k])


def test_tensorio_rejects_bad_input():
    with pytest.raises(tensorio.FormatError):
        tensorio.loads(b"nope")
    buf = tensorio.dumps({"a": np.arange(10.0)})
    with pytest.raises(tensorio.FormatError):
        tensorio.loads(buf[:-8])
    with pytest.raises(TypeError):
        tensorio.dumps({"z": np.array([1 + 2j])})


def test_bundled_dataset_and_weights_present():
    d = tensorio.load_bundled("digits.crt")
    assert d["images"].shape == (1797, 8, 8) and d["labels"].max() == 9
    assert np.intersect1d(d["train_idx"], d["test_idx"]).size == 0
    assert d["train_idx"].size + d["test_idx"].size == 1797
    w = tensorio.load_bundled("desk_vit.crt")
    assert w["config"].tolist() == [32, 4, 64, 2, 2, 10, 8]
