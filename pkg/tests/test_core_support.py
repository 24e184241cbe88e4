"""Gradient checker, random streams, initializers, AdamW and RDT files."""

import io
import math
import struct

import numpy as np
import pytest

from dformer.core import (AdamState, AdamW, NondeterministicError, Rng, Tensor, adamw_step, grad_check,
                          init_trunc_normal, load_checkpoint, load_rdt, ops, precision, save_checkpoint,
                          save_rdt, trunc_normal)
from dformer.core.nn import drop_path
from dformer.core.rdt import BadDTypeError, BadMagicError, RDTError, TruncatedError
from dformer.core.tensor import NonFiniteError
from dformer.verify import PRIMITIVE_TOL, primitive_cases


# ------------------------------------------------------------------ grad_check


def test_grad_check_polynomial():
    with precision("f64"):
        x = Tensor(np.random.default_rng(0).standard_normal((3, 4)))
        err = grad_check(lambda: ops.sum(ops.hadamard(x, x)), x, h=1e-5)
    assert err < 1e-9


def test_grad_check_softmax_cross_entropy():
    with precision("f64"):
        g = np.random.default_rng(1)
        x = Tensor(g.standard_normal((5, 4)))
        t = g.integers(0, 4, 5)
        err = grad_check(lambda: ops.cross_entropy(x, t), x)
    assert err < 1e-7


def test_grad_check_detects_nondeterminism():
    counter = iter(range(100))
    with precision("f64"):
        x = Tensor(np.ones(3))
        with pytest.raises(NondeterministicError):
            grad_check(lambda: ops.sum(ops.mul(x, float(next(counter)))), x)


def test_grad_check_requires_f64():
    with pytest.raises(TypeError):
        grad_check(lambda: ops.sum(x), x := Tensor(np.ones(2, np.float32)))


def test_grad_check_catches_a_wrong_gradient():
    from dformer.core.tensor import record
    def bad_square(a):
        return record(a.data**2, (a,), lambda g: (g * a.data,), "bad_square")  # missing factor 2
    with precision("f64"):
        x = Tensor(np.array([1.0, 2.0]))
        assert grad_check(lambda: ops.sum(bad_square(x)), x) > 0.1


@pytest.mark.parametrize("case", primitive_cases(5), ids=lambda c: c[0])
def test_every_primitive_passes_gradcheck(case):
    name, fn = case
    err = fn(Rng(0).split("primitive", name))
    assert err < PRIMITIVE_TOL, f"{name}: {err:.2e}"


# ------------------------------------------------------------------ Rng


def test_rng_reproducible_and_split_independent():
    a = Rng(7).split("x", 3).normal(5)
    b = Rng(7).split("x", 3).normal(5)
    np.testing.assert_array_equal(a, b)
    r = Rng(7)
    r.split("other").normal(100)  # draws on another path do not disturb this one
    np.testing.assert_array_equal(r.split("x", 3).normal(5), a)
    assert not np.array_equal(Rng(7).split("x", 4).normal(5), a)
    assert not np.array_equal(Rng(8).split("x", 3).normal(5), a)


def test_rng_golden_values():
    # platform-stable PCG64 stream: pinned so silent changes to the keying are caught
    ss = np.random.SeedSequence(entropy=5, spawn_key=(1,))
    ref = np.random.Generator(np.random.PCG64(ss)).random(3)
    np.testing.assert_array_equal(Rng(5).split(1).random(3), ref)


# ------------------------------------------------------------------ init


def test_trunc_normal_bounds_and_mean():
    v = init_trunc_normal([4], 0.02, Rng(0))
    assert v.requires_grad
    assert np.all(np.abs(v.data) <= 0.04)
    big = trunc_normal([100_000], 1.0, Rng(1), np.float64)
    assert abs(big.mean()) < 3 / math.sqrt(1e5)
    assert np.abs(big).max() <= 2.0
    # truncation at two sigma shrinks the std to about 0.88
    assert big.std() == pytest.approx(0.8796, abs=0.01)
    tiny = trunc_normal([50], 1e-12, Rng(2))
    assert np.abs(tiny).max() <= 2e-12


def test_trunc_normal_errors():
    with pytest.raises(ValueError):
        trunc_normal([0, 3], 0.02, Rng(0))
    with pytest.raises(ValueError):
        trunc_normal([3], 0.0, Rng(0))


# ------------------------------------------------------------------ AdamW


def test_adamw_zero_grad_cases():
    p = Tensor(np.array([1.0, -2.0]))
    st = AdamState.zeros_like([p])
    adamw_step([p], [np.zeros(2)], st, lr=0.01)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    adamw_step([p], [np.zeros(2)], st, lr=0.01, weight_decay=0.1)
    np.testing.assert_allclose(p.data, np.array([1.0, -2.0]) * (1 - 0.001), rtol=0, atol=1e-15)


def test_adamw_hand_iteration():
    lr, b1, b2, eps = 0.1, 0.9, 0.999, 1e-8
    p = Tensor(np.array([0.5]))
    st = AdamState.zeros_like([p])
    theta, m, v = 0.5, 0.0, 0.0
    for t in range(1, 6):
        g = 1.0 + 0.5 * t
        adamw_step([p], [np.array([g])], st, lr, (b1, b2), eps, weight_decay=0.05)
        theta *= 1 - lr * 0.05
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        assert p.data[0] == pytest.approx(theta, abs=1e-14)
    # constant unit gradient: first step moves by lr / (1 + eps)
    q = Tensor(np.array([0.0]))
    adamw_step([q], [np.array([1.0])], AdamState.zeros_like([q]), 0.01)
    assert q.data[0] == pytest.approx(-0.01 / (1 + 1e-8), abs=1e-15)


def test_adamw_rejects_non_finite_grad():
    p = Tensor(np.zeros(2))
    with pytest.raises(NonFiniteError):
        adamw_step([p], [np.array([np.nan, 0.0])], AdamState.zeros_like([p]), 0.1)


def test_adamw_skips_decay_on_vectors():
    w = Tensor(np.ones((2, 2)))
    b = Tensor(np.ones(2))
    opt = AdamW([w, b], lr=0.1, weight_decay=0.5)
    opt.step()
    np.testing.assert_allclose(w.data, 0.95)
    np.testing.assert_array_equal(b.data, 1.0)


# ------------------------------------------------------------------ drop path


def test_drop_path_rates():
    x = Tensor(np.ones((64, 2, 1, 1)))
    assert drop_path(x, 0.3, training=False, rng=Rng(0)) is x
    np.testing.assert_array_equal(drop_path(x, 1.0, True, Rng(0)).data, 0)
    y = drop_path(x, 0.5, True, Rng(0)).data
    assert set(np.unique(y)) <= {0.0, 2.0}
    np.testing.assert_array_equal(y, drop_path(x, 0.5, True, Rng(0)).data)


# ------------------------------------------------------------------ RDT


@pytest.mark.parametrize("dtype", [np.float32, np.uint8, np.int32])
def test_rdt_roundtrip(tmp_path, dtype):
    a = (np.random.default_rng(0).standard_normal((2, 3, 4, 5)) * 50).astype(dtype)
    save_rdt(a, tmp_path / "a.rdt")
    b = load_rdt(tmp_path / "a.rdt")
    assert b.dtype == a.dtype and b.shape == a.shape
    assert a.tobytes() == b.tobytes()


def test_rdt_header_layout(tmp_path):
    save_rdt(np.zeros((2, 3), np.uint8), tmp_path / "h.rdt")
    raw = (tmp_path / "h.rdt").read_bytes()
    assert raw[:4] == b"RDT1"
    assert struct.unpack("<BBH2I", raw[4:16]) == (1, 2, 0, 2, 3)
    assert len(raw) == 16 + 6


def test_rdt_errors(tmp_path):
    p = tmp_path / "x.rdt"
    save_rdt(np.ones((4, 4), np.float32), p)
    raw = p.read_bytes()
    (tmp_path / "magic.rdt").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(BadMagicError):
        load_rdt(tmp_path / "magic.rdt")
    (tmp_path / "code.rdt").write_bytes(raw[:4] + b"\x09" + raw[5:])
    with pytest.raises(BadDTypeError):
        load_rdt(tmp_path / "code.rdt")
    (tmp_path / "short.rdt").write_bytes(raw[:-4])
    with pytest.raises(TruncatedError, match="expected 64 bytes, got 60"):
        load_rdt(tmp_path / "short.rdt")
    with pytest.raises(BadDTypeError):
        save_rdt(np.ones(2, np.float64), tmp_path / "f64.rdt")
    for e in (BadMagicError, BadDTypeError, TruncatedError):
        assert issubclass(e, RDTError)


def test_checkpoint_roundtrip(tmp_path):
    tensors = {"stage1.block1.lea.dwconv.weight": np.arange(6, dtype=np.float32).reshape(2, 3),
               "b": np.array([3], np.int32)}
    save_checkpoint(tensors, tmp_path / "c.ckpt")
    back = load_checkpoint(tmp_path / "c.ckpt")
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].tobytes() == tensors[k].tobytes()
