"""Shared test helpers: finite-difference oracles and small configs."""

from __future__ import annotations

import numpy as np
import pytest

from i2p import autodiff as ad
from i2p.config import TrainConfig


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """Max elementwise relative error with a magnitude floor."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max())


def fd_gradient(loss_fn, tensor: ad.Tensor, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar loss wrt one tensor."""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.ravel()
    gflat = grad.ravel()
    with ad.no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(loss_fn().data)
            flat[i] = orig - h
            fm = float(loss_fn().data)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def fd_check(loss_fn, tensors: dict[str, ad.Tensor], h: float = 1e-5,
             tol: float = 1e-5, floor: float = 1e-4) -> dict[str, float]:
    """Backprop vs central differences for every tensor; returns max errors."""
    for t in tensors.values():
        t.grad = None
    loss = loss_fn()
    ad.backward(loss)
    errors = {}
    for name, t in tensors.items():
        fd = fd_gradient(loss_fn, t, h=h)
        got = t.grad if t.grad is not None else np.zeros_like(t.data)
        errors[name] = rel_error(got, fd, floor=floor)
        assert errors[name] < tol, f"{name}: gradient mismatch {errors[name]:.3g} (tol {tol})"
    return errors


@pytest.fixture
def tiny_cfg() -> TrainConfig:
    """Smallest architecture that exercises every code path."""
    return TrainConfig(
        synth_shapes=8, synth_test_shapes=8, synth_jitter=0.01,
        n_points=64, tokens=16, neighbors=4, channels=16, heads=4,
        encoder_blocks=[1], decoder_blocks=[1], stage_tokens=[16],
        hierarchical=False, mlp_ratio=2.0,
        views=3, resolution=32, feature_grid=8,
        epochs=2, warmup_epochs=1, batch_size=4,
    ).validate()


TOY_KW = dict(
    synth_shapes=512, synth_test_shapes=128, synth_jitter=0.015,
    n_points=256, tokens=64, neighbors=16, channels=64, heads=4,
    encoder_blocks=[5, 5, 5], decoder_blocks=[1, 1], stage_tokens=[64, 32, 16],
    hierarchical=True, mlp_ratio=4.0,
    views=3, resolution=64, feature_grid=8,
    epochs=50, warmup_epochs=10, batch_size=16,
)


def toy_cfg(**overrides) -> TrainConfig:
    """The desk-scale pre-training configuration used by the acceptance suite."""
    kw = dict(TOY_KW)
    kw.update(overrides)
    return TrainConfig(**kw).validate()
