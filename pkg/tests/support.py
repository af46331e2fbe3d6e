"""Shared numeric helpers for the test suite."""

from __future__ import annotations

from typing import Callable, Sequence

import torch


def finite_diff_grads(
    f: Callable[[], torch.Tensor],
    tensors: Sequence[torch.Tensor],
    eps: float = 1e-5,
) -> list[torch.Tensor]:
    """Central finite differences of the scalar ``f()`` w.r.t. every element
    of every tensor.  Tensors are perturbed in place and restored."""
    grads = []
    for t in tensors:
        grad = torch.zeros_like(t)
        flat = t.data.view(-1)
        grad_flat = grad.view(-1)
        for i in range(flat.numel()):
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + eps
                plus = float(f())
                flat[i] = orig - eps
                minus = float(f())
                flat[i] = orig
            grad_flat[i] = (plus - minus) / (2.0 * eps)
        grads.append(grad)
    return grads


def max_rel_err(a: torch.Tensor, b: torch.Tensor, floor: float = 1e-6) -> float:
    denom = torch.maximum(
        torch.maximum(a.abs(), b.abs()), torch.full_like(a, floor)
    )
    return float(((a - b).abs() / denom).max())


def assert_grads_match(
    f: Callable[[], torch.Tensor],
    tensors: Sequence[torch.Tensor],
    eps: float = 1e-5,
    tol: float = 1e-4,
) -> None:
    """Compare autograd gradients of ``f`` against central differences."""
    for t in tensors:
        assert t.requires_grad, "inputs must require grad"
        t.grad = None
    loss = f()
    loss.backward()
    analytic = [
        t.grad.clone() if t.grad is not None else torch.zeros_like(t)
        for t in tensors
    ]
    numeric = finite_diff_grads(f, tensors, eps)
    for i, (a, n) in enumerate(zip(analytic, numeric)):
        err = max_rel_err(a, n)
        assert err < tol, f"tensor {i}: max relative gradient error {err} >= {tol}"
