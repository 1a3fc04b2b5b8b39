"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, no_grad


class GradCheckError(RuntimeError):
    pass


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    tol: float
    n_checked: int
    worst: tuple = ()
    message: str = ""
    per_input: list = field(default_factory=list)

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} max_rel_error={self.max_rel_error:.3e} tol={self.tol:.1e} n={self.n_checked} {self.message}".rstrip()


def _first_nonfinite(root: Tensor):
    for node in root.topo_order():
        if not np.all(np.isfinite(node.data)):
            return node
    return None


def grad_check(f, inputs, tol=1e-4, step=1e-5, max_checks=None, seed=0) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar ``f(*inputs)`` with central differences.

    Each probed entry uses a fourth-order stencil with step ``step * max(1, |x|)``.
    The relative error of an entry is ``|a - n| / max(|a|, |n|, 1e-3 * max|n|)``
    where ``max|n|`` runs over every probed entry of every input, so entries
    whose gradient is negligible against the largest one are judged on an
    absolute scale.  ``max_checks`` limits probed entries per input (chosen at random).
    """
    if isinstance(inputs, Tensor):
        inputs = [inputs]
    inputs = list(inputs)
    for x in inputs:
        if x.dtype != np.float64:
            raise GradCheckError("grad_check needs 64-bit inputs")
        x.grad = None
    out = f(*inputs)
    if out.data.size != 1:
        raise GradCheckError(f"f must be scalar-valued, got shape {out.shape}")
    bad = _first_nonfinite(out)
    if bad is not None:
        return GradCheckReport(False, float("inf"), tol, 0, message=f"non-finite value produced by node '{bad.op}'")
    out.backward()
    rng = np.random.default_rng(seed)
    probes = []
    for i, x in enumerate(inputs):
        analytic = np.zeros_like(x.data) if x.grad is None else x.grad
        if not np.all(np.isfinite(analytic)):
            return GradCheckReport(False, float("inf"), tol, 0, message=f"non-finite gradient for input {i}")
        flat_idx = np.arange(x.data.size)
        if max_checks is not None and x.data.size > max_checks:
            flat_idx = rng.choice(x.data.size, size=max_checks, replace=False)
        numeric = np.empty(len(flat_idx))
        with no_grad():
            for j, fi in enumerate(flat_idx):
                idx = np.unravel_index(fi, x.shape)
                orig = x.data[idx]
                h = step * max(1.0, abs(orig))
                vals = []
                for k in (2, 1, -1, -2):
                    x.data[idx] = orig + k * h
                    vals.append(float(f(*inputs).data))
                x.data[idx] = orig
                # fourth-order central difference
                numeric[j] = (-vals[0] + 8 * vals[1] - 8 * vals[2] + vals[3]) / (12 * h)
        if not np.all(np.isfinite(numeric)):
            return GradCheckReport(False, float("inf"), tol, 0, message=f"non-finite finite difference for input {i}")
        probes.append((i, flat_idx, analytic.reshape(-1)[flat_idx], numeric))

    largest = max((np.max(np.abs(n)) for *_, n in probes if n.size), default=0.0)
    floor = max(1e-3 * largest, 1e-12)
    worst_err, worst, n_checked, per_input = 0.0, (), 0, []
    for i, flat_idx, a, numeric in probes:
        rel = np.abs(a - numeric) / np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
        n_checked += len(flat_idx)
        if rel.size:
            j = int(np.argmax(rel))
            per_input.append(float(rel[j]))
            if rel[j] > worst_err:
                worst_err = float(rel[j])
                worst = (i, tuple(int(v) for v in np.unravel_index(flat_idx[j], inputs[i].shape)))
    passed = worst_err < tol
    msg = "" if passed else f"worst entry input={worst[0]} index={worst[1]}"
    return GradCheckReport(passed, worst_err, tol, n_checked, worst, msg, per_input)
