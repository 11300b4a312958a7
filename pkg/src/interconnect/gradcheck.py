"""Finite-difference verification of tape gradients.

Given a deterministic scalar-valued function of some parameters, compare
the tape's analytic gradients against central differences
``(f(x+h) - f(x-h)) / 2h`` in float64.  The checker is deliberately
independent of the backward rules it verifies: probes re-run the forward
function with perturbed parameter entries and nothing else.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .rng import generator
from .tensor import Tape, Tensor, backward


@dataclass
class ParamCheck:
    name: str
    max_rel_err: float
    n_checked: int
    worst_index: int = 0


@dataclass
class GradCheckReport:
    tol: float
    entries: list[ParamCheck] = field(default_factory=list)

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    @property
    def failures(self) -> list[ParamCheck]:
        return [e for e in self.entries if e.max_rel_err >= self.tol]

    @property
    def passed(self) -> bool:
        return not self.failures

    def lines(self) -> list[str]:
        out = []
        for e in self.entries:
            status = "ok" if e.max_rel_err < self.tol else "FAIL"
            out.append(
                f"{status:4s} {e.name:48s} max_rel_err={e.max_rel_err:.3e} "
                f"(checked {e.n_checked})"
            )
        return out


def _rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def finite_diff_check(
    f,
    params,
    h: float = 1e-5,
    tol: float = 1e-4,
    max_probes_per_param: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Check ``d f() / d p`` for every named parameter against central differences.

    ``f`` must be a deterministic zero-argument callable returning a scalar
    :class:`Tensor` (dropout and masking disabled), and all parameters must
    be float64 - central differences are unreliable in float32.  Large
    parameters can be spot-checked by capping ``max_probes_per_param``;
    probe indices are then drawn from a deterministic stream.

    Parameter gradients are cleared before and after the check.
    """
    named = list(params.items()) if isinstance(params, dict) else list(params)
    for name, p in named:
        if p.dtype != np.float64:
            raise ContractError(f"finite_diff_check requires float64 params; {name} is {p.dtype}")
        p.grad = None

    with Tape() as tape:
        loss = f()
    backward(loss, tape)
    grads = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in named
    }
    for _, p in named:
        p.grad = None

    report = GradCheckReport(tol=tol)
    for name, p in named:
        flat = p.data.reshape(-1)
        n = flat.size
        if max_probes_per_param is not None and n > max_probes_per_param:
            idx = generator("gradcheck", seed, name).choice(n, size=max_probes_per_param, replace=False)
            idx = np.sort(idx)
        else:
            idx = np.arange(n)
        gflat = grads[name].reshape(-1)
        worst = 0.0
        worst_i = 0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = f().item()
            flat[i] = orig - h
            f_minus = f().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            err = _rel_err(numeric, float(gflat[i]))
            if err > worst:
                worst = err
                worst_i = int(i)
        report.entries.append(ParamCheck(name, worst, len(idx), worst_i))
    return report
