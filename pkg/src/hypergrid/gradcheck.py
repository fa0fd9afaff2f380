"""Central-finite-difference oracle for every differentiable path.

The oracle never touches the autodiff machinery: it only perturbs raw
parameter values and re-evaluates the loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import no_grad

REL_TOL = 1e-4
ABS_TOL = 1e-8
FD_STEP = 1e-5


@dataclass
class CheckReport:
    block: str
    max_rel_err: float
    max_abs_err: float
    passed: bool
    vacuous: bool = False
    worst_coord: tuple = ()

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        if self.vacuous:
            return f"{tag}  {self.block:32s} (vacuous: empty block)"
        return (f"{tag}  {self.block:32s} rel {self.max_rel_err:.3e} "
                f"abs {self.max_abs_err:.3e} worst {self.worst_coord}")


def central_diff(loss_fn, param, coordinate, step: float = FD_STEP) -> float:
    """(f(x+h) - f(x-h)) / 2h along one flat coordinate of param."""
    flat = param.data.reshape(-1)
    orig = flat[coordinate]
    try:
        flat[coordinate] = orig + step
        up = float(loss_fn())
        flat[coordinate] = orig - step
        down = float(loss_fn())
    finally:
        flat[coordinate] = orig
    if not (np.isfinite(up) and np.isfinite(down)):
        raise FloatingPointError(
            f"non-finite loss while probing coordinate {coordinate}"
        )
    return (up - down) / (2.0 * step)


def check_model(model, batch, coordinate_budget: int = 32, seed: int = 0):
    """Compare autodiff gradients against central differences.

    Samples coordinate_budget random coordinates per parameter block of
    the teacher-forced batch loss. Returns one CheckReport per block.
    """
    if coordinate_budget < 1:
        raise ValueError("coordinate_budget must be >= 1")
    params = model.named_parameters()
    for p in params.values():
        p.zero_grad()
    loss = model.batch_loss(batch)
    loss.backward()

    def loss_value():
        with no_grad():
            return float(model.batch_loss(batch).data)

    rng = np.random.default_rng(seed)
    reports = []
    for name, p in params.items():
        if p.data.size == 0:
            reports.append(CheckReport(name, 0.0, 0.0, True, vacuous=True))
            continue
        n = min(coordinate_budget, p.data.size)
        coords = rng.choice(p.data.size, size=n, replace=False)
        grad = np.zeros(p.data.shape).reshape(-1) if p.grad is None \
            else p.grad.reshape(-1)
        max_rel = 0.0
        max_abs = 0.0
        worst = ()
        worst_abs = -1.0
        ok = True
        for c in coords:
            est = central_diff(loss_value, p, int(c))
            got = float(grad[int(c)])
            abs_err = abs(got - est)
            rel_err = abs_err / max(abs(est), abs(got), 1e-12)
            coord_ok = rel_err <= REL_TOL or abs_err <= ABS_TOL
            if (not coord_ok and abs_err > worst_abs) or (ok and abs_err > worst_abs):
                worst_abs = abs_err
                worst = tuple(np.unravel_index(int(c), p.data.shape)) + (got, est)
            max_rel = max(max_rel, rel_err)
            max_abs = max(max_abs, abs_err)
            ok = ok and coord_ok
        reports.append(CheckReport(name, max_rel, max_abs, ok, worst_coord=worst))
    return reports


def assert_all_pass(reports):
    failed = [r for r in reports if not r.passed]
    if failed:
        detail = "\n".join(r.line() for r in failed)
        raise AssertionError(f"gradient check failed:\n{detail}")
