"""Regularized solvers for the tomography equation A Phi = phi.

Three classical methods, all matrix-free and deterministic:

* ``landweber``: Phi_{k+1} = Phi_k + beta A*(phi - A Phi_k)
* ``kaczmarz``: cyclic per-direction updates
  Phi <- Phi + beta_g A_g*(phi_g - A_g Phi) with a constant or 1/i step
  schedule
* ``tikhonov_cg``: conjugate gradients on (A*A + alpha I) Phi = A* phi in
  the weighted layer inner product

Started from zero, every iterate of every method lies in the discrete
range of A*, which is what the ball-pair scaling invariant checks exploit.
Histories record per-direction and total data residuals per step plus
divergence/stall diagnostics.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field
from typing import Callable, Optional

import numpy as np

from .field import (DataVector, LayerStack, PupilField, inner_layers,
                    norm_data, norm_layers)
from .operator import TomoOperator

_DIVERGENCE_FACTOR = 10.0
_STALL_SWEEPS = 10


@dataclass
class SolveConfig:
    """Solver settings shared by all three methods.

    ``beta`` defaults to 1/lambda_max(A*A) for Landweber (power-method
    estimate) and to 1 for Kaczmarz. ``beta_schedule`` applies to Kaczmarz
    only: "constant" uses beta_g = beta, "inv_i" uses beta_g = beta / i
    in sweep i (1-based).
    """

    method: str = "tikhonov-cg"
    beta: Optional[float] = None
    beta_schedule: str = "inv_i"
    alpha: float = 1e-3
    max_iter: int = 100
    tol: float = 1e-6
    x0: Optional[LayerStack] = None
    power_seed: int = 0
    callback: Optional[Callable[[int, LayerStack], None]] = None

    def __post_init__(self):
        if self.beta is not None and not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.beta_schedule not in ("constant", "inv_i"):
            raise ValueError("beta_schedule must be 'constant' or 'inv_i'")


@dataclass
class SolveHistory:
    """Per-iteration residual records and termination diagnostics."""

    method: str
    columns: tuple[str, ...]
    rows: list[tuple] = dataclass_field(default_factory=list)
    beta_used: Optional[float] = None
    alpha_used: Optional[float] = None
    converged: bool = False
    diverged: bool = False
    stalled: bool = False
    message: str = ""

    @property
    def total_residuals(self) -> np.ndarray:
        i = self.columns.index("total_residual")
        return np.array([row[i] for row in self.rows])


def estimate_normal_norm(op: TomoOperator, seed: int = 0,
                         iterations: int = 30) -> float:
    """Power-method estimate of lambda_max(A*A) in the layer inner product."""
    rng = np.random.default_rng(seed)
    v = LayerStack(op.layer_grids,
                   [rng.standard_normal(g.shape) for g in op.layer_grids],
                   op.layer_masks, op.weights)
    n = norm_layers(v)
    if n == 0.0:
        return 0.0
    v = v.scaled(1.0 / n)
    lam = 0.0
    for _ in range(iterations):
        w = op.normal_apply(v)
        lam = inner_layers(v, w)
        n = norm_layers(w)
        if n == 0.0:
            return 0.0
        v = w.scaled(1.0 / n)
    return float(lam)


def _data_residual(op: TomoOperator, data: DataVector, x: LayerStack):
    r = data.add_scaled(op.forward(x), -1.0)
    s2 = r.grid.spacing ** 2
    per = np.sqrt(s2 * (r.values.reshape(r.num_directions, -1) ** 2)
                  .sum(axis=1))
    total = float(np.sqrt((per ** 2).sum()))
    return r, per, total


def _start(op, cfg):
    if cfg.x0 is not None:
        op._check_stack(cfg.x0)
        return cfg.x0.copy()
    return op.layer_template()


def landweber(op: TomoOperator, data: DataVector, cfg: SolveConfig
              ) -> tuple[LayerStack, SolveHistory]:
    """Landweber iteration with step beta < 2 / ||A||^2."""
    op._check_data(data)
    beta = cfg.beta
    if beta is None:
        lam = estimate_normal_norm(op, cfg.power_seed)
        beta = 1.0 / lam if lam > 0 else 1.0
    G = op.num_directions
    hist = SolveHistory(
        "landweber",
        ("iteration",) + tuple(f"residual_g{g}" for g in range(G))
        + ("total_residual",),
        beta_used=beta)
    x = _start(op, cfg)
    denom = norm_data(data) or 1.0
    r, per, total = _data_residual(op, data, x)
    hist.rows.append((0, *per, total))
    initial = total
    if total / denom <= cfg.tol:
        hist.converged = True
        return x, hist
    for k in range(1, cfg.max_iter + 1):
        x = x.add_scaled(op.adjoint(r), beta)
        r, per, total = _data_residual(op, data, x)
        hist.rows.append((k, *per, total))
        if cfg.callback is not None:
            cfg.callback(k, x)
        if initial > 0 and total > _DIVERGENCE_FACTOR * initial:
            hist.diverged = True
            hist.message = (f"residual grew to {total / initial:.3g}x the "
                            f"initial value at iteration {k}")
            break
        if total / denom <= cfg.tol:
            hist.converged = True
            break
    if not (hist.converged or hist.diverged):
        hist.message = hist.message or "maximum iterations reached"
    return x, hist


def kaczmarz(op: TomoOperator, data: DataVector, cfg: SolveConfig
             ) -> tuple[LayerStack, SolveHistory]:
    """Cyclic Landweber-Kaczmarz sweeps over the guide directions.

    One sweep i updates, for g = 0..G-1 in order,
    Phi <- Phi + beta_g(i) A_g*(phi_g - A_g Phi), recording all G
    per-direction residuals after every sub-step. Non-convergence shows up
    as a stall flag (total residual non-decreasing over 10 sweeps).
    """
    op._check_data(data)
    beta0 = cfg.beta if cfg.beta is not None else 1.0
    G = op.num_directions
    hist = SolveHistory(
        "kaczmarz",
        ("sweep", "substep") + tuple(f"residual_g{g}" for g in range(G))
        + ("total_residual",),
        beta_used=beta0)
    x = _start(op, cfg)
    denom = norm_data(data) or 1.0
    _, per, total = _data_residual(op, data, x)
    hist.rows.append((0, -1, *per, total))
    initial = total
    if total / denom <= cfg.tol:
        hist.converged = True
        return x, hist
    sweep_totals = [total]
    for i in range(1, cfg.max_iter + 1):
        beta_i = beta0 if cfg.beta_schedule == "constant" else beta0 / i
        for g in range(G):
            res_g = PupilField(
                data.grid, data.values[g] - op.forward_single(g, x).values,
                data.mask)
            x = x.add_scaled(op.adjoint_single(g, res_g), beta_i)
            _, per, total = _data_residual(op, data, x)
            hist.rows.append((i, g, *per, total))
        if cfg.callback is not None:
            cfg.callback(i, x)
        sweep_totals.append(total)
        if initial > 0 and total > _DIVERGENCE_FACTOR * initial:
            hist.diverged = True
            hist.message = (f"residual grew to {total / initial:.3g}x the "
                            f"initial value in sweep {i}")
            break
        if total / denom <= cfg.tol:
            hist.converged = True
            break
        if len(sweep_totals) > _STALL_SWEEPS:
            recent = sweep_totals[-(_STALL_SWEEPS + 1):]
            if all(b >= a * (1.0 - 1e-12)
                   for a, b in zip(recent, recent[1:])):
                hist.stalled = True
                hist.message = (f"total residual non-decreasing over the "
                                f"last {_STALL_SWEEPS} sweeps")
                break
    if not (hist.converged or hist.diverged or hist.stalled):
        hist.message = hist.message or "maximum sweeps reached"
    return x, hist


def tikhonov_cg(op: TomoOperator, data: DataVector, cfg: SolveConfig
                ) -> tuple[LayerStack, SolveHistory]:
    """Conjugate gradients on (A*A + alpha I) Phi = A* phi.

    Inner products are the weighted layer inner product, so the system is
    self-adjoint positive definite and iterates started from zero stay in
    the discrete range of A*. Hitting max_iter returns the best iterate
    with converged = False.
    """
    op._check_data(data)
    if not cfg.alpha > 0:
        raise ValueError("tikhonov_cg needs alpha > 0")
    G = op.num_directions
    hist = SolveHistory(
        "tikhonov-cg",
        ("iteration",) + tuple(f"residual_g{g}" for g in range(G))
        + ("total_residual", "normal_residual"),
        alpha_used=cfg.alpha)

    def apply_H(v):
        return op.normal_apply(v).add_scaled(v, cfg.alpha)

    b = op.adjoint(data)
    bnorm = norm_layers(b) or 1.0
    x = _start(op, cfg)
    r = b.add_scaled(apply_H(x), -1.0)
    p = r.copy()
    rs = inner_layers(r, r)
    _, per, total = _data_residual(op, data, x)
    hist.rows.append((0, *per, total, float(np.sqrt(rs))))
    if np.sqrt(rs) / bnorm <= cfg.tol:
        hist.converged = True
        return x, hist
    for k in range(1, cfg.max_iter + 1):
        Hp = apply_H(p)
        curv = inner_layers(p, Hp)
        if curv <= 0:
            hist.message = f"lost positive definiteness at iteration {k}"
            break
        a = rs / curv
        x = x.add_scaled(p, a)
        r = r.add_scaled(Hp, -a)
        rs_new = inner_layers(r, r)
        _, per, total = _data_residual(op, data, x)
        hist.rows.append((k, *per, total, float(np.sqrt(rs_new))))
        if cfg.callback is not None:
            cfg.callback(k, x)
        if np.sqrt(rs_new) / bnorm <= cfg.tol:
            hist.converged = True
            break
        p = r.add_scaled(p, rs_new / rs)
        rs = rs_new
    if not hist.converged:
        hist.message = hist.message or ("maximum iterations reached; "
                                        "returning the best iterate")
    return x, hist


_METHODS = {
    "landweber": landweber,
    "kaczmarz": kaczmarz,
    "tikhonov-cg": tikhonov_cg,
}


def solve(op: TomoOperator, data: DataVector, cfg: SolveConfig
          ) -> tuple[LayerStack, SolveHistory]:
    """Dispatch on cfg.method."""
    try:
        fn = _METHODS[cfg.method]
    except KeyError:
        raise ValueError(f"unknown method {cfg.method!r}; expected one of "
                         f"{sorted(_METHODS)}") from None
    return fn(op, data, cfg)
