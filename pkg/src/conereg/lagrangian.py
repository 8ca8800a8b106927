"""Partially dualized hinge objective for the size-F1 regularizer.

With positives ``S+`` (n of them), negatives ``S-``, representations ``r_i``
and a size head ``w``, the primal objective couples an auxiliary vector
``tau`` (one entry per positive) and a slack bound ``eps``:

    n*eps + sum_{j in S-} max(0, eps + w.r_j)
    s.t.  tau_i <= eps,  tau_i <= w.r_i,  sum(tau) = 1,  eps >= 0.

Only the margin constraints and the normalization are dualized (multipliers
``lambda_i >= 0`` and ``mu``); the cheap cone ``tau_i <= eps, eps >= 0`` stays
explicit and is handled by :mod:`conereg.projection`.  The Lagrangian reads

    L = n*eps + sum_{j in S-} max(0, eps + w.r_j)
      + mu*(sum(tau) - 1) + sum_{i in S+} lambda_i*(tau_i - w.r_i).

This module evaluates L, produces stochastic (Horvitz-Thompson scaled)
primal gradients, performs projected dual ascent, and extends everything to
a finite number of size classes.  The hinge subgradient at an exactly active
kink is taken to be 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class DualState:
    """Multipliers for the dualized constraints: ``lam >= 0`` per positive, scalar ``mu``."""

    lam: np.ndarray
    mu: float

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=float)
        if self.lam.ndim != 1:
            raise ValueError("lam must be a vector")
        if np.any(self.lam < 0):
            raise ValueError("lam must be nonnegative")


@dataclass
class MultiClassDualState:
    """Per-class multipliers: ``lam[i, j]`` for example i in size class j, ``mu[j]`` per class."""

    lam: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=float)
        self.mu = np.asarray(self.mu, dtype=float)
        if self.lam.ndim != 2 or self.mu.ndim != 1 or self.lam.shape[1] != self.mu.size:
            raise ValueError("lam must be (n_examples, p) and mu length p")
        if np.any(self.lam < 0):
            raise ValueError("lam must be nonnegative")


@dataclass
class LagrangianGradient:
    """Stochastic primal gradient: head vector, eps scalar, sparse tau map.

    ``g_tau`` maps positions within the positive set to Horvitz-Thompson
    scaled gradient entries; its support is exactly the sampled positives.
    """

    g_w: np.ndarray
    g_eps: float
    g_tau: dict[int, float]


def problem2_objective(eps: float, neg_margins: np.ndarray, n_pos: int) -> float:
    """Hinge objective ``n*eps + sum max(0, eps + margin)`` over negatives."""
    return float(n_pos * eps + np.maximum(0.0, eps + neg_margins).sum())


def lagrangian_value(primal, head, pos_reps, neg_reps, dual: DualState) -> float:
    """Evaluate L at the given primal point and multipliers.

    ``primal`` stacks ``[eps, tau_1..tau_n]``; ``pos_reps``/``neg_reps`` hold
    the representations of the positive and negative examples row-wise.
    """
    primal = np.asarray(primal, dtype=float)
    tau = primal[1:]
    n = tau.size
    if pos_reps.shape[0] != n or dual.lam.size != n:
        raise ValueError("primal, pos_reps and dual.lam must agree on the number of positives")
    eps = float(primal[0])
    pos_margins = pos_reps @ head
    neg_margins = neg_reps @ head
    value = problem2_objective(eps, neg_margins, n)
    value += dual.mu * (tau.sum() - 1.0)
    value += float(dual.lam @ (tau - pos_margins))
    return value


def full_gradient(primal, head, pos_reps, neg_reps, dual: DualState):
    """Exact gradient of L wrt (head, eps, tau); returns ``(g_w, g_eps, g_tau)`` dense."""
    primal = np.asarray(primal, dtype=float)
    n = primal.size - 1
    eps = float(primal[0])
    active = (neg_reps @ head + eps) > 0
    g_w = active @ neg_reps - dual.lam @ pos_reps
    g_eps = float(n + np.count_nonzero(active))
    g_tau = dual.mu + dual.lam
    return g_w, g_eps, g_tau


def minibatch_gradient(
    eps: float,
    head: np.ndarray,
    dual: DualState,
    pos_reps: np.ndarray,
    neg_reps: np.ndarray,
    pos_positions: np.ndarray,
    n_neg: int,
) -> LagrangianGradient:
    """Unbiased stochastic gradient of L from a stratified minibatch.

    ``pos_reps``/``neg_reps`` are the sampled rows; ``pos_positions`` are the
    sampled positions within the positive set (for lambda lookup and the
    sparse tau map).  Negative-hinge terms are scaled by ``|S-| / b_neg`` and
    positive terms by ``n / b_pos`` so the estimate is unbiased for the full
    gradient.  Passing the entire dataset recovers the exact gradient.
    """
    n = dual.lam.size
    if n == 0 or n_neg == 0:
        raise ValueError("both size groups must be nonempty")
    b_pos = len(pos_positions)
    b_neg = neg_reps.shape[0]
    if b_pos == 0 or b_neg == 0:
        raise ValueError("minibatch must sample both size groups")
    scale_pos = n / b_pos
    scale_neg = n_neg / b_neg

    lam_b = dual.lam[pos_positions]
    active = (neg_reps @ head + eps) > 0
    g_w = scale_neg * (active @ neg_reps) - scale_pos * (lam_b @ pos_reps)
    g_eps = n + scale_neg * np.count_nonzero(active)
    g_tau = {int(i): scale_pos * (dual.mu + dual.lam[i]) for i in pos_positions}
    return LagrangianGradient(g_w=g_w, g_eps=float(g_eps), g_tau=g_tau)


def dual_ascent_step(
    dual: DualState,
    primal,
    pos_margins: np.ndarray,
    eta_lambda: float,
    eta_mu: float | None = None,
) -> DualState:
    """Projected ascent on the multipliers from the current residuals.

    ``lam_i <- max(0, lam_i + eta*(tau_i - margin_i))`` for every positive and
    ``mu <- mu + eta*(sum(tau) - 1)``.  A single rate applies to both updates
    unless ``eta_mu`` is given.
    """
    if eta_lambda <= 0:
        raise ValueError("eta_lambda must be positive")
    if eta_mu is None:
        eta_mu = eta_lambda
    primal = np.asarray(primal, dtype=float)
    tau = primal[1:]
    lam = np.maximum(0.0, dual.lam + eta_lambda * (tau - pos_margins))
    mu = dual.mu + eta_mu * (tau.sum() - 1.0)
    return DualState(lam=lam, mu=float(mu))


def dual_step_schedule(c: float, epoch: int) -> float:
    """Decaying dual step multiplier ``c / epoch`` with ``c`` in (0, 1)."""
    if not 0.0 < c < 1.0:
        raise ValueError("c must lie in (0, 1)")
    if epoch < 1:
        raise ValueError("epoch must be >= 1")
    return c / epoch


def class_index_lists(class_of: np.ndarray, p: int) -> list[np.ndarray]:
    """Row indices of each size class, sorted, one array per class."""
    class_of = np.asarray(class_of)
    return [np.flatnonzero(class_of == j) for j in range(p)]


def multiclass_lagrangian_value(primals, heads, reps, class_of, dual: MultiClassDualState) -> float:
    """Sum of per-class Lagrangians, class j versus the rest.

    ``primals[j]`` stacks ``[eps_j, tau^j]`` for the members of class j (in
    sorted row order), ``heads[:, j]`` is the class-j size predictor.
    """
    p = dual.mu.size
    members = class_index_lists(class_of, p)
    total = 0.0
    for j in range(p):
        rows = members[j]
        if rows.size == 0:
            raise ValueError(f"size class {j} is empty")
        rest = np.setdiff1d(np.arange(reps.shape[0]), rows, assume_unique=True)
        binary = DualState(lam=dual.lam[rows, j], mu=float(dual.mu[j]))
        total += lagrangian_value(primals[j], heads[:, j], reps[rows], reps[rest], binary)
    return total


def multiclass_gradients(
    primals,
    heads,
    reps,
    class_of,
    dual: MultiClassDualState,
    batches,
) -> list[LagrangianGradient]:
    """Per-class stochastic gradients; applies the binary rules class by class.

    ``batches[j] = (pos_positions, neg_positions)`` index into class j's
    member list and its complement respectively.  With two classes the j = 0
    entry coincides with the binary path on the same draw.
    """
    p = dual.mu.size
    members = class_index_lists(class_of, p)
    out = []
    for j in range(p):
        rows = members[j]
        if rows.size == 0:
            raise ValueError(f"size class {j} is empty")
        rest = np.setdiff1d(np.arange(reps.shape[0]), rows, assume_unique=True)
        pos_b, neg_b = batches[j]
        binary = DualState(lam=dual.lam[rows, j], mu=float(dual.mu[j]))
        out.append(
            minibatch_gradient(
                eps=float(np.asarray(primals[j])[0]),
                head=heads[:, j],
                dual=binary,
                pos_reps=reps[rows][pos_b],
                neg_reps=reps[rest][neg_b],
                pos_positions=np.asarray(pos_b),
                n_neg=rest.size,
            )
        )
    return out
