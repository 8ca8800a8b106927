"""Dual-ascent training loop with per-epoch cone projections.

Each epoch runs T stochastic primal steps on ERM + alpha * Lagrangian using
the adaptive-moment rule, then projects the auxiliary (eps, tau) block onto
the cone and takes one projected dual ascent step with a decaying rate.
Three projection placements are supported:

* ``outer`` -- one full projection per epoch (the cheap default),
* ``full``  -- a full projection after every inner step (classical baseline),
* ``pair``  -- O(1) pair rule on the single updated tau coordinate per step.

Minibatches draw B/2 examples from each size group; ERM terms are reweighted
by group size and Lagrangian terms Horvitz-Thompson scaled, so both gradient
estimates stay unbiased.  Everything is driven by one seeded generator:
identical config and seed give bitwise-identical traces.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import lagrangian as lg
from . import model as mdl
from . import projection as proj
from .datagen import LabeledDataset, binarize_size

TRACE_COLUMNS = (
    "epoch",
    "erm_loss",
    "lagrangian",
    "acc",
    "acc_small",
    "acc_large",
    "f1_size",
    "viol_ineq",
    "viol_eq",
    "n_proj",
    "wall_ms",
)

PROJECTION_MODES = ("outer", "full", "pair")


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss becomes non-finite or explodes."""


@dataclass
class TrainConfig:
    alpha: float = 0.0  # regularizer weight; 0 is the pure-ERM baseline
    batch_size: int = 100
    epochs: int = 40
    inner_steps: int | None = None  # None: one pass over the data, ceil(N / B)
    dual_decay: float = 0.9  # c in the per-epoch dual rate multiplier c / epoch
    eta_w: float = 1e-2
    eta_tau: float = 1e-2
    eta_eps: float = 1e-2
    eta_lambda: float = 1e-3
    eta_mu: float = 1e-5
    projection_mode: str = "outer"
    model: str = "linear"  # or "hidden"
    hidden_width: int = 64
    size_threshold: float | None = None  # rebinarize raw sizes at this value
    track_grad_norm: bool = False  # per-step full Lagrangian gradient norms
    seed: int = 0

    def validate(self) -> None:
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ValueError("batch_size must be an even integer >= 2")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.inner_steps is not None and self.inner_steps < 1:
            raise ValueError("inner_steps must be >= 1")
        if not 0.0 < self.dual_decay < 1.0:
            raise ValueError("dual_decay must lie in (0, 1)")
        for name in ("eta_w", "eta_tau", "eta_eps", "eta_lambda", "eta_mu"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.projection_mode not in PROJECTION_MODES:
            raise ValueError(f"projection_mode must be one of {PROJECTION_MODES}")
        if self.model not in ("linear", "hidden"):
            raise ValueError("model must be 'linear' or 'hidden'")
        if self.model == "hidden" and self.hidden_width < 1:
            raise ValueError("hidden_width must be >= 1")


@dataclass
class TrainTrace:
    """Per-epoch records plus final auxiliary state.

    The first eleven arrays mirror the trace CSV schema; the rest are
    diagnostics (dual norms, feasibility flags, projection timing, gradient
    probes) kept out of the CSV.
    """

    seed: int
    projection_mode: str
    epoch: np.ndarray
    erm_loss: np.ndarray
    lagrangian: np.ndarray
    acc: np.ndarray
    acc_small: np.ndarray
    acc_large: np.ndarray
    f1_size: np.ndarray
    viol_ineq: np.ndarray
    viol_eq: np.ndarray
    n_proj: np.ndarray
    wall_ms: np.ndarray
    lambda_norm: np.ndarray
    lambda_min: np.ndarray
    mu: np.ndarray
    feasible_after_proj: np.ndarray
    proj_wall_ms: np.ndarray
    grad_norm_min: np.ndarray  # running minimum of the full Lagrangian gradient norm
    g1_estimate: np.ndarray  # max per-example ERM gradient norm
    sigma_estimate: np.ndarray  # variance of per-example ERM gradient norms
    final_primal: np.ndarray = field(default_factory=lambda: np.zeros(0))
    final_dual: lg.DualState | None = None

    def to_csv(self, path, include_timing: bool = False) -> None:
        """Write the 11-column trace schema.

        Wall times are written as 0.0 unless ``include_timing`` is set: the
        experiment runner guarantees byte-identical CSVs for identical
        config and seed, which a wall-clock measurement would break.
        Measured times remain available on the trace object.
        """
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_COLUMNS)
            for i in range(len(self.epoch)):
                row = [str(int(self.epoch[i]))]
                row += ["%.17g" % getattr(self, c)[i] for c in TRACE_COLUMNS[1:9]]
                row.append(str(int(self.n_proj[i])))
                row.append("%.17g" % self.wall_ms[i] if include_timing else "0")
                writer.writerow(row)


def read_trace_csv(path) -> dict[str, np.ndarray]:
    """Read a trace CSV back into column arrays."""
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != TRACE_COLUMNS:
            raise ValueError("unexpected trace header")
        rows = [[float(v) for v in row] for row in reader]
    data = np.asarray(rows)
    return {name: data[:, j] for j, name in enumerate(TRACE_COLUMNS)}


def evaluate(params: mdl.ModelParams, dataset: LabeledDataset, eps: float = 0.0) -> dict:
    """Accuracy (overall and per size group), size-head F1, hinge objective."""
    if len(dataset) == 0:
        raise ValueError("dataset must be nonempty")
    logits = mdl.predict_logits(params, dataset.features)
    pred = logits.argmax(axis=1)
    correct = pred == dataset.labels
    small = dataset.size_label < 0
    large = ~small

    margins = mdl.representation(params, dataset.features) @ params.size_head
    pred_pos = margins > 0
    actual_pos = dataset.size_label > 0
    tp = int(np.count_nonzero(pred_pos & actual_pos))
    fp = int(np.count_nonzero(pred_pos & ~actual_pos))
    fn = int(np.count_nonzero(~pred_pos & actual_pos))
    f1 = 2.0 * tp / (2.0 * tp + fp + fn) if 2 * tp + fp + fn else 0.0

    return {
        "accuracy": float(correct.mean()),
        "acc_small": float(correct[small].mean()) if small.any() else float("nan"),
        "acc_large": float(correct[large].mean()) if large.any() else float("nan"),
        "f1_size": f1,
        "hinge_objective": lg.problem2_objective(
            eps, margins[dataset.neg_indices], len(dataset.pos_indices)
        ),
    }


def _erm_mean_loss(params, X, y) -> float:
    loss, _ = mdl.erm_loss_and_grad(params, X, y)
    return loss


def train(
    dataset: LabeledDataset,
    config: TrainConfig,
    eval_dataset: LabeledDataset | None = None,
):
    """Run the full loop; returns ``(ModelParams, TrainTrace)``.

    Accuracy/F1 trace columns are computed on ``eval_dataset`` when given
    (test curves), otherwise on the training data.  Loss, Lagrangian and
    violation columns always refer to the training data, where the auxiliary
    variables live.
    """
    config.validate()
    if config.size_threshold is not None:
        dataset = replace(
            dataset, size_label=binarize_size(dataset.raw_size, config.size_threshold)
        )
    X, y = dataset.features, dataset.labels
    pos_idx, neg_idx = dataset.pos_indices, dataset.neg_indices
    n, m, N = len(pos_idx), len(neg_idx), len(dataset)
    if n == 0 or m == 0:
        raise ValueError("dataset must contain both size groups")
    half = config.batch_size // 2
    if half > min(n, m):
        raise ValueError("batch_size too large for the smaller size group")

    rng = np.random.default_rng(config.seed)
    width = config.hidden_width if config.model == "hidden" else None
    params0 = mdl.init_params(X.shape[1], int(y.max()) + 1, width, rng)
    state = mdl.params_to_tensors(params0)
    state["tau"] = np.full(n, 1.0 / n)
    state["eps"] = np.array([1.0 / n])
    dual = lg.DualState(lam=np.zeros(n), mu=0.0)

    # Network weights get the adaptive rule; tau and eps take plain gradient
    # steps.  The Lagrangian is linear in tau, so a sign-normalized update
    # would drift at full step size no matter how small the residual is.
    lrs = {"class_weights": config.eta_w, "size_head": config.eta_w}
    if width is not None:
        lrs["hidden"] = config.eta_w
    opt = mdl.Adam(lrs)

    T = config.inner_steps or math.ceil(N / config.batch_size)
    mode = config.projection_mode
    erm_scale_pos = n / (N * half)
    erm_scale_neg = m / (N * half)
    lag_scale_pos = n / half
    lag_scale_neg = m / half
    records: list[dict] = []
    grad_min = np.inf

    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        n_proj = 0
        proj_wall = 0.0
        for _ in range(T):
            pos_pick = rng.choice(n, size=half, replace=False)
            neg_pick = rng.choice(m, size=half, replace=False)
            rows = np.concatenate([pos_idx[pos_pick], neg_idx[neg_pick]])
            Xb, yb = X[rows], y[rows]
            weights = np.concatenate(
                [np.full(half, erm_scale_pos), np.full(half, erm_scale_neg)]
            )
            mp = mdl.tensors_to_params(state)
            loss_b, grads = mdl.erm_loss_and_grad(mp, Xb, yb, weights=weights)
            if not np.isfinite(loss_b) or loss_b > 1e6:
                raise TrainingDivergedError(
                    f"loss {loss_b!r} at epoch {epoch}; aborting"
                )

            eps_val = float(state["eps"][0])
            reps_b = mdl.representation(mp, Xb)
            grad = lg.minibatch_gradient(
                eps=eps_val,
                head=state["size_head"],
                dual=dual,
                pos_reps=reps_b[:half],
                neg_reps=reps_b[half:],
                pos_positions=pos_pick,
                n_neg=m,
            )
            g_tau = np.zeros(n)
            if mode == "pair":
                # W and eps average over the batch but only one tau moves;
                # rescale its entry to the single-coordinate estimator n/1.
                j = int(pos_pick[0])
                g_tau[j] = grad.g_tau[j] * half
            else:
                for i, val in grad.g_tau.items():
                    g_tau[i] = val

            grads["size_head"] = config.alpha * grad.g_w
            if width is not None and config.alpha > 0:
                # Regularizer gradient through the shared hidden layer.
                d_rep = np.empty_like(reps_b)
                d_rep[:half] = -lag_scale_pos * dual.lam[pos_pick, None] * state["size_head"]
                active = (reps_b[half:] @ state["size_head"] + eps_val) > 0
                d_rep[half:] = lag_scale_neg * active[:, None] * state["size_head"]
                extra = mdl.representation_backward(mp, Xb, d_rep)
                grads["hidden"] = grads["hidden"] + config.alpha * extra["hidden"]

            state = opt.step(state, grads)
            state["eps"] = state["eps"] - config.eta_eps * config.alpha * grad.g_eps
            state["tau"] = state["tau"] - config.eta_tau * config.alpha * g_tau

            if mode == "full":
                tp0 = time.perf_counter()
                res = proj.project_exact(np.concatenate([state["eps"], state["tau"]]))
                proj_wall += time.perf_counter() - tp0
                state["eps"] = res.projected[:1].copy()
                state["tau"] = res.projected[1:].copy()
                n_proj += 1
            elif mode == "pair":
                tp0 = time.perf_counter()
                j = int(pos_pick[0])
                t_new, e_new = proj.project_pair(
                    float(state["tau"][j]), float(state["eps"][0])
                )
                proj_wall += time.perf_counter() - tp0
                state["tau"][j] = t_new
                state["eps"][0] = e_new
                n_proj += 1

            if config.track_grad_norm:
                mp = mdl.tensors_to_params(state)
                primal = np.concatenate([state["eps"], state["tau"]])
                g_w, g_e, g_t = lg.full_gradient(
                    primal,
                    state["size_head"],
                    mdl.representation(mp, X[pos_idx]),
                    mdl.representation(mp, X[neg_idx]),
                    dual,
                )
                # Stationarity over the cone is measured by the projected
                # gradient mapping of the (eps, tau) block, not the raw
                # gradient (whose eps component is >= n by construction).
                s = config.eta_tau
                stepped = primal - s * np.concatenate([[g_e], g_t])
                mapped = (primal - proj.project_exact(stepped).projected) / s
                norm = math.sqrt(g_w @ g_w + mapped @ mapped)
                grad_min = min(grad_min, norm)

        if mode == "outer":
            tp0 = time.perf_counter()
            res = proj.project_exact(np.concatenate([state["eps"], state["tau"]]))
            proj_wall += time.perf_counter() - tp0
            state["eps"] = res.projected[:1].copy()
            state["tau"] = res.projected[1:].copy()
            n_proj += 1

        mp = mdl.tensors_to_params(state)
        primal = np.concatenate([state["eps"], state["tau"]])
        pos_reps = mdl.representation(mp, X[pos_idx])
        neg_reps = mdl.representation(mp, X[neg_idx])
        decay = lg.dual_step_schedule(config.dual_decay, epoch)
        dual = lg.dual_ascent_step(
            dual,
            primal,
            pos_reps @ state["size_head"],
            eta_lambda=config.eta_lambda * decay,
            eta_mu=config.eta_mu * decay,
        )

        metrics = evaluate(mp, eval_dataset if eval_dataset is not None else dataset,
                           eps=float(state["eps"][0]))
        norms = mdl.per_example_grad_norms(mp, X, y)
        pos_margins = pos_reps @ state["size_head"]
        records.append(
            {
                "epoch": epoch,
                "erm_loss": _erm_mean_loss(mp, X, y),
                "lagrangian": lg.lagrangian_value(
                    primal, state["size_head"], pos_reps, neg_reps, dual
                ),
                "acc": metrics["accuracy"],
                "acc_small": metrics["acc_small"],
                "acc_large": metrics["acc_large"],
                "f1_size": metrics["f1_size"],
                "viol_ineq": float(
                    np.linalg.norm(np.maximum(0.0, state["tau"] - pos_margins))
                ),
                "viol_eq": abs(float(state["tau"].sum()) - 1.0),
                "n_proj": n_proj,
                "wall_ms": (time.perf_counter() - t0) * 1e3,
                "lambda_norm": float(np.linalg.norm(dual.lam)),
                "lambda_min": float(dual.lam.min()),
                "mu": dual.mu,
                "feasible_after_proj": proj.is_feasible(primal),
                "proj_wall_ms": proj_wall * 1e3,
                "grad_norm_min": grad_min if config.track_grad_norm else np.nan,
                "g1_estimate": float(norms.max()),
                "sigma_estimate": float(norms.var()),
            }
        )

    cols = {k: np.asarray([r[k] for r in records]) for k in records[0]}
    trace = TrainTrace(
        seed=config.seed,
        projection_mode=mode,
        final_primal=np.concatenate([state["eps"], state["tau"]]),
        final_dual=dual,
        **cols,
    )
    return mdl.tensors_to_params(state), trace


def projection_count_report(traces) -> dict:
    """Per-mode projection totals and projection wall time from run traces.

    Expects traces from runs with identical seeds; a mismatch is flagged in
    the output rather than raised.
    """
    rows = []
    for tr in traces:
        rows.append(
            {
                "mode": tr.projection_mode,
                "seed": tr.seed,
                "total_projections": int(tr.n_proj.sum()),
                "projection_wall_ms": float(tr.proj_wall_ms.sum()),
            }
        )
    return {"rows": rows, "seed_mismatch": len({r["seed"] for r in rows}) > 1}
