"""Experiment runner and verification CLI.

``conereg --config FILE [--out DIR] [--seed INT]`` runs an experiment grid
(alpha values x projection modes x repeated seeds), writing one trace CSV
per run, a summary CSV recomputed from those traces, and an echo of the
resolved configuration.  ``conereg --verify SUITE`` runs one of the built-in
check suites (projection, gradients, convergence) and prints one pass/fail
line per property.

Config files are flat ``key = value`` text; see the README for the key list.
Exit codes: 0 success, 1 configuration error, 2 training divergence.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import lagrangian as lg
from . import model as mdl
from . import projection as proj
from .datagen import GenSpec, generate, subset
from .trainer import (
    PROJECTION_MODES,
    TrainConfig,
    TrainingDivergedError,
    read_trace_csv,
    train,
)


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    gen: GenSpec = field(default_factory=GenSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    alphas: list[float] = field(default_factory=lambda: [0.0, 1e-2, 1e-3, 1e-4])
    modes: list[str] = field(default_factory=lambda: ["outer"])
    repeats: int = 1
    seed: int = 0
    eval_samples: int = 2000
    out_dir: Path = Path("runs")

    def validate(self) -> None:
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.eval_samples < 0:
            raise ConfigError("eval_samples must be >= 0")
        for a in self.alphas:
            if a < 0:
                raise ConfigError("alphas entries must be >= 0")
        for m in self.modes:
            if m not in PROJECTION_MODES:
                raise ConfigError(f"modes entries must be one of {PROJECTION_MODES}")
        try:
            self.gen.validate()
            replace(self.train, alpha=self.alphas[0] if self.alphas else 0.0).validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


_GEN_KEYS = {f.name: f.type for f in fields(GenSpec)}
_TRAIN_KEYS = {f.name: f.type for f in fields(TrainConfig)}


def _parse_scalar(key: str, raw: str):
    raw = raw.strip()
    if raw.lower() in ("none", ""):
        return None
    if raw.lower() in ("true", "false"):
        return raw.lower() == "true"
    try:
        if any(c in raw for c in ".eE") and not raw.lstrip("+-").isdigit():
            return float(raw)
        return int(raw)
    except ValueError:
        return raw


def parse_config_text(text: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    gen_kwargs: dict = {}
    train_kwargs: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key == "alphas":
            cfg.alphas = [float(v) for v in raw.split(",") if v.strip()]
        elif key == "modes":
            cfg.modes = [v.strip() for v in raw.split(",") if v.strip()]
        elif key == "repeats":
            cfg.repeats = int(raw)
        elif key == "seed":
            cfg.seed = int(raw)
        elif key == "eval_samples":
            cfg.eval_samples = int(raw)
        elif key == "out_dir":
            cfg.out_dir = Path(raw)
        elif key.startswith("data."):
            name = key[5:]
            if name == "size_means":
                gen_kwargs[name] = tuple(float(v) for v in raw.split(","))
            elif name == "size_stds":
                gen_kwargs[name] = tuple(float(v) for v in raw.split(","))
            elif name in _GEN_KEYS:
                gen_kwargs[name] = _parse_scalar(name, raw)
            else:
                raise ConfigError(f"line {lineno}: unknown key '{key}'")
        elif key.startswith("train."):
            name = key[6:]
            if name in ("alpha", "projection_mode", "seed"):
                raise ConfigError(
                    f"line {lineno}: set '{name}' through alphas/modes/seed instead"
                )
            if name not in _TRAIN_KEYS:
                raise ConfigError(f"line {lineno}: unknown key '{key}'")
            train_kwargs[name] = _parse_scalar(name, raw)
        else:
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
    try:
        cfg.gen = replace(cfg.gen, **gen_kwargs)
        cfg.train = replace(cfg.train, **train_kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    cfg.validate()
    return cfg


def parse_config(path) -> ExperimentConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"))


def echo_config(cfg: ExperimentConfig) -> str:
    lines = [
        f"out_dir = {cfg.out_dir}",
        f"seed = {cfg.seed}",
        f"repeats = {cfg.repeats}",
        f"eval_samples = {cfg.eval_samples}",
        "alphas = " + ",".join("%g" % a for a in cfg.alphas),
        "modes = " + ",".join(cfg.modes),
    ]
    for f_ in fields(GenSpec):
        value = getattr(cfg.gen, f_.name)
        if isinstance(value, tuple):
            value = ",".join("%g" % v for v in value)
        lines.append(f"data.{f_.name} = {value}")
    for f_ in fields(TrainConfig):
        if f_.name in ("alpha", "projection_mode", "seed"):
            continue
        lines.append(f"train.{f_.name} = {getattr(cfg.train, f_.name)}")
    return "\n".join(lines) + "\n"


def trace_filename(alpha: float, mode: str, seed: int) -> str:
    return f"trace_alpha{alpha:g}_mode{mode}_seed{seed}.csv"


def run_experiment(config, out_dir=None, seed_override: int | None = None) -> int:
    """Run the grid described by ``config`` (path or ExperimentConfig)."""
    try:
        cfg = parse_config(config) if not isinstance(config, ExperimentConfig) else config
        cfg.validate()
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    if out_dir is not None:
        cfg.out_dir = Path(out_dir)
    if seed_override is not None:
        cfg.seed = seed_override

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    (cfg.out_dir / "resolved.cfg").write_text(echo_config(cfg), encoding="utf-8")

    # One draw split train/eval so both sides share the class geometry.
    full = generate(replace(cfg.gen, n_samples=cfg.gen.n_samples + cfg.eval_samples))
    train_ds = subset(full, np.arange(cfg.gen.n_samples))
    eval_ds = None
    if cfg.eval_samples:
        eval_ds = subset(full, np.arange(cfg.gen.n_samples, len(full)))

    grid = []
    for alpha in cfg.alphas:
        for mode in cfg.modes:
            for r in range(cfg.repeats):
                grid.append((alpha, mode, cfg.seed + r))
    for alpha, mode, seed in grid:
        run_cfg = replace(cfg.train, alpha=alpha, projection_mode=mode, seed=seed)
        try:
            _, trace = train(train_ds, run_cfg, eval_dataset=eval_ds)
        except TrainingDivergedError as exc:
            print(f"training diverged: {exc}", file=sys.stderr)
            return 2
        trace.to_csv(cfg.out_dir / trace_filename(alpha, mode, seed))

    _write_summary(cfg)
    return 0


def _write_summary(cfg: ExperimentConfig) -> None:
    """Aggregate the written trace CSVs into summary.csv (mean +- std over seeds)."""
    lines = [
        "alpha,mode,final_acc_mean,final_acc_std,final_acc_small_mean,"
        "final_acc_large_mean,final_f1_mean,last20_acc_std_mean,"
        "viol_ineq_final_mean,total_projections"
    ]
    for alpha in cfg.alphas:
        for mode in cfg.modes:
            cols = [
                read_trace_csv(cfg.out_dir / trace_filename(alpha, mode, cfg.seed + r))
                for r in range(cfg.repeats)
            ]
            final_acc = np.array([c["acc"][-1] for c in cols])
            tail = np.array([c["acc"][-min(20, len(c["acc"])):].std() for c in cols])
            row = [
                "%g" % alpha,
                mode,
                "%.6g" % final_acc.mean(),
                "%.6g" % final_acc.std(),
                "%.6g" % np.mean([c["acc_small"][-1] for c in cols]),
                "%.6g" % np.mean([c["acc_large"][-1] for c in cols]),
                "%.6g" % np.mean([c["f1_size"][-1] for c in cols]),
                "%.6g" % tail.mean(),
                "%.6g" % np.mean([c["viol_ineq"][-1] for c in cols]),
                str(int(sum(c["n_proj"].sum() for c in cols))),
            ]
            lines.append(",".join(row))
    (cfg.out_dir / "summary.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _report(name: str, passed: bool, detail: str) -> bool:
    print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
    return passed


def _verify_projection() -> bool:
    rng = np.random.default_rng(7)
    worst = {"exact": 0.0, "onepass": 0.0, "differentiable": 0.0}
    kkt_worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 21))
        v = rng.uniform(-2.0, 2.0, size=n + 1)
        expected = proj.project_oracle_qp(v)
        res = proj.project_exact(v)
        worst["exact"] = max(worst["exact"], float(np.abs(res.projected - expected).max()))
        worst["onepass"] = max(
            worst["onepass"],
            float(np.abs(proj.project_onepass(v).projected - expected).max()),
        )
        vs = np.concatenate([v[:1], np.sort(v[1:])[::-1]])
        worst["differentiable"] = max(
            worst["differentiable"],
            float(
                np.abs(
                    proj.project_differentiable(vs).projected
                    - proj.project_oracle_qp(vs)
                ).max()
            ),
        )
        kkt_worst = max(kkt_worst, max(proj.kkt_residuals(v, res).values()))
    ok = True
    for name, err in worst.items():
        ok &= _report(f"projection.oracle_equiv_{name}", err <= 1e-8, f"max_abs={err:.3g} tol=1e-08")
    ok &= _report("projection.kkt_certificates", kkt_worst <= 1e-8, f"max_residual={kkt_worst:.3g} tol=1e-08")
    return ok


def _central_diff(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def _verify_gradients() -> bool:
    rng = np.random.default_rng(11)
    ok = True
    worst_erm = worst_bin = worst_multi = 0.0
    for _ in range(10):
        d, k, nb = 5, 3, 8
        params = mdl.init_params(d, k, None, rng)
        X = rng.standard_normal((nb, d))
        y = rng.integers(0, k, nb)
        _, grads = mdl.erm_loss_and_grad(params, X, y)

        def erm_at(w):
            p = mdl.ModelParams(w.reshape(params.class_weights.shape), params.size_head)
            return mdl.erm_loss_and_grad(p, X, y)[0]

        fd = _central_diff(erm_at, params.class_weights.ravel().copy())
        num = np.linalg.norm(grads["class_weights"].ravel() - fd)
        worst_erm = max(worst_erm, num / max(np.linalg.norm(fd), 1e-12))

        n_pos, n_neg = 6, 7
        pos = rng.standard_normal((n_pos, d))
        neg = rng.standard_normal((n_neg, d))
        dual = lg.DualState(lam=rng.uniform(0, 1, n_pos), mu=float(rng.normal()))
        primal = rng.uniform(-1, 1, n_pos + 1)
        head = rng.standard_normal(d)
        g_w, g_e, g_t = lg.full_gradient(primal, head, pos, neg, dual)
        analytic = np.concatenate([g_w, [g_e], g_t])

        def lag_at(z):
            return lg.lagrangian_value(
                np.concatenate([[z[d]], z[d + 1:]]), z[:d], pos, neg, dual
            )

        z0 = np.concatenate([head, primal])
        fd = _central_diff(lag_at, z0)
        worst_bin = max(
            worst_bin,
            np.linalg.norm(analytic - fd) / max(np.linalg.norm(fd), 1e-12),
        )
    ok &= _report("gradients.erm_fd", worst_erm < 1e-5, f"max_rel={worst_erm:.3g} tol=1e-05")
    ok &= _report("gradients.lagrangian_fd", worst_bin < 1e-5, f"max_rel={worst_bin:.3g} tol=1e-05")

    # p = 3 multi-class, full batch, one class at a time.
    N, d, p = 12, 4, 3
    reps = rng.standard_normal((N, d))
    class_of = rng.integers(0, p, N)
    class_of[:p] = np.arange(p)  # keep every class nonempty
    heads = rng.standard_normal((d, p))
    dual = lg.MultiClassDualState(lam=rng.uniform(0, 1, (N, p)), mu=rng.normal(size=p))
    members = lg.class_index_lists(class_of, p)
    primals = [rng.uniform(-1, 1, len(members[j]) + 1) for j in range(p)]
    batches = [
        (np.arange(len(members[j])), np.arange(N - len(members[j]))) for j in range(p)
    ]
    grads = lg.multiclass_gradients(primals, heads, reps, class_of, dual, batches)
    for j in range(p):
        nj = len(members[j])

        def mc_at(z, j=j, nj=nj):
            h2 = heads.copy()
            h2[:, j] = z[:d]
            p2 = [q.copy() for q in primals]
            p2[j] = z[d:]
            return lg.multiclass_lagrangian_value(p2, h2, reps, class_of, dual)

        z0 = np.concatenate([heads[:, j], primals[j]])
        fd = _central_diff(mc_at, z0)
        dense_tau = np.array([grads[j].g_tau[i] for i in range(nj)])
        analytic = np.concatenate([grads[j].g_w, [grads[j].g_eps], dense_tau])
        worst_multi = max(
            worst_multi,
            np.linalg.norm(analytic - fd) / max(np.linalg.norm(fd), 1e-12),
        )
    ok &= _report(
        "gradients.multiclass_fd", worst_multi < 1e-5, f"max_rel={worst_multi:.3g} tol=1e-05"
    )
    return ok


def _verify_convergence() -> bool:
    spec = GenSpec(n_samples=1500, n_features=8, n_classes=2, noise_rate=0.02,
                   size_weight=0.4, size_class_corr=0.2, seed=3)
    ds = generate(spec)
    mins = []
    for steps in (20, 80):
        cfg = TrainConfig(alpha=1e-2, batch_size=50, epochs=3, inner_steps=steps,
                          track_grad_norm=True, seed=5)
        _, trace = train(ds, cfg)
        mins.append(trace.grad_norm_min[-1])
        if not bool(trace.feasible_after_proj.all()):
            return _report("convergence.primal_feasible", False, "projection left C")
        if trace.lambda_min.min() < 0:
            return _report("convergence.dual_feasible", False, "negative multiplier")
    ok = _report("convergence.primal_feasible", True, "post-projection iterates in C")
    ok &= _report("convergence.dual_feasible", True, "lambda >= 0 throughout")
    ok &= _report(
        "convergence.grad_norm_decreases",
        mins[1] < mins[0],
        f"min_norm {mins[0]:.4g} -> {mins[1]:.4g} when T x4",
    )
    return ok


VERIFY_SUITES = {
    "projection": _verify_projection,
    "gradients": _verify_gradients,
    "convergence": _verify_convergence,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="conereg", description=__doc__)
    parser.add_argument("--config", type=Path, help="experiment config file")
    parser.add_argument("--out", type=Path, help="output directory override")
    parser.add_argument("--seed", type=int, help="base seed override")
    parser.add_argument("--verify", metavar="SUITE", help="run a verification suite")
    args = parser.parse_args(argv)

    if args.verify is not None:
        suite = VERIFY_SUITES.get(args.verify)
        if suite is None:
            print(
                f"unknown suite '{args.verify}'; choose from {sorted(VERIFY_SUITES)}",
                file=sys.stderr,
            )
            return 1
        return 0 if suite() else 1
    if args.config is None:
        print("either --config or --verify is required", file=sys.stderr)
        return 1
    return run_experiment(args.config, out_dir=args.out, seed_override=args.seed)


if __name__ == "__main__":
    sys.exit(main())
