"""Command-line front end.

    warmflow <gen-data|train|eval|diagnose|ablate-sigma|rl|plot>
             --config <path> [--set key=value ...] --out <dir>

One JSON config drives every command; WARMFLOW_SEED overrides the config
seed. Every CSV has a one-line header and embeds the effective config
hash; re-running a command with the same config and seed reproduces
byte-identical CSVs.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import plots
from .config import (RunConfig, SCHEMA_VERSION, apply_overrides, load_config,
                     save_config)
from .diagnostics import (Quadrature, branching_cost, curvature_sweep,
                          fm_risk_of_bayes_field, independent_coupling,
                          monotone_coupling, prior_contexts_from_dataset,
                          warm_bound_check)
from .errors import UsageError, WarmflowError
from .nets import load_checkpoint, make_rng, save_checkpoint
from .policy import WarmFlowPolicy
from .prior import EpisodeBuffer, PriorSpec, sample_prior
from .priorrl import NoiseSpaceMdp, ResidualSpec, RlBudget, train_residual
from .rollout import RolloutConfig, beta_pdf, evaluate
from .worlds import (DEFAULT_MODE_PLAN, NavWorld, dataset_from_buffer,
                     gen_mixture_target, gen_nav_demos, gen_chunked_dataset)

MODE_PLANS = {
    "balanced": DEFAULT_MODE_PLAN,
    "unimodal": ((1, 1), (1, 1), (1, 1)),
}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (np.floating,)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_csv(path) -> tuple[list[str], list[dict]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return list(reader.fieldnames or []), [dict(r) for r in reader]


def _world_from_config(cfg: RunConfig) -> NavWorld:
    w = cfg.world
    return NavWorld(n_cols=w.n_cols,
                    obstacles=tuple(tuple(o) for o in w.obstacles),
                    block_lo=w.block_lo, block_hi=w.block_hi,
                    bump_amp=w.bump_amp, bump_half_width=w.bump_half_width,
                    jitter_std=w.jitter_std, observe_height=w.observe_height,
                    obs_steps=w.obs_steps)


def _mode_plan(cfg: RunConfig, world: NavWorld):
    name = cfg.world.mode_plan
    if name not in MODE_PLANS:
        raise UsageError(f"unknown mode plan {name!r}")
    plan = MODE_PLANS[name]
    n_obs = len(world.obstacles)
    return tuple(tuple(entry[:n_obs]) for entry in plan)


def _policy_from_config(cfg: RunConfig, variant=None, sigma="config") -> WarmFlowPolicy:
    return WarmFlowPolicy(
        variant=cfg.prior.variant if variant is None else variant,
        sigma=cfg.prior.sigma if sigma == "config" else sigma,
        chunk_len=cfg.prior.chunk_len,
        hidden_width=cfg.net.hidden_width, n_layers=cfg.net.n_layers,
        time_embed_dim=cfg.net.time_embed_dim, activation=cfg.net.activation,
        lr=cfg.train.lr, weight_decay=cfg.train.weight_decay,
        beta1=cfg.train.beta1, beta2=cfg.train.beta2, eps=cfg.train.eps,
        train_iters=cfg.train.iters, batch_size=cfg.train.batch_size,
        nfe=cfg.eval.nfe_list[0] if cfg.eval.nfe_list else 9,
        seed=cfg.seed)


def _load_buffer(cfg: RunConfig) -> EpisodeBuffer:
    data_dir = Path(cfg.data_dir)
    if not (data_dir / "episodes.json").exists():
        raise UsageError(f"dataset not found in {data_dir}; run gen-data first")
    return EpisodeBuffer.load(data_dir)


def save_policy(path, policy: WarmFlowPolicy, config_hash: str) -> None:
    extra = {
        "policy": policy.get_params(),
        "prior": policy.prior_spec_.to_dict(),
        "obs_dim": policy.n_obs_features_,
        "action_low": policy.action_low_.tolist(),
        "action_high": policy.action_high_.tolist(),
    }
    save_checkpoint(path, policy.params_, policy.adam_,
                    step=policy.train_iters, config_hash=config_hash, extra=extra)


def load_policy(path) -> tuple[WarmFlowPolicy, dict]:
    if not Path(path).exists():
        raise UsageError(f"checkpoint not found: {path}")
    params, adam, _, meta = load_checkpoint(path)
    extra = meta["extra"]
    policy = WarmFlowPolicy(**extra["policy"])
    policy.params_ = params
    policy.adam_ = adam
    policy.prior_spec_ = PriorSpec.from_dict(extra["prior"])
    policy.n_obs_features_ = int(extra["obs_dim"])
    policy.action_low_ = np.asarray(extra["action_low"])
    policy.action_high_ = np.asarray(extra["action_high"])
    policy.loss_history_ = np.zeros(0)
    return policy, meta


def _check_hash(meta: dict, cfg_hash: str) -> bool:
    """Warn on checkpoint/config hash mismatch; callers proceed with a flag."""
    mismatch = meta.get("config_hash") not in ("", cfg_hash)
    if mismatch:
        print(f"warning: checkpoint config hash {meta.get('config_hash')} "
              f"!= current config hash {cfg_hash}; proceeding", file=sys.stderr)
    return mismatch


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(cfg: RunConfig, out: Path) -> int:
    world = _world_from_config(cfg)
    demos = gen_nav_demos(world, make_rng(cfg.seed, stream=100),
                          mode_plan=_mode_plan(cfg, world))
    dataset = gen_chunked_dataset(world, demos, cfg.prior.chunk_len,
                                  cfg.prior.chunk_len)
    dataset.buffer.save(out, config_hash=cfg.hash(), seed=cfg.seed)
    save_config(cfg, out / "config_used.json")
    print(f"wrote {len(dataset.buffer)} steps over "
          f"{dataset.buffer.n_episodes} episodes to {out}")
    return 0


def cmd_train(cfg: RunConfig, out: Path) -> int:
    buffer = _load_buffer(cfg)
    policy = _policy_from_config(cfg)
    spec = policy.make_prior_spec(buffer.action_dim)
    dataset = dataset_from_buffer(buffer, spec.chunk_len, spec.prediction_len)
    losses = []
    policy.fit(dataset, callback=lambda it, loss: losses.append((it, loss)))
    save_policy(out / "checkpoint.npz", policy, cfg.hash())
    write_csv(out / "train_loss.csv", ["step", "loss", "config_hash", "seed"],
              [[it, loss, cfg.hash(), cfg.seed] for it, loss in losses])
    _render_loss(out)
    print(f"trained {cfg.prior.variant} policy for {cfg.train.iters} iters; "
          f"final loss {losses[-1][1]:.5f}")
    return 0


def cmd_eval(cfg: RunConfig, out: Path, checkpoint: str) -> int:
    if cfg.eval.episodes < 1:
        raise UsageError("eval.episodes must be >= 1")
    policy, meta = load_policy(checkpoint)
    mismatch = _check_hash(meta, cfg.hash())
    world = _world_from_config(cfg)
    spec = policy.prior_spec_
    rows = []
    summary_cells = {}
    violin_rows = []
    grid = np.linspace(0.0, 1.0, 201)
    for nfe in cfg.eval.nfe_list:
        rcfg = RolloutConfig(prior=spec, nfe=int(nfe),
                             max_steps=cfg.eval.max_steps,
                             stop_on_collision=cfg.eval.stop_on_collision)
        report = evaluate(policy, world, rcfg, cfg.eval.episodes, cfg.eval.seeds)
        for seed, k, n in report.per_seed:
            rows.append([spec.variant, spec.sigma, spec.chunk_len, nfe, seed,
                         n, k, k / n, cfg.hash()])
        stats = report.success
        lo, hi = stats.interval(0.90)
        summary_cells[str(nfe)] = {
            "k": stats.k, "n": stats.n, "alpha": stats.alpha, "beta": stats.beta,
            "posterior_mean": stats.posterior_mean,
            "interval90": [lo, hi],
            "seed_sr_mean": stats.seed_sr_mean, "seed_sr_std": stats.seed_sr_std,
            "median_switches": report.switches.median,
            "mean_discontinuity": report.mean_discontinuity,
        }
        density = beta_pdf(stats.k, stats.n, grid)
        label = f"nfe={nfe}"
        for y, d in zip(grid, density):
            violin_rows.append([label, y, d, stats.posterior_mean, cfg.hash()])
    write_csv(out / "eval.csv",
              ["variant", "sigma", "H", "nfe", "seed", "episodes", "k", "sr",
               "config_hash"], rows)
    write_csv(out / "eval_violin.csv",
              ["label", "y", "density", "posterior_mean", "config_hash"],
              violin_rows)
    summary = {"schema_version": SCHEMA_VERSION, "config_hash": cfg.hash(),
               "seed": cfg.seed, "config_hash_mismatch": mismatch,
               "variant": spec.variant, "sigma": spec.sigma,
               "H": spec.chunk_len, "cells": summary_cells}
    (out / "eval_summary.json").write_text(json.dumps(summary, indent=2,
                                                      sort_keys=True))
    _render_violin(out)
    for nfe, cell in summary_cells.items():
        print(f"nfe={nfe}: pooled SR {cell['k']}/{cell['n']} "
              f"(posterior mean {cell['posterior_mean']:.3f})")
    return 0


def cmd_diagnose(cfg: RunConfig, out: Path, checkpoint: str,
                 baseline: str | None = None) -> int:
    policy, meta = load_policy(checkpoint)
    mismatch = _check_hash(meta, cfg.hash())
    buffer = _load_buffer(cfg)
    spec = policy.prior_spec_
    dataset = dataset_from_buffer(buffer, spec.chunk_len, spec.prediction_len)
    rng = make_rng(cfg.seed, stream=200)
    obs, warms = prior_contexts_from_dataset(dataset, spec,
                                             cfg.diag.curvature_obs, rng)
    report = curvature_sweep(policy.params_, obs, warms, spec, rng,
                             n_steps=cfg.diag.curvature_steps,
                             label=spec.variant)
    curv_rows = [[spec.variant, i, k, cfg.hash(), cfg.seed]
                 for i, k in enumerate(report.kappas)]
    normalized = None
    if baseline is not None:
        base_policy, _ = load_policy(baseline)
        bspec = base_policy.prior_spec_
        bdataset = dataset_from_buffer(buffer, bspec.chunk_len, bspec.prediction_len)
        brng = make_rng(cfg.seed, stream=200)
        bobs, bwarms = prior_contexts_from_dataset(bdataset, bspec,
                                                   cfg.diag.curvature_obs, brng)
        base_report = curvature_sweep(base_policy.params_, bobs, bwarms, bspec,
                                      brng, n_steps=cfg.diag.curvature_steps,
                                      label=bspec.variant)
        normalized = report.normalized(base_report.mean_kappa)
    write_csv(out / "curvature.csv",
              ["label", "obs_index", "kappa", "config_hash", "seed"], curv_rows)

    # Branching-cost fixtures: exact-formula identity, the non-branching
    # monotone coupling, and the warm-bound sigma sweep.
    quad = Quadrature(t_max=cfg.diag.t_max, n_t=cfg.diag.n_t,
                      n_samples=cfg.diag.mc_samples)
    target = gen_mixture_target(cfg.diag.mixture)
    branch_rows = []

    def add_row(fixture, sigma, rep, extra_val="", extra_se=""):
        branch_rows.append([fixture, "" if sigma is None else sigma,
                            rep.estimate, rep.se, rep.mismatch, rep.noise_term,
                            rep.slack, rep.surrogate, rep.cross_term,
                            extra_val, extra_se, cfg.hash(), cfg.seed])

    indep = independent_coupling(target)
    rep = branching_cost(indep, quad, make_rng(cfg.seed, stream=201),
                         fixture="independent")
    risk, risk_se = fm_risk_of_bayes_field(indep, quad,
                                           make_rng(cfg.seed, stream=202))
    add_row("independent", None, rep, risk, risk_se)
    if target.dim == 1:
        ot = branching_cost(monotone_coupling(target), quad,
                            make_rng(cfg.seed, stream=203), fixture="monotone")
        add_row("monotone", None, ot)
    for offset, name in ((0.0, "warm_exact"), (cfg.diag.bound_offset, "warm_offset")):
        reports = warm_bound_check(target, cfg.diag.bound_sigmas,
                                   make_rng(cfg.seed, stream=204), offset=offset,
                                   quad=quad, fixture=name)
        for rep in reports:
            add_row(name, rep.sigma, rep)
    write_csv(out / "branching.csv",
              ["fixture", "sigma", "estimate", "se", "mismatch", "noise_term",
               "slack", "surrogate", "cross_term", "fm_risk", "fm_risk_se",
               "config_hash", "seed"], branch_rows)

    # A few recorded integration paths for the trajectory plot.
    first = True
    prng = make_rng(cfg.seed, stream=205)
    pobs, pwarms = prior_contexts_from_dataset(dataset, spec,
                                               cfg.diag.flow_paths, prng)
    for i, (o, w) in enumerate(zip(pobs, pwarms)):
        a0 = sample_prior(spec, w, prng)
        _, path = policy.map_source(a0, o, nfe=cfg.diag.curvature_steps,
                                    return_path=True)
        path.write_csv(out / "flow_paths.csv", config_hash=cfg.hash(),
                       seed=cfg.seed, path_id=i, append=not first)
        first = False
    _render_paths(out)

    summary = {"schema_version": SCHEMA_VERSION, "config_hash": cfg.hash(),
               "seed": cfg.seed, "config_hash_mismatch": mismatch,
               "variant": spec.variant, "mean_kappa": report.mean_kappa,
               "normalized_kappa": normalized}
    (out / "diagnose_summary.json").write_text(json.dumps(summary, indent=2,
                                                          sort_keys=True))
    print(f"mean curvature {report.mean_kappa:.5f}"
          + (f" (normalized {normalized:.3f})" if normalized is not None else ""))
    return 0


def _ablate_ckpt_name(variant: str, sigma: float) -> str:
    return f"ckpt_{variant}_s{sigma:g}.npz"


def cmd_ablate_sigma(cfg: RunConfig, out: Path, ckpt_dir: str,
                     train_missing: bool = False) -> int:
    ckpt_dir = Path(ckpt_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    world = _world_from_config(cfg)
    rows = []
    for variant in cfg.ablate.variants:
        for sigma in cfg.ablate.sigmas:
            path = ckpt_dir / _ablate_ckpt_name(variant, float(sigma))
            if not path.exists():
                if not train_missing:
                    raise UsageError(f"missing checkpoint {path}; rerun with "
                                     f"--train-missing to train it")
                buffer = _load_buffer(cfg)
                policy = _policy_from_config(cfg, variant=variant,
                                             sigma=float(sigma))
                spec = policy.make_prior_spec(buffer.action_dim)
                dataset = dataset_from_buffer(buffer, spec.chunk_len,
                                              spec.prediction_len)
                policy.fit(dataset)
                save_policy(path, policy, cfg.hash())
            policy, _ = load_policy(path)
            rcfg = RolloutConfig(prior=policy.prior_spec_, nfe=cfg.ablate.nfe,
                                 max_steps=cfg.eval.max_steps)
            report = evaluate(policy, world, rcfg, cfg.ablate.episodes,
                              cfg.eval.seeds)
            for seed, k, n in report.per_seed:
                rows.append([variant, sigma, seed, cfg.ablate.nfe, n, k, k / n,
                             cfg.hash()])
    write_csv(out / "sigma_sweep.csv",
              ["variant", "sigma", "seed", "nfe", "episodes", "k", "sr",
               "config_hash"], rows)
    _render_sigma(out)
    print(f"sigma sweep: {len(rows)} rows")
    return 0


def cmd_rl(cfg: RunConfig, out: Path, checkpoint: str) -> int:
    policy, meta = load_policy(checkpoint)
    _check_hash(meta, cfg.hash())
    world = _world_from_config(cfg)
    mdp = NoiseSpaceMdp(policy, world, nfe=cfg.rl.nfe,
                        max_steps=cfg.eval.max_steps)
    budget = RlBudget(generations=cfg.rl.generations,
                      population=cfg.rl.population,
                      elite_frac=cfg.rl.elite_frac,
                      distill_steps=cfg.rl.distill_steps,
                      eval_episodes=cfg.rl.eval_episodes,
                      eval_every=cfg.rl.eval_every)
    rows = []
    for name, spec in (("warm", ResidualSpec(cfg.rl.delta_warm, "warm", True)),
                       ("origin", ResidualSpec(cfg.rl.delta_origin, "origin", False))):
        curve = train_residual(mdp, spec, budget, cfg.rl.seeds)
        if curve.diverged:
            print(f"warning: {name} arm flagged divergent returns; curve "
                  f"truncated", file=sys.stderr)
        for seed, steps, sr in curve.rows:
            rows.append([name, seed, steps, sr, cfg.hash()])
    write_csv(out / "rl_curves.csv",
              ["variant", "seed", "env_steps", "eval_sr", "config_hash"], rows)
    _render_rl(out)
    print(f"rl comparison: {len(rows)} curve points")
    return 0


def cmd_plot(cfg: RunConfig, out: Path) -> int:
    made = []
    for name, render in (("train_loss.csv", _render_loss),
                         ("eval_violin.csv", _render_violin),
                         ("sigma_sweep.csv", _render_sigma),
                         ("rl_curves.csv", _render_rl),
                         ("flow_paths.csv", _render_paths)):
        if (out / name).exists():
            render(out)
            made.append(name.replace(".csv", ".svg"))
    if not made:
        raise UsageError(f"no known CSVs found in {out}")
    print("rendered: " + ", ".join(made))
    return 0


# ---------------------------------------------------------------------------
# SVG renderers (read back the CSVs; plots never compute)
# ---------------------------------------------------------------------------

def _csv_comment(rows: list[dict]) -> str:
    if rows and "config_hash" in rows[0]:
        return f"config_hash={rows[0]['config_hash']}"
    return ""


def _render_loss(out: Path) -> None:
    _, rows = read_csv(out / "train_loss.csv")
    pts = [(float(r["step"]), float(r["loss"])) for r in rows]
    plots.line_chart({"loss": pts}, out / "train_loss.svg",
                     "training loss", "iteration", "mse loss",
                     comment=_csv_comment(rows))


def _render_violin(out: Path) -> None:
    _, rows = read_csv(out / "eval_violin.csv")
    cells = {}
    for r in rows:
        cell = cells.setdefault(r["label"], {"label": r["label"], "grid": [],
                                             "density": [], "mean": 0.0})
        cell["grid"].append(float(r["y"]))
        cell["density"].append(float(r["density"]))
        cell["mean"] = float(r["posterior_mean"])
    plots.violin_chart(list(cells.values()), out / "eval_violin.svg",
                       "success-rate posterior", comment=_csv_comment(rows))


def _render_sigma(out: Path) -> None:
    _, rows = read_csv(out / "sigma_sweep.csv")
    series: dict[str, dict[float, list[float]]] = {}
    for r in rows:
        series.setdefault(r["variant"], {}).setdefault(
            float(r["sigma"]), []).append(float(r["sr"]))
    lines = {}
    for variant, by_sigma in sorted(series.items()):
        pts = [(s, sum(v) / len(v)) for s, v in sorted(by_sigma.items())]
        lines[variant] = pts
    plots.line_chart(lines, out / "sigma_sweep.svg",
                     "success rate vs residual scale", "sigma",
                     "mean success rate", comment=_csv_comment(rows))


def _render_rl(out: Path) -> None:
    _, rows = read_csv(out / "rl_curves.csv")
    series: dict[str, dict[int, list[float]]] = {}
    for r in rows:
        series.setdefault(r["variant"], {}).setdefault(
            int(r["env_steps"]), []).append(float(r["eval_sr"]))
    lines = {}
    for variant, by_steps in sorted(series.items()):
        lines[variant] = [(s, sum(v) / len(v)) for s, v in sorted(by_steps.items())]
    plots.line_chart(lines, out / "rl_curves.svg",
                     "residual search learning curves", "env steps",
                     "eval success rate", comment=_csv_comment(rows))


def _render_paths(out: Path) -> None:
    _, rows = read_csv(out / "flow_paths.csv")
    paths: dict[int, list[tuple[float, float]]] = {}
    for r in rows:
        if r["coord"] != "0":
            continue
        paths.setdefault(int(r["path"]), []).append(
            (float(r["t"]), float(r["value"])))
    plots.flow_path_chart(paths, out / "flow_paths.svg",
                          "integration paths (coordinate 0)",
                          comment=_csv_comment(rows))


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="warmflow",
                                     description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON run config")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       dest="overrides", help="dotted-path config override")

    common(sub.add_parser("gen-data", help="generate demos and the episode buffer"))
    common(sub.add_parser("train", help="behavior-clone a policy"))
    p = sub.add_parser("eval", help="closed-loop evaluation of a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p = sub.add_parser("diagnose", help="curvature and branching-cost reports")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--baseline", default=None,
                   help="optional baseline checkpoint for normalized curvature")
    p = sub.add_parser("ablate-sigma", help="evaluate a checkpoint set over sigma")
    common(p)
    p.add_argument("--ckpt-dir", required=True)
    p.add_argument("--train-missing", action="store_true")
    p = sub.add_parser("rl", help="residual prior-space RL comparison")
    common(p)
    p.add_argument("--checkpoint", required=True)
    common(sub.add_parser("plot", help="re-render SVGs from CSVs in --out"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        cfg = apply_overrides(cfg, args.overrides)
        env_seed = os.environ.get("WARMFLOW_SEED")
        if env_seed is not None:
            cfg.seed = int(env_seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "gen-data":
            return cmd_gen_data(cfg, out)
        if args.command == "train":
            return cmd_train(cfg, out)
        if args.command == "eval":
            return cmd_eval(cfg, out, args.checkpoint)
        if args.command == "diagnose":
            return cmd_diagnose(cfg, out, args.checkpoint, args.baseline)
        if args.command == "ablate-sigma":
            return cmd_ablate_sigma(cfg, out, args.ckpt_dir, args.train_missing)
        if args.command == "rl":
            return cmd_rl(cfg, out, args.checkpoint)
        if args.command == "plot":
            return cmd_plot(cfg, out)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as exc:
        print(json.dumps({"error": "usage", "message": str(exc)}), file=sys.stderr)
        return 2
    except WarmflowError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
