"""Command-line experiment runner.

    wassrl run --config configs/attract_t50.cfg --seed 1 --out runs/t50
    wassrl plot runs/t50/*.csv --out curves.svg
    wassrl ot --config configs/ot_solve.cfg

Exit codes: 0 success, 2 invalid config, 3 training aborted on non-finite values.
The default output directory is taken from ``WASSRL_OUT`` (else ``runs``).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy

from wassrl import __version__
from wassrl.config import ConfigError, ExperimentConfig, config_from_dict, load_config
from wassrl.embeddings import EmbeddingSpec, target_measure_from_optimal_path
from wassrl.entropic_ot import OtConfig, exact_emd, sinkhorn
from wassrl.envs import Gridworld, GridworldSpec, TwoGoal, TwoGoalSpec, load_terrain
from wassrl.measures import DiscreteMeasure, build_cost_matrix
from wassrl.rl_core import PolicyParams, mlp_params, rbf_params
from wassrl.wrl import (
    TrainingAborted,
    WrlConfig,
    reinforce,
    train_alg1_continuous,
    train_alg2_discrete,
    train_alg3_dual_discrete,
    train_alg4_semidiscrete,
    train_repulsive_pair,
)

OUT_ENV = "WASSRL_OUT"
ATTRACT_COLUMNS = ("seed", "episode", "return", "w_estimate", "dual_diag_saturations", "wallclock_ms")
REPULSE_COLUMNS = ("seed", "iteration", "return_a", "return_b", "w_between_estimate",
                   "mean_x_a", "mean_x_b", "wallclock_ms")
# Salt for the seed sequence that initialises the two-goal policies.
INIT_SALT = 99


def default_out_dir() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


def wrl_config(cfg: ExperimentConfig, seed: int) -> WrlConfig:
    w = cfg.wrl
    emb = cfg.embedding
    grid_shape = None
    if emb.kind == "visit_distribution":
        grid_shape = gridworld_spec(cfg).shape
    return WrlConfig(
        lam=w.lam, rho=w.rho,
        embedding=EmbeddingSpec(emb.kind, emb.cost_kind, grid_shape, emb.cost_scale),
        episodes=w.episodes, theta_step=w.theta_step, dual_step=w.dual_step,
        rkhs_constant=w.rkhs_constant, rkhs_radius=w.rkhs_radius, rkhs_cap=w.rkhs_cap,
        kernel_bandwidth=w.kernel_bandwidth, ema_rate=w.ema_rate, baseline=w.baseline,
        normalize_weights=w.normalize_weights, batch_size=w.batch_size,
        reset_duals=w.reset_duals, dual_passes=w.dual_passes,
        checkpoint_every=w.checkpoint_every, seed=seed,
    )


def gridworld_spec(cfg: ExperimentConfig) -> GridworldSpec:
    g = cfg.gridworld
    return GridworldSpec(heights=load_terrain(g.terrain), horizon=g.horizon,
                         timeout_penalty=g.timeout_penalty, gamma=g.gamma)


def twogoal_spec(cfg: ExperimentConfig) -> TwoGoalSpec:
    t = cfg.twogoal
    if len(t.goals) != 2 or any(len(g) != 2 for g in t.goals) or len(t.start) != 2:
        raise ConfigError("twogoal: goals must be two 2-d points and start a 2-d point")
    return TwoGoalSpec(goals=tuple(tuple(g) for g in t.goals), horizon=t.horizon,
                       reward_scale=t.reward_scale, clip=t.clip, start=tuple(t.start))


def twogoal_initial_pair(cfg: ExperimentConfig, seed: int) -> tuple[PolicyParams, PolicyParams]:
    """Initial MLP policies: independent draws, or one draw shared by both."""
    ss_a, ss_b = np.random.SeedSequence([seed, INIT_SALT]).spawn(2)
    p = cfg.policy
    pa = mlp_params(2, 2, p.hidden, p.stddev, rng=np.random.default_rng(ss_a))
    if p.shared_init:
        return pa, pa
    return pa, mlp_params(2, 2, p.hidden, p.stddev, rng=np.random.default_rng(ss_b))


# --------------------------------------------------------------------------
# Experiments


def run_attract(cfg: ExperimentConfig, seed: int):
    """One gridworld attraction run; returns (final params, CSV rows)."""
    spec = gridworld_spec(cfg)
    env = Gridworld(spec)
    wcfg = wrl_config(cfg, seed)
    p0 = rbf_params(spec.cell_centers(), Gridworld.n_actions, cfg.policy.rbf_bandwidth)
    nu = target_measure_from_optimal_path(spec, cfg.embedding.cost_kind)
    support = spec_support(spec, wcfg.embedding, nu)
    alg = cfg.algorithm
    if alg == "reinforce":
        params, tlog = reinforce(env, p0, wcfg)
    elif alg == "alg1":
        target = nu.atoms[0]
        params, tlog = train_alg1_continuous(env, p0, lambda rng: target, wcfg)
    elif alg == "alg2":
        params, tlog = train_alg2_discrete(env, p0, nu, support, wcfg)
    elif alg == "alg3":
        params, tlog, _ = train_alg3_dual_discrete(env, p0, nu, support, wcfg)
    else:
        params, tlog, _ = train_alg4_semidiscrete(env, p0, nu, wcfg)
    rows = []
    for rec in tlog.records:
        rows.append({
            "seed": seed,
            "episode": rec["iteration"],
            "return": rec["return"],
            "w_estimate": rec.get("w_estimate", 0.0),
            "dual_diag_saturations": rec.get("dual_diag_saturations", 0),
            "wallclock_ms": rec["wallclock_ms"] if cfg.csv_wallclock else "",
        })
    return params, rows


def spec_support(spec: GridworldSpec, emb: EmbeddingSpec, nu: DiscreteMeasure) -> np.ndarray:
    """Finite support for the discrete trainers: the target atom plus one-hot cell visits."""
    return np.concatenate([nu.atoms, np.eye(spec.n_cells)]) if emb.dim == spec.n_cells else nu.atoms


def run_repulse(cfg: ExperimentConfig, seed: int):
    env = TwoGoal(twogoal_spec(cfg))
    wcfg = wrl_config(cfg, seed)
    pa, pb = twogoal_initial_pair(cfg, seed)
    pa, pb, tlog = train_repulsive_pair(env, pa, pb, wcfg)
    rows = []
    for rec in tlog.records:
        row = {"seed": seed, "iteration": rec["iteration"]}
        row.update({k: rec[k] for k in REPULSE_COLUMNS[2:-1]})
        row["wallclock_ms"] = rec["wallclock_ms"] if cfg.csv_wallclock else ""
        rows.append(row)
    return (pa, pb), rows


def load_measure(path) -> DiscreteMeasure:
    return DiscreteMeasure.from_json(Path(path).read_text())


def run_ot(cfg: ExperimentConfig) -> dict:
    o = cfg.ot
    mu, nu = load_measure(o.mu), load_measure(o.nu)
    C = build_cost_matrix(mu, nu, o.cost_kind)
    res = sinkhorn(mu, nu, C, OtConfig(rho=o.rho, max_iters=o.max_iters, tol=o.tol,
                                       convention=o.convention, log_domain=o.log_domain))
    out = res.to_dict()
    if max(mu.size, nu.size) <= 8:
        _, exact = exact_emd(mu, nu, C)
        out["exact"] = exact
        out["entropy_bound"] = o.rho * float(np.log(mu.size * nu.size))
    return out


# --------------------------------------------------------------------------
# Output


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: Path, columns, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in columns])
    path.write_text(buf.getvalue())


def _run_seed(cfg_dict: dict, seed: int, out_dir: str) -> dict:
    cfg = config_from_dict(cfg_dict)
    out = Path(out_dir)
    stem = f"{cfg.experiment}_seed{seed}"
    start = time.perf_counter()
    try:
        if cfg.experiment == "attract_gridworld":
            params, rows = run_attract(cfg, seed)
            write_csv(out / f"{stem}.csv", ATTRACT_COLUMNS, rows)
            (out / f"{stem}.params.json").write_text(json.dumps(params.to_dict()))
        else:
            (pa, pb), rows = run_repulse(cfg, seed)
            write_csv(out / f"{stem}.csv", REPULSE_COLUMNS, rows)
            (out / f"{stem}.params.json").write_text(json.dumps({"a": pa.to_dict(), "b": pb.to_dict()}))
    except TrainingAborted as exc:
        snap = out / f"{stem}.abort.json"
        snap.write_text(json.dumps(exc.snapshot, default=float))
        return {"seed": seed, "aborted": str(exc), "snapshot": str(snap)}
    return {"seed": seed, "csv": f"{stem}.csv", "wallclock_s": time.perf_counter() - start}


def versions() -> dict:
    return {"wassrl": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


def run(config_path, overrides=(), seeds=None, out_dir=None, jobs: int = 1) -> int:
    try:
        cfg = load_config(config_path, overrides)
        if seeds is not None:
            cfg = config_from_dict({**cfg.to_dict(), "seeds": list(seeds)})
        if cfg.experiment == "repulse_twogoal":
            twogoal_spec(cfg)
        elif cfg.experiment == "attract_gridworld":
            gridworld_spec(cfg)
    except (ConfigError, ValueError) as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    if cfg.experiment == "ot_solve":
        return _ot_command(cfg)
    out = Path(out_dir) if out_dir is not None else default_out_dir()
    out.mkdir(parents=True, exist_ok=True)
    cfg_dict = cfg.to_dict()
    start = time.perf_counter()
    if jobs > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_seed, [cfg_dict] * len(cfg.seeds), cfg.seeds,
                                    [str(out)] * len(cfg.seeds)))
    else:
        results = [_run_seed(cfg_dict, s, str(out)) for s in cfg.seeds]
    manifest = {
        "config": cfg_dict,
        "config_hash": cfg.config_hash(),
        "versions": versions(),
        "runs": results,
        "wallclock_s": time.perf_counter() - start,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    aborted = [r for r in results if "aborted" in r]
    if aborted:
        for r in aborted:
            print(f"seed {r['seed']}: {r['aborted']}; snapshot at {r['snapshot']}", file=sys.stderr)
        return 3
    for r in results:
        print(f"seed {r['seed']}: {out / r['csv']}")
    return 0


def _ot_command(cfg: ExperimentConfig) -> int:
    try:
        res = run_ot(cfg)
    except ValueError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    line = f"value {res['value']:.10g}  iterations {res['iterations']}  converged {res['converged']}"
    if "exact" in res:
        line += f"  exact {res['exact']:.10g}  bound {res['entropy_bound']:.3g}"
    print(line)
    print(json.dumps(res))
    return 0


def ot(config_path, overrides=()) -> int:
    try:
        cfg = load_config(config_path, overrides)
        cfg = config_from_dict({**cfg.to_dict(), "experiment": "ot_solve"})
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return 2
    return _ot_command(cfg)


# --------------------------------------------------------------------------
# Plotting

STYLE_ATTRACT = {-1.0: ("#1f4fbf", ""), 0.0: ("#c0392b", "6,4")}
STYLE_FALLBACK = ("#555555", "2,3")


def read_csv(path) -> tuple[list[str], list[dict]]:
    text = Path(path).read_text()
    reader = csv.DictReader(io.StringIO(text))
    rows = list(reader)
    if reader.fieldnames is None or not rows:
        raise ValueError(f"{path}: empty CSV")
    return list(reader.fieldnames), rows


def _lam_for(path: Path) -> float | None:
    manifest = path.parent / "manifest.json"
    if manifest.is_file():
        try:
            return float(json.loads(manifest.read_text())["config"]["wrl"]["lam"])
        except (KeyError, ValueError, TypeError):
            return None
    return None


def plot(csv_paths, out_svg, width: int = 720, height: int = 420) -> Path:
    """Static SVG line chart; nothing is written if any input is empty or schemas differ."""
    if not csv_paths:
        raise ValueError("no CSV files given")
    series = []
    schema = None
    for p in map(Path, csv_paths):
        cols, rows = read_csv(p)
        if schema is None:
            schema = cols
        elif cols != schema:
            raise ValueError(f"{p}: schema {cols} differs from {schema}")
        lam = _lam_for(p)
        if "episode" in cols:
            x = [float(r["episode"]) for r in rows]
            series.append((x, [float(r["return"]) for r in rows], lam, p.stem))
        elif "iteration" in cols and "mean_x_a" in cols:
            x = [float(r["iteration"]) for r in rows]
            series.append((x, [float(r["mean_x_a"]) for r in rows], lam, p.stem + " A"))
            series.append((x, [float(r["mean_x_b"]) for r in rows], lam, p.stem + " B"))
        else:
            raise ValueError(f"{p}: unrecognised CSV schema {cols}")
    ylabel = "return" if "episode" in schema else "mean x"
    xlabel = "episode" if "episode" in schema else "iteration"
    svg = _svg(series, xlabel, ylabel, width, height)
    out = Path(out_svg)
    out.write_text(svg)
    return out


def _svg(series, xlabel, ylabel, width, height) -> str:
    left, right, top, bottom = 60, 20, 20, 45
    xs = [v for s in series for v in s[0]]
    ys = [v for s in series for v in s[1]]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pw, ph = width - left - right, height - top - bottom

    def sx(v):
        return left + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return top + (y1 - v) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'data-xmin="{x0:g}" data-xmax="{x1:g}" data-ymin="{y0:g}" data-ymax="{y1:g}">',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#000"/>']
    for frac in (0.0, 0.5, 1.0):
        xv, yv = x0 + frac * (x1 - x0), y0 + frac * (y1 - y0)
        out.append(f'<text x="{sx(xv):.1f}" y="{height - bottom + 16}" font-size="11" '
                   f'text-anchor="middle">{xv:g}</text>')
        out.append(f'<text x="{left - 6}" y="{sy(yv) + 4:.1f}" font-size="11" text-anchor="end">{yv:.3g}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 8}" font-size="12" text-anchor="middle">{xlabel}</text>')
    out.append(f'<text x="14" y="{top + ph / 2:.1f}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 14 {top + ph / 2:.1f})">{ylabel}</text>')
    for x, y, lam, label in series:
        colour, dash = STYLE_ATTRACT.get(lam, STYLE_FALLBACK) if lam is not None else STYLE_FALLBACK
        pts = " ".join(f"{sx(a):.1f},{sy(b):.1f}" for a, b in zip(x, y))
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        lam_attr = f' data-lambda="{lam:g}"' if lam is not None else ""
        out.append(f'<polyline fill="none" stroke="{colour}" stroke-width="1.2"{dash_attr}{lam_attr} '
                   f'points="{pts}"><title>{label}</title></polyline>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# Entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wassrl",
        description="Wasserstein-regularised policy-gradient experiments.",
        epilog=f"Output goes to --out, else ${OUT_ENV}, else ./runs. "
               "Exit codes: 2 invalid config, 3 training aborted (non-finite values).",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config for each seed")
    p_run.add_argument("--config", required=True, help="JSON experiment config")
    p_run.add_argument("--seed", type=int, action="append",
                       help="seed to run (repeatable); replaces the config's seed list")
    p_run.add_argument("--jobs", type=int, default=1, help="seeds run concurrently (default 1)")
    p_run.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./runs)")
    p_run.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field by dotted path, e.g. wrl.lam=0")

    p_plot = sub.add_parser("plot", help="SVG learning curves from run CSVs")
    p_plot.add_argument("csv", nargs="+", help="CSV files sharing one schema")
    p_plot.add_argument("--out", required=True, help="output .svg path")

    p_ot = sub.add_parser("ot", help="solve an entropic transport problem between two measure files")
    p_ot.add_argument("--config", required=True, help="JSON config with an 'ot' section")
    p_ot.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                      help="override a config field by dotted path, e.g. ot.rho=0.1")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return run(args.config, args.overrides, args.seed, args.out, args.jobs)
    if args.command == "ot":
        return ot(args.config, args.overrides)
    try:
        path = plot(args.csv, args.out)
    except (ValueError, OSError) as exc:
        print(f"plot failed: {exc}", file=sys.stderr)
        return 1
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
