"""Command-line front end.

Every subcommand resolves its configuration the same way — defaults,
then ``--preset``, then ``--config`` file, then per-field flags — writes
the resolved snapshot to ``config.ini`` in the output directory before
doing anything else, and emits only data files (CSV/JSON/JSONL).  Rerun
any output directory's ``config.ini`` with the same subcommand and the
data files come back byte-identical.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, PRESETS, RunConfig, load_config, save_config
from .control import derived_gammas
from .graph import graph_for_period, save_edge_list
from .marl import write_checkpoint
from .mjls import (
    MODE_ORDER,
    REFERENCE_GAMMAS,
    RoleCensus,
    census_after_dol,
    ci_region_sweep,
    is_mss,
    scalar_model,
    transition_row,
    write_sweep_csv,
)
from .scg import (
    baseline_run,
    build_plant,
    build_problem,
    build_scenario,
    train,
    write_curves_csv,
    write_episode_jsonl,
    write_episode_summary,
)

__all__ = ["main"]

#: Default output root when neither ``--out`` nor the env var is given.
OUT_ENV = "SCGLAB_OUT"

LEARNED_COLUMNS = ("N1", "rho_s", "ci", "j0", "final_return",
                   "final_smoothed", "mean_pi1_group1", "mean_pi1_group2")

#: Companion empirical line for the sweep boundary comparison,
#: ``rho_s = slope * N1 + intercept``.
REFERENCE_BOUNDARY = {"slope": -0.1, "intercept": 10.0}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH",
                        help="INI file applied over the preset")
    parser.add_argument("--preset", choices=sorted(PRESETS),
                        help="named experiment preset")
    parser.add_argument("--out", metavar="DIR",
                        help=f"output directory (default $"
                             f"{OUT_ENV}/<command> or runs/<command>)")
    group = parser.add_argument_group("config fields (override any)")
    for f in dataclasses.fields(RunConfig):
        group.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name,
                           default=None, metavar="V", help=argparse.SUPPRESS)


def _field_overrides(args: argparse.Namespace) -> dict[str, str]:
    out = {}
    for f in dataclasses.fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            out[f.name] = value
    return out


def _out_dir(args: argparse.Namespace, command: str) -> Path:
    if args.out:
        path = Path(args.out)
    else:
        path = Path(os.environ.get(OUT_ENV, "runs")) / command
    path.mkdir(parents=True, exist_ok=True)
    return path


def _gamma_sets(cfg: RunConfig, args: argparse.Namespace):
    """Mode-factor pair: canonical table, delay-formula derivation, or
    explicit per-element overrides."""
    if cfg.mode_set == "derived":
        g1, g2 = derived_gammas(build_plant(cfg), v0=cfg.v0, lam=cfg.lam,
                                tau_steps=cfg.tau_steps)
    else:
        g1, g2 = REFERENCE_GAMMAS
    for name, current in (("gamma1", g1), ("gamma2", g2)):
        raw = getattr(args, name, None)
        if raw is not None:
            parts = raw.split(",")
            if len(parts) != 3:
                raise ConfigError(f"--{name} needs three comma-separated values")
            try:
                current = tuple(float(p) for p in parts)
            except ValueError:
                raise ConfigError(f"--{name}: could not parse {raw!r}") from None
        if name == "gamma1":
            g1 = current
        else:
            g2 = current
    return tuple(g1), tuple(g2)


def _parse_range(raw: str, name: str) -> np.ndarray:
    """``lo:hi[:step]`` to an inclusive grid."""
    parts = raw.split(":")
    if len(parts) not in (2, 3):
        raise ConfigError(f"--{name} must look like lo:hi[:step]")
    try:
        lo, hi = float(parts[0]), float(parts[1])
        step = float(parts[2]) if len(parts) == 3 else 1.0
    except ValueError:
        raise ConfigError(f"--{name}: could not parse {raw!r}") from None
    if step <= 0 or hi < lo:
        raise ConfigError(f"--{name}: empty range {raw!r}")
    return np.arange(lo, hi + step / 2, step)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_baseline(cfg: RunConfig, outdir: Path, args: argparse.Namespace) -> int:
    """Both single-expert reference runs, trajectories and returns."""
    scenario = build_scenario(cfg)
    plant = build_plant(cfg)
    problem = build_problem(cfg)
    returns = {}
    for variant in ("kappa_plus", "kappa_minus"):
        record, j = baseline_run(
            variant, scenario, plant=plant, problem=problem,
            tau_steps=cfg.tau_steps, gamma=cfg.gamma,
            role_period=cfg.role_period, lat_margin=cfg.lat_margin,
            lon_margin=cfg.lon_margin, max_iter=cfg.solver_max_iter,
            eps=cfg.solver_eps)
        write_episode_jsonl(record, outdir / f"baseline_{variant}.jsonl")
        write_episode_summary(record, outdir / f"baseline_{variant}_summary.json")
        returns[variant] = j
        print(f"{variant}: terminal_event={record.terminal_event} "
              f"steps={len(record.steps)} return={j:.3f}")
    (outdir / "returns.json").write_text(json.dumps(
        {"j0": returns["kappa_plus"], "j_kappa_minus": returns["kappa_minus"]},
        sort_keys=True, indent=2) + "\n")
    return 0


def cmd_train(cfg: RunConfig, outdir: Path, args: argparse.Namespace) -> int:
    """Full training run: learning curves plus population checkpoints."""

    def on_episode(ep, row, agents):
        if cfg.checkpoint_every and (ep + 1) % cfg.checkpoint_every == 0:
            write_checkpoint(agents, outdir / f"checkpoint_{ep + 1:06d}.csv")

    result = train(cfg, on_episode)
    write_curves_csv(result, outdir / "curves.csv")
    write_checkpoint(result.agents, outdir / "checkpoint_final.csv")
    n_ep = len(result.returns)
    summary = {
        "episodes": n_ep,
        "j0": result.j0,
        "epsilon": result.epsilon,
        "final_return": float(result.returns[-1]) if n_ep else None,
        "final_smoothed": float(result.smoothed[-1]) if n_ep else None,
        "ci_final": bool(result.ci[-1]) if n_ep else None,
        "mean_pi1_group1": float(result.mean_pi1_group1[-1]) if n_ep else None,
        "mean_pi1_group2": float(result.mean_pi1_group2[-1]) if n_ep else None,
    }
    (outdir / "summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n")
    if n_ep:
        print(f"trained {n_ep} episodes: final_return={summary['final_return']:.3f} "
              f"smoothed={summary['final_smoothed']:.3f} j0={result.j0:.3f} "
              f"ci={summary['ci_final']}")
    else:
        print("trained 0 episodes: curves header only")
    return 0


def cmd_mjls(cfg: RunConfig, outdir: Path, args: argparse.Namespace) -> int:
    """Analytic stability report for one census."""
    g1, g2 = _gamma_sets(cfg, args)
    if args.census is not None:
        parts = args.census.split(",")
        if len(parts) != 4:
            raise ConfigError("--census needs n11,n12,n21,n22")
        try:
            counts = [float(p) for p in parts]
        except ValueError:
            raise ConfigError(f"--census: could not parse {args.census!r}") from None
        try:
            census = RoleCensus(*counts, rho_s=cfg.rho_s, K=cfg.role_period)
        except ValueError as exc:
            raise ConfigError(f"invalid census: {exc}") from None
    else:
        census = census_after_dol(cfg.n1, cfg.n2, cfg.rho_s, cfg.role_period)

    report = {"census": {"n11": census.n11, "n12": census.n12,
                         "n21": census.n21, "n22": census.n22,
                         "rho_s": census.rho_s, "K": census.K},
              "modes": MODE_ORDER, "elements": []}
    print(f"census: n11={census.n11:g} n12={census.n12:g} "
          f"n21={census.n21:g} n22={census.n22:g} rho_s={census.rho_s:g} "
          f"K={census.K}")
    verdicts = []
    for element, gammas in ((1, g1), (2, g2)):
        row = transition_row(census, element)
        stable, sigma = is_mss(scalar_model(row, np.array(gammas)))
        verdicts.append(stable)
        report["elements"].append({
            "element": element, "gammas": list(gammas),
            "transition_row": [float(p) for p in row],
            "sigma": sigma, "mss": bool(stable)})
        print(f"element {element}: gammas=({gammas[0]:.6g}, {gammas[1]:.6g}, "
              f"{gammas[2]:.6g}) row=({row[0]:.6g}, {row[1]:.6g}, {row[2]:.6g}) "
              f"sigma={sigma:.6f} -> {'MSS' if stable else 'NOT MSS'}")
    report["ci"] = bool(all(verdicts))
    print(f"collective intelligence admitted: {report['ci']}")
    (outdir / "report.json").write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n")
    return 0


def _fit_boundary(triples: list[tuple[float, float, bool]]) -> dict:
    """Per-power thresholds of the up-right-closed region, plus a least
    squares line through them.  ``triples`` holds (N1, rho_s, ci)."""
    by_rho: dict[float, list] = {}
    for n1, rho, ci in triples:
        by_rho.setdefault(rho, []).append((n1, ci))
    points = []
    for rho in sorted(by_rho):
        row = sorted(by_rho[rho])
        flags = [ci for _, ci in row]
        if any(flags) and not all(flags):
            points.append([row[flags.index(True)][0], rho])
    arr = np.asarray(points, dtype=float)
    if len(points) >= 2 and np.ptp(arr[:, 0]) > 0:
        coeffs = np.polyfit(arr[:, 0], arr[:, 1], 1)
        fitted = {"slope": float(coeffs[0]), "intercept": float(coeffs[1])}
    else:
        # fewer than two thresholds, or a vertical boundary: no line to fit
        fitted = {"slope": None, "intercept": None}
    return {"threshold_points": points, "fitted": fitted,
            "reference": dict(REFERENCE_BOUNDARY)}


def _learned_cell(payload) -> tuple:
    cfg_values, n1, rho = payload
    cfg = dataclasses.replace(RunConfig(**cfg_values), n1=int(n1), rho_s=float(rho))
    result = train(cfg)
    n_ep = len(result.returns)
    final_ci = bool(result.ci[-1]) if n_ep else False
    return (float(n1), float(rho), final_ci, result.j0,
            float(result.returns[-1]) if n_ep else float("nan"),
            float(result.smoothed[-1]) if n_ep else float("nan"),
            float(result.mean_pi1_group1[-1]) if n_ep else float("nan"),
            float(result.mean_pi1_group2[-1]) if n_ep else float("nan"))


def cmd_sweep(cfg: RunConfig, outdir: Path, args: argparse.Namespace) -> int:
    """Population-grid scan of the collective-intelligence region."""
    n1_values = _parse_range(args.n1_range, "n1-range")
    rho_values = _parse_range(args.rho_range, "rho-range")
    if args.mode == "analytic":
        g1, g2 = _gamma_sets(cfg, args)
        cells = ci_region_sweep(n1_values, rho_values, cfg.n2,
                                cfg.role_period, g1, g2)
        write_sweep_csv(cells, outdir / "sweep.csv")
        boundary = _fit_boundary([(c.n1, c.rho_s, c.ci) for c in cells])
        n_ci = sum(c.ci for c in cells)
    else:
        cfg_values = dataclasses.asdict(cfg)
        payloads = [(cfg_values, n1, rho)
                    for n1 in n1_values for rho in rho_values]
        if cfg.jobs > 1:
            with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
                rows = list(pool.map(_learned_cell, payloads))
        else:
            rows = [_learned_cell(p) for p in payloads]
        with (outdir / "sweep.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(LEARNED_COLUMNS)
            for r in rows:
                writer.writerow([repr(r[0]), repr(r[1]), int(r[2]),
                                 repr(r[3]), repr(r[4]), repr(r[5]),
                                 repr(r[6]), repr(r[7])])
        boundary = _fit_boundary([(r[0], r[1], r[2]) for r in rows])
        n_ci = sum(r[2] for r in rows)
    (outdir / "boundary.json").write_text(
        json.dumps(boundary, sort_keys=True, indent=2) + "\n")
    total = len(n1_values) * len(rho_values)
    print(f"{args.mode} sweep: {total} cells, {n_ci} admit collective "
          f"intelligence; boundary fit {boundary['fitted']}")
    return 0


def cmd_graph_gen(cfg: RunConfig, outdir: Path, args: argparse.Namespace) -> int:
    """Sample communication graphs and write edge lists."""
    n = cfg.n1 + cfg.n2
    if n < 2:
        raise ConfigError("graph sampling needs at least two agents")
    degrees = []
    for i in range(args.count):
        g = graph_for_period(n, cfg.d_min, cfg.d_max, cfg.seed, 0, i)
        save_edge_list(g, outdir / f"graph_{i:03d}.txt")
        degrees.append(g.degrees)
    deg = np.concatenate(degrees)
    stats = {"samples": args.count, "n": n, "d_min": int(deg.min()),
             "d_max": int(deg.max()), "mean_degree": float(deg.mean())}
    (outdir / "stats.json").write_text(
        json.dumps(stats, sort_keys=True, indent=2) + "\n")
    print(f"wrote {args.count} graphs on {n} nodes: degree range "
          f"[{stats['d_min']}, {stats['d_max']}], mean {stats['mean_degree']:.2f}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scglab",
        description="Shared-control game laboratory: baselines, decentralized "
                    "role learning, and analytic stability scans.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("baseline", help="single-expert reference runs")
    _add_common(p)

    p = sub.add_parser("train", help="decentralized training run")
    _add_common(p)

    p = sub.add_parser("mjls", help="stability report for one census")
    _add_common(p)
    p.add_argument("--census", metavar="N11,N12,N21,N22",
                   help="explicit role census (defaults to full role division)")
    p.add_argument("--gamma1", metavar="G0,GM,GP",
                   help="override element-1 mode factors")
    p.add_argument("--gamma2", metavar="G0,GM,GP",
                   help="override element-2 mode factors")

    p = sub.add_parser("sweep", help="collective-intelligence region scan")
    _add_common(p)
    p.add_argument("--mode", choices=("analytic", "learned"),
                   default="analytic")
    p.add_argument("--n1-range", default="0:90:5", metavar="LO:HI[:STEP]")
    p.add_argument("--rho-range", default="4:8:0.5", metavar="LO:HI[:STEP]")
    p.add_argument("--gamma1", metavar="G0,GM,GP",
                   help="override element-1 mode factors")
    p.add_argument("--gamma2", metavar="G0,GM,GP",
                   help="override element-2 mode factors")

    p = sub.add_parser("graph-gen", help="sample communication graphs")
    _add_common(p)
    p.add_argument("--count", type=int, default=5)

    return parser


DISPATCH = {
    "baseline": cmd_baseline,
    "train": cmd_train,
    "mjls": cmd_mjls,
    "sweep": cmd_sweep,
    "graph-gen": cmd_graph_gen,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.preset, _field_overrides(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    outdir = _out_dir(args, args.command)
    save_config(cfg, outdir / "config.ini")
    try:
        return DISPATCH[args.command](cfg, outdir, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
