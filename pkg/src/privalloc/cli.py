"""Command-line harness.

Subcommands:
  generate      population CSV for one grid point
  allocate      one run of every strategy, with per-individual outcomes
  sweep         grid Monte Carlo with per-trial rows and a summary table
  regime        regime labels per grid point, optionally scored against sweep results
  check-bounds  the acceptance checks
  describe      plan of a sweep

Exit codes: 0 success, 1 configuration or I/O error, 2 bound violation.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from privalloc import budget, learn, sweep
from privalloc.config import ConfigError, ExperimentConfig, load_config
from privalloc.core import population_to_csv, regret, unit_profile

EXIT_OK, EXIT_CONFIG, EXIT_VIOLATION = 0, 1, 2

DEFAULT_PRESET = """\
# Small preset: two budgets, two privacy levels, five trials.
seed = 7
trials = 5

[population]
generator = gini_target
M = 20
N = 100
delta_w = 0.5
rho_bar = 0.4

[strategy]
name = rand

[strategy]
name = ila

[strategy]
name = ila_private
params = stochastic
beta = 0.1

[strategy]
name = ula

[strategy]
name = ula_private

[sweep]
k = 200, 600
psi = 1, 10
G = 0.2
"""


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
    except OSError as e:
        raise ConfigError(f"cannot write {out}: {e}") from e


def _config(args) -> ExperimentConfig:
    if args.config is None:
        raise ConfigError("--config is required")
    cfg = load_config(args.config)
    sweep.validate(cfg)
    return cfg.with_overrides(seed=args.seed, trials=args.trials,
                              output=str(args.out) if args.out else None)


def _out(args, cfg: ExperimentConfig | None) -> Path | None:
    if args.out is not None:
        return Path(args.out)
    if cfg is not None and cfg.output:
        return Path(cfg.output)
    return None


def _grid_point(cfg: ExperimentConfig, g: int) -> int:
    if not 0 <= g < len(cfg.grid):
        raise ConfigError(f"grid point {g} out of range; the grid has {len(cfg.grid)} points")
    return g


def cmd_generate(args) -> int:
    cfg = _config(args)
    g = _grid_point(cfg, args.grid_point)
    ctx, _ = sweep.trial_context(cfg, g, 0)
    gen = ctx.generated
    out = _out(args, cfg)
    _emit(population_to_csv(gen.population), out)
    if out is not None:
        print(f"P={gen.population.P} M={gen.population.M} N={gen.population.N} "
              f"G={gen.G!r} rho_bar={gen.rho_bar!r} -> {out}")
    return EXIT_OK


def _json_safe(x):
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    return x


def cmd_allocate(args) -> int:
    """Writes ``strategy,individual,noisy_welfare,treated`` rows and a JSON sidecar."""
    cfg = _config(args)
    g = _grid_point(cfg, args.grid_point)
    buf = io.StringIO()
    buf.write(sweep.CSV_MAGIC + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("strategy", "individual", "noisy_welfare", "treated"))
    report = {"grid_point": g, "point": cfg.grid[g], "seed": cfg.seed, "strategies": []}
    for s, out, pop, ctx in sweep.trial_outcomes(cfg, g, 0):
        mask = out.allocation.mask(pop.P)
        noisy = out.noisy_welfare
        for i in range(pop.P):
            w.writerow((s.label, i, "" if noisy is None else repr(float(noisy[i])),
                        int(mask[i])))
        rep = regret(out.allocation, pop, ctx.k)
        report["strategies"].append({
            "label": s.label, "name": s.name, "params": s.params,
            "treated": int(mask.sum()), "over_budget": bool(out.allocation.over_budget),
            "regret": rep.regret, "normalized_regret": rep.normalized_regret,
            "bound": out.bound, "bound_kind": out.kind, "beta": out.beta, "noise": out.meta,
        })
    out_path = _out(args, cfg)
    _emit(buf.getvalue(), out_path)
    sidecar = json.dumps(_json_safe(report), indent=2, sort_keys=True) + "\n"
    if out_path is None:
        sys.stdout.write(sidecar)
    else:
        _emit(sidecar, out_path.with_name(out_path.name + ".json"))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config(args)
    rows, summary = sweep.run_sweep(cfg, args.parallel)
    out = _out(args, cfg)
    _emit(sweep.rows_to_csv(rows), out)
    text = sweep.summary_to_text(summary)
    if out is None:
        sys.stdout.write(text)
    else:
        _emit(text, out.with_name(out.stem + ".summary.csv"))
        sys.stdout.write(text)
    failed = [s for s in summary if s.ok is False]
    for s in failed:
        print(f"bound violated: grid {s.grid} {s.strategy}", file=sys.stderr)
    return EXIT_VIOLATION if failed else EXIT_OK


def _family(name: str) -> str:
    return "RAND" if name == "rand" else ("ILA" if name.startswith("ila") else "ULA")


def _empirical_winners(path: Path, cfg: ExperimentConfig) -> dict[int, str]:
    families = {s.label: _family(s.name) for s in cfg.strategies}
    try:
        lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    except OSError as e:
        raise ConfigError(f"cannot read results {path}: {e}") from e
    sums: dict[tuple[int, str], list[float]] = {}
    for r in csv.DictReader(lines):
        sums.setdefault((int(r["grid"]), r["strategy"]), []).append(float(r["normalized_regret"]))
    best: dict[int, tuple[float, str]] = {}
    for (g, label), v in sums.items():
        m = float(np.mean(v))
        if g not in best or m < best[g][0]:
            best[g] = (m, families.get(label, label))
    return {g: fam for g, (_, fam) in best.items()}


def regime_report(cfg: ExperimentConfig, private_psi: float | None = None,
                  results: Path | None = None) -> str:
    """One line per grid point with the regime label and the quantities behind it.

    With ``results`` each grid point is scored against the strategy family
    with the lowest mean regret. The learning label is scored when the config
    runs learned strategies and has a ``sigma`` axis; otherwise the sampling
    label is.
    """
    lines = []
    winners = _empirical_winners(results, cfg) if results is not None else {}
    matched = counted = 0
    learned = any(s.name in sweep.LEARNED for s in cfg.strategies)
    for g, point in enumerate(cfg.grid):
        ctx, _ = sweep.trial_context(cfg, g, 0)
        # Learned strategies rank feature cells, so their profile is the cell profile.
        pop = ctx.learning.population if learned else ctx.pop
        if private_psi is None:
            prof = unit_profile(pop).rho
            rb = float(prof.mean())
            G = sweep.gini_or_zero(prof)
        else:
            rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, g, 1 << 20]))
            G, rb = budget.private_regime_inputs(pop, private_psi, rng)
        k, lam = ctx.k, ctx.lam
        parts = [f"grid {g}", f"k={k}", f"lambda={lam!r}", f"G={G!r}", f"rho_bar={rb!r}"]
        label = budget.classify_regime_sampling(G, lam, rb, k, pop.P)
        predicted = label.predicted_winner
        parts += [f"sampling={label.label}", f"winner={label.predicted_winner}",
                  f"lambda_low={label.lambda_low!r}", f"lambda_high={label.lambda_high!r}"]
        if label.degenerate:
            parts.append("degenerate")
        if ctx.sigma is not None:
            lr = learn.classify_regime_learning(float(ctx.sigma), k, pop.P, G, rb)
            parts += [f"learning={lr.label}", f"product={lr.product!r}"]
            if learned:
                predicted = lr.label
        if g in winners:
            counted += 1
            hit = winners[g] == predicted
            matched += hit
            parts.append(f"empirical={winners[g]} {'match' if hit else 'mismatch'}")
        lines.append(" ".join(parts))
    if results is not None:
        rate = matched / counted if counted else math.nan
        lines.append(f"match rate: {matched}/{counted} ({rate:.1%})")
    return "\n".join(lines) + "\n"


def cmd_regime(args) -> int:
    cfg = _config(args)
    text = regime_report(cfg, args.private_psi, Path(args.results) if args.results else None)
    _emit(text, Path(args.out) if args.out else None)
    return EXIT_OK


def cmd_check_bounds(args) -> int:
    from privalloc import acceptance

    only = None
    if args.only:
        try:
            only = [int(x) for x in args.only.split(",")]
        except ValueError as e:
            raise ConfigError(f"--only takes comma separated criterion numbers: {e}") from e
        bad = [n for n in only if n not in acceptance.CRITERIA]
        if bad:
            raise ConfigError(f"unknown criteria {bad}; known: {sorted(acceptance.CRITERIA)}")
    results = acceptance.run_all(only, log=lambda line: print(line, flush=True))
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
    return EXIT_VIOLATION if failed else EXIT_OK


def cmd_describe(args) -> int:
    cfg = _config(args)
    _emit(sweep.describe(cfg), Path(args.out) if args.out else None)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="privalloc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text, grid=False):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="experiment configuration file")
        p.add_argument("--out", type=Path, help="output path (stdout when omitted)")
        p.add_argument("--seed", type=int, help="override the base seed")
        p.add_argument("--trials", type=int, help="override the trial count")
        p.add_argument("--parallel", type=int, default=1, help="worker processes")
        if grid:
            p.add_argument("--grid-point", type=int, default=0, help="grid point index")
        p.set_defaults(func=fn)
        return p

    add("generate", cmd_generate, "emit a population CSV", grid=True)
    add("allocate", cmd_allocate, "run every strategy once", grid=True)
    add("sweep", cmd_sweep, "grid Monte Carlo with bound checks")
    p = add("regime", cmd_regime, "regime classification report")
    p.add_argument("--private-psi", type=float, help="estimate G and rho_bar under psi-zCDP")
    p.add_argument("--results", type=Path, help="sweep CSV to score the labels against")
    p = add("check-bounds", cmd_check_bounds, "run the acceptance checks")
    p.add_argument("--only", help="comma separated criterion numbers")
    add("describe", cmd_describe, "print the plan of a sweep")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.trials is not None and args.trials < 1:
        print("error: --trials must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


def run_all_commands(config_path: Path, out_dir: Path) -> dict[str, bytes]:
    """Runs every data-producing command on one config and returns the bytes produced."""
    out_dir = Path(out_dir)
    results = out_dir / "sweep.csv"
    commands = {
        "describe.txt": ["describe"],
        "population.csv": ["generate"],
        "allocate.csv": ["allocate"],
        "sweep.csv": ["sweep"],
        "regime.txt": ["regime", "--results", str(results)],
        "regime_private.txt": ["regime", "--private-psi", "1.0"],
    }
    produced = {}
    for name, cmd in commands.items():
        target = out_dir / name
        with contextlib.redirect_stdout(io.StringIO()):
            code = main(cmd + ["--config", str(config_path), "--out", str(target)])
        if code not in (EXIT_OK, EXIT_VIOLATION):
            raise RuntimeError(f"{' '.join(cmd)} exited with {code}")
        produced[name] = target.read_bytes()
    for extra in ("allocate.csv.json", "sweep.summary.csv"):
        produced[extra] = (out_dir / extra).read_bytes()
    return produced


if __name__ == "__main__":
    sys.exit(main())
