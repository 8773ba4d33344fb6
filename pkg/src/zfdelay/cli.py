"""Command-line front end: scenario files in, CSV tables out.

Four commands share one YAML scenario format: ``analyze`` produces the
analytical expected-service and delay-bound curves, ``validate`` compares
the closed-form outage/error evaluations against Monte-Carlo channel
draws, ``simulate`` pits the delay bound against a queue simulation, and
``sweep`` crosses scenario axes and stacks the analyze outputs.

Every CSV starts with two comment lines — the library version and the
sha256 of the scenario file — and all floats are rendered with %.12g,
so a fixed seed reproduces byte-identical outputs.
"""

from __future__ import annotations

import hashlib
import itertools
import math
import sys
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import click
import numpy as np
import yaml

from . import __version__
from .config import CsiMode, SystemParams, derive_budget, superframe_partition
from .delay import optimize_s, optimize_schedule, scan_expected_service
from .errors import ConfigError, ZfdelayError
from .channel_mc import conditioned_estimate, empirical_fbl_error, empirical_outage
from .outage import estimate_stats, fbl_error_upper, pout_lower, pout_upper
from .queue_sim import AnalyticCellService, FullChannelService, simulate_queue
from .rate_policy import PolicyFamily
from .service import expected_service, ideal_service_mellin, mixed_service_mellin

__all__ = ["main", "load_scenario", "ScenarioConfig"]

_MODE_NAMES = {
    "ideal": CsiMode.IDEAL,
    "imperfect_csi": CsiMode.IMPERFECT,
    "imperfect_csi_fbl": CsiMode.IMPERFECT_FBL,
}

_SYSTEM_KEYS = {
    "n_antennas",
    "n_users_total",
    "superframe_len",
    "n_slot_symbols",
    "n_ul_train",
    "n_dl_train",
    "p_total",
    "p_total_db",
    "p_uplink",
    "p_uplink_db",
    "arrival_rate",
    "deadline",
    "csi_mode",
}
_SWEEP_KEYS = {"alpha", "n_antennas", "p_uplink_db", "k_avg", "csi_mode"}
_MC_KEYS = {
    "n_estimates",
    "n_draws",
    "n_slots",
    "draw_mode",
    "rate",
    "target_capacity_bits",
    "tol_bits",
}
_GRID_KEYS = {"n_mu", "n_rate", "s_lo", "s_hi", "s_points", "shrink_estimate", "s_candidates"}
_OUTPUT_KEYS = {"dir"}
_SECTIONS = {"system", "sweep", "mc", "grids", "output"}
_RANGE_KEYS = {"start", "stop", "steps"}


@dataclass(frozen=True)
class ScenarioConfig:
    system: SystemParams
    sweep: dict
    mc: dict
    grids: dict
    out_dir: str
    config_hash: str


def _reject_unknown(section: str, data: dict, allowed: set) -> None:
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in '{section}': {sorted(unknown)}")


def _db_or_linear(section: dict, base: str, *, default=None):
    lin, db = section.get(base), section.get(f"{base}_db")
    if lin is not None and db is not None:
        raise ConfigError(f"give either '{base}' or '{base}_db', not both")
    if db is not None:
        return 10.0 ** (float(db) / 10.0)
    if lin is not None:
        return float(lin)
    if default is None:
        raise ConfigError(f"missing required power '{base}' (or '{base}_db')")
    return default


def _expand_range(spec, what: str) -> list[float]:
    if isinstance(spec, (list, tuple)):
        return [float(v) for v in spec]
    if isinstance(spec, dict):
        _reject_unknown(what, spec, _RANGE_KEYS)
        try:
            return list(np.linspace(float(spec["start"]), float(spec["stop"]), int(spec["steps"])))
        except KeyError as exc:
            raise ConfigError(f"range '{what}' needs start/stop/steps") from exc
    raise ConfigError(f"'{what}' must be a list or a start/stop/steps mapping")


def load_scenario(path) -> ScenarioConfig:
    """Parse and validate one YAML scenario file (unknown keys rejected)."""
    raw = Path(path).read_bytes()
    data = yaml.safe_load(raw)
    if not isinstance(data, dict):
        raise ConfigError("scenario file must hold a mapping")
    _reject_unknown("scenario", data, _SECTIONS)
    sysd = data.get("system")
    if not isinstance(sysd, dict):
        raise ConfigError("missing required 'system' section")
    _reject_unknown("system", sysd, _SYSTEM_KEYS)

    mode_name = sysd.get("csi_mode")
    if mode_name not in _MODE_NAMES:
        raise ConfigError(f"csi_mode must be one of {sorted(_MODE_NAMES)}, got {mode_name!r}")
    mode = _MODE_NAMES[mode_name]
    try:
        params = SystemParams(
            n_antennas=int(sysd["n_antennas"]),
            n_users_total=int(sysd["n_users_total"]),
            superframe_len=int(sysd.get("superframe_len", sysd["n_users_total"])),
            n_slot_symbols=int(sysd["n_slot_symbols"]),
            n_ul_train=int(sysd.get("n_ul_train", 0)),
            n_dl_train=int(sysd.get("n_dl_train", 0)),
            p_total=_db_or_linear(sysd, "p_total"),
            p_uplink=_db_or_linear(sysd, "p_uplink", default=0.0),
            arrival_rate=float(sysd.get("arrival_rate", 0.0)),
            deadline=int(sysd["deadline"]),
            csi_mode=mode,
        )
    except KeyError as exc:
        raise ConfigError(f"missing required system key {exc.args[0]!r}") from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if mode.uses_estimation and (params.n_ul_train < 1 or params.p_uplink <= 0):
        raise ConfigError("imperfect CSI modes need n_ul_train >= 1 and positive uplink power")

    sweep = data.get("sweep") or {}
    _reject_unknown("sweep", sweep, _SWEEP_KEYS)
    mc = data.get("mc") or {}
    _reject_unknown("mc", mc, _MC_KEYS)
    grids = data.get("grids") or {}
    _reject_unknown("grids", grids, _GRID_KEYS)
    outd = data.get("output") or {}
    _reject_unknown("output", outd, _OUTPUT_KEYS)
    return ScenarioConfig(
        system=params,
        sweep=dict(sweep),
        mc=dict(mc),
        grids=dict(grids),
        out_dir=str(outd.get("dir", ".")),
        config_hash=hashlib.sha256(raw).hexdigest(),
    )


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, Fraction):
        v = float(v)
    if isinstance(v, (float, np.floating)):
        return "%.12g" % float(v)
    return str(v)


def _write_csv(path: Path, header: list[str], rows, config_hash: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# zfdelay {__version__}\n")
        fh.write(f"# config_sha256={config_hash}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    click.echo(f"wrote {path}")


def _s_grid(cfg: ScenarioConfig):
    g = cfg.grids
    return np.geomspace(float(g.get("s_lo", 1e-4)), float(g.get("s_hi", 1.0)), int(g.get("s_points", 31)))


def _policy_family(cfg: ScenarioConfig, params: SystemParams) -> PolicyFamily:
    kind = "fbl_upper_correlated" if params.csi_mode.finite_blocklength else "upper_correlated"
    g = cfg.grids
    s_cands = g.get("s_candidates")
    return PolicyFamily(
        params,
        kind,
        n_cells=int(g.get("n_mu", 512)),
        n_rates=int(g.get("n_rate", 400)),
        s_candidates=None if s_cands is None else [float(s) for s in s_cands],
        shrink_estimate=bool(g.get("shrink_estimate", True)),
    )


def _mellin_builder(cfg: ScenarioConfig, params: SystemParams):
    """(T, split) -> candidate service models, per CSI mode."""
    if params.csi_mode is CsiMode.IDEAL:

        def build(t, split):
            del t
            parts = [
                (float(w), ideal_service_mellin(derive_budget(params, k)))
                for k, w in ((split.k_a, split.p_a), (split.k_b, split.p_b))
                if w > 0
            ]
            return [parts[0][1] if len(parts) == 1 else mixed_service_mellin(parts)]

        return build
    family = _policy_family(cfg, params)
    return family.candidates


def _system_variants(cfg: ScenarioConfig):
    """Cross the sweep axes that redefine the system itself."""
    ants = [int(a) for a in cfg.sweep.get("n_antennas", [cfg.system.n_antennas])]
    puls = cfg.sweep.get("p_uplink_db")
    pul_vals = (
        [10.0 ** (float(p) / 10.0) for p in puls] if puls is not None else [cfg.system.p_uplink]
    )
    modes = [
        _MODE_NAMES[m] if isinstance(m, str) else m
        for m in cfg.sweep.get("csi_mode", [cfg.system.csi_mode])
    ]
    from dataclasses import replace

    for nt, pul, mode in itertools.product(ants, pul_vals, modes):
        yield replace(cfg.system, n_antennas=nt, p_uplink=pul, csi_mode=mode)


def _alpha_grid(cfg: ScenarioConfig, e_star: float) -> list[float]:
    spec = cfg.sweep.get("alpha")
    if spec is not None:
        return _expand_range(spec, "sweep.alpha")
    return [f * e_star for f in np.linspace(0.5, 1.05, 12)]


def _label(params: SystemParams):
    pul_db = 10.0 * math.log10(params.p_uplink) if params.p_uplink > 0 else -math.inf
    return (params.n_antennas, pul_db, params.csi_mode.value)


_LABEL_COLS = ["n_antennas", "p_uplink_db", "csi_mode"]


def _analysis_rows(cfg: ScenarioConfig, variants) -> tuple[list, list]:
    service_rows, pv_rows = [], []
    s_grid = _s_grid(cfg)
    want_k = cfg.sweep.get("k_avg")
    want_k = None if want_k is None else {Fraction(str(k)) for k in want_k}
    for params in variants:
        builder = _mellin_builder(cfg, params)
        curve = scan_expected_service(params, builder)
        if want_k is not None:
            curve = [(k, e) for k, e in curve if k in want_k]
        label = _label(params)
        for k_avg, e_s in curve:
            service_rows.append([*label, float(k_avg), e_s])
        e_star = max(e for _, e in curve) if curve else 0.0
        for alpha in _alpha_grid(cfg, e_star):
            from dataclasses import replace

            res = optimize_schedule(replace(params, arrival_rate=float(alpha)), builder, s_grid=s_grid)
            pv_rows.append(
                [
                    *label,
                    float(alpha),
                    res.pv_bound,
                    res.s_star,
                    float(res.k_avg_used),
                    res.stable,
                ]
            )
    return service_rows, pv_rows


@click.group()
def main():
    """Analytical delay bounds for zero-forcing downlinks, with validation."""


def _common_options(fn):
    fn = click.option("--config", "config_path", required=True, type=click.Path(exists=True))(fn)
    fn = click.option("--seed", default=0, show_default=True, type=int)(fn)
    fn = click.option("--out", "out_dir", default=None, type=click.Path())(fn)
    fn = click.option("--threads", default=1, show_default=True, type=int)(fn)
    return fn


def _outdir(cfg: ScenarioConfig, out_dir) -> Path:
    return Path(out_dir) if out_dir else Path(cfg.out_dir)


@main.command()
@_common_options
def analyze(config_path, seed, out_dir, threads):
    """Expected service and delay-violation bounds across schedules."""
    del seed, threads  # analysis is deterministic and cheap
    cfg = load_scenario(config_path)
    out = _outdir(cfg, out_dir)
    service_rows, pv_rows = _analysis_rows(cfg, _system_variants(cfg))
    _write_csv(
        out / "expected_service.csv",
        [*_LABEL_COLS, "k_avg", "expected_service_bits_per_slot"],
        service_rows,
        cfg.config_hash,
    )
    _write_csv(
        out / "pv_vs_alpha.csv",
        [*_LABEL_COLS, "alpha", "pv_bound", "s_star", "k_avg_star", "stable"],
        pv_rows,
        cfg.config_hash,
    )


def _validate_one(params, budget, mc, seed, rates):
    rng = np.random.Generator(np.random.Philox(seed))
    est = conditioned_estimate(
        budget,
        params.n_antennas,
        float(mc.get("target_capacity_bits", 6.0)),
        float(mc.get("tol_bits", 0.01)),
        rng,
    )
    n_draws = int(mc.get("n_draws", 100_000))
    if params.csi_mode.finite_blocklength:
        p_hat, _ = empirical_fbl_error(budget, est, rates, n_draws, budget.n_data, rng)
    else:
        p_hat, _ = empirical_outage(budget, est, rates, n_draws, rng)
    return p_hat


@main.command()
@_common_options
def validate(config_path, seed, out_dir, threads):
    """Monte-Carlo outage/error curves against the closed-form evaluations."""
    cfg = load_scenario(config_path)
    params = cfg.system
    if params.csi_mode is CsiMode.IDEAL:
        raise ConfigError("validate needs an imperfect-CSI mode")
    out = _outdir(cfg, out_dir)
    mc = cfg.mc
    n_est = int(mc.get("n_estimates", 10))
    n_draws = int(mc.get("n_draws", 100_000))
    if n_est < 1 or n_draws < 1:
        raise ConfigError("validate needs positive n_estimates and n_draws")
    rates = np.asarray(_expand_range(mc.get("rate", {"start": 3.0, "stop": 7.0, "steps": 41}), "mc.rate"))

    split = superframe_partition(params)
    budget = derive_budget(params, split.k_a)
    seeds = np.random.SeedSequence(seed).spawn(n_est)

    if threads > 1:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=threads)(
            delayed(_validate_one)(params, budget, mc, s, rates) for s in seeds
        )
    else:
        results = [_validate_one(params, budget, mc, s, rates) for s in seeds]

    p_mat = np.stack(results)
    mc_mean = p_mat.mean(axis=0)
    mc_stderr = np.sqrt(
        p_mat.var(axis=0, ddof=1) / n_est if n_est > 1 else mc_mean * (1 - mc_mean) / n_draws
    )
    mu_c = float(np.exp2(float(mc.get("target_capacity_bits", 6.0))) - 1.0)
    stats_inf = estimate_stats(budget, mu_c)
    stats_fbl = estimate_stats(budget, mu_c, finite_blocklength=True)
    lower = pout_lower(stats_inf, rates)
    upper = pout_upper(stats_inf, rates)
    fbl = fbl_error_upper(stats_fbl, rates)
    rows = [
        [rates[i], lower[i], upper[i], fbl[i], mc_mean[i], mc_stderr[i], n_est, n_draws]
        for i in range(len(rates))
    ]
    _write_csv(
        out / "pout_vs_rate.csv",
        ["rate", "pout_lower", "pout_upper", "fbl_error_upper", "mc_mean", "mc_stderr", "n_estimates", "n_draws"],
        rows,
        cfg.config_hash,
    )


@main.command()
@_common_options
def simulate(config_path, seed, out_dir, threads):
    """Queue simulation against the delay bound at the configured schedule."""
    del threads
    cfg = load_scenario(config_path)
    params = cfg.system
    out = _outdir(cfg, out_dir)
    mc = cfg.mc
    n_slots = int(mc.get("n_slots", 1_000_000))
    if n_slots < 1:
        raise ConfigError("simulate needs positive n_slots")
    draw_mode = str(mc.get("draw_mode", "analytic_eps"))
    if draw_mode not in ("analytic_eps", "full_channel"):
        raise ConfigError(f"unknown draw_mode {draw_mode!r}")
    t = params.superframe_len
    split = superframe_partition(params)
    s_grid = _s_grid(cfg)

    if params.csi_mode is CsiMode.IDEAL:
        raise ConfigError("simulate needs an imperfect-CSI mode (policies drive the queue)")
    family = _policy_family(cfg, params)

    pool: list[tuple[float | None, object]] = [
        (s0, family.group_mellin(split, s0)) for s0 in (None, *map(float, family.s_candidates))
    ]
    e_star = max(expected_service(sm, t) for _, sm in pool)
    alphas = _alpha_grid(cfg, e_star)
    seeds = np.random.SeedSequence(seed).generate_state(len(alphas))
    rows = []
    for alpha, sim_seed in zip(alphas, seeds):
        best = None
        for s0, sm in pool:
            res = optimize_s(sm, float(alpha), t, params.deadline, s_grid=s_grid)
            if best is None or res.pv_bound < best[0].pv_bound:
                best = (res, s0)
        res, s0 = best
        groups = family.group_policies(split, s0 if res.stable else None)
        if draw_mode == "analytic_eps":
            service = AnalyticCellService(split, groups)
        else:
            service = FullChannelService(
                split,
                groups,
                params.n_antennas,
                finite_blocklength=params.csi_mode.finite_blocklength,
                shrink_estimate=bool(cfg.grids.get("shrink_estimate", True)),
            )
        trace = simulate_queue(
            service,
            alpha=float(alpha),
            superframe_len=t,
            deadline=params.deadline,
            n_slots=n_slots,
            seed=int(sim_seed),
        )
        stderr = math.sqrt(max(trace.pv_hat * (1 - trace.pv_hat), 0.0) / trace.n_measured)
        rows.append([float(alpha), trace.pv_hat, stderr, res.pv_bound, n_slots, int(sim_seed)])
    _write_csv(
        out / "pv_sim_vs_alpha.csv",
        ["alpha", "pv_hat", "stderr", "pv_bound", "slots", "seed"],
        rows,
        cfg.config_hash,
    )


@main.command()
@_common_options
def sweep(config_path, seed, out_dir, threads):
    """Cross every sweep axis and stack the analyze outputs."""
    del seed, threads
    cfg = load_scenario(config_path)
    out = _outdir(cfg, out_dir)
    empty = any(
        isinstance(cfg.sweep.get(key), list) and not cfg.sweep.get(key)
        for key in ("n_antennas", "p_uplink_db", "csi_mode", "k_avg")
    )
    variants = [] if empty else list(_system_variants(cfg))
    service_rows, pv_rows = _analysis_rows(cfg, variants)
    _write_csv(
        out / "sweep_expected_service.csv",
        [*_LABEL_COLS, "k_avg", "expected_service_bits_per_slot"],
        service_rows,
        cfg.config_hash,
    )
    _write_csv(
        out / "sweep_pv_vs_alpha.csv",
        [*_LABEL_COLS, "alpha", "pv_bound", "s_star", "k_avg_star", "stable"],
        pv_rows,
        cfg.config_hash,
    )


def run() -> None:
    try:
        main(standalone_mode=False)
    except ZfdelayError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code)
    except click.exceptions.Abort:
        sys.exit(1)


if __name__ == "__main__":
    run()
