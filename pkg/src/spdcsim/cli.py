"""Command-line scenario runner.

``spdcsim <scenario> [--config PATH] [--seed N] [--out DIR] [--exact]
[--pulses N] [--mc-runs N]`` writes ``DIR/<scenario>/`` containing
``config_snapshot.yaml``, ``summary.txt`` (key=value) and the scenario's
tab-separated tables, then prints a one-line summary.
``spdcsim validate [--config PATH]`` checks a configuration file.

Exit codes: 0 success, 2 usage, 3 configuration, 4 numerical, 5 convergence.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import yaml

from .config import CONFIG_ENV, ExperimentConfig, load_config, validate_config
from .counts import expected_rates, simulate_rates, visibility_vs_power, calibrate_power_noise
from .errors import ConfigError, ConvergenceError, InvalidInputError, NumericalError, SpdcSimError
from .measure import ArmSetting, chsh, fringe_scan
from .optics import compensation_plan, gvm_walkoff, group_index, group_slowness, qpm_period
from .polcore import psi_minus
from .source import build_state, predicted_visibility
from .spectral import (build_jsa, hom_dip, schmidt, stage_um_to_delay_fs, timing_jitter)
from .tomo import (canonical_settings, mle_fit, monte_carlo_errors, simulate_tomography_counts,
                   write_count_file)
from .polcore import fidelity, format_matrix

SCENARIOS = ("fringe", "chsh", "tomography", "power-scan", "brightness", "hom", "qpm",
             "compensation")
# scenarios without any random draws; --exact changes nothing for them
DETERMINISTIC = ("qpm", "compensation")
EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CONVERGENCE = 0, 2, 3, 4, 5


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".10g")
    return str(v)


def _need_seed(cfg: ExperimentConfig):
    if cfg.seed is None:
        raise ConfigError("a seed is required for sampled scenarios (set 'seed' or pass --seed)",
                          path="seed")
    return cfg.seed


class Run:
    """Collects summary entries and tables for one scenario invocation."""

    def __init__(self, name, cfg, args):
        self.name, self.cfg, self.args = name, cfg, args
        mode = "deterministic" if name in DETERMINISTIC else ("exact" if args.exact else "sampled")
        self.summary: dict[str, object] = {"scenario": name, "mode": mode}
        self.tables: dict[str, str] = {}
        self.headline: list[str] = []

    def put(self, key, value, headline=False):
        self.summary[key] = value
        if headline:
            self.headline.append(f"{key}={_fmt(value)}")


# ------------------------------------------------------------------ scenarios

def _state(cfg):
    return build_state(cfg.source_params())


def run_fringe(r: Run):
    f = r.cfg["fringe"]
    rho = _state(r.cfg)
    angles = np.arange(f["points"]) * f["step_deg"]
    seed = None if r.args.exact else _need_seed(r.cfg)
    params = r.cfg.source_params()
    for k, idler in enumerate(f["idler_pol_deg"]):
        curve = fringe_scan(rho, ArmSetting(idler), angles, f["rate_hz"], f["duration_s"],
                            seed=None if seed is None else (seed, k), exact=r.args.exact)
        tag = f"idler{_fmt(idler)}"
        r.tables[f"fringe_{tag}.tsv"] = curve.to_tsv()
        r.put(f"visibility_{tag}", curve.visibility, headline=True)
        r.put(f"visibility_error_{tag}", curve.visibility_error)
    r.put("model_visibility_diag", predicted_visibility(params, "DIAG"))
    r.put("model_visibility_hv", predicted_visibility(params, "HV"))


def run_chsh(r: Run):
    c = r.cfg["chsh"]
    rho = _state(r.cfg)
    exact = chsh(rho, c["angles_deg"], "exact")
    r.put("S_exact", exact.S, headline=r.args.exact)
    if r.args.exact:
        res = chsh(rho, c["angles_deg"], "exact", c["rate_hz"], c["duration_s"])
    else:
        res = chsh(rho, c["angles_deg"], "sampled", c["rate_hz"], c["duration_s"],
                   _need_seed(r.cfg))
        r.put("S", res.S, headline=True)
        r.put("S_error", res.S_error, headline=True)
    for j, e in enumerate(res.correlations):
        r.put(f"E{j}", e)
    r.tables["chsh.tsv"] = res.to_tsv()


def run_tomography(r: Run):
    t = r.cfg["tomography"]
    settings = canonical_settings()
    rho = _state(r.cfg)
    seed = r.cfg.seed
    if not r.args.exact:
        _need_seed(r.cfg)
    counts = simulate_tomography_counts(rho, settings, t["rate_hz"], t["duration_s"], seed,
                                        exact=r.args.exact)
    opts = r.cfg.mle_options()
    fit = mle_fit(counts, settings, opts)
    target = psi_minus()
    f = fidelity(fit.state, target)
    r.put("fidelity", f, headline=True)
    r.put("model_fidelity", fidelity(rho, target))
    r.put("condition_number", settings.condition_number())
    r.put("total_counts", float(sum(c.counts for c in counts)))
    runs = r.args.mc_runs if r.args.mc_runs is not None else t["mc_runs"]
    r.put("mc_runs", runs)
    report = format_matrix(fit.state)
    if runs >= 2:
        _, std = monte_carlo_errors(counts, settings, runs, target, (_need_seed(r.cfg), 1), opts)
        r.put("fidelity_std", std, headline=True)
        report += f"F={f:.6f} +/- {std:.6f}\n"
    else:
        report += f"F={f:.6f}\n"
    buf = Path(r.outdir) / "counts.txt"
    write_count_file(buf, counts, settings)
    r.tables["rho_mle.txt"] = report


def run_power_scan(r: Run):
    ps = r.cfg["power_scan"]
    mu_per_mw, chain = r.cfg.detection()
    base = r.cfg.source_params(mu_per_mw)
    stats = r.cfg["detection"]["pair_statistics"]
    intrinsic, k = calibrate_power_noise(ps["calibration_powers_mw"], ps["calibration_fidelities"],
                                         base, chain, stats)
    r.put("intrinsic_fidelity", (1 + intrinsic.dephasing_v) ** 2 / 4)
    r.put("noise_scale", k)
    n = None
    seed = None
    if not r.args.exact:
        n = r.args.pulses or r.cfg["brightness"]["pulses"]
        seed = _need_seed(r.cfg)
    pts = visibility_vs_power(ps["powers_mw"], intrinsic, chain, k, n, seed, stats, ps["derating"])
    lines = ["power_mw\tmu\taccidental_fraction\twhite_noise_w\tvisibility\tfidelity"]
    for p in pts:
        lines.append("\t".join(_fmt(v) for v in (p.power_mw, p.mu, p.accidental_fraction,
                                                 p.white_noise_w, p.visibility, p.fidelity)))
        r.put(f"fidelity_{_fmt(p.power_mw)}mw", p.fidelity, headline=True)
    r.tables["power_scan.tsv"] = "\n".join(lines) + "\n"


def run_brightness(r: Run):
    cal = r.cfg["calibration"]
    mu_per_mw, chain = r.cfg.detection()
    mu = mu_per_mw * cal["pump_power_mw"]
    stats = r.cfg["detection"]["pair_statistics"]
    if r.args.exact:
        rep = expected_rates(mu, chain, stats, cal["pump_power_mw"], cal["bandwidth_nm"])
    else:
        n = r.args.pulses or r.cfg["brightness"]["pulses"]
        rep = simulate_rates(mu, chain, n, _need_seed(r.cfg), stats,
                             r.cfg["brightness"]["include_adjacent"], cal["pump_power_mw"],
                             cal["bandwidth_nm"])
    r.put("mu", mu)
    r.put("mu_per_mw", mu_per_mw)
    r.put("eta_arm", chain.eta_signal)
    r.put("coupling_efficiency", chain.coupling_efficiency)
    r.put("coincidences_hz", rep.coincidences_hz)
    r.put("coincidence_to_singles", rep.coincidence_to_singles)
    r.put("spectral_brightness", rep.spectral_brightness, headline=True)
    r.put("accidental_fraction", rep.accidental_fraction)
    r.tables["rates.txt"] = rep.to_text()


def run_hom(r: Run):
    s = r.cfg["spectral"]
    p = r.cfg.spectral_params()
    jsa = build_jsa(p, s["grid_n"], s["span_fwhm"])
    sch = schmidt(jsa)
    stage = np.arange(s["stage_min_um"], s["stage_max_um"] + 1e-9 * s["stage_step_um"],
                      s["stage_step_um"])
    tau = stage_um_to_delay_fs(stage)
    if r.args.exact or s["mean_fourfolds"] is None:
        curve = hom_dip(jsa, jsa, tau)
    else:
        curve = hom_dip(jsa, jsa, tau, "sampled", s["mean_fourfolds"], _need_seed(r.cfg))
    jit = timing_jitter(p)
    r.put("visibility", curve.visibility, headline=True)
    r.put("visibility_error", curve.visibility_error)
    r.put("heralded_purity", sch.purity, headline=True)
    r.put("schmidt_number", sch.schmidt_number)
    r.put("timing_jitter_fs", jit.total_fs)
    r.tables["hom.tsv"] = curve.to_tsv()
    r.tables["jsa.tsv"] = jsa.to_text()


def run_qpm(r: Run):
    m = r.cfg.crystal_model()
    prob = r.cfg.qpm_problem()
    L = r.cfg["spectral"]["crystal_length_mm"]
    r.put("pump_nm", prob.pump_nm)
    r.put("energy_mismatch", prob.energy_mismatch)
    r.put("period_um", qpm_period(m, prob), headline=True)
    r.put("gvm_pump_idler_fs", gvm_walkoff(m, prob.pump_axis, prob.pump_nm, prob.idler_axis,
                                           prob.idler_nm, L), headline=True)
    r.put("gvm_pump_signal_fs", gvm_walkoff(m, prob.pump_axis, prob.pump_nm, prob.signal_axis,
                                            prob.signal_nm, L))
    r.put("timing_jitter_fs", timing_jitter(r.cfg.spectral_params()).total_fs)
    lines = ["wave\tlambda_nm\taxis\tgroup_index\tgroup_slowness_fs_per_mm"]
    for wave, lam, ax in (("pump", prob.pump_nm, prob.pump_axis),
                          ("signal", prob.signal_nm, prob.signal_axis),
                          ("idler", prob.idler_nm, prob.idler_axis)):
        lines.append(f"{wave}\t{_fmt(lam)}\t{ax}\t{_fmt(group_index(m, ax, lam))}\t"
                     f"{_fmt(group_slowness(m, ax, lam))}")
    r.tables["group_indices.tsv"] = "\n".join(lines) + "\n"


def run_compensation(r: Run):
    o = r.cfg["optics"]
    plan = compensation_plan(r.cfg.crystal_model(), r.cfg.qpm_problem(),
                             r.cfg["spectral"]["crystal_length_mm"], r.cfg.compensator_model(),
                             tuple(o["compensator_axes"]), o["compensation_convention"])
    r.put("convention", o["compensation_convention"])
    lines = ["arm\tlambda_nm\tdelay_fs\tthickness_mm"]
    for c in plan:
        lines.append(f"{c.arm}\t{_fmt(c.lambda_nm)}\t{_fmt(c.delay_fs)}\t{_fmt(c.thickness_mm)}")
        r.put(f"{c.arm}_delay_fs", c.delay_fs)
        r.put(f"{c.arm}_thickness_mm", c.thickness_mm, headline=True)
    r.tables["compensation.tsv"] = "\n".join(lines) + "\n"


RUNNERS = {"fringe": run_fringe, "chsh": run_chsh, "tomography": run_tomography,
           "power-scan": run_power_scan, "brightness": run_brightness, "hom": run_hom,
           "qpm": run_qpm, "compensation": run_compensation}


def run_scenario(name: str, cfg: ExperimentConfig, out_dir, exact: bool = False,
                 pulses: int | None = None, mc_runs: int | None = None) -> Run:
    """Run one scenario and write its output directory; returns the collected run."""
    if name not in RUNNERS:
        raise InvalidInputError(f"unknown scenario {name!r}")
    args = argparse.Namespace(exact=exact, pulses=pulses, mc_runs=mc_runs)
    r = Run(name, cfg, args)
    outdir = Path(out_dir) / name
    outdir.mkdir(parents=True, exist_ok=True)
    r.outdir = outdir
    RUNNERS[name](r)
    (outdir / "config_snapshot.yaml").write_text(yaml.safe_dump(cfg.data, sort_keys=True))
    (outdir / "summary.txt").write_text("".join(f"{k}={_fmt(v)}\n" for k, v in r.summary.items()))
    for fname, text in r.tables.items():
        (outdir / fname).write_text(text)
    return r


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spdcsim", description=__doc__.split("\n\n")[0])
    ap.add_argument("scenario", choices=SCENARIOS + ("validate",))
    ap.add_argument("--config", help=f"configuration file (default: ${CONFIG_ENV} or shipped defaults)")
    ap.add_argument("--seed", type=int, help="override the configured seed")
    ap.add_argument("--out", default="spdcsim-out", help="output root directory")
    ap.add_argument("--exact", action="store_true", help="probability mode, no sampling")
    ap.add_argument("--pulses", type=int, help="pump pulses for Monte Carlo rate scenarios")
    ap.add_argument("--mc-runs", type=int, help="tomography Monte Carlo resamplings")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    for flag in ("seed", "pulses", "mc_runs"):
        v = getattr(args, flag)
        if v is not None and (v < 0 or (flag == "pulses" and v == 0)):
            ap.print_usage(sys.stderr)
            print(f"spdcsim: error: --{flag.replace('_', '-')} out of range", file=sys.stderr)
            return EXIT_USAGE
    if args.scenario == "validate":
        report = validate_config(args.config)
        print(report)
        return EXIT_OK if report.ok else EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        r = run_scenario(args.scenario, cfg, args.out, args.exact, args.pulses, args.mc_runs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"convergence error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except InvalidInputError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, SpdcSimError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"{args.scenario}: " + " ".join(r.headline))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
