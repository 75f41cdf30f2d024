"""Experiment configuration: schema, physics checks and object builders.

A user file is overlaid on the shipped ``data/default.yaml``; every key it
sets must exist in the schema. Validation collects all problems, each with
its dotted key path and source line.
"""
from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ._yamlio import LocatedData, load_located, load_located_file
from .counts import DetectionChain, calibrated_chain
from .errors import ConfigError, SpdcSimError
from .optics import DispersionModel, QpmProblem, data_path, load_dispersion
from .source import SourceParams, fit_noise_to_observations, isotropic_params
from .spectral import SpectralParams
from .tomo import MleOptions

CONFIG_ENV = "SPDCSIM_CONFIG"


@dataclass(frozen=True)
class Field:
    kind: str  # "float", "int", "str", "bool", "floats", "pairs", "strs"
    lo: float | None = None
    hi: float | None = None
    strict_lo: bool = False
    nullable: bool = False
    choices: tuple = ()
    length: int | None = None


_POS = dict(lo=0.0, strict_lo=True)
_PROB = dict(lo=0.0, hi=1.0)

SCHEMA: dict[str, Any] = {
    "seed": Field("int", lo=0, hi=2**64 - 1, nullable=True),
    "source": {
        "noise_model": Field("str", choices=("isotropic", "dephasing_white")),
        "visibility_diag": Field("float", **_PROB),
        "fidelity": Field("float", lo=0.25, hi=1.0, nullable=True),
        "phase_phi_rad": Field("float"),
        "pump_power_mw": Field("float", **_POS),
    },
    "calibration": {
        "coincidences_hz": Field("float", **_POS),
        "coincidence_to_singles": Field("float", lo=0.0, hi=1.0, strict_lo=True),
        "pump_power_mw": Field("float", **_POS),
        "bandwidth_nm": Field("float", **_POS),
    },
    "detection": {
        "rep_rate_hz": Field("float", **_POS),
        "coincidence_window_s": Field("float", **_POS),
        "filter_peak_transmission": Field("float", lo=0.0, hi=1.0, strict_lo=True),
        "detector_efficiency": Field("float", lo=0.0, hi=1.0, strict_lo=True),
        "dark_count_rate_hz": Field("float", lo=0.0),
        "pair_statistics": Field("str", choices=("poisson", "thermal")),
    },
    "fringe": {
        "rate_hz": Field("float", **_POS),
        "duration_s": Field("float", **_POS),
        "step_deg": Field("float", **_POS),
        "points": Field("int", lo=8),
        "idler_pol_deg": Field("floats"),
    },
    "chsh": {
        "rate_hz": Field("float", **_POS),
        "duration_s": Field("float", **_POS),
        "angles_deg": Field("floats", length=4),
    },
    "tomography": {
        "rate_hz": Field("float", **_POS),
        "duration_s": Field("float", **_POS),
        "mc_runs": Field("int", lo=0),
        "likelihood": Field("str", choices=("gaussian", "poisson")),
    },
    "power_scan": {
        "calibration_powers_mw": Field("floats", length=2, **_POS),
        "calibration_fidelities": Field("floats", length=2, lo=0.25, hi=1.0),
        "powers_mw": Field("floats", **_POS),
        "derating": Field("pairs", nullable=True),
    },
    "brightness": {
        "pulses": Field("int", lo=1),
        "include_adjacent": Field("bool"),
    },
    "spectral": {
        "pump_fwhm_duration_fs": Field("float", **_POS),
        "crystal_length_mm": Field("float", lo=0.0),
        "filter_fwhm_signal_nm": Field("float", **_POS),
        "filter_fwhm_idler_nm": Field("float", **_POS),
        "grid_n": Field("int", lo=64),
        "span_fwhm": Field("float", **_POS),
        "stage_min_um": Field("float"),
        "stage_max_um": Field("float"),
        "stage_step_um": Field("float", **_POS),
        "mean_fourfolds": Field("float", nullable=True, **_POS),
    },
    "optics": {
        "crystal_dispersion": Field("str"),
        "compensator_dispersion": Field("str"),
        "signal_nm": Field("float", **_POS),
        "idler_nm": Field("float", **_POS),
        "pump_nm": Field("float", nullable=True, **_POS),
        "pump_axis": Field("str"),
        "signal_axis": Field("str"),
        "idler_axis": Field("str"),
        "qpm_order": Field("int"),
        "energy_tolerance": Field("float", lo=0.0),
        "compensation_convention": Field("str", choices=("crossed_crystal", "half_length",
                                                          "full_length")),
        "compensator_axes": Field("strs", length=2),
    },
}


def default_config_path() -> Path:
    return data_path("default.yaml")


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and np.isfinite(v)


def _check_number(doc, path, v, f: Field, errors):
    if f.lo is not None and (v < f.lo or (f.strict_lo and v == f.lo)):
        errors.append(doc.error(path, f"value {v!r} must be {'>' if f.strict_lo else '>='} {f.lo:g}"))
    if f.hi is not None and v > f.hi:
        errors.append(doc.error(path, f"value {v!r} must be <= {f.hi:g}"))


def _check_field(doc, path, v, f: Field, errors):
    if v is None:
        if not f.nullable:
            errors.append(doc.error(path, "value is required"))
        return
    if f.kind == "float":
        if not _is_num(v):
            errors.append(doc.error(path, f"expected a number, got {v!r}"))
        else:
            _check_number(doc, path, v, f, errors)
    elif f.kind == "int":
        if not isinstance(v, int) or isinstance(v, bool):
            errors.append(doc.error(path, f"expected an integer, got {v!r}"))
        else:
            _check_number(doc, path, v, f, errors)
    elif f.kind == "bool":
        if not isinstance(v, bool):
            errors.append(doc.error(path, f"expected true/false, got {v!r}"))
    elif f.kind == "str":
        if not isinstance(v, str) or not v:
            errors.append(doc.error(path, f"expected a non-empty string, got {v!r}"))
        elif f.choices and v not in f.choices:
            errors.append(doc.error(path, f"{v!r} is not one of {', '.join(f.choices)}"))
    elif f.kind in ("floats", "strs", "pairs"):
        if not isinstance(v, list) or not v:
            errors.append(doc.error(path, "expected a non-empty list"))
            return
        if f.length is not None and len(v) != f.length:
            errors.append(doc.error(path, f"expected {f.length} entries, got {len(v)}"))
        for i, item in enumerate(v):
            p = path + (i,)
            if f.kind == "floats":
                if not _is_num(item):
                    errors.append(doc.error(p, f"expected a number, got {item!r}"))
                else:
                    _check_number(doc, p, item, f, errors)
            elif f.kind == "strs":
                if not isinstance(item, str):
                    errors.append(doc.error(p, f"expected a string, got {item!r}"))
            elif not (isinstance(item, list) and len(item) == 2 and all(map(_is_num, item))):
                errors.append(doc.error(p, "expected a [number, number] pair"))


def _check_schema(doc: LocatedData, data, schema, path, errors):
    if not isinstance(data, dict):
        errors.append(doc.error(path, "expected a mapping"))
        return
    for k, v in data.items():
        p = path + (k,)
        if k not in schema:
            errors.append(doc.error(p, f"unknown key {k!r}"))
        elif isinstance(schema[k], dict):
            _check_schema(doc, v, schema[k], p, errors)
        else:
            _check_field(doc, p, v, schema[k], errors)


@dataclass
class ExperimentConfig:
    """Merged, validated configuration plus builders for module objects."""

    data: dict
    path: str | None = None
    doc: LocatedData | None = field(default=None, repr=False, compare=False)

    def __getitem__(self, key):
        return self.data[key]

    @property
    def seed(self) -> int | None:
        return self.data["seed"]

    def with_seed(self, seed: int | None) -> "ExperimentConfig":
        d = copy.deepcopy(self.data)
        d["seed"] = seed
        return ExperimentConfig(d, self.path, self.doc)

    # -- builders
    def _resolve(self, name: str) -> Path:
        p = Path(name)
        if p.is_absolute():
            return p
        if self.path is not None:
            local = Path(self.path).parent / p
            if local.exists():
                return local
        return data_path(name)

    def crystal_model(self) -> DispersionModel:
        return load_dispersion(self._resolve(self.data["optics"]["crystal_dispersion"]))

    def compensator_model(self) -> DispersionModel:
        return load_dispersion(self._resolve(self.data["optics"]["compensator_dispersion"]))

    def qpm_problem(self) -> QpmProblem:
        o = self.data["optics"]
        return QpmProblem(o["signal_nm"], o["idler_nm"], o["pump_nm"], o["pump_axis"],
                          o["signal_axis"], o["idler_axis"], o["qpm_order"], o["energy_tolerance"])

    def detection(self):
        """(mu_per_mw, DetectionChain) from the brightness calibration."""
        c, d = self.data["calibration"], self.data["detection"]
        mu_per_mw, chain = calibrated_chain(
            c["coincidences_hz"], c["coincidence_to_singles"], c["pump_power_mw"],
            d["filter_peak_transmission"], d["detector_efficiency"], d["rep_rate_hz"],
            d["coincidence_window_s"], d["pair_statistics"])
        if d["dark_count_rate_hz"]:
            from dataclasses import replace
            chain = replace(chain, dark_count_rate_hz=d["dark_count_rate_hz"])
        return mu_per_mw, chain

    def source_params(self, mu_per_mw: float = 0.0) -> SourceParams:
        s = self.data["source"]
        base = SourceParams(pump_power_mw=s["pump_power_mw"], mu_per_mw=mu_per_mw)
        if s["noise_model"] == "isotropic":
            p = isotropic_params(s["visibility_diag"], base)
        else:
            p = fit_noise_to_observations(s["visibility_diag"], s["fidelity"], base)
        from dataclasses import replace
        return replace(p, phase_phi=s["phase_phi_rad"])

    def spectral_params(self) -> SpectralParams:
        s = self.data["spectral"]
        return SpectralParams.from_dispersion(
            self.crystal_model(), self.qpm_problem(),
            pump_fwhm_duration_fs=s["pump_fwhm_duration_fs"],
            crystal_length_mm=s["crystal_length_mm"],
            filter_fwhm_signal_nm=s["filter_fwhm_signal_nm"],
            filter_fwhm_idler_nm=s["filter_fwhm_idler_nm"])

    def mle_options(self) -> MleOptions:
        return MleOptions(likelihood=self.data["tomography"]["likelihood"])


def _physics_checks(cfg: ExperimentConfig, doc: LocatedData, errors):
    d = cfg.data
    o = d["optics"]
    models = {}
    for key in ("crystal_dispersion", "compensator_dispersion"):
        path = cfg._resolve(o[key])
        if not path.exists():
            errors.append(doc.error(("optics", key), f"dispersion file {o[key]!r} not found"))
            continue
        try:
            models[key] = load_dispersion(path)
        except ConfigError as exc:
            errors.append(doc.error(("optics", key), f"invalid dispersion file: {exc}"))
    prob = None
    try:
        prob = cfg.qpm_problem()
    except SpdcSimError as exc:
        errors.append(doc.error(("optics", "pump_nm"), str(exc)))
    crystal = models.get("crystal_dispersion")
    if crystal is not None and prob is not None:
        for arm, lam, ax in (("pump", prob.pump_nm, prob.pump_axis),
                             ("signal", prob.signal_nm, prob.signal_axis),
                             ("idler", prob.idler_nm, prob.idler_axis)):
            key = ("optics", f"{arm}_axis")
            if ax not in crystal.axes:
                errors.append(doc.error(key, f"{crystal.material} has no axis {ax!r}"))
                continue
            lo, hi = crystal.axes[ax].validity_um
            if not lo <= lam * 1e-3 <= hi:
                errors.append(doc.error(("optics", f"{arm}_nm"),
                                        f"{lam:.4g} nm outside the {crystal.material} {ax}-axis "
                                        f"validity range [{lo * 1e3:.4g}, {hi * 1e3:.4g}] nm"))
    comp = models.get("compensator_dispersion")
    if comp is not None:
        for ax in o["compensator_axes"]:
            if ax not in comp.axes:
                errors.append(doc.error(("optics", "compensator_axes"),
                                        f"{comp.material} has no axis {ax!r}"))
    s = d["source"]
    if s["noise_model"] == "dephasing_white":
        if s["fidelity"] is None:
            errors.append(doc.error(("source", "fidelity"), "dephasing_white needs a fidelity"))
        else:
            try:
                fit_noise_to_observations(s["visibility_diag"], s["fidelity"])
            except SpdcSimError as exc:
                errors.append(doc.error(("source", "fidelity"), str(exc)))
    sp = d["spectral"]
    if sp["stage_max_um"] <= sp["stage_min_um"]:
        errors.append(doc.error(("spectral", "stage_max_um"), "stage_max_um must exceed stage_min_um"))
    ps = d["power_scan"]
    if ps["calibration_powers_mw"][0] == ps["calibration_powers_mw"][1]:
        errors.append(doc.error(("power_scan", "calibration_powers_mw"),
                                "calibration powers must differ"))


def _load(text: str | None, source) -> tuple[ExperimentConfig, list[ConfigError]]:
    default_doc = load_located_file(default_config_path())
    errors: list[ConfigError] = []
    if text is None:
        doc = default_doc
        data = copy.deepcopy(default_doc.data)
    else:
        doc = load_located(text, source)
        if not isinstance(doc.data, dict):
            return None, [doc.error((), "configuration must be a mapping")]
        _check_schema(doc, doc.data, SCHEMA, (), errors)
        data = _merge(default_doc.data, doc.data)
    cfg = ExperimentConfig(data, None if source is None else str(source), doc)
    if not errors:
        _physics_checks(cfg, doc, errors)
    return cfg, errors


@dataclass
class ValidationReport:
    source: str
    errors: list

    @property
    def ok(self) -> bool:
        return not self.errors

    def __str__(self) -> str:
        if self.ok:
            return f"{self.source}: valid"
        return "\n".join(str(e) for e in self.errors)


def validate_config(path=None) -> ValidationReport:
    """Check a configuration file without side effects.

    ``None`` checks the file named by the environment variable, or the
    shipped defaults when it is unset.
    """
    if path is None:
        path = os.environ.get(CONFIG_ENV) or None
    if path is None:
        _, errors = _load(None, None)
        return ValidationReport(str(default_config_path()), errors)
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        return ValidationReport(str(p), [ConfigError(f"cannot read file: {exc.strerror}", source=str(p))])
    try:
        _, errors = _load(text, str(p))
    except ConfigError as exc:
        errors = [exc]
    return ValidationReport(str(p), errors)


def load_config(path=None) -> ExperimentConfig:
    """Load and validate; raises the first :class:`ConfigError` (all are listed in its message)."""
    if path is None:
        path = os.environ.get(CONFIG_ENV) or None
    if path is None:
        cfg, errors = _load(None, None)
    else:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read file: {exc.strerror}", source=str(p)) from None
        cfg, errors = _load(text, str(p))
    if errors:
        first = errors[0]
        if len(errors) > 1:
            more = "\n".join(str(e) for e in errors[1:])
            raise ConfigError(f"{first.args[0]}\n{more}")
        raise first
    return cfg


def config_from_dict(overrides: dict) -> ExperimentConfig:
    """Defaults overlaid with ``overrides`` (validated like a file)."""
    import yaml
    return _load_text_checked(yaml.safe_dump(overrides), "<dict>")


def _load_text_checked(text, source):
    cfg, errors = _load(text, source)
    if errors:
        raise errors[0]
    return cfg
