"""Crystal design numbers from the shipped dispersion data.

Poling period, group-velocity walk-off, the resulting timing jitter and
the calcite compensator thicknesses under each sizing convention.

    python3 demos/crystal_design.py
"""
from spdcsim.config import load_config
from spdcsim.optics import (QpmProblem, compensation_plan, group_index, gvm_walkoff,
                            qpm_period)
from spdcsim.spectral import timing_jitter

cfg = load_config()
ktp, calcite = cfg.crystal_model(), cfg.compensator_model()
prob = cfg.qpm_problem()
L = cfg["spectral"]["crystal_length_mm"]

print(f"pump {prob.pump_nm:.2f} nm (energy conserving), signal {prob.signal_nm} nm, "
      f"idler {prob.idler_nm} nm")
for wave, lam, ax in (("pump", prob.pump_nm, prob.pump_axis),
                      ("signal", prob.signal_nm, prob.signal_axis),
                      ("idler", prob.idler_nm, prob.idler_axis)):
    print(f"  {wave:6s} axis {ax}: group index {group_index(ktp, ax, lam):.5f}")
print(f"poling period {qpm_period(ktp, prob):.3f} um")

# The printed pump wavelength is 0.23% off energy conservation and only
# passes a loosened gate; it moves the period by about 0.7 um.
printed = QpmProblem(prob.signal_nm, prob.idler_nm, 391.2, tolerance=0.0025)
print(f"with a 391.2 nm pump: period {qpm_period(ktp, printed):.3f} um")

gvm = gvm_walkoff(ktp, prob.pump_axis, prob.pump_nm, prob.idler_axis, prob.idler_nm, L)
print(f"pump-idler walk-off over {L} mm: {gvm:.1f} fs")
print(f"timing jitter: {timing_jitter(cfg.spectral_params()).total_fs:.0f} fs")

for convention in ("crossed_crystal", "half_length", "full_length"):
    plan = compensation_plan(ktp, prob, L, calcite, convention=convention)
    text = ", ".join(f"{p.arm} {p.delay_fs:.0f} fs -> {p.thickness_mm:.3f} mm" for p in plan)
    print(f"compensation ({convention}): {text}")
