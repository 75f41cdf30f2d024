import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spdcsim.errors import (ConfigError, DegeneratePhaseMatchingError, InvalidInputError,
                            RangeError, UnusableMaterialError)
from spdcsim.optics import (C_MM_PER_FS, QpmProblem, compensation_plan, compensation_thickness,
                            crystal_delays, gvm_walkoff, group_index, group_slowness,
                            load_dispersion, parse_dispersion, phase_mismatch, qpm_period,
                            refractive_index, wavevector)

PROPS = settings(max_examples=200, deadline=None)

# coefficients typed in independently of the shipped data files
KTP_Y = (3.45018, [(0.04341, 0.04597), (16.98825, 39.43799)])
KTP_Z = (4.59423, [(0.06206, 0.04763), (110.80672, 86.12171)])
CALCITE_O = (1.73358749, [(0.96464345, 1.94325203e-2), (1.82831454, 120.0)])


def oracle_n(coeffs, lam_um, lambda2=False):
    a, terms = coeffs
    l2 = lam_um ** 2
    n2 = a + sum((b * l2 if lambda2 else b) / (l2 - c) for b, c in terms)
    return np.sqrt(n2)


def oracle_group_index(coeffs, lam_um):
    """n - lambda dn/dlambda with the analytic derivative of the pole sum."""
    a, terms = coeffs
    n = oracle_n(coeffs, lam_um)
    dn2 = sum(-2 * lam_um * b / (lam_um ** 2 - c) ** 2 for b, c in terms)
    return n - lam_um * dn2 / (2 * n)


def constant_model(n=1.5, axes=("Y", "Z")):
    body = "".join(f"  {a}:\n    A: {n * n}\n    validity_um: [0.2, 5.0]\n" for a in axes)
    return parse_dispersion(f"material: glass\ncitation: none\naxes:\n{body}")


DEFAULT = QpmProblem(760.0, 810.0)


class TestIndex:
    @pytest.mark.parametrize("axis,coeffs", [("Y", KTP_Y), ("Z", KTP_Z)])
    @pytest.mark.parametrize("lam", [400.0, 760.0, 810.0, 1550.0, 3000.0])
    def test_sellmeier_oracle(self, ktp, axis, coeffs, lam):
        assert refractive_index(ktp, axis, lam) == pytest.approx(oracle_n(coeffs, lam / 1e3), abs=1e-12)

    def test_lambda_squared_form(self, calcite):
        assert refractive_index(calcite, "o", 800.0) == pytest.approx(
            oracle_n(CALCITE_O, 0.8, lambda2=True), abs=1e-12)

    def test_birefringence_sign(self, ktp, calcite):
        assert refractive_index(ktp, "Z", 800.0) > refractive_index(ktp, "Y", 800.0)
        assert refractive_index(calcite, "o", 800.0) > refractive_index(calcite, "e", 800.0)

    def test_outside_validity(self, ktp):
        with pytest.raises(RangeError):
            refractive_index(ktp, "Y", 300.0)
        with pytest.raises(RangeError):
            refractive_index(ktp, "Y", 4000.0)

    def test_unknown_axis(self, ktp):
        with pytest.raises(InvalidInputError):
            refractive_index(ktp, "Q", 800.0)


class TestGroupIndex:
    @pytest.mark.parametrize("axis,coeffs", [("Y", KTP_Y), ("Z", KTP_Z)])
    @pytest.mark.parametrize("lam", [392.1, 760.0, 810.0, 1550.0])
    def test_analytic_oracle(self, ktp, axis, coeffs, lam):
        assert group_index(ktp, axis, lam) == pytest.approx(oracle_group_index(coeffs, lam / 1e3), abs=1e-8)

    def test_constant_index(self):
        m = constant_model(1.7)
        assert group_index(m, "Y", 800.0) == pytest.approx(1.7, abs=1e-12)

    def test_step_convergence(self, ktp):
        for lam in (392.1, 760.0, 810.0):
            assert abs(group_index(ktp, "Y", lam, 0.1) - group_index(ktp, "Y", lam, 0.05)) < 1e-7

    def test_slowness_units(self, ktp):
        assert group_slowness(ktp, "Y", 800.0) == pytest.approx(group_index(ktp, "Y", 800.0) / C_MM_PER_FS)

    def test_frozen_values(self, ktp):
        assert group_index(ktp, "Y", 760.0) == pytest.approx(1.8132922, abs=1e-6)
        assert group_index(ktp, "Z", 810.0) == pytest.approx(1.9088762, abs=1e-6)
        assert group_index(ktp, "Y", DEFAULT.pump_nm) == pytest.approx(2.1610614, abs=1e-6)

    @PROPS
    @given(st.floats(450.0, 2500.0), st.sampled_from(["X", "Y", "Z"]))
    def test_normal_dispersion_group_index_exceeds_index(self, ktp, lam, axis):
        assert group_index(ktp, axis, lam) > refractive_index(ktp, axis, lam)


class TestQpm:
    def test_pump_from_energy_conservation(self):
        assert DEFAULT.pump_nm == pytest.approx(392.10191, abs=1e-5)
        assert DEFAULT.energy_mismatch == pytest.approx(0.0, abs=1e-15)

    def test_frozen_period(self, ktp):
        assert qpm_period(ktp, DEFAULT) == pytest.approx(7.95120, abs=1e-4)

    def test_scan_oracle(self, ktp):
        # brute-force scan of candidate periods at 1 nm resolution
        dk = phase_mismatch(ktp, DEFAULT)
        grid = np.arange(1.0, 50.0 + 1e-9, 1e-3)
        best = grid[np.argmin(np.abs(dk - 2 * np.pi / grid))]
        assert abs(best - qpm_period(ktp, DEFAULT)) <= 1e-3

    def test_higher_order_scales_period(self, ktp):
        third = QpmProblem(760.0, 810.0, order=3)
        assert qpm_period(ktp, third) == pytest.approx(3 * qpm_period(ktp, DEFAULT), rel=1e-12)

    def test_explicit_pump_gate(self, ktp):
        # 391.2 nm is 0.23% away from the energy-conserving pump
        with pytest.raises(InvalidInputError, match="mismatch 0.230%"):
            QpmProblem(760.0, 810.0, 391.2, tolerance=0.002)
        p = QpmProblem(760.0, 810.0, 391.2, tolerance=0.0025)
        assert qpm_period(ktp, p) == pytest.approx(7.22108, abs=1e-4)

    def test_constant_index_is_degenerate(self):
        with pytest.raises(DegeneratePhaseMatchingError):
            qpm_period(constant_model(), DEFAULT)

    @pytest.mark.parametrize("kw", [dict(signal_nm=-1.0, idler_nm=800.0),
                                    dict(signal_nm=800.0, idler_nm=800.0, pump_nm=0.0),
                                    dict(signal_nm=800.0, idler_nm=800.0, order=0)])
    def test_invalid_problem(self, kw):
        with pytest.raises(InvalidInputError):
            QpmProblem(**kw)

    @PROPS
    @given(st.floats(770.0, 1200.0), st.floats(770.0, 1200.0))
    def test_random_triplets(self, ktp, s, i):
        p = QpmProblem(s, i)
        period = qpm_period(ktp, p)
        assert np.isfinite(period) and period > 0
        assert abs(phase_mismatch(ktp, p)) == pytest.approx(2 * np.pi / period, rel=1e-12)
        assert 1 / p.pump_nm == pytest.approx(1 / s + 1 / i, rel=1e-12)

    @PROPS
    @given(st.floats(0.77, 1.2), st.floats(0.77, 1.2))
    def test_micrometre_constructor(self, ktp, s, i):
        a = QpmProblem.from_um(s, i)
        b = QpmProblem(s * 1e3, i * 1e3)
        assert qpm_period(ktp, a) == pytest.approx(qpm_period(ktp, b), rel=1e-12)

    def test_wavevector_units(self, ktp):
        assert wavevector(ktp, "Y", 800.0) == pytest.approx(2 * np.pi * refractive_index(ktp, "Y", 800.0) / 0.8)


class TestWalkoff:
    def test_pump_idler_frozen(self, ktp):
        assert gvm_walkoff(ktp, "Y", DEFAULT.pump_nm, "Z", 810.0, 1.0) == pytest.approx(841.2, abs=0.1)

    def test_identical_inputs(self, ktp):
        assert gvm_walkoff(ktp, "Y", 800.0, "Y", 800.0, 5.0) == 0.0

    def test_negative_length(self, ktp):
        with pytest.raises(InvalidInputError):
            gvm_walkoff(ktp, "Y", 800.0, "Z", 800.0, -1.0)

    @PROPS
    @given(st.floats(0.0, 20.0), st.floats(450.0, 2000.0), st.floats(450.0, 2000.0))
    def test_linear_in_length(self, ktp, length, la, lb):
        one = gvm_walkoff(ktp, "Y", la, "Z", lb, 1.0)
        assert gvm_walkoff(ktp, "Y", la, "Z", lb, length) == pytest.approx(one * length, rel=1e-12, abs=1e-12)


class TestCompensation:
    def test_frozen_crossed_crystal(self, ktp, calcite):
        plan = {p.arm: p for p in compensation_plan(ktp, DEFAULT, 1.0, calcite)}
        assert plan["signal"].delay_fs == pytest.approx(1604.8, abs=0.1)
        assert plan["idler"].delay_fs == pytest.approx(1999.4, abs=0.1)
        assert plan["signal"].thickness_mm == pytest.approx(2.629, abs=1e-3)
        assert plan["idler"].thickness_mm == pytest.approx(3.305, abs=1e-3)

    @pytest.mark.parametrize("convention,signal,idler", [("half_length", 0.2971, 0.2899),
                                                         ("full_length", 0.5942, 0.5798)])
    def test_frozen_single_crystal_conventions(self, ktp, calcite, convention, signal, idler):
        plan = {p.arm: p.thickness_mm for p in compensation_plan(ktp, DEFAULT, 1.0, calcite,
                                                                 convention=convention)}
        assert plan["signal"] == pytest.approx(signal, abs=1e-4)
        assert plan["idler"] == pytest.approx(idler, abs=1e-4)

    def test_full_is_twice_half(self, ktp):
        half = crystal_delays(ktp, DEFAULT, 1.0, "half_length")
        full = crystal_delays(ktp, DEFAULT, 1.0, "full_length")
        assert full["signal"] == pytest.approx(2 * half["signal"])

    def test_zero_delay(self, calcite):
        assert compensation_thickness(0.0, calcite, lambda_nm=800.0) == 0.0

    def test_isotropic_plate_unusable(self):
        glass = constant_model(1.5, axes=("o", "e"))
        with pytest.raises(UnusableMaterialError):
            compensation_thickness(100.0, glass, lambda_nm=800.0)

    def test_unknown_convention(self, ktp):
        with pytest.raises(InvalidInputError):
            crystal_delays(ktp, DEFAULT, 1.0, "sideways")

    @PROPS
    @given(st.floats(0.0, 1e4), st.floats(500.0, 2000.0))
    def test_linear_in_delay(self, calcite, delay, lam):
        unit_mm = compensation_thickness(1.0, calcite, lambda_nm=lam)
        assert compensation_thickness(delay, calcite, lambda_nm=lam) == pytest.approx(delay * unit_mm, rel=1e-12)

    @PROPS
    @given(st.floats(0.0, 10.0))
    def test_delays_linear_in_length(self, ktp, length):
        one = crystal_delays(ktp, DEFAULT, 1.0)
        d = crystal_delays(ktp, DEFAULT, length)
        assert d["idler"] == pytest.approx(one["idler"] * length, rel=1e-12, abs=1e-12)


HEADER = "material: x\ncitation: c\naxes:\n  Y:\n"


class TestDispersionFiles:
    @pytest.mark.parametrize("body,line,msg", [
        ("    A: 2.0\n    validity_um: [0.4, 1.0]\n    bogus: 1\n", 7, "unknown key"),
        ("    A: 2.0\n    poles: [[0.1, 0.5]]\n    validity_um: [0.4, 1.0]\n", 4, "pole"),
        ("    A: abc\n    validity_um: [0.4, 1.0]\n", 5, "finite number"),
        ("    A: 0.5\n    validity_um: [0.4, 1.0]\n", 4, "> 1"),
        ("    A: 2.0\n    validity_um: [1.0, 0.4]\n", 6, "min < max"),
    ])
    def test_schema_errors_carry_line(self, body, line, msg):
        with pytest.raises(ConfigError, match=rf"line {line}\b.*{msg}"):
            parse_dispersion(HEADER + body)

    def test_missing_citation(self):
        with pytest.raises(ConfigError, match="citation"):
            parse_dispersion("material: x\naxes:\n  Y:\n    A: 2.0\n    validity_um: [0.4, 1.0]\n")

    def test_yaml_syntax_error(self):
        with pytest.raises(ConfigError, match="line"):
            parse_dispersion("material: [\n")

    def test_file_round_trip(self, tmp_path, ktp):
        path = tmp_path / "glass.yaml"
        path.write_text(HEADER + "    A: 2.25\n    validity_um: [0.3, 2.0]\n")
        m = load_dispersion(path)
        assert refractive_index(m, "Y", 500.0) == pytest.approx(1.5)
        assert ktp.citation.startswith("K. Kato")
