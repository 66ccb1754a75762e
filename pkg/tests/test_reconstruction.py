import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biphoton.errors import DegenerateConfigurationError, FitError
from biphoton.rates import relative_amplitudes_from_counts
from biphoton.reconstruction import (
    InterferogramTrace,
    PhaseSet,
    extract_relative_phase,
    fidelity,
    fidelity_error_mc,
    fit_single_tone,
    fit_two_tone,
    gauge_reduced_phases,
    measure_phases,
    phase_distance,
    read_trace,
    read_trace_dir,
    reconstruct_state,
    schmidt,
    synth_coincidences,
    synthesize_traces,
    trace_filename,
    wrap_phase,
    write_trace,
)

F = 500e3


def sample_times(periods=10, per_period=50):
    return np.arange(periods * per_period) / (per_period * F)


def random_state(rng, n=3):
    return rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))


def measured_table():
    def mat(diag, off):
        (d1, d2, d3), (o13, o23, o12) = diag, off
        return np.array([[d1, o12, o13], [o12, d2, o23], [o13, o23, d3]])

    spdc = mat((0.04, 0.046, 0.006), (0.013, 0.23, 0.212))
    spdc_err = mat((0.01, 0.007, 0.002), (0.003, 0.01, 0.015))
    sfg = mat((0.04, 0.059, 0.009), (0.033, 0.22, 0.195))
    sfg_err = mat((0.008, 0.005, 0.004), (0.005, 0.005, 0.007))
    return spdc, spdc_err, sfg, sfg_err


class TestWrap:
    def test_range(self):
        x = np.linspace(-20, 20, 1001)
        w = wrap_phase(x)
        assert np.all(w > -np.pi) and np.all(w <= np.pi)
        assert np.allclose(np.exp(1j * w), np.exp(1j * x))

    def test_pi_maps_to_pi(self):
        assert wrap_phase(np.pi) == pytest.approx(np.pi)
        assert wrap_phase(-np.pi) == pytest.approx(np.pi)


class TestTrace:
    def test_needs_four_samples_per_period(self):
        t = np.arange(30) / (3 * F)
        with pytest.raises(ValueError):
            InterferogramTrace(t, np.zeros_like(t), F)

    def test_needs_three_periods(self):
        t = np.arange(20) / (10 * F)
        with pytest.raises(ValueError):
            InterferogramTrace(t, np.zeros_like(t), F)

    def test_kind(self):
        t = sample_times()
        with pytest.raises(ValueError):
            InterferogramTrace(t, t, F, "pump")


class TestSingleTone:
    def test_exact(self):
        t = sample_times()
        fit = fit_single_tone(InterferogramTrace(t, 3 * np.cos(0.7 - 2 * np.pi * F * t) + 10, F, "signal"))
        assert (fit.a, fit.c, fit.d) == pytest.approx((3, 0.7, 10), abs=1e-9)
        assert fit.rms < 1e-9

    def test_negative_amplitude(self):
        t = sample_times()
        fit = fit_single_tone(InterferogramTrace(t, -2 * np.cos(0.5 - 2 * np.pi * F * t) + 1, F))
        assert fit.a == pytest.approx(2, abs=1e-9)
        assert fit.c == pytest.approx(wrap_phase(0.5 + np.pi), abs=1e-9)
        assert fit.d == pytest.approx(1, abs=1e-9)

    def test_uncertainty_calibration(self):
        rng = np.random.default_rng(7)
        t = sample_times()
        a, c = 1.0, 0.4
        clean = a * np.cos(c - 2 * np.pi * F * t) + 2
        hits = 0
        for _ in range(500):
            fit = fit_single_tone(InterferogramTrace(t, clean + rng.normal(0, 0.05 * a, t.size), F))
            hits += phase_distance(fit.c, c) < 3 * fit.sigma_c
        assert hits / 500 >= 0.99


class TestTwoTone:
    def test_pure_second_harmonic(self):
        t = sample_times()
        y = 2 * np.cos(1.3 - 4 * np.pi * F * t) + 5
        fit = fit_two_tone(InterferogramTrace(t, y, F))
        assert fit.a1 == pytest.approx(0, abs=1e-9)
        assert fit.c2 == pytest.approx(1.3, abs=1e-9)

    def test_exact(self):
        t = sample_times()
        y = np.cos(0.2 - 2 * np.pi * F * t) + 2 * np.cos(1.3 - 4 * np.pi * F * t) + 5
        fit = fit_two_tone(InterferogramTrace(t, y, F))
        assert (fit.a1, fit.c1, fit.a2, fit.c2, fit.d) == pytest.approx((1, 0.2, 2, 1.3, 5), abs=1e-9)
        assert fit.rms < 1e-9

    def test_aliased_sampling_raises(self):
        t = sample_times(per_period=4)
        y = np.cos(2 * np.pi * F * t)
        with pytest.raises(FitError) as err:
            fit_two_tone(InterferogramTrace(t, y, F))
        assert err.value.rank < 5


class TestRelativePhase:
    def _fits(self, c2, cs, ci):
        t = sample_times()
        sfg = fit_two_tone(InterferogramTrace(t, np.cos(c2 - 4 * np.pi * F * t), F))
        sig = fit_single_tone(InterferogramTrace(t, np.cos(cs - 2 * np.pi * F * t), F, "signal"))
        idl = fit_single_tone(InterferogramTrace(t, np.cos(ci - 2 * np.pi * F * t), F, "idler"))
        return sfg, sig, idl

    def test_arithmetic(self):
        phase, _ = extract_relative_phase(*self._fits(1.2, 0.4, 0.5))
        assert phase == pytest.approx(0.3, abs=1e-9)

    def test_wrapped(self):
        phase, _ = extract_relative_phase(*self._fits(0.1, 3.0, 3.0))
        assert phase == pytest.approx(0.1 - 6.0 + 2 * np.pi, abs=1e-9)
        assert phase == pytest.approx(0.383, abs=1e-3)


class TestSynthesis:
    def test_rejects_reference_pair(self, rng):
        with pytest.raises(DegenerateConfigurationError):
            synthesize_traces(random_state(rng), (0, 0), F, 1e-5, 25e6)

    def test_rejects_zero_reference(self, rng):
        psi = random_state(rng)
        psi[0, 0] = 0
        with pytest.raises(DegenerateConfigurationError):
            synthesize_traces(psi, (1, 2), F, 1e-5, 25e6)

    def test_deterministic(self, rng):
        psi = random_state(rng)
        a = synthesize_traces(psi, (1, 2), F, 2e-5, 25e6, noise_sigma=0.1, seed=5)
        b = synthesize_traces(psi, (1, 2), F, 2e-5, 25e6, noise_sigma=0.1, seed=5)
        for x, y in zip(a[:3], b[:3]):
            assert np.array_equal(x.value, y.value)

    def test_spectrum_has_f_and_2f(self, rng):
        tr = synthesize_traces(random_state(rng), (1, 2), F, 20 / F, 50 * F, seed=1)
        spec = np.abs(np.fft.rfft(tr.sfg.value - tr.sfg.value.mean()))
        bins = np.flatnonzero(spec > 1e-9 * spec.max())
        assert list(bins) == [20, 40]

    def test_fit_recovers_truth(self, rng):
        for pair in [(0, 1), (1, 0), (2, 2), (1, 2)]:
            tr = synthesize_traces(random_state(rng), pair, F, 10 / F, 50 * F, seed=3)
            fit = fit_two_tone(tr.sfg)
            assert phase_distance(fit.c2, tr.truth["c2"]) < 1e-3
            phase, _ = extract_relative_phase(fit, fit_single_tone(tr.signal), fit_single_tone(tr.idler))
            assert phase_distance(phase, tr.truth["phase"]) < 1e-3

    def test_gauge_aware_pipeline(self, rng):
        psi = random_state(rng)
        phases, truth = measure_phases(psi, seed=11)
        assert phases.theta[0, 0] == 0.0
        assert np.max(phase_distance(phases.theta, truth)) < 1e-3
        # the truth differs from arg(psi) only by row and column offsets
        raw = np.angle(psi) - np.angle(psi[0, 0])
        diff = np.angle(np.exp(1j * (raw - phases.theta)))
        rows = diff - diff[:, :1]
        assert np.max(phase_distance(rows, rows[:1, :])) < 1e-3


class TestFidelity:
    def test_identical(self, rng):
        p = rng.uniform(size=(3, 3))
        assert fidelity(p, p) == pytest.approx(1.0, abs=1e-15)

    def test_orthogonal(self):
        assert fidelity(np.diag([1.0, 0, 0]), np.diag([0, 1.0, 0])) == 0.0

    def test_symmetric(self, rng):
        p, q = rng.uniform(size=(2, 3, 3))
        assert fidelity(p, q) == pytest.approx(fidelity(q, p), abs=1e-15)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            fidelity(np.array([[1.0, -0.1]]), np.array([[1.0, 0.0]]))

    def test_measured_table(self):
        spdc, _, sfg, _ = measured_table()
        assert 0.99 <= fidelity(spdc, sfg) <= 1.0
        # without renormalization the rounded table gives the often quoted value
        assert np.sum(np.sqrt(spdc * sfg)) == pytest.approx(0.9974, abs=1e-4)


class TestFidelityMonteCarlo:
    def test_zero_sigma(self, rng):
        p, q = rng.uniform(size=(2, 3, 3))
        mean, std = fidelity_error_mc(p, 0.0, q, 0.0)
        assert std == 0.0 and mean == fidelity(p, q)

    def test_deterministic_and_pool_independent(self):
        spdc, se, sfg, fe = measured_table()
        a = fidelity_error_mc(spdc, se, sfg, fe, n_cycles=30000, seed=3, chunk=10000)
        b = fidelity_error_mc(spdc, se, sfg, fe, n_cycles=30000, seed=3, chunk=10000, jobs=2)
        assert a == b

    def test_doubling_sigma_increases_std(self):
        spdc, se, sfg, fe = measured_table()
        for seed in range(10):
            s1 = fidelity_error_mc(spdc, se, sfg, fe, n_cycles=20000, seed=seed)[1]
            s2 = fidelity_error_mc(spdc, 2 * se, sfg, 2 * fe, n_cycles=20000, seed=seed)[1]
            assert s2 > s1

    def test_negative_sigma(self):
        with pytest.raises(ValueError):
            fidelity_error_mc(np.eye(2), -1.0, np.eye(2), 0.0)


class TestSchmidt:
    def test_product_state(self, rng):
        a = rng.normal(size=3) + 1j * rng.normal(size=3)
        b = rng.normal(size=3) + 1j * rng.normal(size=3)
        assert schmidt(np.outer(a, b)).schmidt_number == pytest.approx(1.0, abs=1e-12)

    def test_maximally_entangled(self):
        assert schmidt(np.eye(3) / np.sqrt(3)).schmidt_number == pytest.approx(3.0, abs=1e-12)

    def test_reduced_density_matrix_oracle(self, rng):
        for _ in range(100):
            psi = random_state(rng)
            v = psi.reshape(-1) / np.linalg.norm(psi)
            rho_full = np.outer(v, v.conj()).reshape(3, 3, 3, 3)
            rho = np.einsum("ajbj->ab", rho_full)
            purity = np.trace(rho @ rho).real
            assert schmidt(psi).schmidt_number == pytest.approx(1 / purity, abs=1e-10)

    def test_gauge_invariance(self, rng):
        for _ in range(20):
            psi = random_state(rng)
            ds = np.diag(np.exp(1j * rng.uniform(-np.pi, np.pi, 3)))
            di = np.diag(np.exp(1j * rng.uniform(-np.pi, np.pi, 3)))
            a = schmidt(psi).coefficients
            b = schmidt(ds @ psi @ di).coefficients
            assert np.max(np.abs(a - b)) < 1e-10

    def test_decomposition_rebuilds_state(self, rng):
        psi = random_state(rng)
        res = schmidt(psi)
        rebuilt = sum(math.sqrt(c) * np.outer(l, r) for c, l, r in zip(res.coefficients, res.left, res.right))
        assert np.allclose(rebuilt, psi / np.linalg.norm(psi), atol=1e-12)
        assert np.all(np.diff(res.coefficients) <= 0)
        assert res.coefficients.sum() == pytest.approx(1.0)
        assert 1 <= res.schmidt_number <= 3

    def test_zero(self):
        with pytest.raises(ValueError):
            schmidt(np.zeros((3, 3)))

    def test_json(self, rng):
        doc = schmidt(random_state(rng)).to_json()
        json.dumps(doc)
        assert "units" in doc and len(doc["left_modes"]) == 3


class TestCoincidences:
    def test_zero_rate(self, rng):
        recs = synth_coincidences(random_state(rng), 0.0, 10.0, [1, 1, 1])
        assert all(r.counts_in_peak == 0 for r in recs)

    def test_seeded(self, rng):
        psi = random_state(rng)
        a = synth_coincidences(psi, 1e4, 1.0, [0.5, 0.6, 0.7], (0.1, 0.2), seed=4)
        b = synth_coincidences(psi, 1e4, 1.0, [0.5, 0.6, 0.7], (0.1, 0.2), seed=4)
        assert a == b

    def test_large_counts_recover_probabilities(self, rng):
        psi = random_state(rng)
        p = np.abs(psi) ** 2 / np.sum(np.abs(psi) ** 2)
        mu = [0.5, 0.7, 0.9]
        recs = synth_coincidences(psi, 1e8, 1.0, mu, (0.2, 0.3), seed=9)
        counts = np.zeros((3, 3))
        for r in recs:
            counts[r.output_pair] = r.counts_in_peak
        expected = p * 1e8 * np.outer(mu, mu) * 0.06
        assert expected.sum() > 1e6
        assert np.all(np.abs(counts - expected) < 3 * np.sqrt(expected) + 1)
        assert fidelity(relative_amplitudes_from_counts(recs, 3), p) > 0.9999

    def test_accidentals(self, rng):
        recs = synth_coincidences(random_state(rng), 1e3, 100.0, [1, 1, 1], accidental_rate=50.0, seed=1)
        assert all(r.accidentals > 0 for r in recs)


class TestPhaseSetAndFiles:
    def test_phase_set_json_round_trip(self):
        theta = np.array([[0.5, 1.0], [np.nan, 4.0]])
        ps = PhaseSet(theta, np.full((2, 2), 0.01))
        assert ps.theta[0, 0] == 0.0
        assert ps.theta[1, 1] == pytest.approx(4.0 - 2 * np.pi)
        doc = json.loads(json.dumps(ps.to_json()))
        assert doc["theta"][1][0] is None
        back = PhaseSet.from_json(doc)
        assert np.array_equal(np.isnan(back.theta), np.isnan(ps.theta))
        assert not back.complete

    def test_reconstruct_requires_complete(self):
        ps = PhaseSet(np.array([[0.0, np.nan]]), np.zeros((1, 2)))
        with pytest.raises(DegenerateConfigurationError):
            reconstruct_state(np.ones((1, 2)), ps)

    def test_trace_files(self, tmp_path, rng):
        tr = synthesize_traces(random_state(rng), (1, 2), F, 10 / F, 50 * F, seed=2)
        for trace in tr[:3]:
            write_trace(tmp_path / trace_filename((1, 2), trace.kind), trace)
        text = (tmp_path / "trace_s2_i3_sfg.csv").read_text().splitlines()
        assert text[0].startswith("# f_hz=") and text[2] == "time_s,value"
        back = read_trace(tmp_path / "trace_s2_i3_sfg.csv")
        assert back.f == F and np.array_equal(back.value, tr.sfg.value)
        triples = read_trace_dir(tmp_path)
        assert list(triples) == [(1, 2)]

    def test_missing_frequency_header(self, tmp_path):
        path = tmp_path / "t.csv"
        path.write_text("time_s,value\n0,1\n")
        with pytest.raises(ValueError):
            read_trace(path)


@settings(max_examples=25, deadline=None)
@given(st.floats(-3.1, 3.1), st.floats(-3.1, 3.1), st.floats(-3.1, 3.1))
def test_gauge_reduced_reference_is_zero(a, b, c):
    psi = np.exp(1j * np.array([[a, b], [c, a + b]]))
    out = gauge_reduced_phases(psi, [0.0, 0.3], [0.0, -0.2])
    assert out[0, 0] == 0.0
    assert np.all(out > -np.pi) and np.all(out <= np.pi)
