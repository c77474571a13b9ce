"""Smoke test for the eyewitness_py extension module.

Build and install with `maturin develop --release -m crates/python/Cargo.toml`,
or copy target/release/libeyewitness_py.so to eyewitness_py.so on PYTHONPATH.
"""

import math

import eyewitness_py as ew


def close(a, b, tol):
    return abs(a - b) <= tol * max(1.0, abs(b))


def main():
    eye = ew.DetectorModel()
    assert (eye.theta, eye.eta) == (7, 0.08), eye
    assert eye.click_prob_fock(6) == 0.0
    assert 0.0 < eye.click_prob_fock(100) < 1.0

    amp = ew.displaced_fock_amplitude(3, 0, complex(0.5, 0.0))
    expected = math.exp(-0.125) * 0.5**3 / math.sqrt(6.0)
    assert close(amp.real, expected, 1e-12) and abs(amp.imag) < 1e-15, amp

    probs = ew.plus_state_number_distribution(complex(2.0, 0.0))
    assert close(sum(probs), 1.0, 1e-10)

    ps1, ps2, pc = ew.plus_state_stats(11.0, eye)
    assert ew.g2(ps1, ps2, pc) < 1.0
    assert ew.witness_difference(ps1, ps2, pc) < 0.0

    p_click, fidelity, root_fidelity = ew.prepare()
    assert close(p_click, 0.0111, 0.01), p_click
    assert close(root_fidelity, 0.95, 0.01), root_fidelity
    assert close(root_fidelity**2, fidelity, 1e-12)

    ps, pc = ew.chain_cell()
    assert close(ps, 0.266, 0.01) and close(pc, 0.0697, 0.01), (ps, pc)

    assert ew.simulate_counts(ps, pc, 10000, 7) == ew.simulate_counts(ps, pc, 10000, 7)
    assert ew.multinomial_log_pmf(1, 0, 1, 0.3, 0.05) == math.log(0.25)

    plan = ew.CertificationPlan(ps, pc, a=40.0, epsilon=0.01)
    b, c, d, phi = plan.coefficients
    assert d == -1.0 and b > 0.0 and c > 0.0
    chi0, pvalue = plan.critical_chi0(350000)
    assert pvalue <= 0.01 and close(pvalue, 0.01, 0.01), pvalue
    p_stop = plan.p_stop(350000, chi0)
    assert 0.4 < p_stop < 0.6, p_stop

    assert "[statistics]" in ew.normalize_config("[eye]\ntheta = 3\n")
    try:
        ew.normalize_config("[eye]\neta = 1.5\n")
    except ValueError as e:
        assert "eta" in str(e)
    else:
        raise AssertionError("invalid config accepted")

    print(f"ok: chi0(350000) = {chi0:.6g}, P_stop = {p_stop:.4f}")


if __name__ == "__main__":
    main()
