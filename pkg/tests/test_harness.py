import json
import math

import numpy as np
import pytest

from walkpolymer import harness as H
from walkpolymer.errors import CapabilityError, DomainError
from walkpolymer.testfunctions import Bump, standard_bump, unit_bump, zero_function

# variance of the standard-bump pairing at lam = 1, frozen from the adaptive-quadrature route
NOISE_REFERENCE = 0.0012096678799509


def test_kendall_tau():
    assert H.kendall_tau([3, 2, 1]) == -1.0
    assert H.kendall_tau([1, 2, 3]) == 1.0
    assert H.kendall_tau([1, 1, 1]) == 0.0
    with pytest.raises(DomainError):
        H.kendall_tau([1, 2])


def test_weight():
    assert H.weight((0, 0), 0.5) == 1.0
    assert H.weight((4.0, -1.0), 1.0) == pytest.approx(4.0)


def test_norm_spec_validation():
    assert H.NormSpec().scales == [1.0, 0.5, 0.25, 0.125, 0.0625]
    with pytest.raises(DomainError):
        H.NormSpec(alpha=0.1)
    with pytest.raises(DomainError):
        H.NormSpec(alpha=-1.5, r0=1)
    with pytest.raises(DomainError):
        H.NormSpec(kappa=-1)


def test_noise_reference_two_routes():
    phi = standard_bump()
    a = H.noise_variance_reference(phi, 1.0)
    b = H.noise_variance_quad(phi, 1.0)
    assert a == pytest.approx(b, rel=1e-9)
    assert a == pytest.approx(NOISE_REFERENCE, rel=1e-9)
    assert H.noise_variance_reference(phi, 2.5) == pytest.approx(2.5 * a, rel=1e-12)
    with pytest.raises(CapabilityError):
        H.noise_variance_reference(zero_function(), 1.0)


def test_noise_reference_scales_with_amplitude():
    phi = standard_bump()
    doubled = Bump(2 * phi.amplitude, phi.t_center, phi.x_center, phi.t_half, phi.x_half)
    assert H.noise_variance_reference(doubled, 1.0) == pytest.approx(4 * NOISE_REFERENCE, rel=1e-9)


def test_noise_zero_function():
    rep = H.noise_convergence(zero_function(), [0.2, 0.1, 0.05], 1.0, 100, 1)
    assert rep.verdict == H.PASS
    assert all(r["variance"] == 0.0 for r in rep.tables["per_eps"])


def test_noise_convergence_small():
    rep = H.noise_convergence(standard_bump(), [0.2, 0.1, 0.05], 1.0, 3000, 1)
    last = rep.tables["per_eps"][-1]
    assert abs(last["variance"] - NOISE_REFERENCE) <= 0.05 * NOISE_REFERENCE + 3 * last["variance_se"]
    assert rep.trends["kurtosis_tau"] == -1.0
    with pytest.raises(DomainError):
        H.noise_convergence(standard_bump(), [0.1, 0.2, 0.05], 1.0, 10, 1)


def test_moment_scaling_constant_field_flat():
    rep = H.moment_scaling(1, [1, 0.5, 0.25, 0.125], 0.01, 1.0, 10, 1, constant_field=True)
    assert rep.trends["slope"] == pytest.approx(0.0, abs=1e-4)


def test_moment_scaling_second_moment():
    rep = H.moment_scaling(1, [1, 0.5, 0.25], 0.1, 1.0, 2000, 1)
    assert -1.15 <= rep.trends["slope"] <= 0
    assert rep.verdict == H.PASS


def test_moment_scaling_rejects():
    with pytest.raises(DomainError):
        H.moment_scaling(1, [1, 0.5, 0.05], 0.1, 1.0, 10, 1)
    with pytest.raises(DomainError):
        H.moment_scaling(3, [1, 0.5, 0.25], 0.1, 1.0, 10, 1)


def test_besov_zero_field():
    assert H.besov_norm_estimate(0.0, H.NormSpec(m_max=3), eps=0.05) == 0.0


def test_besov_constant_field_argmax():
    # the pairing with a constant field does not depend on ell, so ell^{-alpha} puts the sup at ell = 1
    val, arg = H.besov_norm_estimate(1.0, H.NormSpec(m_max=3), eps=0.01, return_argmax=True)
    assert arg["ell"] == 1.0
    eps = 0.01
    assert val == pytest.approx(unit_bump().integral() / math.sqrt(eps), rel=1e-6)


def test_besov_monotone_in_family():
    from walkpolymer.environment import EnvironmentConfig, sample_environment
    eps = 0.1
    env = sample_environment(EnvironmentConfig(1.0, 21, 2.0 / eps**2), 4)
    small = H.besov_norm_estimate(env, H.NormSpec(m_max=1, density=1), eps)
    more_scales = H.besov_norm_estimate(env, H.NormSpec(m_max=3, density=1), eps)
    assert more_scales >= small
    denser = H.besov_norm_estimate(env, H.NormSpec(m_max=1, density=2), eps)
    assert denser >= small


def test_norm_experiment_growth_order():
    rep = H.norm_experiment([0.2, 0.1, 0.05], 1.0, 3)
    t = rep.trends
    assert t["growth_alpha_-0.3"] > t["growth_alpha_-0.55"]


def test_tail_zero_beta():
    rep = H.tail_experiment([1, 2], [0.2, 0.1], 0.0, 1.0, 5, 1)
    assert all(r["tail"] == 0.0 for r in rep.tables["tail"])
    assert rep.verdict == H.PASS


def test_tail_small():
    rep = H.tail_experiment([1, 2, 3], [0.2, 0.1], 0.3, 1.0, 40, 1, polymers=64)
    rows = rep.tables["tail"]
    assert all(r["tail"] > 0 for r in rows)
    assert all(rep.trends["decreasing_in_m"].values())
    with pytest.raises(CapabilityError):
        H.tail_experiment([5], [0.2], 0.3, 1.0, 1, 1)


def test_order1_discrete_approaches_continuum():
    cont = H.order1_variance_continuum(0.3, 1.0)
    gaps = [abs(H.order1_variance_discrete(0.3, 1.0, e) - cont) for e in (0.2, 0.1, 0.05)]
    assert H.kendall_tau(gaps) == -1.0


def test_order1_mc_matches_discrete():
    m, se = H.order1_variance_mc(0.3, 1.0, 0.2, 3000, 2)
    assert abs(m - H.order1_variance_discrete(0.3, 1.0, 0.2)) <= 3 * se


def test_partition_vs_spde_beta_zero():
    rep = H.partition_vs_spde([(0.0, 0.0), (0.5, 0.0)], 0.0, 1.0, [0.2, 0.1, 0.05], 10, seed=1)
    assert all(r["mean"] == 1.0 and r["mean_distance"] == 0.0 for r in rep.tables["per_eps"])
    with pytest.raises(DomainError):
        H.partition_vs_spde([(1.0, 0.0)], 0.3, 1.0, [0.2, 0.1, 0.05], 10)


def test_report_write_roundtrip(tmp_path):
    rep = H.ExperimentReport("demo", {"a": 1}, {"t": [dict(x=0.1, y=np.float64(2.0)), dict(x=0.2, y=3)]},
                             {"tau": -1.0}, H.PASS, ["n"])
    paths = rep.write(tmp_path)
    assert [p.name for p in paths] == ["demo.json", "demo_t.csv"]
    data = json.loads(paths[0].read_text())
    assert data["tables"]["t"][0]["y"] == 2.0
    assert paths[1].read_text().splitlines()[0] == "x,y"


def test_reports_reproducible():
    a = H.tail_experiment([1, 2], [0.2, 0.1], 0.3, 1.0, 5, 9, polymers=16).to_json()
    b = H.tail_experiment([1, 2], [0.2, 0.1], 0.3, 1.0, 5, 9, polymers=16).to_json()
    assert a == b
