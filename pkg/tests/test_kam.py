import numpy as np
import pytest

from mjspectra.errors import (GridTooCoarse, ImplicitSolveFailed,
                              NondegeneracyViolated, ProfileNotMonotone)
from mjspectra.kam import (DiophantineParams, FrequencyMap, KamMask,
                           isoenergetic_det, kam_mask, rotation_profile,
                           stable_dimension_estimate)


def quad_map():
    return FrequencyMap.from_hamiltonian(
        lambda I: 0.5 * np.sum(np.asarray(I) ** 2, axis=-1),
        grad=lambda I: I)


# --- isoenergetic determinant ----------------------------------------------

def test_bordered_determinant_quadratic_profile():
    fm = quad_map()
    for I in ([0.3, 1.1], [1.0, 0.0], [-0.7, 0.4]):
        want = -(I[0] ** 2 + I[1] ** 2)  # det [[1,0,I1],[0,1,I2],[I1,I2,0]]
        assert abs(isoenergetic_det(fm, I) - want) < 1e-8


def test_bordered_determinant_linear_profile_degenerate():
    fm = FrequencyMap.from_hamiltonian(
        lambda I: 0.7 * np.asarray(I)[..., 0] + 1.3 * np.asarray(I)[..., 1])
    assert abs(isoenergetic_det(fm, [0.2, 0.5])) < 1e-8


def test_bordered_determinant_mixed_profile():
    fm = FrequencyMap.from_hamiltonian(
        lambda I: 0.5 * np.asarray(I)[..., 0] ** 2 + np.asarray(I)[..., 1])
    # omega = (I1, 1), jacobian [[1,0],[0,0]]: det [[1,0,I1],[0,0,1],[I1,1,0]] = -1
    for I in ([0.0, 0.0], [0.9, 0.3]):
        assert abs(isoenergetic_det(fm, I) - (-1.0)) < 1e-8


def test_tabulated_map_jacobian_and_boundary():
    ax = np.linspace(-1, 1, 21)
    I1, I2 = np.meshgrid(ax, ax, indexing="ij")
    omega = np.stack([I1, I2], axis=-1)
    fm = FrequencyMap.from_table((ax, ax), omega)
    assert abs(isoenergetic_det(fm, [0.3, 0.5]) - (-(0.3**2 + 0.5**2))) < 1e-8
    with pytest.raises(GridTooCoarse):
        fm.jacobian([1.0, 0.0])


# --- rotation profile --------------------------------------------------------

def test_rotation_profile_circle_closed_form():
    prof = rotation_profile(quad_map(), 0.5, [0.0, 1.0], half_width=0.5)
    want_f = np.sqrt(1.0 - prof.mu_grid ** 2) - 1.0
    want_fp = -prof.mu_grid / np.sqrt(1.0 - prof.mu_grid ** 2)
    i0 = len(prof.mu_grid) // 2
    assert prof.f[i0] == 0.0
    assert np.max(np.abs(prof.f - want_f)) < 1e-10
    assert np.max(np.abs(prof.fprime - want_fp)) < 1e-8
    assert abs(prof.fsecond_at_0 + 1.0) < 1e-6


def test_rotation_profile_recenters_onto_surface():
    prof = rotation_profile(quad_map(), 0.5, [0.3, 0.95], half_width=0.3)
    assert abs(prof.center[1] - np.sqrt(1.0 - 0.09)) < 1e-10
    i0 = len(prof.mu_grid) // 2
    assert abs(prof.fprime[i0] - (-0.3 / np.sqrt(0.91))) < 1e-8


def test_rotation_profile_parabola():
    fm = FrequencyMap.from_hamiltonian(
        lambda I: np.asarray(I)[..., 1] + np.asarray(I)[..., 0] ** 2)
    prof = rotation_profile(fm, 0.0, [0.0, 0.0], half_width=0.8)
    assert np.max(np.abs(prof.f + prof.mu_grid ** 2)) < 1e-9
    assert np.max(np.abs(prof.fprime + 2 * prof.mu_grid)) < 1e-7
    assert abs(prof.fsecond_at_0 + 2.0) < 1e-7


def test_rotation_profile_needs_transverse_frequency():
    fm = FrequencyMap.from_hamiltonian(lambda I: np.asarray(I)[..., 0])
    with pytest.raises(ImplicitSolveFailed):
        rotation_profile(fm, 0.0, [0.0, 0.3])


def test_rotation_profile_flags_vanishing_twist():
    fm = FrequencyMap.from_hamiltonian(lambda I: np.asarray(I)[..., 1])
    with pytest.warns(NondegeneracyViolated):
        prof = rotation_profile(fm, 0.0, [0.0, 0.0])
    assert abs(prof.fsecond_at_0) < 1e-10


# --- Diophantine masks ------------------------------------------------------------

def linear_profile(n=401, span=(0.0, 1.0), offset=0.0):
    mu = np.linspace(span[0], span[1], n) + offset
    from mjspectra.kam import RotationProfile
    return RotationProfile(mu_grid=mu, f=mu ** 2 / 2, fprime=mu.copy(),
                           fsecond_at_0=1.0)


def scan_reject(rho, dio_c, sigma, q_max):
    for q in range(1, q_max + 1):
        width = dio_c / q ** sigma
        for p in range(-q_max, 2 * q_max + 1):
            if abs(rho - p / q) < width:
                return True
    return False


def test_mask_matches_independent_scan():
    prof = linear_profile()
    params = DiophantineParams(dio_c=0.01, sigma=2.5, q_max=50)
    mask = kam_mask(prof, params)
    want = np.array([not scan_reject(r, 0.01, 2.5, 50) for r in prof.fprime])
    assert np.array_equal(mask.accepted, want)
    i_half = np.argmin(np.abs(prof.mu_grid - 0.5))
    assert not mask.accepted[i_half]
    i_gold = np.argmin(np.abs(prof.mu_grid - (np.sqrt(5) - 1) / 2))
    assert mask.accepted[i_gold]


def test_mask_complement_measure_bounds():
    # generic (irrational-offset) grid: exact rational nodes would make the
    # point count over-report the measure-zero coincidences
    prof = linear_profile(offset=np.sqrt(2) * 3e-4)
    params = DiophantineParams(dio_c=0.01, sigma=2.5, q_max=50)
    mask = kam_mask(prof, params)
    n = len(prof.mu_grid)
    grid_fraction = np.count_nonzero(~mask.accepted) / n
    assert mask.complement_measure >= grid_fraction * mask.span * (1 - 2 / n)
    # union of strips is at most 2c * sum_q (q+1) q^-sigma on a unit window
    qs = np.arange(1, 51)
    assert mask.complement_measure <= 2 * 0.01 * np.sum((qs + 1.0) * qs ** -2.5)


def test_mask_vanishing_constant_accepts_everything():
    mu = np.linspace(0, 1, 101) + np.sqrt(2) * 1e-3
    from mjspectra.kam import RotationProfile
    prof = RotationProfile(mu_grid=mu, f=mu ** 2 / 2, fprime=mu.copy(),
                           fsecond_at_0=1.0)
    mask = kam_mask(prof, DiophantineParams(dio_c=1e-12, sigma=2.5, q_max=50))
    assert mask.accepted.all()
    assert mask.complement_measure < 1e-9


def test_mask_complement_is_order_dio_c():
    prof = linear_profile(801)
    ratios = []
    for c in (0.02, 0.01, 0.005, 0.0025):
        mask = kam_mask(prof, DiophantineParams(dio_c=c, sigma=2.5, q_max=50))
        ratios.append(mask.complement_measure / c)
    assert max(ratios) / min(ratios) <= 3.0


def test_mask_monotone_in_dio_c():
    prof = linear_profile()
    big = kam_mask(prof, DiophantineParams(dio_c=0.02, sigma=2.5, q_max=50))
    small = kam_mask(prof, DiophantineParams(dio_c=0.005, sigma=2.5, q_max=50))
    assert np.all(small.accepted | ~big.accepted)  # accepted(big c) subset


def test_mask_measure_stable_under_grid_refinement():
    params = DiophantineParams(dio_c=0.01, sigma=2.5, q_max=50)
    m1 = kam_mask(linear_profile(401), params)
    m2 = kam_mask(linear_profile(801), params)
    assert abs(m1.complement_measure - m2.complement_measure) \
        <= 0.05 * m1.complement_measure


def test_mask_requires_monotone_slope_for_pullback():
    from mjspectra.kam import RotationProfile
    mu = np.linspace(0, 2, 301)
    prof = RotationProfile(mu_grid=mu, f=np.zeros_like(mu),
                           fprime=np.sin(3 * mu), fsecond_at_0=1.0)
    with pytest.raises(ProfileNotMonotone) as info:
        kam_mask(prof, DiophantineParams(dio_c=0.01, sigma=2.5, q_max=30))
    mask = info.value.mask
    assert isinstance(mask, KamMask)
    assert mask.measure_method == "grid-count"
    assert mask.accepted.shape == mu.shape
    assert mask.complement_measure > 0


def test_params_validation():
    with pytest.raises(ValueError):
        DiophantineParams(dio_c=-1.0)
    with pytest.raises(ValueError):
        DiophantineParams(dio_c=0.1, sigma=0.5)
    with pytest.raises(ValueError):
        DiophantineParams(dio_c=0.1, q_max=4)


# --- stable dimension -------------------------------------------------------

def test_stable_dimension_estimate_scaling():
    prof = linear_profile()
    mask = kam_mask(prof, DiophantineParams(dio_c=0.01, sigma=2.5, q_max=50))
    est = stable_dimension_estimate(mask, 0.01, 0.5)
    assert est == pytest.approx(0.01 ** (-1.5) * mask.accepted_measure)
    assert stable_dimension_estimate(mask, 0.005, 0.5) \
        == pytest.approx(est * 2 ** 1.5)
    empty = KamMask(mask.params, mask.mu_grid,
                    np.zeros_like(mask.accepted), mask.span, mask.fprime,
                    mask.nearest_p, mask.nearest_q, mask.resonance_distance)
    assert stable_dimension_estimate(empty, 0.01, 0.5) == 0.0
    with pytest.raises(ValueError):
        stable_dimension_estimate(mask, 0.01, 1.5)


def test_mask_csv_export(tmp_path):
    prof = linear_profile(51)
    mask = kam_mask(prof, DiophantineParams(dio_c=0.01, sigma=2.5, q_max=20))
    path = tmp_path / "mask.csv"
    mask.to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0].split(",") == ["mu", "fprime", "accepted",
                                   "nearest_resonance_p", "q", "distance"]
    assert len(lines) == 52
