"""Ground-truth reference, face selection, and detection metrics."""

import csv

import numpy as np
import pytest

from meshfusion.mesh import TriMesh, add_spherical_defect, generate_tablet
from meshfusion.evaluation import (
    EvalReport,
    SelectionMask,
    chi2_band,
    error_stats,
    export_error_map,
    flag_defects,
    normalized_error_sq,
    reference_state,
    rmse,
    selection_mask,
)
from meshfusion.raycast import build_bvh

from oracles import tablet_border_count


DEFECT_R = 0.005


@pytest.fixture(scope="module")
def fine_pair():
    """1 mm nominal tablet and its 5 mm-hemisphere defective twin."""
    nominal = generate_tablet(0.06, 0.06, 0.001)
    defective = add_spherical_defect(nominal, (0.0, 0.0), DEFECT_R)
    return nominal, defective, build_bvh(defective)


def full_mask(n_f):
    return SelectionMask(np.ones(n_f, dtype=bool), n_f)


def two_face_mask(n_f, i, j):
    m = np.zeros(n_f, dtype=bool)
    m[[i, j]] = True
    return SelectionMask(m, 2)


# --- reference state ------------------------------------------------------------

def test_identical_meshes_have_zero_reference(tablet_small):
    bvh = build_bvh(tablet_small)
    x, hit = reference_state(tablet_small, tablet_small, bvh)
    assert hit.all()
    assert np.abs(x).max() < 1e-12


def test_uniform_lift_reads_as_the_lift(tablet_small):
    h = 0.003
    lifted = TriMesh(tablet_small.vertices + [0.0, 0.0, h], tablet_small.faces)
    x, hit = reference_state(tablet_small, lifted, build_bvh(lifted))
    assert hit.all()
    np.testing.assert_allclose(x, h, atol=1e-12)


def test_hemisphere_center_matches_the_cap_formula(fine_pair):
    nominal, defective, bvh_def = fine_pair
    x, hit = reference_state(nominal, defective, bvh_def)
    assert hit.all()
    cen = nominal.face_centroids
    rho = np.hypot(cen[:, 0], cen[:, 1])
    center_face = int(np.argmin(rho))
    expected = np.sqrt(DEFECT_R**2 - rho[center_face] ** 2)
    # linear interpolation across 1 mm faces bows below the sphere
    assert abs(x[center_face] - expected) < 1e-4
    assert x[center_face] > 0.0045
    # every face clear of the defect circle is untouched
    outside = rho > DEFECT_R + 0.002
    assert np.abs(x[outside]).max() < 1e-12
    inside = rho < DEFECT_R - 0.002
    assert np.all(x[inside] > 0)


def test_inward_defect_reads_negative(tablet_small):
    dented = add_spherical_defect(tablet_small, (0.0, 0.0), 0.008, protrusion="inward")
    x, _ = reference_state(tablet_small, dented, build_bvh(dented))
    assert x.min() < -0.001
    assert x.max() <= 1e-12  # a dent never reads outward


def test_missed_probes_report_no_hit(tablet_small):
    far = TriMesh([[10.0, 0, 0], [11.0, 0, 0], [10.0, 1.0, 0]], [[0, 1, 2]])
    x, hit = reference_state(tablet_small, far, build_bvh(far))
    assert not hit.any()
    np.testing.assert_array_equal(x, 0.0)


def test_reference_rejects_empty_meshes(tablet_small):
    empty = TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int))
    with pytest.raises(ValueError):
        reference_state(empty, tablet_small, build_bvh(tablet_small))


# --- selection ------------------------------------------------------------

def test_all_hit_no_border_selects_everything(tablet):
    mask = selection_mask(tablet, np.ones(tablet.n_f), 0.0)
    assert mask.n_selected == tablet.n_f
    assert mask.included.all()


def test_no_hits_selects_nothing(tablet):
    mask = selection_mask(tablet, np.zeros(tablet.n_f), 0.0)
    assert mask.n_selected == 0


def test_border_band_matches_the_counting_oracle(tablet):
    mask = selection_mask(tablet, np.ones(tablet.n_f), 0.006)
    assert mask.n_selected == tablet_border_count(0.16, 0.10, 0.005, 0.006)
    # and matches direct coordinate arithmetic on the inner rectangle
    vx, vy = tablet.vertices[:, 0], tablet.vertices[:, 1]
    clear = (np.abs(vx) <= 0.08 - 0.006 + 1e-12) & (np.abs(vy) <= 0.05 - 0.006 + 1e-12)
    np.testing.assert_array_equal(mask.included, clear[tablet.faces].all(axis=1))


def test_selection_shrinks_with_border(tablet):
    m2 = selection_mask(tablet, np.ones(tablet.n_f), 0.002)
    m12 = selection_mask(tablet, np.ones(tablet.n_f), 0.012)
    assert 0 < m12.n_selected < m2.n_selected <= tablet.n_f
    assert np.all(m2.included[m12.included])


def test_unhit_faces_are_never_selected(tablet):
    counts = np.zeros(tablet.n_f)
    counts[::3] = 2
    mask = selection_mask(tablet, counts, 0.0)
    np.testing.assert_array_equal(mask.included, counts > 0)


def test_selection_validates_lengths(tablet):
    with pytest.raises(ValueError):
        selection_mask(tablet, np.ones(tablet.n_f - 1), 0.006)
    with pytest.raises(ValueError):
        SelectionMask(np.ones(4, dtype=bool), 3)


# --- error metrics ------------------------------------------------------------

def test_rmse_of_exact_estimate_is_zero():
    x = np.array([0.001, -0.002, 0.0005])
    assert rmse(x, x, full_mask(3)) == 0.0


def test_rmse_two_face_arithmetic():
    x_hat = np.array([0.003, 0.004, 99.0])
    x_ref = np.zeros(3)
    value = rmse(x_hat, x_ref, two_face_mask(3, 0, 1))
    assert abs(value - 0.005 / np.sqrt(2)) < 1e-15


def test_prior_only_rmse_recomputes_from_reference(fine_pair):
    nominal, _, bvh_def = fine_pair
    x_ref, hit = reference_state(nominal, fine_pair[1], bvh_def)
    mask = selection_mask(nominal, hit.astype(int), 0.004)
    zero = np.zeros(nominal.n_f)
    expected = np.sqrt(np.sum(x_ref[mask.included] ** 2) / mask.n_selected)
    assert abs(rmse(zero, x_ref, mask) - expected) < 1e-15


def test_rmse_is_permutation_invariant():
    rng = np.random.default_rng(40)
    x_hat = rng.standard_normal(20)
    x_ref = rng.standard_normal(20)
    inc = rng.random(20) < 0.6
    mask = SelectionMask(inc, int(inc.sum()))
    perm = rng.permutation(20)
    permuted = SelectionMask(inc[perm], int(inc.sum()))
    a = rmse(x_hat, x_ref, mask)
    b = rmse(x_hat[perm], x_ref[perm], permuted)
    assert abs(a - b) < 1e-15


def test_empty_selection_raises():
    mask = SelectionMask(np.zeros(3, dtype=bool), 0)
    with pytest.raises(ValueError, match="empty selection"):
        rmse(np.zeros(3), np.zeros(3), mask)
    with pytest.raises(ValueError, match="empty selection"):
        error_stats(np.zeros(3), np.zeros(3), mask, np.ones(3))


def test_error_stats_zero_and_constant_cases():
    p = np.full(3, 4e-6)
    mean, std, post = error_stats(np.zeros(3), np.zeros(3), full_mask(3), p)
    assert mean == 0.0 and std == 0.0
    assert abs(post - 0.002) < 1e-15
    mean, std, _ = error_stats(np.full(3, 0.001), np.zeros(3), full_mask(3), p)
    assert abs(mean - 0.001) < 1e-15
    assert std == 0.0


def test_error_stats_recompute_from_exported_csv(tmp_path, tablet_small):
    rng = np.random.default_rng(41)
    x_hat = 0.001 * rng.standard_normal(tablet_small.n_f)
    x_ref = 0.001 * rng.standard_normal(tablet_small.n_f)
    p = rng.uniform(1e-8, 1e-6, tablet_small.n_f)
    mask = selection_mask(tablet_small, np.ones(tablet_small.n_f), 0.005)
    csv_path = tmp_path / "errors.csv"
    export_error_map(tablet_small, x_hat - x_ref, csv_path)
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    e = np.abs([float(r["value"]) for r in rows])[mask.included]
    mean, std, _ = error_stats(x_hat, x_ref, mask, p)
    assert abs(mean - e.mean()) < 1e-15
    assert abs(std - e.std()) < 1e-15


# --- defect flags ------------------------------------------------------------

def test_no_flags_for_zero_estimate():
    assert not flag_defects(np.zeros(5), np.full(5, 1e-8), 0.001, 3.0).any()


def test_no_flags_for_infinite_threshold():
    assert not flag_defects(np.full(5, 0.01), np.full(5, 1e-10), np.inf, 3.0).any()


def test_zero_thresholds_flag_exactly_the_nonzero_faces():
    x = np.array([0.0, 1e-9, -0.004, 0.0, 0.002])
    flags = flag_defects(x, np.full(5, 1e-8), 0.0, 0.0)
    np.testing.assert_array_equal(flags, x != 0.0)


def test_collapsed_variance_counts_as_significant():
    flags = flag_defects(np.array([0.002]), np.array([0.0]), 0.001, 3.0)
    assert flags[0]


def test_insignificant_magnitude_is_vetoed():
    # big estimate, bigger posterior: |x|/sqrt(P) = 0.5 < 3
    flags = flag_defects(np.array([0.004]), np.array([6.4e-5]), 0.001, 3.0)
    assert not flags[0]


# --- consistency ------------------------------------------------------------

def test_normalized_error_hand_value():
    x_hat = np.array([1.0, 2.0, 7.0])
    x_ref = np.zeros(3)
    p = np.array([1.0, 4.0, 1.0])
    nes = normalized_error_sq(x_hat, x_ref, p, two_face_mask(3, 0, 1))
    assert abs(nes - 2.0) < 1e-15


def test_chi2_band_brackets_the_dof():
    lo, hi = chi2_band(100)
    assert 0 < lo < 100 < hi
    lo2, hi2 = chi2_band(100, 0.05, 0.95)
    assert lo < lo2 < hi2 < hi


def test_consistent_errors_land_in_the_band():
    rng = np.random.default_rng(42)
    n = 400
    p = rng.uniform(0.5, 2.0, n)
    e = rng.standard_normal(n) * np.sqrt(p)
    nes = normalized_error_sq(e, np.zeros(n), p, full_mask(n))
    lo, hi = chi2_band(n)
    assert lo < nes < hi


# --- export ------------------------------------------------------------

def test_csv_round_trips_values_exactly(tmp_path, fan_mesh):
    values = np.array([0.0012345678901234567, -3e-5, 0.0])
    path = tmp_path / "map.csv"
    export_error_map(fan_mesh, values, path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["face_index", "cx", "cy", "cz", "value"]
    assert len(rows) == fan_mesh.n_f + 1
    got = np.array([float(r[4]) for r in rows[1:]])
    np.testing.assert_array_equal(got, values)
    cen = np.array([[float(r[1]), float(r[2]), float(r[3])] for r in rows[1:]])
    np.testing.assert_array_equal(cen, fan_mesh.face_centroids)


def test_ply_export_colors_the_extremes(tmp_path, fan_mesh):
    v = 0.002
    path_csv = tmp_path / "map.csv"
    path_ply = tmp_path / "map.ply"
    export_error_map(fan_mesh, np.array([-v, 0.0, v]), path_csv, path_ply)
    lines = path_ply.read_text().splitlines()
    assert lines[0] == "ply"
    assert f"element vertex {fan_mesh.n_v}" in lines
    assert f"element face {fan_mesh.n_f}" in lines
    faces = lines[-3:]
    assert faces[0].endswith("0 0 255")       # most negative: blue
    assert faces[1].endswith("255 255 255")   # zero: white
    assert faces[2].endswith("255 0 0")       # most positive: red


def test_export_validates_length(tmp_path, fan_mesh):
    with pytest.raises(ValueError):
        export_error_map(fan_mesh, np.zeros(2), tmp_path / "bad.csv")


# --- report ------------------------------------------------------------

def test_eval_report_round_trips(tmp_path):
    rep = EvalReport(
        rmse_trace=[0.004, 0.002, 0.001],
        final_rmse=0.001,
        abs_error_mean=0.0008,
        abs_error_std=0.0005,
        posterior_std_mean=0.0004,
        per_face_error=np.array([0.001, -0.002]),
        flags=np.array([False, True]),
        included=np.array([True, True]),
        n_selected=2,
        normalized_error_sq=1.7,
        config={"master_seed": 3},
        diagnostics={"chi2_band": [0.1, 9.2]},
    )
    path = tmp_path / "report.json"
    rep.save(path)
    back = EvalReport.load(path)
    assert back.rmse_trace == rep.rmse_trace
    assert back.final_rmse == rep.final_rmse
    np.testing.assert_array_equal(back.per_face_error, rep.per_face_error)
    np.testing.assert_array_equal(back.flags, rep.flags)
    assert back.config == {"master_seed": 3}
    assert back.diagnostics == {"chi2_band": [0.1, 9.2]}
