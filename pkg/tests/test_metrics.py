import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dexfit.camera import CameraView, project_points
from dexfit.energy import AnnotationSet
from dexfit.metrics import (MODES, joint_errors, mpjpe, pck_auc, pck_thresholds, report_csv,
                            reprojection_error, similarity_fit)
from dexfit.models import rotation_matrix


def random_joints(rng):
    return rng.normal(0, 0.05, size=(21, 3)) * 1000  # mm


def random_similarity(rng):
    return rng.uniform(0.5, 2.0), rotation_matrix(rng.normal(size=3)), rng.normal(0, 100, 3)


@pytest.mark.parametrize("mode", MODES)
def test_identical_is_zero(mode, rng):
    gt = random_joints(rng)
    assert mpjpe(gt, gt, mode) == pytest.approx(0.0, abs=1e-9)


def test_constant_offset(rng):
    gt = random_joints(rng)
    off = np.array([3.0, -4.0, 12.0])
    assert mpjpe(gt + off, gt, "root_relative") == pytest.approx(0.0, abs=1e-12)
    assert mpjpe(gt + off, gt, "absolute") == pytest.approx(13.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_procrustes_removes_similarity(seed):
    rng = np.random.default_rng(seed)
    gt = random_joints(rng)
    s, R, t = random_similarity(rng)
    assert mpjpe(s * gt @ R.T + t, gt, "procrustes") <= 1e-9


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_procrustes_invariant_to_similarity_of_pred(seed):
    rng = np.random.default_rng(seed)
    gt = random_joints(rng)
    pred = gt + rng.normal(0, 8, gt.shape)
    s, R, t = random_similarity(rng)
    assert mpjpe(s * pred @ R.T + t, gt, "procrustes") == pytest.approx(
        mpjpe(pred, gt, "procrustes"), rel=1e-9, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_mode_ordering(seed):
    rng = np.random.default_rng(seed)
    gt = random_joints(rng)
    pred = gt + rng.normal(0, 10, gt.shape) + rng.normal(0, 20, 3)
    root_shift = np.linalg.norm(pred[0] - gt[0])
    # the similarity fit minimises squared error, so the ordering is exact in that norm
    sq = {m: np.sum(joint_errors(pred, gt, m) ** 2) for m in MODES}
    assert sq["procrustes"] <= sq["root_relative"] * (1 + 1e-12)
    assert mpjpe(pred, gt, "root_relative") <= mpjpe(pred, gt, "absolute") + root_shift + 1e-9


def test_mean_error_ordering_can_invert(rng):
    # one outlier joint: root alignment is exact on 20 joints, the fit spreads the error
    gt = random_joints(rng)
    pred = gt.copy()
    pred[10] += [200.0, 0.0, 0.0]
    assert mpjpe(pred, gt, "procrustes") > mpjpe(pred, gt, "root_relative")


def test_similarity_fit_recovers_transform(rng):
    src = random_joints(rng)
    s, R, t = random_similarity(rng)
    fit = similarity_fit(src, s * src @ R.T + t)
    assert fit.scale == pytest.approx(s)
    assert np.allclose(fit.rotation, R) and np.allclose(fit.translation, t)


def test_reflection_not_used(rng):
    src = random_joints(rng)
    mirrored = src * [-1, 1, 1]
    fit = similarity_fit(src, mirrored)
    assert np.linalg.det(fit.rotation) == pytest.approx(1.0)


def test_bad_inputs(rng):
    with pytest.raises(ValueError):
        mpjpe(np.zeros((20, 3)), np.zeros((20, 3)))
    with pytest.raises(ValueError):
        mpjpe(np.zeros((21, 3)), np.full((21, 3), np.nan))
    with pytest.raises(ValueError):
        joint_errors(np.zeros((21, 3)), np.zeros((21, 3)), "bogus")


# --- PCK ------------------------------------------------------------------------

def test_pck_grid():
    tau = pck_thresholds()
    assert len(tau) == 100 and tau[0] == 0.5 and tau[-1] == 50.0


def test_pck_endpoints():
    assert pck_auc(np.zeros(21)) == 1.0
    assert pck_auc(np.full(21, 50.0)) == 0.0
    assert pck_auc(np.array([50.0, 75.0, 1e4])) == 0.0


def test_pck_at_25mm():
    # thresholds above 25 mm are k = 51..100 of tau_k = 0.5 k
    expected = np.sum(pck_thresholds() > 25.0) / 100
    assert expected == 0.5
    assert pck_auc(np.full(10, 25.0)) == expected


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 80, allow_nan=False), min_size=1, max_size=30),
       st.integers(0, 29), st.floats(0, 30))
def test_pck_monotone(errors, i, bump):
    e = np.array(errors)
    worse = e.copy()
    worse[i % len(e)] += bump
    assert pck_auc(worse) <= pck_auc(e)


def test_pck_rejects_empty_and_negative():
    with pytest.raises(ValueError):
        pck_auc([])
    with pytest.raises(ValueError):
        pck_auc([-1.0])


# --- reprojection -------------------------------------------------------------

def setup_views():
    views = [CameraView(300.0, 300.0, 80.0, 60.0, 160, 120, np.eye(3), [0.0, 0.0, 0.5 + 0.1 * c])
             for c in range(3)]
    joints = np.random.default_rng(0).normal(0, 0.02, (21, 3))
    ann = AnnotationSet.empty(3, 1, 0)
    for c, v in enumerate(views):
        ann.hand_uv[c, 0] = project_points(v, joints)
        ann.hand_vis[c, 0] = True
    return views, joints, ann


def test_exact_reprojection_is_zero():
    views, joints, ann = setup_views()
    res = reprojection_error(joints, ann, views)
    assert all(r.mean == pytest.approx(0.0, abs=1e-9) and r.count == 3 for r in res)


def test_single_offset_joint():
    views, joints, ann = setup_views()
    ann.hand_uv[1, 0, 8, 0] += 3.0
    r = reprojection_error(joints, ann, views)[8]
    assert r.mean == pytest.approx(3.0 / 3)
    assert r.std == pytest.approx(np.std([0.0, 3.0, 0.0]))


def test_absent_joint_marker():
    views, joints, ann = setup_views()
    ann.hand_vis[:, 0, 4] = False
    r = reprojection_error(joints, ann, views)[4]
    assert r.mean is None and r.std is None and r.count == 0


def test_report_csv():
    text = report_csv([("0", "absolute", 1.5), ("all", "pck_auc", 0.25)])
    assert text.splitlines() == ["sample,mode,value", "0,absolute,1.5", "all,pck_auc,0.25"]
