import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from dexfit import primitives
from dexfit.grasp_eval import (Grasp, GraspSet, GripperTemplate, HandoverScene, MatchConfig,
                               build_reference_set, candidate_grasps, coverage, curve_to_csv,
                               default_eps_grid, fps_sample, grasp_distance, grasp_match,
                               hand_collision_filter, match_matrix, mesh_collision_mask,
                               precision, precision_coverage_curve, transform_grasps)
from dexfit.models import HandPose, RigidPose

from _oracles import (loop_coverage, loop_precision, min_distance, parity_inside,
                      quat_match, random_grasp_instance)

CFG = MatchConfig()
IDENTITY_Q = np.array([1.0, 0.0, 0.0, 0.0])


def grasps_at(ts, qs=None):
    ts = np.asarray(ts, float).reshape(-1, 3)
    qs = np.tile(IDENTITY_Q, (len(ts), 1)) if qs is None else qs
    return GraspSet(ts, qs)


def random_set(rng, n):
    return GraspSet(rng.uniform(-0.1, 0.1, (n, 3)),
                    Rotation.random(n, random_state=int(rng.integers(2**31))).as_quat(scalar_first=True))


# --- types ----------------------------------------------------------------------

def test_non_unit_quaternion_rejected():
    with pytest.raises(ValueError):
        GraspSet([[0, 0, 0]], [[1.0, 0.1, 0, 0]])


def test_grasp_set_json(tmp_path, rng):
    g = random_set(rng, 5)
    g.save(tmp_path / "g.json")
    back = GraspSet.load(tmp_path / "g.json")
    assert np.array_equal(back.t, g.t) and np.allclose(back.q, g.q, atol=1e-15)


def test_match_config_validation():
    with pytest.raises(ValueError):
        MatchConfig(sigma_t=0.0)
    with pytest.raises(ValueError):
        MatchConfig(sigma_q=np.pi)


# --- matching -------------------------------------------------------------------

def test_match_examples():
    g = Grasp(np.zeros(3), IDENTITY_Q)
    assert grasp_match(g, g, CFG)
    assert grasp_match(g, Grasp(np.zeros(3), -IDENTITY_Q), CFG)
    assert not grasp_match(g, Grasp(np.array([0.06, 0, 0]), IDENTITY_Q), CFG)


def test_orientation_threshold():
    # arccos(|<q, h>|) is half the relative rotation angle
    q_in = Rotation.from_rotvec([0, 0, np.deg2rad(29)]).as_quat(scalar_first=True)
    q_out = Rotation.from_rotvec([0, 0, np.deg2rad(31)]).as_quat(scalar_first=True)
    g = Grasp(np.zeros(3), IDENTITY_Q)
    assert grasp_match(g, Grasp(np.zeros(3), q_in), CFG)
    assert not grasp_match(g, Grasp(np.zeros(3), q_out), CFG)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_match_symmetric_and_sign_invariant(seed):
    rng = np.random.default_rng(seed)
    s = random_set(rng, 2)
    s.t[1] = s.t[0] + rng.normal(0, 0.03, 3)
    g, h = s[0], s[1]
    m = grasp_match(g, h, CFG)
    assert m == grasp_match(h, g, CFG)
    assert m == grasp_match(Grasp(g.t, -g.q), h, CFG) == grasp_match(g, Grasp(h.t, -h.q), CFG)
    assert m == quat_match(g.t, g.q, h.t, h.q, CFG.sigma_t, CFG.sigma_q)


def test_match_matrix_equals_pairwise(rng):
    (ct, cq), (rt, rq) = random_grasp_instance(rng)
    a, b = GraspSet(ct, cq), GraspSet(rt, rq)
    M = match_matrix(a, b, CFG)
    for i, j in itertools.product(range(len(a)), range(len(b))):
        assert M[i, j] == quat_match(ct[i], cq[i], rt[j], rq[j], CFG.sigma_t, CFG.sigma_q)


# --- sampling and transforms ------------------------------------------------------

def test_fps_collinear_endpoints():
    g = grasps_at([[0, 0, 0], [1, 0, 0], [2, 0, 0]])
    chosen = fps_sample(g, 2)
    assert sorted(chosen.t[:, 0].tolist()) == [0.0, 2.0]
    # brute force over all 2-subsets maximising the pairwise distance
    best = max(itertools.combinations(range(3), 2),
               key=lambda s: np.linalg.norm(g.t[s[0]] - g.t[s[1]]))
    assert set(best) == {0, 2}


def test_fps_whole_set_and_seed(rng):
    g = random_set(rng, 12)
    assert fps_sample(g, 1).t.tolist() == [g.t[0].tolist()]
    full = fps_sample(g, 12)
    assert sorted(map(tuple, full.t)) == sorted(map(tuple, g.t))
    with pytest.raises(ValueError):
        fps_sample(g, 13)


def test_fps_greedy_property(rng):
    g = random_set(rng, 40)
    chosen = fps_sample(g, 10)
    for k in range(1, 10):
        prefix = [chosen[i] for i in range(k)]
        mind = np.min([grasp_distance(g, p) for p in prefix], axis=0)
        d_k = min(grasp_distance(chosen[np.array([k])], p)[0] for p in prefix)
        # the k-th pick is a farthest grasp from the chosen prefix
        assert d_k == pytest.approx(mind.max(), abs=1e-12)


def test_fps_deterministic(rng):
    g = random_set(rng, 30)
    assert np.array_equal(fps_sample(g, 8).t, fps_sample(g, 8).t)


def test_transform_examples(rng):
    g = random_set(rng, 6)
    same = transform_grasps(g, RigidPose.identity())
    assert np.allclose(same.t, g.t) and np.allclose(np.abs(np.sum(same.q * g.q, 1)), 1)
    shifted = transform_grasps(g, RigidPose(np.zeros(3), [0.1, 0.2, 0.3]))
    assert np.allclose(shifted.t, g.t + [0.1, 0.2, 0.3]) and np.allclose(shifted.q, g.q)


def test_transform_composition(rng):
    g = random_set(rng, 6)
    A = RigidPose(rng.normal(size=3), rng.normal(size=3))
    B = RigidPose(rng.normal(size=3), rng.normal(size=3))
    two = transform_grasps(transform_grasps(g, A), B)
    one = transform_grasps(g, B.compose(A))
    assert np.allclose(two.t, one.t)
    assert np.allclose(two.rotations(), one.rotations())


# --- collision filters -------------------------------------------------------------

def test_hand_filter_examples():
    tpl = GripperTemplate.parallel_jaw()
    g = grasps_at([[0, 0, 0], [1, 0, 0]])
    cloud = tpl.points[:1] + 0.0
    assert len(hand_collision_filter(g, tpl, cloud, 0.0)) == 2
    assert len(hand_collision_filter(g, tpl, np.empty((0, 3)), 0.05)) == 2
    kept = hand_collision_filter(g, tpl, cloud, 0.01)
    assert kept.t.tolist() == [[1.0, 0.0, 0.0]]


def test_hand_filter_subset_in_order(rng):
    tpl = GripperTemplate.parallel_jaw(spacing=0.02)
    g = random_set(rng, 30)
    cloud = rng.uniform(-0.1, 0.1, (200, 3))
    kept = hand_collision_filter(g, tpl, cloud, 0.02)
    idx = [int(np.flatnonzero((g.t == t).all(axis=1))[0]) for t in kept.t]
    assert idx == sorted(idx)
    # strict inequality against an explicit pairwise distance
    pts = tpl.posed(g)
    d = np.linalg.norm(pts[:, :, None] - cloud[None, None], axis=-1).min(axis=(1, 2))
    assert idx == list(np.flatnonzero(~(d < 0.02)))


def test_reference_set_examples():
    box = primitives.box((0.05, 0.05, 0.05))
    tpl = GripperTemplate([[0.0, 0.0, 0.0]])
    g = grasps_at([[0.0, 0.0, 0.0], [0.3, 0.3, 0.3]])
    ref = build_reference_set(g, RigidPose.identity(), box, None, tpl)
    assert ref.t.tolist() == [[0.3, 0.3, 0.3]]


def test_reference_set_matches_brute_force(small_hand, rng):
    tpl = GripperTemplate.parallel_jaw(spacing=0.015)
    for _ in range(3):
        obj = primitives.random_blob(300, rng, radius=0.04)
        pose = RigidPose(rng.normal(size=3), rng.normal(0, 0.02, 3))
        hand = small_hand.forward(small_hand.zero_pose()).mesh
        hand = hand.with_vertices(hand.vertices + rng.normal(0, 0.03, 3))
        grasps = random_set(rng, 40)
        grasps.t *= 1.5
        ref = build_reference_set(grasps, pose, obj, hand, tpl)
        posed = transform_grasps(grasps, pose)
        posed_obj = obj.with_vertices(pose.apply(obj.vertices))
        expect = []
        for i in range(len(posed)):
            pts = tpl.posed(posed[np.array([i])])[0]
            hit = False
            for mesh in (posed_obj, hand):
                hit |= bool(np.any(min_distance(mesh, pts) <= 1e-4) or np.any(parity_inside(mesh, pts)))
            if not hit:
                expect.append(i)
        assert np.allclose(ref.t, posed.t[expect])


def test_mesh_collision_requires_closed():
    from dexfit.geometry import MeshError, TriMesh
    tri = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    with pytest.raises(MeshError):
        mesh_collision_mask(grasps_at([[0, 0, 0]]), GripperTemplate([[0, 0, 0]]), tri)


# --- scores ---------------------------------------------------------------------

def test_score_examples(rng):
    box = primitives.box((0.02, 0.02, 0.02))
    R = grasps_at([[0.5, 0, 0], [0, 0.5, 0]])
    tpl = GripperTemplate([[0.0, 0.0, 0.0]])
    assert coverage(R, R, CFG, box, None, tpl) == 1.0
    assert precision(R, R, CFG) == 1.0
    assert coverage(GraspSet.empty(), R, CFG, box, None, tpl) == 0.0
    assert precision(GraspSet.empty(), R, CFG) is None
    far = grasps_at([[5, 5, 5]])
    assert precision(far, R, CFG) == 0.0


@pytest.mark.parametrize("seed", range(10))
def test_scores_match_double_loop(seed):
    rng = np.random.default_rng(seed)
    (ct, cq), (rt, rq) = random_grasp_instance(rng)
    chi, ref = GraspSet(ct, cq), GraspSet(rt, rq)
    free = rng.random(len(chi)) < 0.8
    got = coverage(chi, ref, CFG, None, None, chi_free=free)
    assert got == loop_coverage(ct, cq, free, rt, rq, CFG.sigma_t, CFG.sigma_q)
    assert precision(chi, ref, CFG) == loop_precision(ct, cq, rt, rq, CFG.sigma_t, CFG.sigma_q)


def test_coverage_monotone_under_inclusion(rng):
    (ct, cq), (rt, rq) = random_grasp_instance(rng)
    chi, ref = GraspSet(ct, cq), GraspSet(rt, rq)
    free = np.ones(len(chi), bool)
    sub = np.sort(rng.choice(len(chi), size=15, replace=False))
    assert (coverage(chi[sub], ref, CFG, None, None, chi_free=free[sub])
            <= coverage(chi, ref, CFG, None, None, chi_free=free))


# --- curves ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def handover(small_hand):
    rng = np.random.default_rng(4)
    obj = primitives.box((0.05, 0.07, 0.1), subdiv=2)
    tpl = GripperTemplate.parallel_jaw(spacing=0.015)
    grasps = fps_sample(candidate_grasps(obj, rng, 300, tpl), 60)
    pose = RigidPose([0, 0, 0.3], [0.02, 0, 0])
    theta = np.zeros(small_hand.dim)
    theta[3:6] = [-0.11, -0.01, -0.07]
    hand = small_hand.forward(HandPose(theta)).mesh
    return HandoverScene.build(grasps, pose, obj, hand, tpl), pose, hand, tpl


def test_perfect_pose_without_hand_is_flat(handover):
    scene, pose, _, tpl = handover
    curve = precision_coverage_curve(scene, pose, np.empty((0, 3)), tpl)
    assert len(curve) == len(default_eps_grid())
    assert len({p.coverage for p in curve}) == 1
    assert curve[0].coverage > 0.9


def test_coverage_non_increasing(handover):
    scene, pose, hand, tpl = handover
    rng = np.random.default_rng(0)
    cloud = hand.vertices[rng.choice(hand.n_vertices, 150, replace=False)]
    for _ in range(5):
        est = RigidPose(pose.rotation + rng.normal(0, 0.05, 3), pose.translation + rng.normal(0, 0.005, 3))
        cov = [p.coverage for p in precision_coverage_curve(scene, est, cloud, tpl)]
        assert all(a >= b for a, b in zip(cov, cov[1:]))


def test_curve_grid_validation(handover):
    scene, pose, _, tpl = handover
    with pytest.raises(ValueError):
        precision_coverage_curve(scene, pose, np.empty((0, 3)), tpl, [0.02, 0.01])
    with pytest.raises(ValueError):
        precision_coverage_curve(scene, pose, np.empty((0, 3)), tpl, [])


def test_curve_csv_marks_undefined_precision():
    from dexfit.grasp_eval import CurvePoint
    text = curve_to_csv([CurvePoint(0.0, 0.5, 1.0), CurvePoint(0.07, None, 0.0)])
    assert text.splitlines() == ["epsilon,precision,coverage", "0.0,0.5,1.0", "0.07,,0.0"]


def test_candidates_are_collision_free(rng):
    obj = primitives.cylinder(0.03, 0.1, 16, 2)
    tpl = GripperTemplate.parallel_jaw(spacing=0.015)
    cand = candidate_grasps(obj, rng, 50, tpl)
    assert len(cand) > 0
    assert not mesh_collision_mask(cand, tpl, obj).any()
