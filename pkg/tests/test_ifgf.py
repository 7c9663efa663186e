import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ifgf_rp.geometry import build_sphere
from ifgf_rp.ifgf import (ConeConfig, IFGFConsistencyError, IFGFOperator, brute_force, build_octree,
                          compute_relations, ifgf_apply, interaction_counts, interpolation_nodes, locate_segment,
                          morton_key, plan_cones, relation_counts, segment_domain)
from ifgf_rp.ifgf.cones import ETA
from ifgf_rp.ifgf.harness import segment_interpolation_error
from ifgf_rp.kernels import BoxFrame, cartesian_to_cone, green


def random_sphere_points(n, rng, radius=1.0):
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1)[:, None]
    return radius * v, v


def rel_err(a, b):
    return float(np.max(np.abs(a - b)) / np.max(np.abs(b)))


# ----------------------------------------------------------------------------
# octree
# ----------------------------------------------------------------------------

def test_morton_key_interleaves_bits():
    c = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [3, 3, 3], [2, 0, 1]])
    assert morton_key(c).tolist() == [1, 2, 4, 63, 0b001 * 4 + 0b1000]


def test_cube_corners_depth_two():
    pts = np.array([[i, j, l] for i in (0, 1) for j in (0, 1) for l in (0, 1)], dtype=float)
    tree = build_octree(pts, k=1.0, depth=2)
    lv = tree.level(2)
    assert lv.n_boxes == 8
    assert np.all(np.diff(lv.start) == 1)


def test_one_octant_cluster(rng):
    # a corner point pins the root to the unit cube; the cluster sits in one octant
    pts = np.vstack([rng.uniform(0.01, 0.49, (50, 3)), [[1.0, 1.0, 1.0]]])
    tree = build_octree(pts, k=1.0, depth=3)
    assert tree.level(1).n_boxes == 1
    lv = tree.level(2)
    assert lv.n_boxes == 2
    assert sorted(np.diff(lv.start).tolist()) == [1, 50]


def test_every_point_in_one_box_per_level(rng):
    pts, _ = random_sphere_points(800, rng)
    tree = build_octree(pts, k=2 * math.pi * 2, target_finest_side_in_lambda=0.5)
    spts = tree.sorted_points
    for lv in tree.levels:
        assert lv.start[0] == 0 and lv.start[-1] == pts.shape[0]
        for b in range(lv.n_boxes):
            p = spts[lv.points_of(b)]
            lo = lv.centers[b] - lv.side / 2
            assert np.all(p >= lo - 1e-12) and np.all(p <= lo + lv.side + 1e-12)
    assert np.array_equal(np.sort(tree.perm), np.arange(pts.shape[0]))


def test_sphere_4lambda_depth():
    # 4-wavelength sphere with 13824 unknowns and 0.5-wavelength finest boxes uses four levels
    mesh = build_sphere(1.0, 2, (12, 12))
    assert mesh.n_nodes == 13824
    tree = build_octree(mesh.points, k=2 * math.pi * 4 / 2.0, target_finest_side_in_lambda=0.5)
    assert tree.depth == 4
    assert tree.side(4) <= 0.5 * tree.wavelength * (1 + 1e-6)


def test_full_grid_relations():
    n = 8  # level 4 of a fully populated grid
    g = (np.arange(n) + 0.5) / n
    pts = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    pts = np.vstack([pts, [[0, 0, 0], [1, 1, 1]]])
    tree = compute_relations(build_octree(pts, k=1.0, depth=4))
    lv = tree.level(4)
    centre = np.flatnonzero(np.all(lv.coords == [3, 4, 3], axis=1))[0]
    assert lv.neighbors(centre).size == 27
    assert lv.cousins(centre).size == 189
    nb = set(lv.neighbors(centre).tolist())
    assert not nb & set(lv.cousins(centre).tolist())


def test_distant_boxes_have_no_finest_cousins():
    pts = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
    tree = compute_relations(build_octree(pts, k=1.0, depth=4))
    lv = tree.level(4)
    assert all(lv.cousins(b).size == 0 for b in range(lv.n_boxes))
    # level-2 boxes touch, so the pair becomes a cousin interaction at level 3
    assert all(tree.level(2).cousins(b).size == 0 for b in range(tree.level(2).n_boxes))
    lv3 = tree.level(3)
    assert all(lv3.cousins(b).size == 1 for b in range(lv3.n_boxes))


def test_relation_counts_shape(rng):
    pts, _ = random_sphere_points(300, rng)
    tree = compute_relations(build_octree(pts, k=10.0))
    rc = relation_counts(tree)
    assert len(rc) == tree.depth
    assert rc[0] == (1, 1, 0)


def test_build_octree_rejects_bad_input():
    with pytest.raises(ValueError):
        build_octree(np.zeros((0, 3)), 1.0)
    with pytest.raises(ValueError):
        build_octree(np.array([[0.0, np.nan, 0.0]]), 1.0)
    with pytest.raises(ValueError):
        build_octree(np.zeros((2, 3)), 0.0)


# ----------------------------------------------------------------------------
# cones
# ----------------------------------------------------------------------------

def test_segment_counts_per_level():
    pts = np.array([[0.0, 0.0, 0.0], [8.0, 8.0, 8.0]])
    tree = build_octree(pts, k=2 * math.pi, depth=6)  # sides 8, 4, 2, 1, 0.5, 0.25 wavelengths
    counts = ConeConfig(refine_threshold=0.5).level_counts(tree)
    assert counts[6] == (1, 2) and counts[5] == (1, 2)
    assert counts[4] == (2, 4) and counts[3] == (4, 8) and counts[1] == (16, 32)


def test_coarse_level_has_eight_octant_segments():
    n_s, n_c = 1, 2
    assert n_s * n_c * 2 * n_c == 8
    doms = {segment_domain(f, n_s, n_c) for f in range(8)}
    assert len(doms) == 8
    for (s0, s1), (t0, t1), (f0, f1) in doms:
        assert (s0, s1) == (0.0, ETA)
        assert t1 - t0 == pytest.approx(math.pi / 2) and f1 - f0 == pytest.approx(math.pi / 2)


def test_locate_segment_closure_cases():
    assert locate_segment(ETA, math.pi, 2 * math.pi, 2, 4) == (7 * 4 + 3) * 2 + 1
    assert locate_segment(1e-9, 0.0, 0.0, 2, 4) == 0
    with pytest.raises(ValueError):
        locate_segment(ETA * 1.01, 0.0, 0.0, 1, 2)


def test_interpolation_nodes_inside_segment():
    S, T, F = interpolation_nodes(13, 2, 4, 3, 5)
    (s0, s1), (t0, t1), (f0, f1) = segment_domain(13, 2, 4)
    assert S.shape == (5, 5, 3)
    assert np.all((S > s0) & (S < s1)) and np.all((T > t0) & (T < t1)) and np.all((F > f0) & (F < f1))


def test_plan_shallow_tree_has_no_cones(rng):
    pts, _ = random_sphere_points(50, rng)
    tree = compute_relations(build_octree(pts, k=1.0, depth=2))
    assert plan_cones(tree).levels == []


def test_plan_level_three_with_cousins(rng):
    pts, _ = random_sphere_points(400, rng)
    tree = compute_relations(build_octree(pts, k=1.0, depth=3))
    store = plan_cones(tree)
    lc = store.level(3)
    lv = tree.level(3)
    for b in range(lv.n_boxes):
        if lv.cousins(b).size:
            assert lc.seg_ptr[b + 1] > lc.seg_ptr[b]
    assert lc.max_s <= ETA + 1e-12
    assert "level 3" in store.dump(tree)


def test_config_validation():
    with pytest.raises(ValueError):
        ConeConfig(p_s=0)
    with pytest.raises(ValueError):
        ConeConfig(refine_threshold=0.0)
    with pytest.raises(ValueError):
        plan_cones(build_octree(np.zeros((1, 3)), 1.0), strategy="W5")


@given(st.floats(0.0, 2 * math.pi), st.floats(0.0, math.pi), st.floats(1.5, 50.0), st.integers(0, 3),
       st.integers(0, 3))
def test_cone_tiling_unique(phi, theta, r_over_h, ls, lc):
    n_s, n_c = 2 ** ls, 2 * 2 ** lc
    frame = BoxFrame(np.array([0.3, -0.2, 0.1]), 0.8)
    d = np.array([math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)])
    x = frame.center + r_over_h * frame.side * d
    s, t, f = cartesian_to_cone(x, frame)
    s = min(float(s), ETA)
    flat = int(locate_segment(s, t, f, n_s, n_c))
    hits = 0
    for g in range(n_s * n_c * 2 * n_c):
        (s0, s1), (t0, t1), (f0, f1) = segment_domain(g, n_s, n_c)
        # half-open intervals, closed at s = eta, theta = pi and phi = 2 pi
        in_s = s0 <= s < s1 or (s1 == pytest.approx(ETA) and s == pytest.approx(ETA, abs=1e-15))
        in_t = t0 <= t < t1 or (t1 == pytest.approx(math.pi) and t == math.pi)
        in_f = f0 <= f < f1 or (f1 == pytest.approx(2 * math.pi) and f == 2 * math.pi)
        if in_s and in_t and in_f:
            hits += 1
            assert g == flat
    assert hits == 1


# ----------------------------------------------------------------------------
# engine
# ----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def cloud():
    """2000 random points on a sphere four wavelengths across, smooth densities."""
    rng = np.random.default_rng(7)
    pts, nrm = random_sphere_points(2000, rng)
    k = 4 * math.pi
    d1, d2 = np.array([0.3, -0.4, 0.866]), np.array([-0.6, 0.0, 0.8])
    a = np.exp(1j * k * pts @ d1) * (1 + 0.5 * pts[:, 0]) / 2000
    b = np.exp(1j * k * pts @ d2) * (1 - 0.3 * pts[:, 2]) / 2000
    return pts, nrm, k, a, b


@pytest.fixture(scope="module")
def cloud_op(cloud):
    pts, nrm, k, _, _ = cloud
    op = IFGFOperator(pts, nrm, k)
    assert op.depth == 4
    return op


def test_fill_single_centred_source_is_unit_block():
    pts = np.array([[0.0, 0.0, 0.0], [4.0, 4.0, 4.0]])
    op = IFGFOperator(pts, np.tile([0.0, 0.0, 1.0], (2, 1)), k=1.0, depth=3)
    lv = op.tree.level(3)
    first = int(np.flatnonzero(op.tree.perm == 0)[0])
    box = int(np.flatnonzero(lv.start[:-1] == first)[0])
    op.pts[first] = lv.centers[box]  # move the source to its box centre
    src = np.zeros(2, complex)
    src[first] = 1.0
    coeffs = op.level_d_fill(src, np.zeros(2, complex))
    lc = op.store.level(3)
    blocks = coeffs[lc.seg_box == box, 0]
    assert blocks.shape[0] >= 1
    unit = np.zeros_like(blocks[0])
    unit[0, 0, 0] = 1.0
    assert np.max(np.abs(blocks - unit)) <= 1e-13


def test_fill_zero_and_linear(cloud, cloud_op):
    _, _, _, a, b = cloud
    op = cloud_op
    z = np.zeros(op.n_points, complex)
    assert not np.any(op.level_d_fill(z, z))
    sa, sb = op._sorted(a), op._sorted(b)
    fa, fb = op.level_d_fill(sa, z), op.level_d_fill(sb, z)
    fab = op.level_d_fill(sa + sb, z)
    assert np.max(np.abs(fab - fa - fb)) <= 1e-14 * np.max(np.abs(fab))


def test_single_source_far_targets():
    # per-source error over all cousin targets, normalised by the largest exact value
    rng = np.random.default_rng(3)
    pts, nrm = random_sphere_points(300, rng)
    k = 2 * math.pi * 1.5
    op = IFGFOperator(pts, nrm, k)
    errs = []
    for j in range(0, 300, 15):
        a = np.zeros(300, complex)
        a[j] = 1.0
        out = op.apply(a, None, near=False)
        hit = np.flatnonzero(out)
        ref = green(pts[hit], pts[j], k)
        errs.append(np.max(np.abs(out[hit] - ref)) / np.max(np.abs(ref)))
    assert np.median(errs) <= 5e-4
    assert np.max(errs) <= 2e-3


def test_apply_matches_brute_force_2lambda():
    rng = np.random.default_rng(11)
    pts, nrm = random_sphere_points(2000, rng)
    k = 2 * math.pi
    a = (rng.standard_normal(2000) + 1j * rng.standard_normal(2000)) / 2000
    op = IFGFOperator(pts, nrm, k)
    assert rel_err(op.apply(a, None), brute_force(pts, nrm, a, None, k)) <= 1e-3


@pytest.mark.parametrize("kernel", ["single", "double"])
def test_apply_matches_brute_force(cloud, cloud_op, kernel):
    pts, nrm, k, a, _ = cloud
    acc = cloud_op.apply(a, None) if kernel == "single" else cloud_op.apply(None, a)
    ref = brute_force(pts, nrm, a, None, k) if kernel == "single" else brute_force(pts, nrm, None, a, k)
    assert rel_err(acc, ref) <= 1e-3


def test_far_plus_neighbours_equals_brute_force(cloud, cloud_op):
    pts, nrm, k, a, _ = cloud
    far = ifgf_apply(cloud_op, a, "combined", gamma=3.0)
    near = cloud_op.apply(-3j * a, a) - far
    assert np.any(near != 0)
    assert rel_err(far + near, brute_force(pts, nrm, -3j * a, a, k)) <= 1e-3


def test_strategies_agree(cloud):
    pts, nrm, k, a, _ = cloud
    ref = brute_force(pts, nrm, None, a, k)
    outs, errs = {}, {}
    for strategy in ("W4", "W2W3", "hybrid"):
        op = IFGFOperator(pts, nrm, k, strategy=strategy)
        outs[strategy] = op.apply(None, a)
        errs[strategy] = rel_err(outs[strategy], ref)
    assert max(errs.values()) <= 1e-3
    assert rel_err(outs["W4"], outs["W2W3"]) <= 2 * max(errs["W4"], errs["W2W3"])
    # finest boxes are just under half a wavelength, so hybrid switches to W2W3 there only
    assert not np.array_equal(outs["hybrid"], outs["W4"])


def test_linearity(cloud, cloud_op):
    _, _, _, a, b = cloud
    alpha, beta = 0.7 - 0.2j, -1.3 + 0.5j
    lhs = cloud_op.apply(alpha * a + beta * b, alpha * b + beta * a)
    rhs = alpha * cloud_op.apply(a, b) + beta * cloud_op.apply(b, a)
    assert rel_err(lhs, rhs) <= 1e-12


def test_pair_accounting():
    mesh = build_sphere(1.0, 0, (9, 9))
    op = IFGFOperator(mesh.points, mesh.normals, 2 * math.pi * 2.0)
    assert op.depth >= 4 and mesh.n_nodes <= 500
    cnt = interaction_counts(op)
    off = ~np.eye(mesh.n_nodes, dtype=bool)
    assert np.all(cnt[off] == 1)
    assert np.all(np.diag(cnt) == 0)


def test_s_bound_on_every_level(cloud_op):
    for lc in cloud_op.store.levels:
        assert lc.max_s <= ETA + 1e-12


def test_unplanned_query_raises(cloud, cloud_op):
    with pytest.raises(IFGFConsistencyError):
        cloud_op._check(4, ETA + 1e-6, 0)
    with pytest.raises(IFGFConsistencyError):
        cloud_op._check(4, 0.1, 3)


def test_apply_deterministic(cloud, cloud_op):
    _, _, _, a, b = cloud
    assert np.array_equal(cloud_op.apply(a, b), cloud_op.apply(a, b))


def test_bad_density_shape(cloud_op):
    with pytest.raises(ValueError):
        cloud_op.apply(np.ones(3))
    with pytest.raises(ValueError):
        ifgf_apply(cloud_op, np.ones(cloud_op.n_points), "triple")


def test_level_invariant_segment_error():
    # doubling rule active: H = 1, 2, 4, 8 wavelengths with n_s, n_C doubling each level
    errs = [segment_interpolation_error(2.0 ** j, 2 ** (j + 1), 4 * 2 ** j) for j in range(4)]
    assert max(errs) <= 3 * min(errs)
    assert max(errs) <= 5e-3
