import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from psent import geometry
from psent.geometry import GeometryError, RigidTransform, TrackedTrajectory, TriMesh


def unit_cube():
    v = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    faces = [t for a, b, c, d in quads for t in ((a, b, c), (a, c, d))]
    return TriMesh(v, faces)


def random_transform(rng, max_deg=180.0, max_t=100.0):
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    rot = Rotation.from_rotvec(axis * np.radians(rng.uniform(0, max_deg))).as_matrix()
    return RigidTransform(rot, rng.uniform(-max_t, max_t, 3))


def brute_force_hits(mesh, origin, direction):
    """Line parameters of all hits by solving the barycentric system per triangle."""
    ts = []
    for a, b, c in mesh.triangles:
        m = np.column_stack([b - a, c - a, -direction])
        if abs(np.linalg.det(m)) < 1e-12:
            continue
        u, v, t = np.linalg.solve(m, origin - a)
        if u >= -1e-12 and v >= -1e-12 and u + v <= 1 + 1e-12:
            ts.append(t)
    ts = sorted(ts)
    unique = [ts[0]]
    for t in ts[1:]:
        if t - unique[-1] > 1e-9:
            unique.append(t)
    return unique


class TestRigidTransform:
    def test_apply_examples(self):
        assert np.array_equal(geometry.apply(RigidTransform.identity(), [1, 2, 3]), [1, 2, 3])
        shift = RigidTransform(np.eye(3), [0, 0, 5])
        assert np.array_equal(geometry.apply(shift, [0, 0, 0]), [0, 0, 5])
        rz = RigidTransform(Rotation.from_euler("z", 90, degrees=True).as_matrix(), np.zeros(3))
        np.testing.assert_allclose(geometry.apply(rz, [1, 0, 0]), [0, 1, 0], atol=1e-12)

    def test_rejects_reflection(self):
        with pytest.raises(GeometryError):
            RigidTransform(np.diag([1.0, 1.0, -1.0]), np.zeros(3))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_composition_and_inverse(self, seed):
        rng = np.random.default_rng(seed)
        a, b = random_transform(rng), random_transform(rng)
        p = rng.uniform(-50, 50, (5, 3))
        np.testing.assert_allclose((b @ a).apply(p), b.apply(a.apply(p)), atol=1e-9)
        np.testing.assert_allclose(a.inverse().apply(a.apply(p)), p, atol=1e-9)

    def test_json_round_trip(self, tmp_path, rng):
        tf = random_transform(rng)
        geometry.save_transform(tf, tmp_path / "t.json")
        back = geometry.load_transform(tmp_path / "t.json")
        assert np.array_equal(back.matrix, tf.matrix)

    def test_frames(self):
        assert len(geometry.FrameId) == 6


class TestMeshAndIO:
    def test_invalid_mesh(self):
        with pytest.raises(GeometryError, match="out of range"):
            TriMesh(np.zeros((3, 3)), [[0, 1, 3]])
        with pytest.raises(GeometryError, match="degenerate"):
            TriMesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])

    def test_ply_round_trip(self, tmp_path):
        mesh = unit_cube().transformed(random_transform(np.random.default_rng(1)))
        geometry.save_ply(mesh, tmp_path / "m.ply")
        back = geometry.load_ply(tmp_path / "m.ply")
        assert np.array_equal(back.vertices, mesh.vertices)
        assert np.array_equal(back.faces, mesh.faces)

    def test_missing_ply(self, tmp_path):
        with pytest.raises(GeometryError, match="missing mesh"):
            geometry.load_ply(tmp_path / "none.ply")

    def test_trajectory_csv(self, tmp_path, rng):
        traj = TrackedTrajectory(np.arange(5) * 20.0, rng.standard_normal((5, 3)))
        geometry.save_trajectory(traj, tmp_path / "t.csv")
        assert (tmp_path / "t.csv").read_text().splitlines()[0] == "t_ms,x,y,z"
        back = geometry.load_trajectory(tmp_path / "t.csv")
        np.testing.assert_allclose(back.tip_positions, traj.tip_positions, atol=1e-9)

    def test_trajectory_invariants(self):
        with pytest.raises(GeometryError, match="increasing"):
            TrackedTrajectory([0.0, 0.0], np.zeros((2, 3)))
        with pytest.raises(GeometryError, match="non-finite"):
            TrackedTrajectory([0.0, 1.0], [[0, 0, 0], [np.nan, 0, 0]])

    def test_tip_from_marker(self, rng):
        poses = [random_transform(rng) for _ in range(4)]
        offset = RigidTransform(np.eye(3), [0, 0, 120.0])
        tips = geometry.tip_positions_from_marker(poses, offset)
        for pose, tip in zip(poses, tips):
            np.testing.assert_allclose(tip, pose.apply([0, 0, 120.0]), atol=1e-12)


class TestICP:
    @pytest.fixture
    def cloud(self, rng):
        return rng.uniform(-1, 1, (1000, 3)) * np.array([20.0, 12.5, 6.0])

    def test_identity(self, cloud):
        est = geometry.icp_register(cloud, cloud)
        assert geometry.rotation_angle_deg(est, RigidTransform.identity()) < np.degrees(1e-6)
        assert np.max(np.abs(est.translation)) < 1e-6

    def test_known_transform(self, cloud, rng):
        true = random_transform(rng, 25.0, 15.0)
        est = geometry.icp_register(cloud, true.apply(cloud))
        assert geometry.rotation_angle_deg(est, true) < 0.1
        assert np.max(np.abs(est.translation - true.translation)) < 0.01

    def test_mesh_target(self, rng):
        mesh = unit_cube()
        pts = mesh.vertices * 10
        mesh = TriMesh(pts, mesh.faces)
        true = random_transform(rng, 10.0, 2.0)
        est = geometry.icp_register(true.inverse().apply(pts), mesh)
        np.testing.assert_allclose(est.matrix, true.matrix, atol=1e-9)

    def test_mse_non_increasing(self, cloud, rng):
        history = []
        noisy = cloud + rng.normal(0, 0.3, cloud.shape)
        geometry.icp_register(noisy, random_transform(rng, 20.0, 10.0).apply(cloud), history=history)
        assert len(history) > 2
        assert all(b <= a + 1e-12 for a, b in zip(history, history[1:]))

    def test_noise_mse_expectation(self):
        # fitting six rigid dof leaves E[MSE] = 3 sigma^2 (1 - 2/N) for matched points
        sigma, n, ratios = 0.1, 1000, []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            src = rng.uniform(-1, 1, (n, 3)) * np.array([20.0, 12.5, 6.0])
            tgt = random_transform(rng, 30.0, 20.0).apply(src)
            history = []
            geometry.icp_register(src + rng.normal(0, sigma, src.shape), tgt, history=history)
            ratios.append(history[-1] / (3 * sigma**2))
        # standard error of the mean of 20 chi-square(3N)/3N ratios is about 0.006
        assert abs(np.mean(ratios) - (1 - 2 / n)) < 0.02
        assert np.mean(ratios) <= 1.0

    def test_degenerate_source(self):
        line = np.outer(np.arange(10.0), [1, 2, 3])
        with pytest.raises(GeometryError):
            geometry.icp_register(line, line)
        with pytest.raises(GeometryError, match="empty"):
            geometry.icp_register(np.eye(3), np.zeros((0, 3)))


class TestPinIntersection:
    def test_cube_through_centroid(self):
        ep, sp = geometry.pin_mesh_intersection(unit_cube(), [0.5, 0.5, -3.0], [0, 0, 1])
        np.testing.assert_allclose(ep, [0.5, 0.5, 0.0], atol=1e-12)
        np.testing.assert_allclose(sp, [0.5, 0.5, 1.0], atol=1e-12)

    def test_miss(self):
        with pytest.raises(GeometryError):
            geometry.pin_mesh_intersection(unit_cube(), [5.0, 5.0, 0.0], [0, 0, 1])

    def test_shared_edge_dedup(self):
        # x = y lies on the diagonal shared by the two triangles of the z faces
        mesh = unit_cube()
        raw = geometry.line_triangle_hits(mesh.triangles, np.array([0.3, 0.3, -1.0]), np.array([0, 0, 1.0]))
        assert len(raw) > 2
        ep, sp = geometry.pin_mesh_intersection(mesh, [0.3, 0.3, -1.0], [0, 0, 1])
        assert brute_force_hits(mesh, np.array([0.3, 0.3, -1.0]), np.array([0, 0, 1.0])) == pytest.approx([1.0, 2.0])
        np.testing.assert_allclose([ep[2], sp[2]], [0.0, 1.0], atol=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_against_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        tf = random_transform(rng, max_t=10.0)
        mesh = unit_cube().transformed(tf)
        inside = tf.apply(rng.uniform(0.2, 0.8, 3))
        d = rng.standard_normal(3)
        d /= np.linalg.norm(d)
        origin = inside - 5 * d
        ep, sp = geometry.pin_mesh_intersection(mesh, origin, d)
        ts = brute_force_hits(mesh, origin, d)
        assert len(ts) == 2
        np.testing.assert_allclose(ep, origin + ts[0] * d, atol=1e-9)
        np.testing.assert_allclose(sp, origin + ts[1] * d, atol=1e-9)


def straight_traj(n=50, dt=20.0, start=(0, 0, -5.0), velocity=(0, 0, 0.01)):
    t = np.arange(n) * dt
    return TrackedTrajectory(t, np.asarray(start) + t[:, None] * np.asarray(velocity))


class TestEntryExitAndAxis:
    def test_exact_hits(self):
        traj = straight_traj()
        i_ep, i_sp = geometry.find_entry_exit(traj, traj.tip_positions[7], traj.tip_positions[30],
                                              RigidTransform.identity())
        assert (i_ep, i_sp) == (7, 30)

    def test_nearest_at_120ms(self):
        traj = straight_traj(start=(0, 0, 0), velocity=(0.01, 0, 0))
        ep = np.array([1.2, 0.3, 0.0])  # closest approach at t = 120 ms
        brute = int(np.argmin([np.linalg.norm(p - ep) for p in traj.tip_positions]))
        i_ep, _ = geometry.find_entry_exit(traj, ep, [0, 0, 0], RigidTransform.identity())
        assert i_ep == brute == 6

    def test_tie_earliest(self):
        traj = TrackedTrajectory([0.0, 1.0, 2.0], [[-1, 0, 0], [5, 5, 5], [1, 0, 0]])
        assert geometry.find_entry_exit(traj, [0, 0, 0], [0, 0, 0], RigidTransform.identity()) == (0, 0)

    def test_projection_examples(self):
        traj = TrackedTrajectory([0.0, 1.0, 2.0, 3.0], [[0, 0, 0], [0, 0, 5], [3, 4, 5], [0, 0, 10]])
        np.testing.assert_allclose(geometry.project_to_axis(traj, 0, 3), [0, 5, 5, 10])

    def test_affine_depths(self):
        traj = straight_traj(velocity=(0.003, -0.004, 0.012))
        depth = geometry.project_to_axis(traj, 3, 40)
        speed = np.linalg.norm([0.003, -0.004, 0.012])
        np.testing.assert_allclose(np.diff(depth) / 20.0, speed, atol=1e-9)
        assert abs(depth[0]) < 1e-12

    def test_zero_axis(self):
        traj = TrackedTrajectory([0.0, 1.0], [[1, 1, 1], [1, 1, 1]])
        with pytest.raises(GeometryError):
            geometry.project_to_axis(traj, 0, 1)


def brute_force_breach(traj, mesh, tf, i_ep, i_sp):
    mapped = geometry.map_to_axis(traj, i_ep, i_sp)
    verts = tf.apply(mesh.vertices)
    d = np.sqrt(((mapped[:, None, :] - verts[None, :, :]) ** 2).sum(-1)).min(axis=1)
    return i_ep + int(np.argmin(d))


class TestBreach:
    def test_through_vertex(self):
        mesh = unit_cube()
        traj = TrackedTrajectory(np.arange(5) * 10.0, [[1, 1, z] for z in (-1.0, -0.5, 0.0, 0.5, 1.0)])
        est = geometry.find_breach(traj, mesh, RigidTransform.identity(), 0, 4)
        assert est.index == 2 and est.distance == 0.0

    def test_tie_breaks_early(self):
        mesh = unit_cube()
        traj = TrackedTrajectory(np.arange(3) * 10.0, [[0.5, 0.5, 0.2], [0.5, 0.5, 0.5], [0.5, 0.5, 0.8]])
        est = geometry.find_breach(traj, mesh, RigidTransform.identity(), 0, 2)
        assert est.index == 0

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_brute_force_and_rigid_invariance(self, seed):
        rng = np.random.default_rng(seed)
        mesh = TriMesh(rng.uniform(-10, 10, (60, 3)), [[0, 1, 2]])
        tf = random_transform(rng)
        traj = TrackedTrajectory(np.arange(80) * 20.0, rng.uniform(-12, 12, (80, 3)).cumsum(axis=0) / 10)
        est = geometry.find_breach(traj, mesh, tf, 5, 70)
        assert est.index == brute_force_breach(traj, mesh, tf, 5, 70)
        g = random_transform(rng)
        moved = geometry.find_breach(traj.transformed(g), mesh, g @ tf, 5, 70)
        assert moved.index == est.index
        cam_mesh = mesh.transformed(tf)
        assert geometry.find_breach(traj, cam_mesh, RigidTransform.identity(), 5, 70).index == est.index

    def test_entry_exit_rigid_invariance(self, rng):
        traj = straight_traj(velocity=(0.002, 0.001, 0.01))
        ep, sp = rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3) + [0, 0, 4]
        tf, g = random_transform(rng), random_transform(rng)
        base = geometry.find_entry_exit(traj, ep, sp, tf)
        assert geometry.find_entry_exit(traj.transformed(g), ep, sp, g @ tf) == base

    def test_surface_mode(self):
        mesh = unit_cube()
        traj = TrackedTrajectory(np.arange(5) * 10.0, [[0.5, 0.5, z] for z in (0.1, 0.4, 0.6, 0.95, 1.2)])
        vertex = geometry.find_breach(traj, mesh, RigidTransform.identity(), 0, 4, mode="vertex")
        surface = geometry.find_breach(traj, mesh, RigidTransform.identity(), 0, 4, mode="surface")
        assert surface.index == 3 and surface.distance == pytest.approx(0.05)
        assert vertex.distance > surface.distance

    def test_point_triangle_distance_oracle(self, rng):
        tri = rng.uniform(-1, 1, (1, 3, 3))
        pts = rng.uniform(-2, 2, (40, 3))
        # dense barycentric sampling of the triangle
        u, v = np.meshgrid(np.linspace(0, 1, 301), np.linspace(0, 1, 301))
        keep = u + v <= 1
        a, b, c = tri[0]
        samples = a + u[keep, None] * (b - a) + v[keep, None] * (c - a)
        brute = np.sqrt(((pts[:, None] - samples[None]) ** 2).sum(-1)).min(1)
        got = geometry.point_triangle_distance(pts, tri)
        assert np.all(got <= brute + 1e-12)
        np.testing.assert_allclose(got, brute, atol=0.02)

    def test_unknown_mode(self):
        traj = straight_traj()
        with pytest.raises(GeometryError):
            geometry.find_breach(traj, unit_cube(), RigidTransform.identity(), 0, 10, mode="nearest")


class TestDistanceCurves:
    def test_curves(self):
        traj = straight_traj(start=(0.5, 0.5, -0.5), velocity=(0, 0, 0.0025))
        ep = traj.tip_positions[0]
        d_ep, d_mesh = geometry.distance_curves(traj, unit_cube(), RigidTransform.identity(), ep)
        assert d_ep[0] == 0.0
        assert np.all(np.diff(d_ep) >= 0)
        assert len(d_mesh) == len(traj)

    def test_minimum_matches_breach(self, rng):
        mesh = TriMesh(rng.uniform(-5, 5, (40, 3)), [[0, 1, 2]])
        traj = straight_traj(start=(-5, -5, -5), velocity=(0.01, 0.01, 0.01))
        est = geometry.find_breach(traj, mesh, RigidTransform.identity(), 0, len(traj) - 1)
        _, d_mesh = geometry.distance_curves(traj, mesh, RigidTransform.identity(), traj.tip_positions[0])
        assert int(np.argmin(d_mesh)) == est.index

    def test_drill_path_rejects_coincident(self):
        p = np.zeros(3)
        with pytest.raises(GeometryError):
            geometry.DrillPath(p, p, p, p, p, 0.0)
