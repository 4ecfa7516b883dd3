"""Smoke checks of the Python bindings on a tiny synthetic space."""

import numpy as np
import pytest

import msub

TINY = [
    "projection.sample_counts=[256]",
    "projection.iters_per_stage=30",
    "geodesic.init_nodes=4",
    "geodesic.max_nodes=8",
    "geodesic.subdivide_every=10",
    "geodesic.final_iters=10",
    "fem.target_faces=60",
    "switchpoints.grid=3",
    "switchpoints.steps=12",
    "train.iters=30",
    "train.hidden=[16,16]",
    "deform.steps=10",
    "energy_report.paths=3",
    "energy_report.samples=8",
]


@pytest.fixture(scope="module")
def space(tmp_path_factory):
    root = tmp_path_factory.mktemp("msub")
    config = msub.synth(str(root / "synth"), landmarks=5, latent_dim=4, points=64, seed=2)
    msub.build(config, str(root / "bundle"), TINY)
    return msub.load_bundle(str(root / "bundle"))


def test_bundle_contents(space):
    assert space.stages == ["project", "embed", "geodesics", "switchpoints", "train-map"]
    assert len(space.landmark_ids) == 5
    assert space.positions.shape == (5, 2)
    assert space.latents.shape == (5, 4)
    assert "train-map" in space.reports
    v, f = space.mesh(space.landmark_ids[0])
    assert v.shape[1] == 3 and f.shape[1] == 3


def test_infer_reproduces_landmark_latent(space):
    p = space.positions[0]
    z, cloud = space.infer(float(p[0]), float(p[1]))
    assert z.shape == (4,)
    assert cloud.shape == (64, 3)
    np.testing.assert_allclose(cloud, space.forward(z), atol=1e-12)


def test_deform_and_energy_report(space):
    p = space.positions
    frames = space.deform(np.array([p[0], (p[0] + p[1]) / 2]))
    assert len(frames) == 11
    v0, _ = space.mesh(space.landmark_ids[0])
    np.testing.assert_allclose(frames[0], v0, atol=1e-12)
    rows = space.energy_report()
    assert rows.shape == (3, 8)
    assert np.all(np.isfinite(rows))


def test_service_drag(space):
    svc = msub.Service(space)
    assert svc.ready
    assert len(svc.manifest()["landmarks"]) == 5
    sid = svc.start_session(space.landmark_ids[0])
    p = space.positions
    target = 0.9 * p[0] + 0.1 * p.mean(axis=0)
    reply = svc.drag(sid, float(target[0]), float(target[1]))
    assert reply["seq"] == 1
    np.testing.assert_allclose(reply["position"], target, atol=1e-12)
    np.testing.assert_array_equal(reply["vertices"], svc.session_vertices(sid))


def test_errors_carry_codes(space, tmp_path):
    with pytest.raises(msub.Error) as info:
        msub.load_bundle(str(tmp_path))
    assert info.value.args[0] == "not-a-bundle"
    with pytest.raises(msub.Error) as info:
        msub.Service(space).start_session("nobody")
    assert info.value.args[0] == "not-found"
