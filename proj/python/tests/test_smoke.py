import numpy as np
import pytest

import gflow

SPEC = "kind=blobs\nwidth=48\nheight=32\nfocal=40\nframes=3\nblob_count=400\n"
QUICK = {
    "n_ini": "200",
    "iters_first": "20",
    "iters_cam": "10",
    "iters_gauss": "10",
    "densify_steps_first": "10",
    "densify_steps": "5",
}


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("gflow")
    gflow.synth(str(root / "data"), SPEC)
    info = gflow.reconstruct(str(root / "data"), str(root / "run"), QUICK)
    assert info["frames"] == 3
    return root


def test_config_defaults():
    d = gflow.config_defaults()
    assert d["n_ini"] == "50000"
    assert d["iters_first"] == "500"
    assert d["err_threshold"] == "0.01"


def test_metrics():
    rng = np.random.default_rng(0)
    a = rng.uniform(0.2, 0.7, (16, 20, 3))
    assert gflow.psnr(a, a) == 99.0
    assert gflow.psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)
    assert gflow.ssim(a, a) == pytest.approx(1.0)
    with pytest.raises(gflow.GflowError):
        gflow.psnr(a, a[:, :10])


def test_checkpoint_and_render(run_dir):
    ck = gflow.load_checkpoint(str(run_dir / "run" / "frame_0002.gfs"))
    n = ck["mean"].shape[0]
    assert ck["rotation"].shape == (n, 4)
    assert len(set(ck["id"].tolist())) == n
    line = (run_dir / "run" / "trajectory.txt").read_text().strip().splitlines()[-1]
    color, depth, alpha = gflow.render(
        str(run_dir / "run" / "frame_0002.gfs"), line, str(run_dir / "run" / "intrinsics.txt")
    )
    assert color.shape == (32, 48, 3)
    assert depth.shape == alpha.shape == (32, 48)
    assert np.all(alpha >= 0) and np.all(alpha <= 1)


def test_pose_errors(run_dir):
    traj = str(run_dir / "run" / "trajectory.txt")
    same = gflow.pose_errors(traj, traj)
    assert same["ate"] < 1e-9
    rep = gflow.pose_errors(traj, str(run_dir / "data" / "gt" / "trajectory.txt"))
    assert rep["ate"] >= 0 and len(rep["rpe_r"]) == 2


def test_tracks_and_segment(run_dir):
    rows = gflow.tracks(str(run_dir / "run"), [0, 1])
    assert rows.shape == (6, 8)
    assert set(rows[:, 1].tolist()) == {0.0, 1.0, 2.0}
    mask = np.zeros((32, 48), dtype=bool)
    mask[8:24, 12:36] = True
    masks = gflow.segment(str(run_dir / "run"), mask)
    assert len(masks) == 3 and masks[0].shape == (32, 48)
    with pytest.raises(gflow.GflowError):
        gflow.segment(str(run_dir / "run"), np.zeros((32, 48), dtype=bool))


def test_missing_prior_names_the_path(tmp_path):
    gflow.synth(str(tmp_path / "data"), SPEC)
    (tmp_path / "data" / "flow_bwd_0002.gft").unlink()
    with pytest.raises(gflow.GflowError, match="flow_bwd_0002.gft"):
        gflow.reconstruct(str(tmp_path / "data"), str(tmp_path / "run"), QUICK)
