import os

import numpy as np
import pytest

from rtsplat.autodiff import value
from rtsplat.cli import main
from rtsplat.experiments import gradviz, implicitfit, meshfit, pose, splinefit
from rtsplat.experiments.config import ConfigError, default_config, load_config
from rtsplat.io import load_csv
from rtsplat.optim import OptimizationAborted
from rtsplat.scene import Camera
from rtsplat.scenes import quad

# ---------------------------------------------------------------- configuration


def test_per_kind_defaults():
    assert default_config("fit-pose").optimizer == "lm"
    assert default_config("fit-pose").iters == 60
    assert default_config("fit-implicit").iters == 400
    assert default_config("gradviz").width == 256
    cfg = default_config("fit-mesh", iters=5, lr=0.2)
    assert (cfg.iters, cfg.lr, cfg.optimizer) == (5, 0.2, "adam")


def test_overrides_survive_kind_defaults():
    cfg = default_config("fit-pose", optimizer="adam").with_overrides(seed=3)
    assert cfg.optimizer == "adam" and cfg.seed == 3 and cfg.iters == 60


@pytest.mark.parametrize(
    "kwargs",
    [{"kind": "nope"}, {"optimizer": "sgd"}, {"width": 8}, {"layers": 0}, {"iters": -1}, {"workers": 0}, {"mesh": "/no/such.obj"}],
)
def test_invalid_values_rejected(kwargs):
    kind = kwargs.pop("kind", "render")
    with pytest.raises(ConfigError):
        default_config(kind, **kwargs)


def test_ini_file(tmp_path):
    p = tmp_path / "a.ini"
    p.write_text("[experiment]\nkind = fit-spline\niters = 7\nlayers = 1\n")
    cfg = load_config(p, seed=4)
    assert (cfg.kind, cfg.iters, cfg.layers, cfg.seed, cfg.optimizer) == ("fit-spline", 7, 1, 4, "adam")
    p.write_text("[experiment]\nkind = render\ncolour = red\n")
    with pytest.raises(ConfigError, match="unknown keys"):
        load_config(p)
    p.write_text("[other]\n")
    with pytest.raises(ConfigError, match="missing"):
        load_config(p)


def test_cli_kind_mismatch_exits_2(tmp_path, capsys):
    p = tmp_path / "a.ini"
    p.write_text("[experiment]\nkind = fit-spline\n")
    assert main(["render", "--config", str(p)]) == 2
    assert "describes 'fit-spline'" in capsys.readouterr().err


def test_cli_bad_value_exits_2(capsys):
    assert main(["render", "--size", "4"]) == 2
    assert "at least 16x16" in capsys.readouterr().err


def test_cli_unknown_experiment_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["teleport"])
    assert exc.value.code == 2


def test_cli_render_obj(tmp_path, capsys):
    obj = tmp_path / "cube.obj"
    obj.write_text(
        "v -1 -1 -1\nv 1 -1 -1\nv 1 1 -1\nv -1 1 -1\nv -1 -1 1\nv 1 -1 1\nv 1 1 1\nv -1 1 1\n"
        "f 1 4 3 2\nf 5 6 7 8\nf 1 2 6 5\nf 2 3 7 6\nf 3 4 8 7\nf 4 1 5 8\n"
    )
    out = tmp_path / "r"
    assert main(["render", "--mesh", str(obj), "--size", "32", "--out", str(out)]) == 0
    assert sorted(os.listdir(out)) == ["alpha.pfm", "layers.csv", "render.png"]
    _, rows = load_csv(out / "layers.csv")
    # a closed box seen head-on: the farther back face shrinks under perspective
    assert 0 < int(rows[1][1]) < int(rows[0][1])


def test_cli_abort_exits_1(tmp_path, monkeypatch, capsys):
    monkeypatch.setattr(implicitfit, "UNION_RADIUS", 1e-4)
    code = main(["fit-implicit", "--size", "16", "--iters", "1", "--out", str(tmp_path)])
    assert code == 1
    assert "no isosurface" in capsys.readouterr().err


# ---------------------------------------------------------------- pose


def small(kind, size=48, **kw):
    return default_config(kind, width=size, height=size, **kw)


def test_pose_zero_perturbation_is_fixed_point():
    problem = pose.make_problem(small("fit-pose", perturb_deg=0.0, perturb_frac=0.0))
    result = pose.fit(problem, "lm", 5, 0.0)
    assert result.history.records[0].loss == 0.0
    assert np.array_equal(result.params, problem.initial_pose)
    assert problem.errors(result.params) == (0.0, 0.0)


def test_pose_fast_path_matches_standard():
    cfg = small("fit-pose", seed=2)
    slow = pose.make_problem(cfg)
    fast = pose.make_problem(cfg.with_overrides(fast_pose=True))
    p = slow.initial_pose
    assert np.abs(value(fast.alpha(p)) - value(slow.alpha(p))).max() <= 1e-4
    assert np.array_equal(fast.target, slow.target)


def test_pose_lm_reduces_error(tmp_path):
    cfg = small("fit-pose", iters=30, out=str(tmp_path), seed=0)
    res = pose.run_pose_fit(cfg)
    rot0, trans0 = res["problem"].errors(res["problem"].initial_pose)
    assert res["rotation_error_deg"] < 0.25 * rot0
    assert res["result"].history.losses[-1] < 0.1 * res["result"].history.losses[0]
    for name in ("initial.png", "final.png", "target.png", "loss.csv", "loss.png", "pose.csv"):
        assert (tmp_path / name).exists()


def test_perturbation_has_exact_magnitude():
    p = pose.perturbation(np.random.default_rng(0), 10.0, 0.3)
    assert np.isclose(np.degrees(np.linalg.norm(p[:3])), 10.0) and np.isclose(np.linalg.norm(p[3:]), 0.3)


# ---------------------------------------------------------------- mesh


def test_mesh_fit_reduces_image_loss(tmp_path):
    cfg = small("fit-mesh", iters=20, lr=0.02, out=str(tmp_path))
    res = meshfit.run_mesh_fit(cfg)
    assert res["final_loss"] < 0.7 * res["initial_loss"]
    assert (tmp_path / "final.obj").exists() and (tmp_path / "views.png").exists()


def test_colors_only_fit_learns_colors():
    problem = meshfit.make_problem(small("fit-mesh", colors_only=True), subdivisions=1)
    x0 = problem.initial_params()
    result = meshfit.fit(problem, 40, 0.05)
    assert meshfit.color_error(problem, result.params) < 0.5 * meshfit.color_error(problem, x0)
    assert result.params.min() >= 0.0 and result.params.max() <= 1.0


def test_mesh_truth_has_zero_image_loss():
    problem = meshfit.make_problem(small("fit-mesh"), subdivisions=1)
    truth = np.concatenate([problem.vertices_true.ravel(), problem.colors_true.ravel()])
    assert float(value(problem.image_loss(truth))) <= 1e-20


# ---------------------------------------------------------------- spline


def test_spline_target_equal_to_init_is_stationary():
    problem = splinefit.make_problem(small("fit-spline"), initial_radii=splinefit.CHESS_RADII)
    result = splinefit.fit(problem, "adam", 5, 0.01)
    assert result.history.records[0].loss == 0.0
    assert np.array_equal(result.params, splinefit.CHESS_RADII)


def test_spline_fit_reduces_error(tmp_path):
    res = splinefit.run_spline_fit(small("fit-spline", iters=40, lr=0.02, out=str(tmp_path)))
    problem = res["problem"]
    assert res["relative_error"].max() < 0.5 * problem.relative_error(problem.initial_radii).max()
    _, rows = load_csv(tmp_path / "radii.csv")
    assert len(rows) == len(splinefit.HEIGHTS)


# ---------------------------------------------------------------- implicit


def test_swept_sphere_target_as_init_is_near_zero():
    problem = implicitfit.make_problem(small("fit-implicit", variant="swept-sphere", grid=24))
    truth = np.array([implicitfit.TARGET_TUBE, implicitfit.TARGET_RING])
    assert float(value(problem.loss(truth))) <= 1e-12


def test_swept_sphere_recovers_radii():
    problem = implicitfit.make_problem(small("fit-implicit", variant="swept-sphere", grid=30, size=64))
    result = implicitfit.fit(problem, 120, 0.01)
    tube, ring = result.params
    assert abs(tube - implicitfit.TARGET_TUBE) / implicitfit.TARGET_TUBE < 0.05
    assert abs(ring - implicitfit.TARGET_RING) / implicitfit.TARGET_RING < 0.05


def test_sphere_union_short_run(tmp_path):
    res = implicitfit.run_implicit_fit(small("fit-implicit", iters=15, grid=20, spheres=30, out=str(tmp_path)))
    s = res["summary"]
    assert s["final_loss"] < s["initial_loss"]
    assert s["initial_holes"] == 0 and s["target_holes"] == 1
    assert (tmp_path / "implicit.csv").exists()


def test_empty_isosurface_aborts(monkeypatch):
    monkeypatch.setattr(implicitfit, "UNION_RADIUS", 1e-4)
    with pytest.raises(OptimizationAborted):
        implicitfit.make_problem(small("fit-implicit", grid=10, spheres=3))


def test_holes_counts_enclosed_background():
    m = np.ones((9, 9), bool)
    m[4, 4] = False
    m[0, 0] = False  # touches the border
    assert implicitfit.holes(m) == 1
    m[2, 2] = False
    assert implicitfit.holes(m) == 2


# ---------------------------------------------------------------- derivative visualisation


CAM = Camera(64, 64, np.deg2rad(40.0))


def test_static_scene_has_zero_derivative():
    scene = gradviz.GradScene("still", [gradviz.Part(quad(1.2), np.array([0.0, 0.0, 5.0]), gradviz.GREEN, False)], 5.0)
    imgs = gradviz.derivative_images(scene, CAM)
    for m in gradviz.METHODS:
        assert np.all(imgs[m] == 0.0)


def test_square_derivative_bands():
    scene = [s for s in gradviz.scenes() if s.name == "square"][0]
    d = gradviz.derivative_images(scene, CAM)["rts2"][..., 3]
    cols = np.flatnonzero(np.abs(d).sum(axis=0) > 1e-9)
    # two vertical bands: the trailing edge loses coverage, the leading edge gains it
    left, right = cols[cols < 32], cols[cols >= 32]
    assert len(left) and len(right)
    assert d[:, left].sum() < 0 < d[:, right].sum()
    assert np.all(np.abs(d[:, left.max() + 1 : right.min()]) < 1e-12)
    assert np.allclose(-d[:, left].sum(), d[:, right].sum(), rtol=1e-6)


def test_gradviz_run_writes_metrics(tmp_path):
    res = gradviz.run_derivative_viz(default_config("gradviz", width=48, height=48, variant="occlusion", out=str(tmp_path)))
    assert [r["method"] for r in res["rows"]] == list(gradviz.METHODS)
    header, rows = load_csv(tmp_path / "metrics.csv")
    assert header[:3] == ["scene", "method", "dloss_dt"] and len(rows) == 4
    assert (tmp_path / "occlusion_derivatives.png").exists()
    assert (tmp_path / "occlusion_rts2.pfm").exists()


def test_correlation_helper():
    a = np.arange(10.0)
    assert gradviz.correlation(a, 2 * a + 1) == pytest.approx(1.0)
    assert gradviz.correlation(a, -a) == pytest.approx(-1.0)
    assert gradviz.correlation(a, np.zeros(10)) == 0.0
