"""Experiment harness tests on deliberately tiny configurations."""

import json
import math
import os

import numpy as np
import pytest

from dipscope.autodiff import Tensor
from dipscope.experiments import (
    NOISE_SEED_OFFSET,
    PAIR_SEED_OFFSET,
    ExperimentConfig,
    default_config,
    deep_merge,
    exp_1d,
    exp_capacity_sweep,
    exp_denoise,
    exp_divergence,
    exp_failure,
    exp_spectrum_traj,
    exp_stride,
    grad_check_experiment,
    grad_check_sweep,
    mean_std,
    read_csv,
    run_experiment,
    spearman,
    upsample_response_experiment,
)
from dipscope.fit import sample_input_noise
from dipscope.nets import ModelSpec, build_model
from dipscope.signals import load_pgm, synth_pattern_image


# ---------------------------------------------------------------------------
# config plumbing


def test_deep_merge_nested_override():
    base = {"a": 1, "b": {"x": 1, "y": 2}}
    out = deep_merge(base, {"b": {"y": 5}, "c": 3})
    assert out == {"a": 1, "b": {"x": 1, "y": 5}, "c": 3}
    assert base["b"]["y"] == 2  # base untouched


def test_deep_merge_null_deletes_key():
    base = {"models": {"a": {"w": 1}, "b": {"w": 2}}}
    out = deep_merge(base, {"models": {"a": None}})
    assert out == {"models": {"b": {"w": 2}}}


def test_default_config_rejects_unknown_kind():
    with pytest.raises(ValueError):
        default_config("nonsense")


def test_config_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown config keys"):
        ExperimentConfig.from_dict({"kind": "1d", "bogus": 1})


def test_config_rejects_empty_seeds():
    with pytest.raises(ValueError):
        ExperimentConfig(kind="1d", seeds=[])


def test_config_roundtrips_through_dict():
    cfg = default_config("1d", {"seeds": [3, 4]})
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()


def test_spearman_hand_values():
    assert spearman([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)
    assert spearman([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)
    # ties get average ranks; a flat series correlates at 0
    assert spearman([1, 2, 3, 4], [5, 5, 5, 5]) == 0.0


def test_spearman_rejects_length_mismatch():
    with pytest.raises(ValueError):
        spearman([1, 2], [1, 2, 3])


def test_mean_std_population_convention():
    m, s = mean_std([1.0, 3.0])
    assert m == 2.0
    assert s == 1.0  # population (ddof=0), not sample


# ---------------------------------------------------------------------------
# tiny end-to-end runs


def _tiny_1d_config(tmp_path, seeds=(0, 1)):
    return default_config(
        "1d",
        {
            "models": {
                "model": {
                    "spec": {"family": "dip_linear_1d", "depth": 4, "width": 64,
                             "signal_shape": [64]}
                }
            },
            "fit": {"steps": 200, "learning_rate": 1e-3, "record_every": 1},
            "signal": {"n": 64, "k1": 2, "k2": 9, "a1": 1.0, "a2": 1.0},
            "seeds": list(seeds),
        },
        out_dir=str(tmp_path / "e1d"),
    )


def test_exp_1d_report_and_artifacts(tmp_path):
    cfg = _tiny_1d_config(tmp_path)
    report = exp_1d(cfg)
    out = tmp_path / "e1d"
    assert (out / "report.json").exists()
    for name in report.manifest:
        assert (out / name).exists(), name
    header, rows = read_csv(out / "times.csv")
    assert header == ["seed", "t1", "t2", "ratio", "amp_k2_at_t1"]
    assert len(rows) == 2
    # linear family converges and does so jointly at this size
    for rec in report.per_seed:
        assert rec["t1"] is not None and rec["t2"] is not None
    assert report.aggregate["equal_band_seeds"] == 2


def test_exp_1d_aggregate_recomputable_from_csv(tmp_path):
    cfg = _tiny_1d_config(tmp_path)
    report = exp_1d(cfg)
    _, rows = read_csv(tmp_path / "e1d" / "times.csv")
    t1s = [float(r[1]) for r in rows]
    m, s = mean_std(t1s)
    assert abs(m - report.aggregate["mean_t1"]) <= 1e-12
    assert abs(s - report.aggregate["std_t1"]) <= 1e-12


def test_exp_1d_rerun_is_bitwise_identical(tmp_path):
    cfg_a = _tiny_1d_config(tmp_path / "a")
    cfg_b = _tiny_1d_config(tmp_path / "b")
    exp_1d(cfg_a)
    exp_1d(cfg_b)
    for name in ("times.csv", "se_curves.csv", "signals_seed0.csv"):
        ba = (tmp_path / "a" / "e1d" / name).read_bytes()
        bb = (tmp_path / "b" / "e1d" / name).read_bytes()
        assert ba == bb, name


def test_exp_1d_signals_csv_has_target_column(tmp_path):
    cfg = _tiny_1d_config(tmp_path, seeds=(0,))
    exp_1d(cfg)
    header, rows = read_csv(tmp_path / "e1d" / "signals_seed0.csv")
    assert header == ["index", "target", "out_t1", "out_t2", "out_final"]
    assert len(rows) == 64
    from dipscope.signals import two_sine

    target = two_sine(64, 2, 9)
    got = np.array([float(r[1]) for r in rows])
    assert np.array_equal(got, target)  # repr round-trip is exact


def _tiny_divergence_config(tmp_path):
    return default_config(
        "divergence",
        {
            "models": {
                "model": {
                    "spec": {"family": "dip_conv_2d", "depth": 2, "width": 8}
                }
            },
            "fit": {"steps": 30, "learning_rate": 3e-3, "record_every": 5},
            "signal": {"size": 16, "coverages": [0.25, 1.0]},
            "seeds": [0],
        },
        out_dir=str(tmp_path / "div"),
    )


def test_exp_divergence_eps0_matches_direct_recomputation(tmp_path):
    cfg = _tiny_divergence_config(tmp_path)
    report = exp_divergence(cfg)
    rec = report.per_seed[0]
    target = synth_pattern_image(16, rec["coverage"])
    # each pair member is a fully independent rerun: own init, own z
    spec_a = cfg.spec_for("model", 0)
    spec_b = cfg.spec_for("model", PAIR_SEED_OFFSET)
    z_a = sample_input_noise(target.shape, NOISE_SEED_OFFSET, 0.1)
    z_b = sample_input_noise(target.shape, PAIR_SEED_OFFSET + NOISE_SEED_OFFSET, 0.1)
    out_a = build_model(spec_a).forward(z_a).data
    out_b = build_model(spec_b).forward(z_b).data
    eps0 = float(((out_a - out_b) ** 2).sum())
    assert rec["eps0"] == pytest.approx(eps0, rel=1e-12)


def test_exp_divergence_identical_seeds_give_zero_eps(tmp_path):
    # Same init seed twice: trajectories coincide, eps is identically 0.
    from dipscope.fit import FitConfig, run_dip
    from dipscope.spectral import trajectory_divergence

    target = synth_pattern_image(16, 0.5)
    spec = ModelSpec.from_dict(
        {"family": "dip_conv_2d", "depth": 2, "width": 8, "init_seed": 7}
    )
    cfg = FitConfig(steps=20, learning_rate=3e-3, record_every=5, noise_seed=1)
    z = sample_input_noise(target.shape, 1, 0.1)
    ta = run_dip(build_model(spec), z, target, cfg)
    tb = run_dip(build_model(spec), z, target, cfg)
    ser = trajectory_divergence(ta, tb)
    assert np.all(ser.values == 0.0)


def test_exp_divergence_artifacts(tmp_path):
    cfg = _tiny_divergence_config(tmp_path)
    report = exp_divergence(cfg)
    out = tmp_path / "div"
    for name in report.manifest:
        assert (out / name).exists(), name
    header, rows = read_csv(out / "peaks.csv")
    assert header == ["coverage", "seed", "peak_eps", "eps0", "min_eps_iter"]
    assert len(rows) == 2  # two coverages x one pair
    assert (out / "out_cov0.25_seed0_a.pgm").exists()
    assert report.aggregate["coverages"] == [0.25, 1.0]


def _tiny_denoise_config(tmp_path, sigma=0.1):
    shape = [16, 16]
    return default_config(
        "denoise",
        {
            "models": {
                "dip": {
                    "spec": {"family": "dip_conv_2d", "depth": 2, "width": 8},
                    "fit": {"steps": 30, "learning_rate": 3e-3},
                },
                "relunet": {
                    "spec": {"family": "relunet", "depth": 3, "width": 16,
                             "signal_shape": shape},
                    "fit": {"steps": 30, "learning_rate": 3e-3},
                },
                "linear_128": {
                    "spec": {"family": "dip_linear_2d", "depth": 2, "width": 16,
                             "signal_shape": shape},
                    "fit": {"steps": 30, "learning_rate": 1e-3},
                },
                "linear_2048": {
                    "spec": {"family": "dip_linear_2d", "depth": 2, "width": 32,
                             "signal_shape": shape},
                    "fit": {"steps": 30, "learning_rate": 1e-3},
                },
            },
            "fit": {"record_every": 10},
            "signal": {"size": 16, "sigma": sigma, "noise_seed_base": 11},
            "seeds": [0],
        },
        out_dir=str(tmp_path / "den"),
    )


def test_exp_denoise_structure_and_recompute(tmp_path):
    cfg = _tiny_denoise_config(tmp_path)
    report = exp_denoise(cfg)
    out = tmp_path / "den"
    header, rows = read_csv(out / "runs.csv")
    assert len(rows) == 3 * 4 * 1  # images x archs x seeds
    header, srows = read_csv(out / "summary.csv")
    for arch, m_txt, s_txt in srows:
        vals = [float(r[3]) for r in rows if r[1] == arch]
        m, s = mean_std(vals)
        assert abs(m - float(m_txt)) <= 1e-12
        assert abs(s - float(s_txt)) <= 1e-12
        assert abs(report.aggregate["mean_best_psnr"][arch] - m) <= 1e-12
    gaps = report.aggregate
    assert gaps["gap_dip_minus_linear_128"] == pytest.approx(
        gaps["mean_best_psnr"]["dip"] - gaps["mean_best_psnr"]["linear_128"]
    )


def test_exp_denoise_sigma_zero_reaches_infinite_psnr(tmp_path):
    # With no noise the target is the clean image; a tiny linear model can
    # fit it essentially exactly and best PSNR saturates. We only require
    # the plumbing to carry inf safely, so fit longer on one arch.
    cfg = _tiny_denoise_config(tmp_path, sigma=0.0)
    cfg.models["linear_128"]["fit"]["steps"] = 300
    report = exp_denoise(cfg)
    best = max(
        r["best_psnr"] for r in report.per_seed if r["arch"] == "linear_128"
    )
    assert best > 80.0 or math.isinf(best)
    # noisy PSNR vs clean is +inf for every record of a sigma-0 run
    assert all(math.isinf(r["noisy_psnr"]) for r in report.per_seed)


def test_exp_denoise_requires_all_four_roles(tmp_path):
    cfg = _tiny_denoise_config(tmp_path)
    del cfg.models["relunet"]
    with pytest.raises(ValueError, match="relunet"):
        exp_denoise(cfg)


def test_exp_failure_tiny(tmp_path):
    cfg = default_config(
        "failure",
        {
            "models": {
                "model": {"spec": {"family": "dip_conv_2d", "depth": 2, "width": 8}}
            },
            "fit": {"steps": 40, "learning_rate": 3e-3, "record_every": 10},
            "signal": {
                "size": 16,
                "k": 5,
                "contrast": 0.15,
                "k_max": 2,
                "amplitude": 0.1,
                "noise_seed": 3,
                "early_iter": 20,
            },
            "seeds": [0],
        },
        out_dir=str(tmp_path / "fail"),
    )
    report = exp_failure(cfg)
    kinds = {r["kind"] for r in report.per_seed}
    assert kinds == {"lowfreq", "gaussian"}
    out = tmp_path / "fail"
    for name in (
        "clean.pgm",
        "noisy_lowfreq.pgm",
        "noisy_gaussian.pgm",
        "out_lowfreq_early.pgm",
        "out_gaussian_final.pgm",
        "psnr_curves.csv",
    ):
        assert (out / name).exists(), name
    header, rows = read_csv(out / "psnr_curves.csv")
    assert header == ["kind", "iteration", "psnr", "loss"]
    assert len(rows) == 2 * 5  # two kinds x recorded {0,10,20,30,40}


def test_exp_capacity_linear_only_band(tmp_path):
    cfg = default_config(
        "capacity",
        {
            "models": {
                "dip_conv_1d": None,  # linear-only sweep
                "dip_linear_1d": {
                    "spec": {"family": "dip_linear_1d", "depth": 2, "width": 32,
                             "signal_shape": [64]},
                    "fit": {"steps": 250, "learning_rate": 1e-3},
                }
            },
            "fit": {"record_every": 1},
            "signal": {
                "n": 64, "k1": 2, "k2": 9, "a1": 1.0, "a2": 1.0,
                "depths": [2, 3], "widths": [32],
            },
            "seeds": [0, 1],
        },
        out_dir=str(tmp_path / "cap"),
    )
    report = exp_capacity_sweep(cfg)
    assert "linear_band_all" in report.aggregate
    assert "conv_spearman_depth_gap" not in report.aggregate
    header, rows = read_csv(tmp_path / "cap" / "times.csv")
    assert len(rows) == 2 * 1 * 2  # depths x widths x seeds
    header, srows = read_csv(tmp_path / "cap" / "summary.csv")
    for row in srows:
        fam, depth, width = row[0], int(row[1]), int(row[2])
        t1s = [
            float(r[4]) for r in rows
            if r[0] == fam and int(r[1]) == depth and int(r[2]) == width
        ]
        m, s = mean_std(t1s)
        assert abs(m - float(row[3])) <= 1e-12
        assert abs(s - float(row[4])) <= 1e-12


def test_exp_capacity_raises_on_unconverged_grid_point(tmp_path):
    cfg = default_config(
        "capacity",
        {
            "models": {
                "dip_linear_1d": None,
                "dip_conv_1d": {
                    "spec": {"family": "dip_conv_1d", "depth": 2, "width": 4},
                    "fit": {"steps": 5, "learning_rate": 1e-4},
                }
            },
            "fit": {"record_every": 1},
            "signal": {
                "n": 64, "k1": 2, "k2": 9, "a1": 1.0, "a2": 1.0,
                "depths": [2], "widths": [4],
            },
            "seeds": [0],
        },
        out_dir=str(tmp_path / "cap2"),
    )
    with pytest.raises(RuntimeError, match="unconverged"):
        exp_capacity_sweep(cfg)


def test_exp_stride_tiny_heatmap_dimensions(tmp_path):
    cfg = default_config(
        "stride",
        {
            "models": {
                "stride_4": {
                    "spec": {"family": "dip_conv_2d", "depth": 4, "width": 8,
                             "upsample_stride": 4}
                },
                "stride_32": {
                    "spec": {"family": "dip_conv_2d", "depth": 2, "width": 8,
                             "upsample_stride": 32}
                },
            },
            "fit": {"steps": 30, "learning_rate": 3e-3, "record_every": 10},
            "signal": {
                "size": 32,
                "corpus_image": "shapes",
                "high_band": [8, 32],
                "low_band": [0, 4],
                "probe_iter": 20,
            },
            "seeds": [0],
        },
        out_dir=str(tmp_path / "stride"),
    )
    report = exp_stride(cfg)
    # heatmap rows = recorded iterations {0,10,20,30}, cols = radial bins
    img = load_pgm(tmp_path / "stride" / "errmap_stride_4.pgm")
    assert img.shape == (4, 32 // 2 + 1)
    assert "stride32_smoother_per_seed" in report.aggregate
    header, rows = read_csv(tmp_path / "stride" / "bands.csv")
    assert len(rows) == 2 * 1 * 4  # archs x seeds x recorded iterations


def test_exp_spectrum_tiny(tmp_path):
    cfg = default_config(
        "spectrum",
        {
            "models": {
                "model": {"spec": {"family": "dip_conv_2d", "depth": 2, "width": 8}}
            },
            "fit": {"learning_rate": 3e-3},
            "signal": {"size": 16, "corpus_image": "blobs", "iterations": [4, 8]},
            "seeds": [0],
        },
        out_dir=str(tmp_path / "spec"),
    )
    report = exp_spectrum_traj(cfg)
    img = load_pgm(tmp_path / "spec" / "spectra.pgm")
    assert img.shape == (2, 16 // 2 + 1)
    header, rows = read_csv(tmp_path / "spec" / "spectra.csv")
    assert len(rows) == 2 * (16 // 2 + 1)
    assert "final_spectrum_gap" in report.aggregate


def test_grad_check_experiment_and_sweep(tmp_path):
    rows = grad_check_sweep(12, seed=0)
    assert len(rows) == 12
    assert max(r["rel_err"] for r in rows) <= 1e-4
    cfg = default_config(
        "grad_check", {"signal": {"configs": 12, "tolerance": 1e-4}},
        out_dir=str(tmp_path / "gc"),
    )
    report = grad_check_experiment(cfg)
    assert report.aggregate["all_within_tolerance"] is True
    header, csv_rows = read_csv(tmp_path / "gc" / "grad_check.csv")
    assert len(csv_rows) == 12


def test_upsample_response_experiment(tmp_path):
    cfg = default_config(
        "upsample_response", {}, out_dir=str(tmp_path / "ur")
    )
    report = upsample_response_experiment(cfg)
    header, rows = read_csv(tmp_path / "ur" / "responses.csv")
    assert len(rows) == 2 * 3 * 13  # modes x strides x cycles
    # this grid stays below 0.4/L for every swept stride
    assert report.aggregate["worst_abs_diff"] < 0.05


def test_run_experiment_dispatch(tmp_path):
    cfg = default_config(
        "grad_check", {"signal": {"configs": 5, "tolerance": 1e-4}},
        out_dir=str(tmp_path / "gc2"),
    )
    report = run_experiment(cfg)
    assert report.aggregate["all_within_tolerance"] is True


def test_report_json_parses_back(tmp_path):
    cfg = _tiny_1d_config(tmp_path, seeds=(0,))
    exp_1d(cfg)
    with open(tmp_path / "e1d" / "report.json") as fh:
        data = json.load(fh)
    assert data["config"]["kind"] == "1d"
    assert set(data) == {"config", "per_seed", "aggregate", "wall_clock_s", "manifest"}
    for name in data["manifest"]:
        assert os.path.exists(tmp_path / "e1d" / name)


def test_workers_do_not_change_results(tmp_path):
    cfg1 = _tiny_1d_config(tmp_path / "w1", seeds=(0, 1))
    cfg2 = _tiny_1d_config(tmp_path / "w2", seeds=(0, 1))
    cfg2.workers = 2
    exp_1d(cfg1)
    exp_1d(cfg2)
    ba = (tmp_path / "w1" / "e1d" / "times.csv").read_bytes()
    bb = (tmp_path / "w2" / "e1d" / "times.csv").read_bytes()
    assert ba == bb
