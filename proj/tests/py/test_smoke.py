import numpy as np
import pytest

import fscil_bench as fb


def tiny_config(out_dir, seed=77, strategy="joint_standard"):
    return {
        "dataset": {
            "num_classes": 6,
            "samples_per_class": 24,
            "test_per_class": 8,
            "image_size": 8,
            "separation": 3.0,
            "noise": 0.4,
        },
        "protocol": {"base_classes": 4, "ways": 1, "sessions": 2, "shots": 3},
        "train": {
            "strategy": strategy,
            "epochs": 2,
            "batch_size": 16,
            "lr": 0.05,
            "backbone_depth": 8,
            "backbone_width": 4,
        },
        "output_dir": str(out_dir),
        "seed": seed,
    }


def test_normalize_config_fills_defaults_and_rejects_unknown_keys(tmp_path):
    cfg = tiny_config(tmp_path / "run")
    full = fb.normalize_config(cfg)
    assert full["train"]["momentum"] == pytest.approx(0.9)
    assert fb.normalize_config(full) == full
    assert fb.config_hash(full) == fb.config_hash(cfg)
    with pytest.raises(fb.ConfigError):
        fb.normalize_config({**cfg, "typo": 1})


def test_derive_seed_streams_are_stable_and_separated():
    assert fb.derive_seed(7, "protocol") == fb.derive_seed(7, "protocol")
    assert fb.derive_seed(7, "protocol") != fb.derive_seed(7, "dataset/synthetic")
    assert fb.derive_seed(7, "protocol") != fb.derive_seed(8, "protocol")


def test_linear_cka_rotation_invariance_and_degenerate_input():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((64, 8))
    q, _ = np.linalg.qr(rng.standard_normal((8, 8)))
    assert fb.linear_cka(x, x @ q) == pytest.approx(1.0, abs=1e-5)
    y = rng.standard_normal((64, 8))
    assert fb.linear_cka(x, y) < 0.9
    assert fb.linear_cka(x, np.zeros((64, 8))) is None


def test_train_is_deterministic_and_reportable(tmp_path):
    run_a = fb.train(tiny_config(tmp_path / "a"))
    assert run_a["status"] == "complete"
    assert [s["session"] for s in run_a["sessions"]] == [0, 1, 2]
    assert (tmp_path / "a" / "run.json").exists()

    run_b = fb.train(tiny_config(tmp_path / "b"))
    assert run_a["sessions"] == run_b["sessions"]

    bundle = fb.report([tmp_path / "a", tmp_path / "b"], tmp_path / "rep")
    names = {f.rsplit("/", 1)[-1] for f in bundle["files"]}
    assert {"table.txt", "table.csv", "resource_curves.png", "provenance.json"} <= names

    text = fb.inspect(tmp_path / "a")
    assert "session 2" in text and "strategy joint_standard" in text


def test_report_refuses_mixed_protocols(tmp_path):
    fb.train(tiny_config(tmp_path / "a", seed=77))
    fb.train(tiny_config(tmp_path / "b", seed=78))
    with pytest.raises(fb.DataError):
        fb.report([tmp_path / "a", tmp_path / "b"], tmp_path / "rep")


def test_search_runs_and_resumes(tmp_path):
    cfg = tiny_config(tmp_path / "s")
    cfg["search"] = {"trials": 2, "technique": "cmo"}
    records = fb.search(cfg)
    assert [r["trial"] for r in records] == [0, 1]
    assert all(r["status"] == "complete" for r in records)
    assert records[0]["params"] != records[1]["params"]
    again = fb.search(cfg)  # records already on disk are reused
    assert again == records


def test_config_errors_surface_as_config_error(tmp_path):
    cfg = tiny_config(tmp_path / "x")
    cfg["train"]["plugins"] = [
        {"category": "resampling", "name": "cmo", "params": {}},
        {"category": "resampling", "name": "cmo", "params": {}},
    ]
    cfg["train"]["strategy"] = "joint_imbalance"
    with pytest.raises(fb.ConfigError):
        fb.train(cfg)
