import json

import numpy as np
import pytest

from cyclet import cli
from cyclet import synthdata as S
from cyclet import tensor as T
from cyclet.config import ConfigError, config_from_dict, default_config_dict, load_config
from cyclet.losses import cycle_loss_pixel
from cyclet.trainer import METRIC_COLUMNS, read_metrics


def write_cfg(tmp_path, name="cfg.json", **kw):
    doc = {"total_epochs": 4, "samples_per_domain": 8, "checkpoint_every": 2,
           "output_dir": str(tmp_path / "run"), "data_root": None}
    doc.update(kw)
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


# -------------------------------------------------------------------- config


def test_defaults_document_every_field():
    d = default_config_dict()
    assert set(d) == {"total_epochs", "batch_size", "samples_per_domain", "seed", "checkpoint_every",
                      "output_dir", "data_root", "adam", "schedule", "loss"}
    assert d["schedule"]["lr_constant_epochs"] == 100
    assert d["loss"] == {"gan_form": "least_squares", "quality_mode": "generated"}
    assert config_from_dict({}).to_dict() == d


@pytest.mark.parametrize("doc", [
    {"bogus": 1},
    {"schedule": {"lamda_end": 1.0}},
    {"adam": {"beta3": 0.1}},
    {"loss": {"gamma": 0.5}},
    {"total_epochs": 1.5},
    {"total_epochs": 10, "schedule": {"total_epochs": 20}},
    {"schedule": {"gamma_end": 1.0}},
    {"loss": {"quality_mode": "maybe"}},
    {"samples_per_domain": 10, "batch_size": 4},
])
def test_invalid_configs(doc):
    with pytest.raises(ConfigError):
        config_from_dict(doc)


def test_load_config_reports_bad_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{nope")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(p)


# ------------------------------------------------------------------- gen-data


def test_gen_data(tmp_path, capsys):
    assert cli.main(["gen-data", "--out", str(tmp_path / "d1"), "--count", "8", "--seed", "2"]) == 0
    out = capsys.readouterr().out
    for sub in ("trainA", "trainB", "testA", "testB"):
        assert f"{sub}: 8" in out
        assert len(list((tmp_path / "d1" / sub).glob("*.ppm"))) == 8
    cli.main(["gen-data", "--out", str(tmp_path / "d2"), "--count", "8", "--seed", "2"])
    for f in sorted((tmp_path / "d1").rglob("*.ppm")):
        assert f.read_bytes() == (tmp_path / "d2" / f.relative_to(tmp_path / "d1")).read_bytes()


def test_gen_data_zero_count_is_validation_error(tmp_path):
    assert cli.main(["gen-data", "--out", str(tmp_path / "d"), "--count", "0", "--seed", "1"]) == 2


def test_usage_error_exit_code():
    assert cli.main(["train"]) == 2
    assert cli.main(["grad-check", "--scope", "everything"]) == 2


# ---------------------------------------------------------------------- train


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """One short run per mode, on an on-disk dataset."""
    root = tmp_path_factory.mktemp("modes")
    assert cli.main(["gen-data", "--out", str(root / "data"), "--count", "8", "--seed", "1"]) == 0
    out = {}
    for mode in cli.MODES:
        cfg = write_cfg(root, f"{mode}.json", output_dir=str(root / mode), data_root=str(root / "data"))
        assert cli.main(["train", "--config", str(cfg), "--mode", mode]) == 0
        out[mode] = root / mode
    return out


def test_all_modes_complete(trained):
    for mode, d in trained.items():
        recs = read_metrics(d / "metrics.csv")
        assert len(recs) == 4
        assert (d / "checkpoints" / "epoch_0004.ckpt").exists()
        assert (d / "samples" / "epoch_0002.ppm").exists()


def test_mode_definitions(trained):
    base = read_metrics(trained["baseline"] / "metrics.csv")
    assert len({r.lambda_t for r in base}) == 1
    assert all(r.gamma_t == 0 and r.cyc_x_weight == 1 and r.cyc_y_weight == 1 for r in base)
    mod = read_metrics(trained["modified"] / "metrics.csv")
    assert all(b.gamma_t > a.gamma_t and b.lambda_t < a.lambda_t for a, b in zip(mod, mod[1:]))
    nq = read_metrics(trained["no-quality"] / "metrics.csv")
    assert all(r.cyc_x_weight == 1 and r.cyc_y_weight == 1 for r in nq)
    assert [r.gamma_t for r in nq] == [r.gamma_t for r in mod]


def test_resolved_config_echo_reproduces_run(trained, tmp_path):
    resolved = json.loads((trained["modified"] / "config.resolved.json").read_text())
    resolved["output_dir"] = str(tmp_path / "again")
    p = tmp_path / "again.json"
    p.write_text(json.dumps(resolved))
    assert cli.main(["train", "--config", str(p)]) == 0
    assert (tmp_path / "again/metrics.csv").read_bytes() == (trained["modified"] / "metrics.csv").read_bytes()


def test_baseline_resolved_config_records_mode(trained):
    resolved = json.loads((trained["baseline"] / "config.resolved.json").read_text())
    s = resolved["schedule"]
    assert s["gamma_start"] == s["gamma_end"] == 0.0
    assert s["lambda_start"] == s["lambda_end"]
    assert resolved["loss"]["quality_mode"] == "off"


def test_train_validation_and_runtime_codes(tmp_path):
    assert cli.main(["train", "--config", str(tmp_path / "missing.json")]) == 2
    bad = write_cfg(tmp_path, "bad.json", schedule={"gamma_end": 1.5})
    assert cli.main(["train", "--config", str(bad)]) == 2
    nodata = write_cfg(tmp_path, "nodata.json", data_root=str(tmp_path / "nowhere"))
    assert cli.main(["train", "--config", str(nodata)]) == 1


def test_seed_env_override(tmp_path, monkeypatch, caplog):
    cfg = write_cfg(tmp_path, total_epochs=1, checkpoint_every=1)
    monkeypatch.setenv("CYCLET_SEED", "99")
    with caplog.at_level("INFO"):
        assert cli.main(["train", "--config", str(cfg)]) == 0
    assert json.loads((tmp_path / "run/config.resolved.json").read_text())["seed"] == 99
    assert any("CYCLET_SEED" in r.message for r in caplog.records)
    monkeypatch.setenv("CYCLET_SEED", "abc")
    assert cli.main(["train", "--config", str(cfg)]) == 2


# ------------------------------------------------------------------ translate


def test_translate_outputs_and_cycle_loss(trained, tmp_path, capsys):
    ck = trained["modified"] / "checkpoints" / "epoch_0004.ckpt"
    src = tmp_path / "in.ppm"
    S.write_ppm(S.synth_sample("A", 4), src)
    args = ["translate", "--checkpoint", str(ck), "--input", str(src), "--direction", "AtoB"]
    capsys.readouterr()
    assert cli.main(args + ["--out", str(tmp_path / "o1.ppm"), "--cycle"]) == 0
    printed = float(capsys.readouterr().out.strip())
    out = S.read_ppm(tmp_path / "o1.ppm")
    assert out.shape == (32, 32, 3)
    rec = tmp_path / "o1_rec.ppm"
    recomputed = cycle_loss_pixel(T.Tensor(S.to_model_range(S.read_ppm(src))),
                                  T.Tensor(S.to_model_range(S.read_ppm(rec)))).item()
    assert printed == recomputed
    assert cli.main(args + ["--out", str(tmp_path / "o2.ppm"), "--cycle"]) == 0
    assert (tmp_path / "o1.ppm").read_bytes() == (tmp_path / "o2.ppm").read_bytes()
    assert rec.read_bytes() == (tmp_path / "o2_rec.ppm").read_bytes()


def test_translate_rejects_wrong_size(trained, tmp_path):
    ck = trained["modified"] / "checkpoints" / "epoch_0004.ckpt"
    S.write_ppm(np.zeros((16, 16, 3), np.uint8), tmp_path / "small.ppm")
    code = cli.main(["translate", "--checkpoint", str(ck), "--input", str(tmp_path / "small.ppm"),
                     "--direction", "BtoA", "--out", str(tmp_path / "o.ppm")])
    assert code == 2


# ----------------------------------------------------------------- grad-check


def test_grad_check_ops_passes(capsys):
    assert cli.main(["grad-check", "--scope", "ops", "--seed", "0"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert any(line.startswith("PASS ops    conv2d") for line in lines)


def test_grad_check_detects_injected_sign_error(monkeypatch, capsys):
    real = T.tanh

    def bad_tanh(x):
        out = real(x)
        if out.backward_fn is not None:
            good = out.backward_fn
            out.backward_fn = lambda g: tuple(-v for v in good(g))
        return out

    monkeypatch.setattr(T, "tanh", bad_tanh)
    assert cli.main(["grad-check", "--scope", "ops", "--seed", "0"]) == 1
    captured = capsys.readouterr()
    assert "FAIL ops    tanh" in captured.out
    assert "FAILED tanh worst_index=" in captured.err


def test_metrics_schema_identical_across_modes(trained):
    for d in trained.values():
        assert (d / "metrics.csv").read_text().splitlines()[0].split(",") == list(METRIC_COLUMNS)
