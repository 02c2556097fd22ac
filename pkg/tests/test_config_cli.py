import json

import numpy as np
import pytest

from swapgraph.cli import main
from swapgraph.config import (
    DEFAULTS,
    PRESETS,
    load_config_file,
    preset_values,
    resolve_config,
    to_synthetic_spec,
    to_train_config,
)
from swapgraph.errors import ConfigError


# ---------------------------------------------------------------------------
# config resolution


def test_preset_loss_weights_are_pinned():
    assert preset_values("camelyon")["lambda_swap"] == 0.9
    assert preset_values("camelyon")["lambda_str"] == 1.2
    assert preset_values("camelyon")["lambda_adv"] == 1.3
    assert preset_values("chexpert")["lambda_swap"] == 0.95
    assert preset_values("chexpert")["lambda_str"] == 1.1
    assert preset_values("chexpert")["lambda_adv"] == 1.3
    assert preset_values("nih")["lambda_swap"] == 0.9
    assert preset_values("nih")["lambda_str"] == 1.2
    assert preset_values("nih")["lambda_adv"] == 1.2
    assert set(PRESETS) == {"camelyon", "chexpert", "nih", "desk"}


def test_unknown_preset_is_named_in_the_error():
    with pytest.raises(ConfigError, match="nonesuch"):
        preset_values("nonesuch")


def test_every_preset_key_is_a_known_config_key():
    for name, patch in PRESETS.items():
        for key in patch:
            assert key in DEFAULTS, (name, key)


def test_resolve_defaults_when_nothing_is_given():
    cfg = resolve_config()
    assert cfg == DEFAULTS
    assert cfg is not DEFAULTS


def test_file_overrides_preset_and_flags_override_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"preset": "nih", "lambda_adv": 0.5, "seed": 3}))
    cfg = resolve_config(str(path))
    assert cfg["lambda_swap"] == 0.9          # from nih
    assert cfg["lambda_adv"] == 0.5           # file beats preset
    assert cfg["seed"] == 3
    cfg = resolve_config(str(path), overrides={"seed": 9})
    assert cfg["seed"] == 9                   # flag beats file


def test_explicit_preset_argument_beats_the_file_preset(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"preset": "nih"}))
    cfg = resolve_config(str(path), preset="chexpert")
    assert cfg["preset"] == "chexpert"
    assert cfg["lambda_swap"] == 0.95


def test_unknown_keys_are_rejected_by_name(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"lambda_sawp": 0.9}))
    with pytest.raises(ConfigError, match="lambda_sawp"):
        load_config_file(str(path))
    with pytest.raises(ConfigError, match="batch_sze"):
        resolve_config(overrides={"batch_sze": 4})


def test_type_errors_name_the_key(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"epochs": "many"}))
    with pytest.raises(ConfigError, match="epochs"):
        load_config_file(str(path))
    with pytest.raises(ConfigError, match="disable_str"):
        resolve_config(overrides={"disable_str": 1})
    with pytest.raises(ConfigError, match="enc_widths"):
        resolve_config(overrides={"enc_widths": [8, 8]})


def test_config_file_errors_carry_the_path(tmp_path):
    with pytest.raises(ConfigError, match="nope.json"):
        resolve_config(str(tmp_path / "nope.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="bad.json"):
        resolve_config(str(bad))
    array = tmp_path / "array.json"
    array.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="object"):
        resolve_config(str(array))


def test_train_config_and_synthetic_spec_share_geometry():
    cfg = resolve_config(overrides={"image_size": 16, "seed": 5, "n_per_class": 7})
    tc = to_train_config(cfg)
    spec = to_synthetic_spec(cfg)
    assert tc.image_size == 16 and spec.size == 16
    assert tc.seed == 5 and spec.seed == 5
    assert tc.n_classes == spec.n_classes
    assert spec.n_per_class == 7
    assert isinstance(tc.enc_widths, tuple)


def test_widths_from_json_lists_become_tuples(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"enc_widths": [8, 6, 6]}))
    cfg = resolve_config(str(path))
    assert cfg["enc_widths"] == (8, 6, 6)


# ---------------------------------------------------------------------------
# command line


def write_micro_config(tmp_path, **extra):
    cfg = {
        "epochs": 1,
        "batch_size": 4,
        "n_per_class": 6,
        "image_size": 8,
        "d_tex": 3,
        "enc_widths": [4, 3, 3],
        "disc_widths": [3, 3, 4],
        "gcn_hidden": 5,
        "gcn_out": 4,
        "dom_hidden": 4,
        "tsne_perplexity": 2.0,
        "tsne_iters": 60,
    }
    cfg.update(extra)
    path = tmp_path / "micro.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def test_missing_config_file_exits_2(tmp_path, capsys):
    code = main(["train", "--config", str(tmp_path / "absent.json")])
    assert code == 2
    err = capsys.readouterr().err
    assert "absent.json" in err and "config error" in err


def test_unknown_config_key_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"lamda_str": 1.0}))
    assert main(["train", "--config", str(path)]) == 2
    assert "lamda_str" in capsys.readouterr().err


def test_gen_data_writes_both_domains(tmp_path):
    cfg = write_micro_config(tmp_path)
    out = tmp_path / "data"
    assert main(["gen-data", "--config", cfg, "--out", str(out)]) == 0
    for domain in ("source", "target"):
        assert (out / domain / "labels.csv").exists()
        assert (out / domain / "img_00000.pgm").exists()


def test_gen_data_is_byte_deterministic(tmp_path):
    cfg = write_micro_config(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["gen-data", "--config", cfg, "--out", str(a)]) == 0
    assert main(["gen-data", "--config", cfg, "--out", str(b)]) == 0
    assert (a / "source" / "img_00003.pgm").read_bytes() == (
        b / "source" / "img_00003.pgm"
    ).read_bytes()
    assert (a / "target" / "labels.csv").read_bytes() == (
        b / "target" / "labels.csv"
    ).read_bytes()


def test_train_eval_embed_pipeline(tmp_path, capsys):
    cfg = write_micro_config(tmp_path)
    run = tmp_path / "run"
    assert main(["train", "--config", cfg, "--out", str(run)]) == 0
    assert (run / "checkpoint.gcan").exists()
    assert (run / "history.csv").exists()
    metrics = json.loads((run / "metrics.json").read_text())
    assert "source_test" in metrics and "target_test" in metrics
    assert metrics["config"]["epochs"] == 1

    evdir = tmp_path / "ev"
    code = main([
        "eval", "--config", cfg, "--out", str(evdir),
        "--checkpoint", str(run / "checkpoint.gcan"), "--domain", "target",
    ])
    assert code == 0
    ev = json.loads((evdir / "metrics.json").read_text())
    assert ev["target_eval"]["accuracy"] == metrics["target_test"]["accuracy"]

    emdir = tmp_path / "em"
    code = main([
        "embed", "--config", cfg, "--out", str(emdir),
        "--checkpoint", str(run / "checkpoint.gcan"),
    ])
    assert code == 0
    svg = (emdir / "embedding.svg").read_text()
    assert svg.startswith("<svg") and "<circle" in svg
    assert (emdir / "embedding.csv").read_text().startswith("x,y,label,domain")


def test_train_artifacts_are_reproducible(tmp_path):
    cfg = write_micro_config(tmp_path)
    a, b = tmp_path / "ra", tmp_path / "rb"
    assert main(["train", "--config", cfg, "--out", str(a)]) == 0
    assert main(["train", "--config", cfg, "--out", str(b)]) == 0
    for name in ("checkpoint.gcan", "history.csv", "metrics.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_seed_flag_changes_the_run(tmp_path):
    cfg = write_micro_config(tmp_path)
    a, b = tmp_path / "ra", tmp_path / "rb"
    assert main(["train", "--config", cfg, "--out", str(a), "--seed", "0"]) == 0
    assert main(["train", "--config", cfg, "--out", str(b), "--seed", "1"]) == 0
    assert (a / "history.csv").read_bytes() != (b / "history.csv").read_bytes()


def test_train_from_saved_directories(tmp_path):
    cfg = write_micro_config(tmp_path)
    data = tmp_path / "data"
    assert main(["gen-data", "--config", cfg, "--out", str(data)]) == 0
    run = tmp_path / "run"
    code = main([
        "train", "--config", cfg, "--out", str(run),
        "--source-dir", str(data / "source"), "--target-dir", str(data / "target"),
    ])
    assert code == 0
    assert (run / "checkpoint.gcan").exists()


def test_lone_source_dir_is_a_config_error(tmp_path, capsys):
    cfg = write_micro_config(tmp_path)
    code = main(["train", "--config", cfg, "--out", str(tmp_path / "x"),
                 "--source-dir", str(tmp_path)])
    assert code == 2
    assert "together" in capsys.readouterr().err


def test_checkpoint_geometry_mismatch_exits_1(tmp_path, capsys):
    cfg = write_micro_config(tmp_path)
    run = tmp_path / "run"
    assert main(["train", "--config", cfg, "--out", str(run)]) == 0
    (tmp_path / "sub").mkdir(exist_ok=True)
    other = write_micro_config(tmp_path / "sub", d_tex=5)
    code = main([
        "eval", "--config", other, "--out", str(tmp_path / "ev"),
        "--checkpoint", str(run / "checkpoint.gcan"),
    ])
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_gradcheck_passes(capsys):
    assert main(["gradcheck", "--seed", "0"]) == 0
    out = capsys.readouterr().out
    assert "all" in out and "passed" in out


def test_ablate_emits_all_three_variants(tmp_path, capsys):
    cfg = write_micro_config(tmp_path)
    out = tmp_path / "abl"
    assert main(["ablate", "--config", cfg, "--out", str(out)]) == 0
    stdout = capsys.readouterr().out
    for row in ("full", "no-str", "no-swap"):
        assert row in stdout
    rows = json.loads((out / "ablation.json").read_text())
    assert set(rows) == {"full", "no-str", "no-swap"}
    for report in rows.values():
        assert "target_test" in report


def test_help_lists_every_subcommand(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["--help"])
    assert excinfo.value.code == 0
    out = capsys.readouterr().out
    for sub in ("gen-data", "train", "eval", "gradcheck", "embed", "ablate"):
        assert sub in out
