import json
from dataclasses import replace
from pathlib import Path

import pytest

from splesp.errors import ContractError
from splesp.experiment import (
    ExperimentConfig, config_to_ini, evaluate_oracle, load_config, parse_config, read_run_config,
    run_comparison, run_generate, run_train,
)
from splesp.synth_world import generate_dataset
from splesp.trainer import Mode

TINY_INI = """
[dataset]
n_train_scenes = 6
n_test_scenes = 3
grid_width = 16
grid_height = 12
seed = 4

[train]
epochs_total = 2
epochs_esp = 1
epochs_spl = 1
batch_size = 4

[experiment]
seeds = 0, 1
modes = AS, ES, HEM, SPL-ESP-BC
"""


@pytest.fixture
def tiny_cfg():
    return parse_config(TINY_INI)


def test_defaults():
    cfg = load_config(None)
    assert cfg.dataset.n_train_scenes == 500 and cfg.dataset.n_test_scenes == 150
    assert cfg.train.epochs_total == 150 and cfg.train.batch_size == 8
    assert [m.value for m in cfg.modes] == ["AS", "ES", "HEM", "SPL-ESP-BC"]


def test_ini_round_trip(tiny_cfg):
    again = parse_config(config_to_ini(tiny_cfg))
    assert again.to_dict() == tiny_cfg.to_dict()
    assert parse_config(config_to_ini(ExperimentConfig())).to_dict() == ExperimentConfig().to_dict()


def test_schedule_keys():
    cfg = parse_config("[train]\nxi0 = 0.7\nxi_e2 = 0.8\nlambda0 = 0.3\n")
    assert (cfg.train.xi.start_value, cfg.train.xi.e1, cfg.train.xi.e2) == (0.7, 0.1, 0.8)
    assert cfg.train.lam.start_value == 0.3


@pytest.mark.parametrize("text", [
    "[bogus]\nx = 1\n", "[train]\nbogus = 1\n", "[train]\nbatch_size = many\n", "[experiment]\nseeds =\n",
    "[train]\nmode = XYZ\n", "[eval]\nnms_iou = 1.5\n", "not an ini", "[dataset]\ndifficulty_mix = 1, 1, 1, 1\n",
])
def test_bad_configs(text):
    with pytest.raises(ContractError):
        parse_config(text)


def test_missing_file(tmp_path):
    with pytest.raises(ContractError):
        load_config(tmp_path / "none.ini")


def test_overrides(tiny_cfg):
    cfg = tiny_cfg.with_overrides(seed=5, mode="HEM")
    assert cfg.seeds == (5,) and cfg.train.seed == 5 and cfg.train.mode is Mode.HEM


def test_generate_is_byte_identical(tmp_path, tiny_cfg):
    s1 = run_generate(tiny_cfg, tmp_path / "a")
    run_generate(tiny_cfg, tmp_path / "b")
    for name in ("train.spd", "test.spd"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert s1["train"]["scenes"] == 6 and s1["test"]["scenes"] == 3


def test_run_directory_provenance(tmp_path, tiny_cfg):
    cfg = tiny_cfg.with_overrides(seed=1, mode="SPL-ESP-BC")
    run_train(cfg, tmp_path / "r")
    run = json.loads((tmp_path / "r" / "run.json").read_text())
    assert run["seed"] == 1 and run["mode"] == "SPL-ESP-BC"
    assert run["dataset_format"][0] == "splesp-dataset" and run["checkpoint_format"][0] == "splesp-checkpoint"
    back = read_run_config(tmp_path / "r")
    assert back.to_dict() == cfg.to_dict()
    # the echoed config reproduces the run bit for bit
    run_train(back, tmp_path / "r2")
    assert (tmp_path / "r" / "checkpoint_final.json").read_bytes() == \
        (tmp_path / "r2" / "checkpoint_final.json").read_bytes()
    with pytest.raises(ContractError):
        read_run_config(tmp_path)


def test_oracle_report(tiny_cfg):
    cfg = replace(tiny_cfg, dataset=replace(tiny_cfg.dataset, distractor_rate=0.0))
    rep = evaluate_oracle(cfg, generate_dataset(cfg.dataset))
    assert rep.ap50 == 1.0 and rep.false_detection_rate == 0.0


def test_comparison_rows(tmp_path, tiny_cfg):
    rows, outcomes = run_comparison(tiny_cfg, tmp_path)
    assert [(r["mode"], r["seed"]) for r in rows] == [
        (m, s) for m in ("AS", "ES", "HEM", "SPL-ESP-BC") for s in (0, 1, "mean")
    ]
    assert len(outcomes) == 8
    lines = (tmp_path / "comparison.tsv").read_text().splitlines()
    assert len(lines) == 1 + 12
    for o in outcomes:
        assert (o.run_dir / "eval.json").is_file()
    single, _ = run_comparison(tiny_cfg, tmp_path / "one", modes=["AS"], seeds=[0])
    assert [(r["mode"], r["seed"]) for r in single] == [("AS", 0), ("AS", "mean")]


def test_parallel_comparison_matches_serial(tmp_path, tiny_cfg):
    a, _ = run_comparison(tiny_cfg, tmp_path / "s", modes=["AS", "HEM"], seeds=[0])
    b, _ = run_comparison(tiny_cfg, tmp_path / "p", modes=["AS", "HEM"], seeds=[0], jobs=2)
    assert a == b


def test_shipped_configs_parse():
    paths = sorted((Path(__file__).parent.parent / "configs").glob("*.ini"))
    assert {load_config(p).train.mode for p in paths} == set(Mode)
    for p in paths:
        cfg = load_config(p)
        assert cfg.seeds == (0, 1, 2)
        assert cfg.dataset == ExperimentConfig().dataset
