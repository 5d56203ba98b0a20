import csv
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from varsfl.cli import OUTPUT_ENV, main, scoring_set_size
from varsfl.config import ExperimentConfig, parse_config, serialize_config
from varsfl.errors import ConfigError
from varsfl.federation import prepare_data
from varsfl.reporting import dumps, read_jsonl

from .conftest import micro_config


def write_cfg(tmp_path, cfg, name="cfg.txt"):
    path = tmp_path / name
    path.write_text(serialize_config(cfg), encoding="utf-8")
    return str(path)


# --------------------------------------------------------------------------
# config text format

def test_default_round_trip():
    cfg = ExperimentConfig().validate()
    assert parse_config(serialize_config(cfg)) == cfg


def test_micro_round_trip_preserves_every_field():
    cfg = micro_config(partition__max_samples=None, training__learning_rate=0.1 + 0.2)
    again = parse_config(serialize_config(cfg))
    assert again == cfg
    assert again.training.learning_rate == 0.1 + 0.2
    assert again.partition.max_samples is None


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-6, 1.0, allow_nan=False), st.integers(1, 50), st.floats(0.0, 1.0),
       st.lists(st.integers(0, 2**31), min_size=1, max_size=4))
def test_round_trip_property(lr, rounds, rho, seeds):
    cfg = micro_config(training__learning_rate=lr, training__rounds=rounds, selector__rho=rho,
                       experiment__seeds=tuple(seeds))
    assert parse_config(serialize_config(cfg)) == cfg


def test_partial_config_keeps_defaults_and_comments():
    cfg = parse_config("# defaults with a short run\ntraining.rounds = 3  # quick\n")
    assert cfg.training.rounds == 3
    assert cfg.selector.rho == 0.3 and cfg.model.hidden_dims == (128, 64, 32)


@pytest.mark.parametrize("text,field", [
    ("training.roundz = 3", "training.roundz"),
    ("trainin.rounds = 3", "trainin.rounds"),
    ("training.rounds = three", "training.rounds"),
    ("training.rounds = 3\ntraining.rounds = 4", "training.rounds"),
    ("training.rounds = -1", "training.rounds"),
    ("selector.rho = 1.5", "selector.rho"),
    ("dataset.split = 0.5,0.5,0.5", "dataset.split"),
    ("dataset.cap_fraction = 0.5", "dataset.majority_class"),
    ("training.clients_per_round = 2.5", "training.clients_per_round"),
])
def test_invalid_configs_name_the_field(text, field):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.field == field
    assert field in str(err.value)


def test_unknown_policy_lists_valid_ones():
    with pytest.raises(ConfigError, match="fedavg-random, power-of-choice, oort-simplified, vars-fl"):
        parse_config("selector.policies = vars-fl,krum")


def test_replace_rejects_unknown_key():
    with pytest.raises(ConfigError):
        ExperimentConfig().replace(training__epochs=3)


# --------------------------------------------------------------------------
# CLI

def test_cli_run_smoke(tmp_path, capsys):
    cfg = micro_config(partition__num_clients=2, partition__min_samples=1, training__rounds=1,
                       training__clients_per_round=1.0, selector__cold_start=0, experiment__seeds=(7,))
    out = tmp_path / "out"
    assert main(["run", write_cfg(tmp_path, cfg), "--output-dir", str(out)]) == 0
    for policy in cfg.selector.policies:
        rows = read_jsonl(out / policy / "7" / "rounds.jsonl")
        assert len(rows) == 1 and rows[0]["round"] == 1 and rows[0]["policy"] == policy
        assert len(rows[0]["clients"]) == 1
    with open(out / "summary.csv", newline="") as fh:
        summary = list(csv.DictReader(fh))
    assert {r["policy"] for r in summary} == set(cfg.selector.policies)
    assert list(summary[0]) == ["policy", "metric", "mean", "std", "n"]
    assert parse_config((out / "config.txt").read_text()) == cfg
    meta = json.loads((out / "metadata.json").read_text())
    assert any("zero-support" in c for c in meta["metric_conventions"])


def test_cli_output_env_override(tmp_path, monkeypatch):
    cfg = micro_config(training__rounds=1, selector__policies=("vars-fl",))
    target = tmp_path / "from_env"
    monkeypatch.setenv(OUTPUT_ENV, str(target))
    assert main(["run", write_cfg(tmp_path, cfg)]) == 0
    assert (target / "vars-fl" / "7" / "rounds.jsonl").exists()


def test_cli_jsonl_is_byte_identical_across_runs(tmp_path):
    cfg = micro_config(training__rounds=3, selector__policies=("vars-fl", "oort-simplified"))
    path = write_cfg(tmp_path, cfg)
    for name in ("a", "b"):
        assert main(["run", path, "--output-dir", str(tmp_path / name)]) == 0
    for policy in cfg.selector.policies:
        a = (tmp_path / "a" / policy / "7" / "rounds.jsonl").read_bytes()
        b = (tmp_path / "b" / policy / "7" / "rounds.jsonl").read_bytes()
        assert a == b and a.count(b"\n") == 3


def test_cli_bad_config_exit_code(tmp_path, capsys):
    path = tmp_path / "bad.txt"
    path.write_text("training.rounds = many\n")
    assert main(["run", str(path)]) == 2
    assert "training.rounds" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.txt")]) == 2


def test_cli_complexity_full_scale_numbers(tmp_path, capsys):
    path = write_cfg(tmp_path, ExperimentConfig().validate())
    js = tmp_path / "c.json"
    assert main(["complexity", path, "--val-size", "110407", "--json", str(js)]) == 0
    table = capsys.readouterr().out
    assert "16,463" in table and "16,224" in table
    rep = json.loads(js.read_text())
    assert rep["param_count"] == 16_463
    assert rep["layer_param_counts"] == [5_632, 8_256, 2_080, 495]
    assert rep["macs_per_sample"] == 16_224
    assert rep["clients_per_round"] == 10
    assert rep["server_macs_per_round"] == 17_912_431_680
    assert rep["uplink_bytes_per_client"] == 65_852
    assert rep["uplink_bytes_per_round"] == 658_520
    assert rep["ledger_scalars"] == 500


def test_scoring_set_size_matches_prepared_data():
    for overrides in ({}, {"dataset__stratified": False}, {"validation__mode": "uniform", "validation__per_class": 7},
                      {"dataset__majority_class": "class_00", "dataset__cap_fraction": 0.3},
                      {"training__score_subsample": 0.5}):
        cfg = micro_config(**overrides)
        assert scoring_set_size(cfg) == len(prepare_data(cfg, 7).score_val.labels), overrides


def test_cli_partition_dump_is_deterministic(tmp_path, capsys):
    cfg = micro_config()
    path = write_cfg(tmp_path, cfg)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["partition-dump", path, "--seed", "7", "--out", str(a)]) == 0
    assert main(["partition-dump", path, "--seed", "7", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    with open(a, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 10
    assert list(rows[0])[:3] == ["client_id", "n_samples", "n_classes"]
    prepared = prepare_data(cfg, 7)
    assert [int(r["n_samples"]) for r in rows] == [s.n for s in prepared.shards]
    stats = json.loads((tmp_path / "a_stats.json").read_text())
    assert stats["achieved"]["num_clients"] == 10 and stats["targets"]["max_classes"] == 3
    c = tmp_path / "c.csv"
    main(["partition-dump", path, "--seed", "8", "--out", str(c)])
    assert c.read_bytes() != a.read_bytes()


def test_cli_delta(tmp_path):
    def rounds(accs):
        return "".join(dumps({"round": i + 1, "test": {"accuracy": a, "f1_macro": a, "f1_weighted": a, "loss": 1 - a}})
                       + "\n" for i, a in enumerate(accs))

    (tmp_path / "a.jsonl").write_text(rounds([0.5, 0.75]))
    (tmp_path / "b.jsonl").write_text(rounds([0.25, 0.5]))
    out = tmp_path / "d.csv"
    assert main(["delta", str(tmp_path / "a.jsonl"), str(tmp_path / "b.jsonl"), "--out", str(out)]) == 0
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["accuracy_delta"]) for r in rows] == [0.25, 0.25]
    assert [float(r["loss_delta"]) for r in rows] == [-0.25, -0.25]


def test_dumps_round_trips_floats_exactly():
    x = 0.1 + 0.2
    assert json.loads(dumps({"x": x}))["x"] == x
