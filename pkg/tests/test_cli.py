import json

import numpy as np
import pytest

from mga import cli
from mga.adapters import AdapterConfig, build_adapter_model
from mga.cmga import FRAMEALL, FRAMEWISE, CmgaParams
from mga.config import RunConfig
from mga.errors import NumericalError
from mga.experiment import parse_results_line, run_ablation, run_experiment
from mga.params import ParameterStore
from mga.reporting import (
    bench_cost,
    count_parameters,
    export_attention,
    normalize_u8,
    read_csv,
    read_pgm,
    score_elements,
    write_csv,
    write_pgm,
)
from mga.smga import SmgaParams

TINY = dict(frames=4, dim=8, grid=6, r1=2, r2=2, seeds=[0, 1], train_episodes=2, eval_episodes=3, instances_per_class=3)


def tiny(**kw):
    return RunConfig(**{**TINY, **kw}).validate()


# ---------------------------------------------------------------- parameter counts


@pytest.mark.parametrize("dim, r", [(8, 2), (16, 4), (64, 8)])
def test_counts_match_built_modules(dim, r):
    store = ParameterStore(0)
    SmgaParams(store, "smga", 8, dim, r)
    assert count_parameters("smga", dim, r).total == store.num_params()
    store = ParameterStore(0)
    CmgaParams(store, "cmga", dim, r)
    assert count_parameters("cmga", dim, r).total == store.num_params()


def test_counts_itemize_every_built_tensor():
    store = ParameterStore(0)
    CmgaParams(store, "cmga", 32, 4)
    assert count_parameters("cmga", 32, 4).itemized == store.itemized()


def test_adapter_model_counts_match_built_model():
    model = build_adapter_model(AdapterConfig(frames=8, dim=32, r1=2, r2=4))
    pc = count_parameters("adapter-model", 32, 4, 8, r1=2)
    assert pc.total == model.store.num_params(trainable_only=True)
    assert pc.frozen == sum(t.data.size for t in model.store.frozen().values())
    assert pc.itemized == {n: t.data.size for n, t in model.store.trainable().items()}


def test_cmga_count_hand_formula():
    # compress D*D/r + D/r, smoother 9*D/r, two conv branches 2*(9*(D/r)^2 + D/r),
    # per-channel aggregate D/r, value filter 3*D, two scalars
    D, r = 2048, 8
    c = D // r
    expect = D * c + c + 9 * c + 2 * (9 * c * c + c) + c + 3 * D + 2
    assert count_parameters("cmga", D, r).total == expect


def test_params_command_prints_total(capsys):
    assert cli.main(["params", "--component", "cmga", "--dim", "2048", "--r", "8", "--json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["total"] == count_parameters("cmga", 2048, 8).total


# ---------------------------------------------------------------- cost bench


def test_score_elements_for_five_way_seven_by_seven():
    assert score_elements(5, 1, 8, 49, FRAMEWISE) == 96_040
    assert score_elements(5, 1, 8, 49, FRAMEALL) == 8 * 96_040


def test_bench_reports_ratio_and_ordering():
    fw = bench_cost(5, 1, 8, (7, 7), dim=32, r=4, variant=FRAMEWISE, reps=3)
    fa = bench_cost(5, 1, 8, (7, 7), dim=32, r=4, variant=FRAMEALL, reps=3)
    assert fw["score_elements"] == 96_040 and fa["score_elements"] / fw["score_elements"] == 8
    assert fa["macs"] == 8 * fw["macs"] and fa["peak_live_floats"] > fw["peak_live_floats"]
    assert fa["wall_seconds"] > fw["wall_seconds"]


def test_bench_command(capsys):
    assert cli.main(["bench", "--dim", "16", "--reps", "1", "--json"]) == 0
    rows = json.loads(capsys.readouterr().out)
    assert [r["variant"] for r in rows] == [FRAMEWISE, FRAMEALL]


# ---------------------------------------------------------------- export


def test_uniform_matrix_exports_black_image(tmp_path):
    write_pgm(tmp_path / "u.pgm", np.full((3, 4), 0.25))
    img = read_pgm(tmp_path / "u.pgm")
    assert img.shape == (3, 4) and not img.any()


def test_pgm_is_min_max_normalized(tmp_path):
    m = np.array([[0.0, 0.5], [1.0, 0.25]])
    write_pgm(tmp_path / "m.pgm", m)
    assert read_pgm(tmp_path / "m.pgm").tolist() == [[0, 128], [255, 64]]
    assert normalize_u8(np.array([2.0, 4.0])).tolist() == [0, 255]
    assert (tmp_path / "m.pgm").read_bytes().startswith(b"P5\n2 2\n255\n")


def test_csv_round_trip_is_exact(tmp_path):
    m = np.random.default_rng(0).dirichlet(np.ones(7), size=5)
    write_csv(tmp_path / "m.csv", m)
    assert read_csv(tmp_path / "m.csv").tobytes() == m.tobytes()


@pytest.mark.parametrize("variant", [FRAMEWISE, FRAMEALL])
def test_export_cross_scores_of_five_way_run(tmp_path, variant):
    run_experiment(tiny(seeds=[0], cross_variant=variant), tmp_path)
    csv_path, pgm_path = export_attention(tmp_path, "cross", 2, 0)
    m = read_csv(csv_path)
    hw = 36
    width = 5 * hw if variant == FRAMEWISE else 4 * 5 * hw
    assert m.shape == (hw, width)
    assert np.max(np.abs(m.sum(axis=1) - 1)) < 1e-9
    assert read_pgm(pgm_path).shape == (hw, width)
    assert csv_path.name == "attn-r0001_cross_ep0_q0_f2.csv"


def test_export_self_scores(tmp_path):
    run_experiment(tiny(seeds=[0]), tmp_path)
    csv_path, _ = export_attention(tmp_path, "self", 0, 1)
    assert read_csv(csv_path).shape == (36, 36)


def test_export_without_runs_exits_4(tmp_path, capsys):
    assert cli.main(["export-attn", str(tmp_path)]) == 4
    assert "attention" in capsys.readouterr().err


def test_export_of_disabled_module_exits_4(tmp_path):
    run_experiment(tiny(seeds=[0], cmga=False), tmp_path)
    assert cli.main(["export-attn", str(tmp_path), "--which", "cross"]) == 4


def test_export_command_writes_into_run_dir(tmp_path, capsys):
    run_experiment(tiny(seeds=[0]), tmp_path)
    assert cli.main(["export-attn", str(tmp_path), "--frame", "1"]) == 0
    assert (tmp_path / "attention" / "attn-r0001_cross_ep0_q0_f1.pgm").is_file()


# ---------------------------------------------------------------- run command


def write_cfg(path, **kw):
    cfg = {**TINY, **kw}
    lines = [f"{k} = {','.join(map(str, v)) if isinstance(v, list) else v}" for k, v in cfg.items()]
    path.write_text("\n".join(lines) + "\n")
    return path


def test_unknown_key_exits_2_naming_it(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("n_way = 5\nlearning_rate = 0.1\n")
    assert cli.main(["run", str(cfg)]) == 2
    assert "learning_rate" in capsys.readouterr().err


def test_invalid_ratio_flag_exits_2(tmp_path, capsys):
    assert cli.main(["run", str(write_cfg(tmp_path / "c.cfg")), "--r1", "3", "--output-dir", str(tmp_path)]) == 2
    assert "r1" in capsys.readouterr().err


def test_numerical_failure_exits_3(tmp_path, monkeypatch, capsys):
    def boom(*args, **kwargs):
        raise NumericalError("non-finite values produced by operation 'softmax_rows'", op="softmax_rows")

    monkeypatch.setattr(cli, "run_experiment", boom)
    assert cli.main(["run", str(write_cfg(tmp_path / "c.cfg")), "--output-dir", str(tmp_path)]) == 3
    assert "softmax_rows" in capsys.readouterr().err


def strip_volatile(line):
    cells = parse_results_line(line)
    for key in ("timestamp", "wall_seconds"):
        cells.pop(key)
    return cells


def test_identical_configs_give_identical_records(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    cfg = tiny()
    run_experiment(cfg, a)
    run_experiment(cfg, b)
    la = (a / "results.txt").read_text().splitlines()
    lb = (b / "results.txt").read_text().splitlines()
    assert strip_volatile(la[0]) == strip_volatile(lb[0])
    with np.load(a / "attn-r0001.npz") as x, np.load(b / "attn-r0001.npz") as y:
        assert all(x[k].tobytes() == y[k].tobytes() for k in x.files)


def test_ablation_writes_four_records_baseline_first(tmp_path):
    recs = run_ablation(tiny(seeds=[0]), tmp_path)
    lines = (tmp_path / "results.txt").read_text().splitlines()
    assert len(recs) == len(lines) == 4
    cells = [parse_results_line(l) for l in lines]
    assert [(c["smga"], c["cmga"]) for c in cells] == [("False", "False"), ("True", "False"), ("False", "True"), ("True", "True")]
    assert [c["run"] for c in cells] == ["r0001", "r0002", "r0003", "r0004"]


def test_results_are_append_only(tmp_path):
    run_experiment(tiny(seeds=[0]), tmp_path, capture=False)
    first = (tmp_path / "results.txt").read_text()
    summary = (tmp_path / "summary-r0001.json").read_bytes()
    run_experiment(tiny(seeds=[1]), tmp_path, capture=False)
    assert (tmp_path / "results.txt").read_text().startswith(first)
    assert (tmp_path / "summary-r0001.json").read_bytes() == summary
    assert (tmp_path / "summary-r0002.json").is_file()


def test_record_line_echoes_config_and_seeds(tmp_path):
    rec = run_experiment(tiny(), tmp_path, capture=False)
    cells = parse_results_line((tmp_path / "results.txt").read_text().splitlines()[0])
    assert cells["n_way"] == "5" and cells["seeds"] == "0,1" and cells["run"] == rec.run_id
    per_seed = dict(kv.split(":") for kv in cells["seed_acc"].split(","))
    assert {int(k): float(v) for k, v in per_seed.items()} == rec.per_seed
    assert float(cells["mean"]) == rec.mean


def test_run_command_honors_output_env(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("MGA_OUT", str(tmp_path / "env"))
    assert cli.main(["run", str(write_cfg(tmp_path / "c.cfg", seeds=[0]))]) == 0
    assert (tmp_path / "env" / "results.txt").is_file()
    assert "r0001" in capsys.readouterr().out


def test_run_adapter_mode(tmp_path):
    rec = run_experiment(tiny(seeds=[0], mode="adapter", dim=16, r1=2, r2=2, blocks=2), tmp_path)
    assert 0.0 <= rec.mean <= 1.0


def test_gen_data_command(tmp_path, capsys):
    assert cli.main(["gen-data", str(tmp_path), "--instances", "2", "--grid", "6"]) == 0
    assert (tmp_path / "manifest.tsv").is_file()
    assert len(list((tmp_path / "train").glob("*.mgaf"))) == 12
