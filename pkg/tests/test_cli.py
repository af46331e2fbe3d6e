"""Command line entry points: verbs, report printing, exit codes."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from metarec.cli import main
from metarec.config import parse_config_text
from metarec.corpus import load_corpus
from metarec.synthetic import make_synthetic_fixture

FAST = [
    "--set", "model.d=8",
    "--set", "model.n=8",
    "--set", "model.blocks=1",
    "--set", "model.heads=2",
    "--set", "model.dropout=0.1",
    "--set", "train.epochs=2",
    "--set", "train.batch_size=32",
    "--set", "data.min_interactions=2",
]


@pytest.fixture(scope="module")
def data_path(tmp_path_factory: pytest.TempPathFactory) -> Path:
    path = tmp_path_factory.mktemp("clidata") / "corpus.txt"
    make_synthetic_fixture(path, n_users=60, n_items=20, seed=1, min_len=5, max_len=12)
    return path


def run_cli(*argv: str) -> int:
    return main(list(argv))


def train_args(data_path: Path, out: Path, *extra: str) -> list[str]:
    return ["train", "--dataset", str(data_path), "--out", str(out), *FAST, *extra]


@pytest.fixture(scope="module")
def trained(data_path: Path, tmp_path_factory: pytest.TempPathFactory) -> Path:
    """One finished training run shared by the read-only verbs."""
    out = tmp_path_factory.mktemp("clitrain") / "run"
    assert main(train_args(data_path, out, "--seed", "1")) == 0
    return out


# ---------------------------------------------------------------------------
# train


def test_train_prints_test_metrics_and_writes_run(
    data_path: Path, tmp_path: Path, capsys: pytest.CaptureFixture
):
    out = tmp_path / "run"
    assert run_cli(*train_args(data_path, out)) == 0
    printed = json.loads(capsys.readouterr().out)
    assert set(printed) == {"test"}
    assert {"hr", "ndcg"} <= set(printed["test"])
    report = json.loads((out / "report.json").read_text())
    assert printed["test"] == report["final"]["test"]
    assert (out / "best.pt").is_file()


def test_train_resume_reprints_finalized_report(
    trained: Path, data_path: Path, capsys: pytest.CaptureFixture
):
    assert run_cli(*train_args(data_path, trained, "--seed", "1", "--resume")) == 0
    printed = json.loads(capsys.readouterr().out)
    report = json.loads((trained / "report.json").read_text())
    assert printed["test"] == report["final"]["test"]


def test_train_rerun_without_resume_fails(
    trained: Path, data_path: Path, capsys: pytest.CaptureFixture
):
    assert run_cli(*train_args(data_path, trained, "--seed", "1")) == 2
    err = capsys.readouterr().err
    assert err.startswith("error:") and "finalized" in err


def test_config_file_set_overrides_and_flags_precedence(
    data_path: Path, tmp_path: Path
):
    config = tmp_path / "exp.txt"
    config.write_text(
        "model.d = 8\nmodel.n = 8\nmodel.blocks = 1\nmodel.heads = 2\n"
        "train.epochs = 2\ntrain.batch_size = 32\ndata.min_interactions = 2\n"
        "train.epochs = 2\ndata.path = /overridden/by/flag\nrun.seeds = 9\n"
    )
    out = tmp_path / "run"
    code = run_cli(
        "train",
        "--config", str(config),
        "--set", "model.dropout=0.1",
        "--dataset", str(data_path),
        "--out", str(out),
        "--seed", "3",
    )
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["seed"] == 3  # flag beats the config file
    stored = parse_config_text(report["config"])
    assert stored.data.path == str(data_path)
    assert stored.model.dropout == 0.1


# ---------------------------------------------------------------------------
# other verbs


def test_ablate_prints_mean_table(
    data_path: Path, tmp_path: Path, capsys: pytest.CaptureFixture
):
    out = tmp_path / "run"
    code = run_cli(
        "ablate", "--variants", "full,no_cl2", "--seed", "1",
        "--dataset", str(data_path), "--out", str(out), *FAST,
    )
    assert code == 0
    table = capsys.readouterr().out
    assert "full" in table and "no_cl2" in table and "NDCG@20" in table


def test_sweep_batch_prints_rows(
    data_path: Path, tmp_path: Path, capsys: pytest.CaptureFixture
):
    out = tmp_path / "run"
    code = run_cli(
        "sweep-batch", "--sizes", "16,32",
        "--dataset", str(data_path), "--out", str(out), *FAST,
    )
    assert code == 0
    rows = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    assert [r["batch_size"] for r in rows] == [16, 32]
    assert (out / "batch_sweep.csv").is_file()


def test_sweep_noise_with_checkpoint(
    trained: Path, data_path: Path, tmp_path: Path, capsys: pytest.CaptureFixture
):
    out = tmp_path / "run"
    code = run_cli(
        "sweep-noise", "--ratios", "0.0,0.2",
        "--checkpoint", str(trained / "best.pt"),
        "--dataset", str(data_path), "--out", str(out), *FAST,
    )
    assert code == 0
    rows = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    assert [r["noise_ratio"] for r in rows] == [0.0, 0.2]


def test_grid_prints_cells(
    data_path: Path, tmp_path: Path, capsys: pytest.CaptureFixture
):
    out = tmp_path / "run"
    code = run_cli(
        "grid", "--lambdas", "0.0,0.1", "--betas", "0.1",
        "--dataset", str(data_path), "--out", str(out), *FAST,
    )
    assert code == 0
    rows = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    assert len(rows) == 2
    assert sum(r["best"] for r in rows) == 1


def test_eval_requires_checkpoint_or_groups(
    data_path: Path, tmp_path: Path, capsys: pytest.CaptureFixture
):
    code = run_cli(
        "eval", "--dataset", str(data_path), "--out", str(tmp_path / "run"), *FAST
    )
    assert code == 2
    assert "checkpoint" in capsys.readouterr().err


def test_eval_checkpoint_matches_training_report(
    trained: Path, data_path: Path, tmp_path: Path, capsys: pytest.CaptureFixture
):
    code = run_cli(
        "eval", "--checkpoint", str(trained / "best.pt"),
        "--dataset", str(data_path), "--out", str(tmp_path / "run"), *FAST,
    )
    assert code == 0
    printed = json.loads(capsys.readouterr().out)
    report = json.loads((trained / "report.json").read_text())
    assert printed["test"] == report["final"]["test"]


def test_eval_groups_prints_per_group(
    trained: Path, data_path: Path, tmp_path: Path, capsys: pytest.CaptureFixture
):
    code = run_cli(
        "eval", "--checkpoint", str(trained / "best.pt"), "--groups",
        "--set", "groups.bounds=5-8,>8",
        "--dataset", str(data_path), "--out", str(tmp_path / "run"), *FAST,
    )
    assert code == 0
    printed = json.loads(capsys.readouterr().out)
    assert set(printed) == {"5-8", ">8"}


def test_export_views_verb(
    trained: Path, data_path: Path, tmp_path: Path, capsys: pytest.CaptureFixture
):
    out_file = tmp_path / "views.tsv"
    code = run_cli(
        "export-views", "--checkpoint", str(trained / "best.pt"),
        "--part", "valid", "--out-file", str(out_file), "--view-seed", "4",
        "--dataset", str(data_path), "--out", str(tmp_path / "run"), *FAST,
    )
    assert code == 0
    assert capsys.readouterr().out.strip() == str(out_file)
    corpus = load_corpus(str(data_path), min_interactions=2)
    lines = out_file.read_text().splitlines()
    assert len(lines) == 1 + 4 * len(corpus.sequences)


def test_synth_verb_writes_fixture_and_stats(
    tmp_path: Path, capsys: pytest.CaptureFixture
):
    out_file = tmp_path / "synth.txt"
    code = run_cli(
        "synth", "--out-file", str(out_file), "--users", "40", "--items", "15",
        "--seed", "2", "--min-len", "6", "--max-len", "10", "--stats",
    )
    assert code == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == str(out_file)
    stats = json.loads("\n".join(lines[1:]))
    assert stats["users"] <= 40 and stats["items"] <= 15
    assert out_file.read_text().splitlines()[0].split()[0] == "1"


# ---------------------------------------------------------------------------
# failure modes


def test_missing_out_is_a_clean_error(
    data_path: Path, capsys: pytest.CaptureFixture
):
    assert run_cli("train", "--dataset", str(data_path), *FAST) == 2
    assert "output directory" in capsys.readouterr().err


def test_missing_dataset_is_a_clean_error(
    tmp_path: Path, capsys: pytest.CaptureFixture
):
    code = run_cli(
        "train", "--dataset", str(tmp_path / "nope.txt"),
        "--out", str(tmp_path / "run"), *FAST,
    )
    assert code == 2
    assert "nope.txt" in capsys.readouterr().err


def test_malformed_set_override_is_a_clean_error(
    data_path: Path, tmp_path: Path, capsys: pytest.CaptureFixture
):
    code = run_cli(
        "train", "--set", "model.d", "--dataset", str(data_path),
        "--out", str(tmp_path / "run"),
    )
    assert code == 2
    assert capsys.readouterr().err.startswith("error:")


def test_unknown_config_key_is_a_clean_error(
    data_path: Path, tmp_path: Path, capsys: pytest.CaptureFixture
):
    code = run_cli(
        "train", "--set", "model.width=3", "--dataset", str(data_path),
        "--out", str(tmp_path / "run"),
    )
    assert code == 2
    assert "model.width" in capsys.readouterr().err
