import csv
import math

from fedfault.cli import main
from fedfault.config import parse_text
from fedfault.harness import HISTORY_COLUMNS, build_data, run

BASE = (
    "data.source = synthetic\n"
    "data.samples = 1500\n"
    "fed.rounds = 50\n"
    "run.replicates = 2\n"
)


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_history_row_counts_and_header(tmp_path):
    config = parse_text(BASE).base
    run(config, tmp_path / "out")
    history = rows(tmp_path / "out" / "history.csv")
    header = (tmp_path / "out" / "history.csv").read_text().splitlines()[0]
    assert header == ",".join(HISTORY_COLUMNS)
    per_seed = math.ceil(50 / 10) + 1
    assert len(history) == 2 * per_seed
    assert {r["cell"] for r in history} == {"base/federated"}
    assert all(len(r["participated"]) == 3 for r in history)


def test_summary_matches_last_history_row(tmp_path):
    config = parse_text(BASE + "run.baselines = true\nfed.eval_every = 7\n").base
    run(config, tmp_path / "out")
    history = rows(tmp_path / "out" / "history.csv")
    summary = rows(tmp_path / "out" / "summary.csv")
    assert len(summary) == 2 * 5  # federated, centralized, 3 locals per seed
    for s in summary:
        last = [h for h in history if h["cell"] == s["cell"] and h["seed"] == s["seed"]][-1]
        for column in ("round", "accuracy", "auroc", "train_loss"):
            assert last[column] == s[column]


def test_refuses_non_empty_output_without_force(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(BASE.replace("50", "5"))
    out = tmp_path / "out"
    out.mkdir()
    (out / "keep.txt").write_text("x")
    assert main(["run", str(cfg), "--out", str(out)]) == 1
    assert (out / "keep.txt").read_text() == "x"
    assert main(["run", str(cfg), "--out", str(out), "--force"]) == 0


def test_meta_reproduces_run(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(BASE + "scenario.client.0.participation = 0.5\nscenario.client.2.download = 0.5\n")
    assert main(["run", str(cfg), "--out", str(tmp_path / "a")]) == 0
    meta = (tmp_path / "a" / "meta").read_text()
    assert "meta.auroc_reduction = macro-ovr" in meta
    assert "meta.stream.1.upload.2 = " in meta
    assert main(["run", str(tmp_path / "a" / "meta"), "--out", str(tmp_path / "b")]) == 0
    for name in ("history.csv", "summary.csv", "meta", "curves.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_config_errors_exit_2(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(BASE + "learningrate = 0.3\n")
    assert main(["validate", str(cfg)]) == 2
    assert "learningrate" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.cfg")]) == 2


def test_run_error_is_recorded_in_meta(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("data.source = csv\ndata.csv_path = nowhere.csv\nfed.rounds = 3\n")
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "meta.error = " in (tmp_path / "o" / "meta").read_text()


def test_csv_source_run(tmp_path):
    data = tmp_path / "d.csv"
    lines = ["f0,f1,label"]
    for i in range(120):
        c = i % 3
        lines.append(f"{c * 4 + (i % 7) * 0.1},{-c * 2 + (i % 5) * 0.1},{c}")
    data.write_text("\n".join(lines) + "\n")
    cfg = tmp_path / "c.cfg"
    cfg.write_text(f"data.source = csv\ndata.csv_path = {data}\ndata.num_classes = 3\nfed.clients = 2\nfed.rounds = 4\n")
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert len(rows(tmp_path / "o" / "history.csv")) == 2


def test_label_noise_applied_to_target_shard_only():
    config = parse_text(BASE + "scenario.client.1.label_flip = 1.0\n").base
    clean = build_data(parse_text(BASE).base, 0)
    noisy = build_data(config, 0)
    assert (noisy.shards[1].data.labels != clean.shards[1].data.labels).all()
    assert (noisy.shards[0].data.labels == clean.shards[0].data.labels).all()
    assert (noisy.test.labels == clean.test.labels).all()


def test_grid_outputs(tmp_path):
    cfg = tmp_path / "g.cfg"
    cfg.write_text(BASE.replace("50", "6") + "run.baselines = true\ngrid.fed.batch_size = 20, 80\n")
    assert main(["grid", str(cfg), "--out", str(tmp_path / "g")]) == 0
    summary = rows(tmp_path / "g" / "grid_summary.csv")
    assert len(summary) == 2 * 2 * 5
    keys = [r["cell"].rsplit("/", 1)[0] for r in summary]
    assert keys == sorted(keys)
    pivot = rows(tmp_path / "g" / "grid_pivot.csv")
    assert [r["approach"] for r in pivot] == ["centralized", "federated", "local-0", "local-1", "local-2"]
    assert (tmp_path / "g" / "c000" / "history.csv").exists()
    assert (tmp_path / "g" / "curves.svg").exists()


def test_preset_print_parses(tmp_path, capsys):
    assert main(["preset", "fig8", "--print", "--quick", "--seeds", "2"]) == 0
    text = capsys.readouterr().out
    grid = parse_text(text)
    assert grid.num_cells() == 7 and grid.base["run.replicates"] == 2


def test_validate_and_schema(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(BASE)
    assert main(["validate", str(cfg)]) == 0
    assert "# ok: 1 cell(s), 3 clients" in capsys.readouterr().out
    assert main(["validate", "--schema"]) == 0
    assert "scenario.client.<k>.participation" in capsys.readouterr().out


def test_plot_command(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(BASE.replace("50", "5") + "run.plot = false\n")
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert not (tmp_path / "o" / "curves.svg").exists()
    svg = tmp_path / "p.svg"
    assert main(["plot", str(tmp_path / "o" / "history.csv"), "--out", str(svg), "--metric", "auroc"]) == 0
    assert svg.read_text().startswith("<?xml")
