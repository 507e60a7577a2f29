import pytest

from fedfault.config import ConfigError, parse_config, parse_grid, parse_text
from fedfault.presets import PRESETS, TABLE3_COLUMNS, preset

MINIMAL = "data.source = synthetic\nfed.rounds = 50\n"


def write(tmp_path, text, name="c.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_minimal_config_gets_defaults(tmp_path):
    config = parse_config(write(tmp_path, MINIMAL))
    assert config["fed.rounds"] == 50
    assert config["fed.eta"] == 0.05
    assert config["fed.local_epochs"] == 1 and config["fed.batch_size"] == 50
    assert config["fed.eval_every"] == 10
    assert config["grid.max_cells"] == 1000
    assert config.num_clients == 3
    assert config.seeds() == [0]


@pytest.mark.parametrize("text, key, line", [
    (MINIMAL + "learningrate = 0.1\n", "learningrate", 3),
    (MINIMAL + "# note\nscenario.client.0.participation = 1.3\n", "scenario.client.0.participation", 4),
    (MINIMAL + "fed.eta = fast\n", "fed.eta", 3),
    (MINIMAL + "fed.eta = 0.1\nfed.eta = 0.2\n", "fed.eta", 4),
    (MINIMAL + "scenario.client.7.upload = 0.5\n", "scenario.client.7.upload", 3),
    ("fed.rounds = 5\n", "data.source", None),
    ("data.source = synthetic\n", "fed.rounds", None),
])
def test_config_errors_name_key_and_line(tmp_path, text, key, line):
    with pytest.raises(ConfigError) as info:
        parse_config(write(tmp_path, text))
    assert info.value.key == key
    assert info.value.line == line
    assert key in str(info.value)


def test_malformed_line(tmp_path):
    with pytest.raises(ConfigError, match="line 2"):
        parse_config(write(tmp_path, "data.source = synthetic\njust words\n"))


def test_comments_and_meta_are_ignored(tmp_path):
    config = parse_config(write(tmp_path, MINIMAL + "fed.eta = 0.2  # tuned\nmeta.version = 9\n"))
    assert config["fed.eta"] == 0.2


def test_round_trip_through_text(tmp_path):
    text = MINIMAL + "scenario.client.1.download = 0.25\nscenario.client.0.eta_scale = 10\nscenario.exclude = 2\n"
    config = parse_config(write(tmp_path, text))
    again = parse_config(write(tmp_path, config.to_text(), "again.cfg"))
    assert again == config
    assert again.to_text() == config.to_text()


def test_scenario_resolution(tmp_path):
    text = MINIMAL + (
        "fed.eta = 0.1\nscenario.client.0.eta_scale = 10\nscenario.client.1.upload = 0.5\n"
        "scenario.client.2.label_flip = 1.0\nscenario.exclude = 1\n"
    )
    spec = parse_config(write(tmp_path, text)).scenario()
    assert spec.overrides == {0: {"eta": 1.0}}
    assert spec.upload == {1: 0.5}
    assert spec.label_noise[2].fraction == 1.0 and spec.label_noise[2].mode == "cyclic"
    assert spec.excluded == (1,)


def test_explicit_sites(tmp_path):
    text = MINIMAL + (
        "data.sites = explicit\nsite.0.fraction = 0.5\nsite.0.classes = 0, 1, 2, 3\n"
        "site.1.fraction = 0.25\nsite.1.classes = 0, 3\nsite.1.proportions = 0.5, 0.5\n"
    )
    config = parse_config(write(tmp_path, text))
    specs = config.site_specs()
    assert config.num_clients == 2
    assert specs[1].class_presence == (0, 3) and specs[1].class_proportions == (0.5, 0.5)
    with pytest.raises(ConfigError):
        parse_config(write(tmp_path, MINIMAL + "site.0.fraction = 0.5\nsite.0.classes = 0\n"))
    with pytest.raises(ConfigError):
        parse_config(write(tmp_path, text.replace("0.25", "0.75")))


def test_grid_cells_are_cartesian_and_sorted(tmp_path):
    text = MINIMAL + "grid.fed.local_epochs = 1, 5, 20\ngrid.fed.batch_size = 10, 50\ngrid.fed.rounds = 200\n"
    cells = parse_grid(write(tmp_path, text)).cells()
    assert len(cells) == 6
    assert [k for k, _ in cells] == sorted(k for k, _ in cells)
    combos = {(c["fed.local_epochs"], c["fed.batch_size"], c["fed.rounds"]) for _, c in cells}
    assert combos == {(e, b, 200) for e in (1, 5, 20) for b in (10, 50)}
    assert all(c["run.label"] == k for k, c in cells)


def test_empty_grid_is_single_plain_cell(tmp_path):
    grid = parse_grid(write(tmp_path, MINIMAL))
    cells = grid.cells()
    assert len(cells) == 1
    assert cells[0][1].with_values({"run.label": "base"}) == grid.base


def test_grid_cap(tmp_path):
    text = MINIMAL + "grid.max_cells = 4\ngrid.fed.batch_size = 1, 2, 3\ngrid.fed.local_epochs = 1, 2\n"
    with pytest.raises(ConfigError, match="max_cells"):
        parse_grid(write(tmp_path, text))


def test_grid_values_are_validated(tmp_path):
    with pytest.raises(ConfigError) as info:
        parse_grid(write(tmp_path, MINIMAL + "grid.scenario.client.0.participation = 0.5, 2\n"))
    assert info.value.line == 3
    with pytest.raises(ConfigError):
        parse_grid(write(tmp_path, MINIMAL + "grid.scenario.exclude = 0\n"))


def test_single_run_rejects_grid(tmp_path):
    with pytest.raises(ConfigError, match="grid"):
        parse_config(write(tmp_path, MINIMAL + "grid.fed.eta = 0.1, 0.2\n"))


def test_presets_shapes():
    assert preset("fig4").num_cells() == 12
    assert preset("fig5-6").num_cells() == 24
    fig7 = preset("fig7")
    cells = dict((k.split(":")[1], c) for k, c in fig7.cells())
    assert set(cells) == {"caseA_clean", "caseB_mislabelled", "caseC_clean_only"}
    assert all(c.num_clients == 15 for c in cells.values())
    assert len(cells["caseB_mislabelled"].scenario().label_noise) == 7
    assert cells["caseC_clean_only"].scenario().excluded == tuple(range(7))
    fig8 = preset("fig8")
    scales = sorted(c.client_value(0, "eta_scale") for _, c in fig8.cells())
    assert scales == [1, 2, 5, 10, 20, 50, 100]
    assert all(c.num_clients == 6 for _, c in fig8.cells())
    table3 = preset("table3")
    assert table3.num_cells() == len(TABLE3_COLUMNS) == 8
    eb = sorted((c["fed.local_epochs"], c["fed.batch_size"]) for _, c in table3.cells())
    assert eb == sorted((e, b) for e, b, _ in TABLE3_COLUMNS)
    for name in PRESETS:
        grid = preset(name)
        assert grid.base["run.replicates"] >= 5
        assert parse_text(grid.to_text()).cells() == grid.cells()
