import json
import shutil
import subprocess
import sys
from pathlib import Path

import jsonschema
import pytest

from torusendo.cli import SUMMARY_SCHEMA, compare_summaries, main, read_config, resolve_config
from torusendo.errors import ConfigError

GOLDEN = Path(__file__).parent / "golden"
SANDWICH = "shear[0.5,vertical] * linear[3,1;1,1] * shear[0.5,horizontal]"

BACKWARD = f"""\
# small backward-measure run
kind = backward-measure
name = bm
output_dir = out
map = {SANDWICH}
n = 40
trials = 25
starts = 0.1,0.2; 0.7,0.45
bins = 8
seed = 11
"""

TREE = """\
kind = tree-identity
name = ti
output_dir = out
map = linear[3,1;1,1]
n = 2
m = 2
cases = 5
seed = 3
"""


@pytest.fixture(autouse=True)
def in_tmp(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("TORUSENDO_OUTPUT_DIR", raising=False)
    return tmp_path


def write(name, text):
    Path(name).write_text(text)
    return name


def run(text, name="cfg.txt"):
    return main(["run", write(name, text)])


def test_read_config():
    raw = read_config("# comment\nkind = lyapunov\n\n n = 5 \n")
    assert raw == {"kind": "lyapunov", "n": "5"}
    with pytest.raises(ConfigError):
        read_config("n = 1\nn = 2\n")


def test_resolve_defaults_and_map_normalisation():
    cfg = resolve_config(read_config(BACKWARD))
    assert cfg["weighting"] == "bernoulli" and cfg["threads"] == 0
    assert cfg["starts"] == [[0.1, 0.2], [0.7, 0.45]]
    assert cfg["map"] == SANDWICH


def test_missing_seed_exits_2(capsys):
    assert run(BACKWARD.replace("seed = 11\n", "")) == 2
    assert "'seed'" in capsys.readouterr().err


@pytest.mark.parametrize(
    "text",
    [
        "kind = nope\n",
        "n = 3\n",
        TREE + "bogus = 1\n",
        TREE.replace("n = 2", "n = two"),
        TREE.replace("linear[3,1;1,1]", "linear[1,1;1,1]"),
        TREE + "threads = -1\n",
    ],
    ids=["kind", "no-kind", "unknown-key", "bad-int", "singular-map", "threads"],
)
def test_config_errors_exit_2(text):
    assert run(text) == 2


def test_missing_file_and_bad_args_exit_2():
    assert main(["run", "does-not-exist.txt"]) == 2
    assert main(["frobnicate"]) == 2


def test_capacity_exits_3():
    assert run("kind = c-estimate\nmap = linear[3,1;1,1]\nN = 30\n") == 3


def test_precondition_exits_4():
    # the unstable eigendirection has no expanding preimage
    text = "kind = cone-check\nmap = linear[3,1;1,1]\nN = 1\npoint = 0.2,0.3\ndirection = 0.8506508083520399,0.5257311121191336\n"
    assert run(text) == 4


@pytest.mark.parametrize("text,stem", [(BACKWARD, "bm"), (TREE, "ti")])
def test_byte_identical_reruns(text, stem):
    assert run(text) == 0
    first = Path("out", f"{stem}.json").read_bytes()
    assert run(text) == 0
    assert Path("out", f"{stem}.json").read_bytes() == first


@pytest.mark.parametrize("text,stem", [(BACKWARD, "bm"), (TREE, "ti")])
def test_golden_files(text, stem):
    assert run(text) == 0
    for ext in ("json", "csv"):
        assert Path("out", f"{stem}.{ext}").read_text() == (GOLDEN / f"{stem}.{ext}").read_text()


def test_summary_schema():
    assert run(TREE) == 0
    summary = json.loads(Path("out/ti.json").read_text())
    jsonschema.validate(summary, SUMMARY_SCHEMA)
    assert summary["seed"] == 3 and summary["config"]["cases"] == 5


def test_env_overrides_output_dir(monkeypatch):
    monkeypatch.setenv("TORUSENDO_OUTPUT_DIR", "elsewhere")
    assert run(TREE) == 0
    assert Path("elsewhere/ti.json").exists() and not Path("out").exists()


def test_compare_self_and_seeds(capsys):
    assert run(BACKWARD) == 0
    shutil.copy("out/bm.json", "a.json")
    assert run(BACKWARD.replace("seed = 11", "seed = 12")) == 0
    capsys.readouterr()
    assert main(["compare", "a.json", "a.json"]) == 0
    assert json.loads(capsys.readouterr().out)["verdict"] == "indistinguishable"
    assert main(["compare", "a.json", "out/bm.json"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["verdict"] == "indistinguishable" and rep["l1"] <= rep["threshold"]


def test_compare_grid_mismatch_exits_2():
    assert run(BACKWARD) == 0
    shutil.copy("out/bm.json", "a.json")
    assert run(BACKWARD.replace("bins = 8", "bins = 16")) == 0
    assert main(["compare", "a.json", "out/bm.json"]) == 2
    with pytest.raises(ConfigError):
        compare_summaries(json.loads(Path("a.json").read_text()), json.loads(Path("out/bm.json").read_text()))


def test_compare_rejects_other_kinds():
    assert run(TREE) == 0
    assert main(["compare", "out/ti.json", "out/ti.json"]) == 2


def test_perturb_subcommand(capsys):
    text = "kind = perturb\nE = 3,1;1,1\neps = 0.01\nsamples = 50\nquadrature = 256\n"
    assert main(["perturb", write("p.txt", text)]) == 0
    report = json.loads(capsys.readouterr().out.splitlines()[-1])
    assert report["detU"] in (1, -1)
    assert main(["perturb", write("q.txt", TREE)]) == 2


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "torusendo", "run", write("t.txt", TREE)], capture_output=True, text=True)
    assert out.returncode == 0 and "ti.json" in out.stdout
