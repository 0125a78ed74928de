"""The shipped sample configs must validate and run."""

import json
from pathlib import Path

import pytest

from qlqg.cli import main
from qlqg.config import load_config

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.json")), ids=lambda p: p.stem)
def test_config_validates(path):
    config = load_config(path)
    assert config.params.eta <= 1.0


def test_design_config_runs(tmp_path):
    out = tmp_path / "design.json"
    code = main(
        ["design", "--config", str(CONFIG_DIR / "design_cooling.json"), "--out", str(out)]
    )
    assert code == 0
    assert json.loads(out.read_text())["k_gain"][0][0] == pytest.approx(10.0, rel=1e-8)


def test_verify_config_runs(tmp_path):
    out = tmp_path / "verify.json"
    code = main(
        ["verify", "--config", str(CONFIG_DIR / "verify_oracle.json"), "--out", str(out)]
    )
    assert code == 0
    assert json.loads(out.read_text())["passed"] is True


def test_direct_feedback_config_runs(tmp_path):
    out = tmp_path / "stats.json"
    code = main(
        [
            "ensemble",
            "--config",
            str(CONFIG_DIR / "direct_feedback_cancelling.json"),
            "--out",
            str(out),
        ]
    )
    assert code == 0
    record = json.loads(out.read_text())["records"][0]
    # cancelling gains: empirical excess is exactly at the float floor
    assert abs(record["empirical"]["ve_x"]) < 1e-20
    assert record["analytic"] == {"ve_x": 0.0, "ve_p": 0.0, "ce": 0.0}
