"""Shipped configs rerun byte-identically for any thread count."""

import os
import pathlib

import pytest

from wdlab import cli
from wdlab.harness import shipped_configs

FIXTURES = pathlib.Path(__file__).with_name("fixtures")
REGEN = os.environ.get("WDLAB_REGEN_FIXTURES") == "1"


def run_outputs(name, threads, tmp_path, monkeypatch):
    monkeypatch.setenv("WDLAB_THREADS", str(threads))
    out = tmp_path / f"t{threads}"
    out.mkdir()
    code = cli.main([name, "--config", name, "--threads", str(threads), "--out", str(out / f"{name}.csv")])
    assert code in (0, 2)
    files = sorted(p for p in out.iterdir() if p.suffix == ".csv" or p.name.endswith(".bundle.json"))
    return {p.name: p.read_bytes() for p in files}


def test_all_experiments_shipped():
    assert set(shipped_configs()) == {"kernel", "constants", "covariance", "rate", "elt", "elt2", "clt",
                                      "bracket", "keystone"}


@pytest.mark.parametrize("name", shipped_configs())
def test_thread_invariance_and_fixture(name, tmp_path, monkeypatch):
    runs = {t: run_outputs(name, t, tmp_path, monkeypatch) for t in (1, 4, 8)}
    assert runs[1] == runs[4] == runs[8]
    fx = FIXTURES / name
    if REGEN:
        fx.mkdir(parents=True, exist_ok=True)
        for f, data in runs[1].items():
            (fx / f).write_bytes(data)
    expected = {p.name: p.read_bytes() for p in sorted(fx.iterdir())}
    assert runs[1] == expected
