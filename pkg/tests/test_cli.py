import csv
import json
import os
import subprocess
import sys

import pytest

from aquarius import catalog as C
from aquarius.cli import main, shm_dump
from aquarius.store import RegionConfig, VipRegion
from aquarius.traffic import write_trace
from conftest import one_flow


def run(*argv):
    return main([str(a) for a in argv])


def read(p):
    with open(p, "rb") as fh:
        return fh.read()


def test_gen_deterministic_and_manifest(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        assert run("gen", "--rate", 50, "--duration", 2, "--servers", 2, "--seed", 3, "--out", p) == 0
    assert read(a) == read(b)
    man = json.loads(read(tmp_path / "a.manifest.json"))
    assert man["command"] == "gen" and man["seed"] == 3 and man["version"]
    assert "time" not in json.dumps(man).lower()


def test_gen_zero_duration_is_empty(tmp_path):
    p = tmp_path / "e.csv"
    assert run("gen", "--duration", 0, "--out", p) == 0
    assert read(p).decode().count("\n") == 1


def test_missing_parent_dirs_are_created(tmp_path):
    trace = tmp_path / "a" / "t.csv"
    assert run("gen", "--rate", 50, "--duration", 1, "--seed", 1, "--out", trace) == 0
    region = tmp_path / "b" / "vip.bin"
    feats = tmp_path / "c" / "f.csv"
    assert run("extract", "--trace", trace, "--region", region, "--features", feats) == 0
    assert region.exists() and feats.exists()


def test_usage_errors_exit_2(tmp_path, capsys):
    assert run("gen", "--duration", 1) == 2  # missing --out
    assert run("gen", "--rate", -1, "--out", tmp_path / "x.csv") == 2
    assert run("gen", "--servers", 3, "--capacities", "1,2", "--out", tmp_path / "x.csv") == 2
    assert run("classify", "--features", "f.csv", "--method", "spectral") == 2
    assert run("extract", "--trace", "t.csv", "--region", tmp_path / "r.bin", "--window", 0) == 2
    assert run() == 2
    assert run("lbsim", "--policies", "fastest", "--out", tmp_path / "lb") == 2


def test_runtime_errors_exit_1(tmp_path):
    assert run("extract", "--trace", tmp_path / "missing.csv", "--region", tmp_path / "r.bin") == 1
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"junk")
    assert run("shm-dump", "--region", bad) == 1


def test_extract_one_flow(tmp_path):
    trace = tmp_path / "t.csv"
    write_trace(one_flow(0.1), trace)
    region = tmp_path / "r.bin"
    assert run("extract", "--trace", trace, "--region", region) == 0
    summary = json.loads(read(tmp_path / "r.features.summary.json"))
    assert summary["final_counters"]["0"]["n_flow_total"] == 1
    view = shm_dump(region)
    assert view["active"] == [0] and view["egress"]["0"]["counters"]["n_flow_total"] == 1


def test_extract_empty_trace(tmp_path):
    trace = tmp_path / "t.csv"
    write_trace([], trace)
    assert run("extract", "--trace", trace, "--region", tmp_path / "r.bin") == 0
    view = shm_dump(tmp_path / "r.bin")
    assert view["active"] == [] and int(view["bit_index"], 16) == 0


def test_extract_signal_projection(tmp_path):
    trace = tmp_path / "t.csv"
    write_trace(one_flow(0.1) + one_flow(1.1, sport=41000), trace)
    feats = tmp_path / "f.csv"
    assert run("extract", "--trace", trace, "--region", tmp_path / "r.bin", "--features", feats,
               "--signals", "flow_duration") == 0
    head = next(csv.reader(open(feats)))
    stats = [h for h in head if h.startswith("flow_duration_")]
    assert len(stats) == 5 and sum(h.startswith("d_") for h in head) == len(C.COUNTERS)
    assert not any(h.startswith("syn_gap") for h in head)
    assert run("extract", "--trace", trace, "--region", tmp_path / "r2.bin", "--signals", "bogus") == 2


def test_shm_dump_fresh_region(tmp_path, capsys):
    p = tmp_path / "fresh.bin"
    VipRegion.create(RegionConfig(), p).close()
    assert run("shm-dump", "--region", p) == 0
    out = capsys.readouterr().out
    assert "bit index 0000000000000000" in out and "active []" in out
    assert run("shm-dump", "--region", p, "--json") == 0
    assert json.loads(capsys.readouterr().out)["active"] == []


def test_lbsim_single_policy_one_file(tmp_path):
    out = tmp_path / "lb"
    assert run("lbsim", "--policies", "rlb", "--duration", 10, "--out", out) == 0
    assert sorted(os.listdir(out)) == ["fct_rlb.csv", "manifest.json", "summary.json"]


def test_classify_eps_validation(tmp_path):
    feats = tmp_path / "f.csv"
    feats.write_text("egress,t_start,x\n0,0.0,1.0\n")
    assert run("classify", "--features", feats, "--method", "dbscan", "--eps", 0, "--out", tmp_path / "c") == 2


def test_rerun_reproduces_outputs(tmp_path, capsys):
    out = tmp_path / "lb"
    assert run("lbsim", "--policies", "ecmp,rlb", "--duration", 8, "--seed", 2, "--out", out) == 0
    assert run("rerun", out / "manifest.json", "--into", tmp_path / "again") == 0
    res = json.loads(capsys.readouterr().out)
    assert res["identical"] and set(res["files"]) == {"fct_ecmp", "fct_rlb", "summary"}


def test_rerun_detects_changed_input(tmp_path):
    trace = tmp_path / "t.csv"
    write_trace(one_flow(0.1), trace)
    assert run("extract", "--trace", trace, "--region", tmp_path / "r.bin") == 0
    write_trace(one_flow(0.2), trace)
    assert run("rerun", tmp_path / "r.features.manifest.json") == 1


def test_log_env_and_module_entry(tmp_path):
    env = dict(os.environ, AQUARIUS_LOG="info")
    p = subprocess.run([sys.executable, "-m", "aquarius", "gen", "--duration", "1", "--out", str(tmp_path / "t.csv")],
                       env=env, capture_output=True, text=True)
    assert p.returncode == 0 and "INFO" in p.stderr
    env["AQUARIUS_LOG"] = "error"
    p = subprocess.run([sys.executable, "-m", "aquarius", "gen", "--duration", "1", "--out", str(tmp_path / "u.csv")],
                       env=env, capture_output=True, text=True)
    assert p.returncode == 0 and p.stderr == ""


def test_stress_flag(capsys):
    assert run("--stress-io", "--stress-publishes", 20000) == 0
    assert json.loads(capsys.readouterr().out)["torn"] == 0
