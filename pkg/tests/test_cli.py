from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import pytest

from cpv.cli import main

FAIR_INSTANCE = {
    "schema": "cpv-1",
    "agents": 2,
    "alphabet": ["A", "B"],
    "rule": {
        "table": [
            {"profile": ["A", "A"], "outcome": "x"},
            {"profile": ["A", "B"], "outcome": "x"},
            {"profile": ["B", "A"], "outcome": "x'"},
            {"profile": ["B", "B"], "outcome": "x"},
        ]
    },
}

FIG_PROTOCOL = {
    "schema": "cpv-1",
    "tree": {
        "query": {"kind": "elicit", "agent": 1, "cells": [["A"], ["B"]]},
        "children": [
            {
                "query": {"kind": "elicit", "agent": 2, "cells": [["A"], ["B"]]},
                "children": [{}, {}],
            },
            {
                "query": {"kind": "elicit", "agent": 2, "cells": [["A"], ["B"]]},
                "children": [{}, {}],
            },
        ],
    },
}


def run_cli(args, capsys) -> tuple[int, dict]:
    code = main(args)
    out = capsys.readouterr().out.strip().splitlines()
    return code, json.loads(out[-1])


@pytest.fixture()
def fair_files(tmp_path: Path):
    instance = tmp_path / "fair.json"
    instance.write_text(json.dumps(FAIR_INSTANCE))
    protocol = tmp_path / "fig.json"
    protocol.write_text(json.dumps(FIG_PROTOCOL))
    return str(instance), str(protocol)


class TestLoad:
    def test_fair_instance_loads_four_rows(self, fair_files, capsys):
        code, doc = run_cli(["validate", fair_files[0]], capsys)
        assert code == 0 and doc["instance"] == "ok"

    def test_parse_error_exit_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"schema": "cpv-1",,}')
        code, doc = run_cli(["validate", str(bad)], capsys)
        assert code == 2
        assert "line" in doc["error"] and "column" in doc["error"]

    def test_missing_row_reported_with_labels(self, tmp_path, capsys):
        doc = json.loads(json.dumps(FAIR_INSTANCE))
        doc["rule"]["table"].pop()
        p = tmp_path / "partial.json"
        p.write_text(json.dumps(doc))
        code, out = run_cli(["validate", str(p)], capsys)
        assert code == 2 and "not total" in out["error"]

    def test_overlapping_protocol_cells_exit_2(self, tmp_path, fair_files, capsys):
        proto = {
            "schema": "cpv-1",
            "tree": {
                "query": {
                    "kind": "extensional",
                    "cells": [
                        [["A", "A"], ["A", "B"]],
                        [["A", "A"], ["B", "A"], ["B", "B"]],
                    ],
                },
                "children": [{}, {}],
            },
        }
        p = tmp_path / "overlap.json"
        p.write_text(json.dumps(proto))
        code, out = run_cli(["validate", fair_files[0], str(p)], capsys)
        assert code == 2
        assert "overlap" in out["error"] and "/tree" in out["error"]

    def test_builtin_reference_materializes(self, tmp_path, capsys):
        inst = {
            "schema": "cpv-1",
            "rule": {"builtin": "second_price", "params": {"n": 3, "values": [1, 2, 3]}},
        }
        p = tmp_path / "spa.json"
        p.write_text(json.dumps(inst))
        code, out = run_cli(["validate", str(p)], capsys)
        assert code == 0

    def test_unsupported_schema(self, tmp_path, capsys):
        p = tmp_path / "old.json"
        p.write_text(json.dumps({**FAIR_INSTANCE, "schema": "cpv-0"}))
        code, out = run_cli(["validate", str(p)], capsys)
        assert code == 2 and "schema" in out["error"]


class TestCheck:
    def test_cp_violation_names_agent_2(self, fair_files, capsys):
        code, doc = run_cli(
            ["check", "--property", "cp", fair_files[0], fair_files[1]], capsys
        )
        assert code == 1
        assert doc["violation"]["agent"] == 2
        assert doc["violation"]["types"] == ["A", "B"]

    def test_corners_fair(self, fair_files, capsys):
        code, doc = run_cli(["check", "--property", "corners", fair_files[0]], capsys)
        assert code == 1
        assert doc["violation"]["shared"] == "x"

    def test_missing_protocol_is_input_error(self, fair_files, capsys):
        code, doc = run_cli(["check", "--property", "cp", fair_files[0]], capsys)
        assert code == 2


class TestSynthRoundTrip:
    def test_sd_synth_emit_load_check(self, tmp_path, capsys):
        inst_path = tmp_path / "sd.json"
        code, _ = run_cli(
            [
                "builtin",
                "serial_dictatorship",
                "--params",
                '{"n": 2, "objects": ["A", "B"]}',
                "--emit",
                str(inst_path),
            ],
            capsys,
        )
        assert code == 0
        proto_path = tmp_path / "sd_proto.json"
        code, doc = run_cli(["synth", str(inst_path), "--emit", str(proto_path)], capsys)
        assert code == 0 and doc["result"] == "protocol"
        code, doc = run_cli(
            ["check", "--property", "cp", str(inst_path), str(proto_path)], capsys
        )
        assert code == 0 and doc["holds"] is True

    def test_fair_synth_reports_witness(self, fair_files, capsys):
        code, doc = run_cli(["synth", fair_files[0]], capsys)
        assert code == 1
        assert doc["result"] == "witness"
        assert doc["witness"]["factors"] == [["A", "B"], ["A", "B"]]


class TestEnumerate:
    def test_fair_elicit_nonexistent(self, fair_files, capsys):
        code, doc = run_cli(["enumerate", "--queries", "elicit", fair_files[0]], capsys)
        assert code == 1 and doc["result"] == "proven-nonexistent"

    def test_school_count_nonexistent(self, tmp_path, capsys):
        inst = {"schema": "cpv-1", "rule": {"builtin": "school_count_instance"}}
        p = tmp_path / "school.json"
        p.write_text(json.dumps(inst))
        code, doc = run_cli(["enumerate", "--queries", "elicit,count", str(p)], capsys)
        assert code == 1 and doc["result"] == "proven-nonexistent"

    def test_budget_exit_2(self, tmp_path, capsys):
        inst = {
            "schema": "cpv-1",
            "rule": {
                "builtin": "serial_dictatorship",
                "params": {"n": 3, "objects": ["a", "b", "c"]},
            },
        }
        p = tmp_path / "sd3.json"
        p.write_text(json.dumps(inst))
        code, doc = run_cli(["enumerate", "--max-states", "3", str(p)], capsys)
        assert code == 2 and doc["kind"] == "resource"


class TestRunAndTatonnement:
    def test_run_transcript(self, fair_files, capsys):
        code, doc = run_cli(
            ["run", "--profile", "B,A", fair_files[0], fair_files[1]], capsys
        )
        assert code == 0
        assert doc["outcome"] == "x'"
        assert [s["answer"] for s in doc["path"]] == [1, 0]

    def test_tatonnement_with_embedded_phase(self, tmp_path, capsys):
        bundle_path = tmp_path / "count.json"
        code, _ = run_cli(
            [
                "builtin",
                "count_ascending_kplus1_price",
                "--params",
                '{"k": 1, "n": 3, "values": [1, 2, 3]}',
                "--emit",
                str(bundle_path),
            ],
            capsys,
        )
        assert code == 0
        code, doc = run_cli(
            ["check", "--property", "tatonnement", str(bundle_path)], capsys
        )
        assert code == 0 and doc["holds"] is True

    def test_unknown_builtin(self, capsys):
        code, doc = run_cli(["builtin", "nope"], capsys)
        assert code == 2


class TestDeterminism:
    def test_byte_identical_reports(self, fair_files):
        cmd = [
            sys.executable,
            "-m",
            "cpv.cli",
            "check",
            "--property",
            "cp",
            fair_files[0],
            fair_files[1],
        ]
        runs = [
            subprocess.run(cmd, capture_output=True, env=env).stdout
            for env in (
                {"PATH": "/usr/bin:/bin", "CPV_THREADS": "1"},
                {"PATH": "/usr/bin:/bin", "CPV_THREADS": "8"},
                {"PATH": "/usr/bin:/bin"},
            )
        ]
        assert runs[0] == runs[1] == runs[2]

    def test_bad_thread_env(self, fair_files):
        cmd = [sys.executable, "-m", "cpv.cli", "validate", fair_files[0]]
        res = subprocess.run(
            cmd, capture_output=True, env={"PATH": "/usr/bin:/bin", "CPV_THREADS": "x"}
        )
        assert res.returncode == 2


class TestFamilies:
    def test_family_emission(self, tmp_path, capsys):
        out = tmp_path / "family.json"
        code, doc = run_cli(
            ["builtin", "house_ir_efficient_family", "--emit", str(out)], capsys
        )
        assert code == 0 and doc["kind"] == "family" and doc["members"] == 1
        saved = json.loads(out.read_text())
        assert len(saved["family"]) == 1
