import json
import shutil
from pathlib import Path

import pytest

from formalflow.cli import main
from formalflow.corpus import load_corpus

from conftest import CLEAN_THEOREM, FIXTURES

PERCENT = "%" * 10


def wrapped(code: str) -> str:
    return f"{PERCENT}\n{code}\n{PERCENT}"


@pytest.fixture()
def fv_corpus(tmp_path) -> Path:
    target = tmp_path / "fixtures.json"
    shutil.copy(FIXTURES / "fv_corpus.json", target)
    return target


def run(argv) -> int:
    return main([str(a) for a in argv])


class TestCompileCheck:
    def test_prints_fv_seventy(self, fv_corpus, tmp_path, toolchain_project, capsys):
        code = run(
            ["compile-check", fv_corpus, "--out", tmp_path / "out",
             "--toolchain-dir", toolchain_project]
        )
        assert code == 0
        assert "FV 70.0" in capsys.readouterr().out
        report = json.loads((tmp_path / "out" / "compile_check.json").read_text())
        assert report["FV"] == pytest.approx(70.0)
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert manifest["command"] == "compile-check"
        assert manifest["toolchain_pin"]

    def test_stub_toolchain_autocreated(self, fv_corpus, tmp_path, capsys):
        code = run(["compile-check", fv_corpus, "--out", tmp_path / "out"])
        assert code == 0
        assert (tmp_path / "out" / "toolchain-stub" / "toolchain.json").exists()

    def test_corpus_flag_equivalent_to_positional(
        self, fv_corpus, tmp_path, toolchain_project, capsys
    ):
        code = run(
            ["compile-check", "--corpus", fv_corpus, "--out", tmp_path / "out",
             "--toolchain-dir", toolchain_project]
        )
        assert code == 0
        assert "FV 70.0" in capsys.readouterr().out


class TestUsageErrors:
    def test_unknown_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            run(["frobnicate"])
        assert exc.value.code == 2

    def test_unknown_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            run(["compile-check", "--bogus"])
        assert exc.value.code == 2

    def test_missing_corpus_is_error(self, tmp_path, capsys):
        with pytest.raises(SystemExit):
            run(["compile-check", "--out", tmp_path / "out"])

    def test_runtime_failure_prints_machine_parseable_line(self, tmp_path, capsys):
        code = run(["compile-check", tmp_path / "missing.json", "--out", tmp_path / "out"])
        assert code == 1
        err = capsys.readouterr().err
        assert err.startswith("error: ")


class TestZeroShot:
    def test_writes_output_corpus(self, tmp_path, toolchain_project, capsys):
        corpus = tmp_path / "c.json"
        corpus.write_text(json.dumps([{"question": "Show 1 = 1.", "answer": "Trivial."}]))
        replay = tmp_path / "replay.json"
        replay.write_text(
            json.dumps([{"pattern": "Give me the Lean4", "reply": wrapped(CLEAN_THEOREM)}])
        )
        code = run(
            ["zero-shot", corpus, "--mock", replay, "--out", tmp_path / "out",
             "--toolchain-dir", toolchain_project]
        )
        assert code == 0
        records = load_corpus(tmp_path / "out" / "zero_shot.json")
        assert records[0].formal_code == CLEAN_THEOREM.strip()


class TestAgentDeterminism:
    def _agent_args(self, corpus, replay, out):
        return ["agent", corpus, "--mock", replay, "--out", out]

    def test_identical_runs_produce_identical_traces(self, tmp_path, toolchain_project):
        corpus = tmp_path / "c.json"
        corpus.write_text(
            json.dumps([{"id": "only", "question": "Show 1 = 1.", "answer": "Trivial."}])
        )
        replay = tmp_path / "replay.json"
        replay.write_text(
            json.dumps(
                [{"pattern": "Acceptance criteria", "reply": wrapped(CLEAN_THEOREM)}]
            )
        )
        outputs = []
        for run_dir in ("run-a", "run-b"):
            out = tmp_path / run_dir
            code = run(self._agent_args(corpus, replay, out) + ["--toolchain-dir", toolchain_project])
            assert code == 0
            trace = (out / "traces" / "only.jsonl").read_bytes()
            summary = (out / "agent_summary.json").read_bytes()
            corpus_out = (out / "agent.json").read_bytes()
            outputs.append((trace, summary, corpus_out))
        assert outputs[0] == outputs[1]

    def test_agent_summary_success(self, tmp_path, toolchain_project):
        corpus = tmp_path / "c.json"
        corpus.write_text(json.dumps([{"id": "r", "question": "q", "answer": "a"}]))
        replay = tmp_path / "replay.json"
        replay.write_text(
            json.dumps([{"pattern": "Acceptance criteria", "reply": wrapped(CLEAN_THEOREM)}])
        )
        out = tmp_path / "out"
        assert run(self._agent_args(corpus, replay, out) + ["--toolchain-dir", toolchain_project]) == 0
        summary = json.loads((out / "agent_summary.json").read_text())
        assert summary["r"]["success"] is True


class TestSplitCommand:
    def test_fragments_written(self, tmp_path, capsys):
        combined = tmp_path / "combined.lean"
        combined.write_text(
            "import Lean\n\n-- C1\ntheorem a : 1 = 1 := rfl\n\n-- C2\ntheorem b : 2 = 2 := rfl\n"
        )
        code = run(["split", combined, "--out", tmp_path / "out"])
        assert code == 0
        assert (tmp_path / "out" / "combined_C1.lean").exists()
        assert (tmp_path / "out" / "combined_C2.lean").exists()
        fragment = (tmp_path / "out" / "combined_C1.lean").read_text()
        assert fragment.startswith("import Lean")

    def test_malformed_combined_fails(self, tmp_path, capsys):
        combined = tmp_path / "combined.lean"
        combined.write_text("no imports here\n")
        assert run(["split", combined, "--out", tmp_path / "out"]) == 1
        assert capsys.readouterr().err.startswith("error: MalformedCombined")


class TestDriftReportCommand:
    def test_report_files_written(self, tmp_path, capsys):
        corpus = tmp_path / "c.json"
        corpus.write_text(
            json.dumps(
                [
                    {
                        "id": "d1",
                        "field": "QM",
                        "question": "q",
                        "answer": "a",
                        "drift": [{"category": "NotationalCollapse", "annotator": "e"}],
                    }
                ]
            )
        )
        code = run(["drift-report", corpus, "--out", tmp_path / "out"])
        assert code == 0
        report = json.loads((tmp_path / "out" / "drift.json").read_text())
        assert report["proportions"]["QM"]["NotationalCollapse"] == 1.0
        assert (tmp_path / "out" / "drift.csv").exists()


class TestEvalCommand:
    def test_eval_with_mock_judge(self, fv_corpus, tmp_path, toolchain_project, capsys):
        replay = tmp_path / "judge_replay.json"
        replay.write_text(json.dumps([{"pattern": ".", "reply": "YES"}]))
        code = run(
            ["eval", fv_corpus, "--mock", replay, "--out", tmp_path / "out",
             "--toolchain-dir", toolchain_project]
        )
        assert code == 0
        report = json.loads((tmp_path / "out" / "report.json").read_text())
        assert report["primary"]["FV"] == pytest.approx(70.0)
        assert report["primary"]["FQ"] == pytest.approx(100.0)
        out = capsys.readouterr().out
        assert "FV" in out and "corpus" in out
