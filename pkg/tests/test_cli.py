"""Command-line workflow and exit-code contract."""

import subprocess
import sys

import pytest

from stackparse import data
from stackparse.cli import main


def run_ok(*args):
    assert main(list(args)) == 0


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    run_ok("synth", "--out", str(root / "train.conllu"), "--n", "20",
           "--seed", "31")
    run_ok("synth", "--out", str(root / "dev.conllu"), "--n", "6",
           "--seed", "32")
    return root


class TestPipeline:
    def test_oracle_writes_actions_and_vocab(self, workdir, capsys):
        run_ok("oracle", "--input", str(workdir / "train.conllu"),
               "--actions-out", str(workdir / "train.actions"),
               "--shift-vocab-out", str(workdir / "shift.txt"),
               "--shift-k", "15")
        out = capsys.readouterr().out
        assert "round-trip ok" in out
        assert "skipped 0" in out
        seqs = data.read_actions(str(workdir / "train.actions"))
        assert len(seqs) == 20
        vocab = data.read_shift_vocab(str(workdir / "shift.txt"))
        assert len(vocab.words) == 15

    def test_train_parse_eval(self, workdir, capsys):
        run_ok("train", "--train", str(workdir / "train.conllu"),
               "--dev", str(workdir / "dev.conllu"),
               "--out", str(workdir / "run"),
               "--variant", "stack-buffer", "--epochs", "2",
               "--budget", "64", "--d-model", "32", "--ffn-dim", "64",
               "--enc-layers", "1", "--dec-layers", "1",
               "--warmup", "10", "--seed", "4")
        out = capsys.readouterr().out
        log_lines = [ln for ln in out.splitlines() if "\t" in ln]
        assert len(log_lines) == 2
        assert all(len(ln.split("\t")) == 6 for ln in log_lines)
        assert "best checkpoint:" in out

        ckpt = str(workdir / "run" / "epoch002.npz")
        run_ok("parse", "--model", ckpt,
               "--input", str(workdir / "dev.conllu"),
               "--output", str(workdir / "pred.conllu"), "--beam", "2")
        pred = data.read_conllu(str(workdir / "pred.conllu"))
        assert len(pred) == 6
        assert all(e.graph.is_tree() for e in pred)

        run_ok("eval", str(workdir / "dev.conllu"),
               str(workdir / "pred.conllu"))
        out = capsys.readouterr().out
        assert out.splitlines()[-2].startswith("UAS ")
        assert out.splitlines()[-1].startswith("LAS ")

    def test_parse_with_averaged_checkpoints(self, workdir):
        ck1 = str(workdir / "run" / "epoch001.npz")
        ck2 = str(workdir / "run" / "epoch002.npz")
        run_ok("parse", "--model", ck1, ck2,
               "--input", str(workdir / "dev.conllu"),
               "--output", str(workdir / "pred_avg.conllu"))
        assert len(data.read_conllu(str(workdir / "pred_avg.conllu"))) == 6

    def test_plan_dump(self, workdir, capsys):
        run_ok("plan", "--input", str(workdir / "dev.conllu"),
               "--heads", "stack,buffer", "--limit", "1")
        out = capsys.readouterr().out
        assert "step 1" in out
        assert "FULL_STACK" in out and "FULL_BUFFER" in out
        assert "#" in out and "*" in out


class TestExitCodes:
    def test_missing_input_file_is_validation_error(self, tmp_path):
        rc = main(["oracle", "--input", str(tmp_path / "nope.conllu"),
                   "--actions-out", str(tmp_path / "a.txt")])
        assert rc == 1

    def test_unknown_flag_exits_one(self):
        with pytest.raises(SystemExit) as exc:
            main(["eval", "--bogus-flag"])
        assert exc.value.code == 1

    def test_unknown_subcommand_exits_one(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 1

    def test_eval_alignment_failure_exits_one(self, tmp_path):
        from stackparse import synth
        import stackparse.transitions as tr
        e1 = [data.TreebankEntry("1", tr.Sentence(("a",)),
                                 tr.DepGraph((0,), ("root",)), ("X",))]
        data.write_conllu(e1, str(tmp_path / "gold.conllu"))
        data.write_conllu([], str(tmp_path / "pred.conllu"))
        rc = main(["eval", str(tmp_path / "gold.conllu"),
                   str(tmp_path / "pred.conllu")])
        assert rc == 1

    def test_malformed_conllu_exits_one(self, tmp_path):
        bad = tmp_path / "bad.conllu"
        bad.write_text("1\tword\tnot-enough-columns\n")
        rc = main(["plan", "--input", str(bad)])
        assert rc == 1

    def test_subprocess_entry_point(self, tmp_path):
        # the installed console script honors the same contract
        proc = subprocess.run(
            [sys.executable, "-m", "stackparse.cli", "synth",
             "--out", str(tmp_path / "s.conllu"), "--n", "2"],
            capture_output=True, text=True)
        assert proc.returncode == 0
        assert "wrote 2 sentence(s)" in proc.stdout


class TestGradcheckCommand:
    def test_passes_on_reference_setup(self, capsys):
        rc = main(["gradcheck", "--max-entries", "4"])
        out = capsys.readouterr().out
        assert rc == 0
        assert "PASS" in out

    def test_fails_with_absurd_tolerance(self, capsys):
        rc = main(["gradcheck", "--max-entries", "2", "--tol", "1e-30"])
        assert rc == 2
        assert "FAIL" in capsys.readouterr().out
