"""Tests for the command-line interface: exit codes, outputs, pipelines."""

import numpy as np
import pytest

from ctxquant import cli
from ctxquant.storage import read_embeddings, read_model, read_store


def run_cli(*argv):
    return cli.main(list(argv))


def kv(capsys):
    """Parse key=value lines printed by the last command."""
    out = capsys.readouterr().out
    pairs = {}
    for line in out.strip().splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            pairs[key] = value
    return pairs


class TestExitCodes:
    def test_help_exits_zero(self):
        with pytest.raises(SystemExit) as exc:
            cli.build_parser().parse_args(["--help"])
        assert exc.value.code == 0

    def test_main_help(self):
        assert run_cli("--help") == 0

    def test_unknown_subcommand_is_usage_error(self):
        assert run_cli("frobnicate") == 1

    def test_unknown_flag_is_usage_error(self):
        assert run_cli("synth", "--no-such-flag") == 1

    def test_missing_required_flag_is_usage_error(self):
        assert run_cli("train-pq") == 1

    def test_missing_file_is_data_error(self, tmp_path, capsys):
        code = run_cli("eval", "--run", str(tmp_path / "nope.run"),
                       "--qrels", str(tmp_path / "nope.txt"))
        assert code == 2
        assert "error" in capsys.readouterr().err

    def test_bad_param_is_data_error(self, tmp_path):
        assert run_cli("synth", "--out-dir", str(tmp_path),
                       "--delta-scale", "2.0") == 2


class TestHelpCoverage:
    @pytest.mark.parametrize("command,flags", [
        ("synth", ["--seed", "--vocab", "--docs", "--doc-tokens", "--D",
                   "--delta-scale", "--clusters", "--queries", "--query-tokens",
                   "--candidates", "--query-noise", "--out-dir"]),
        ("train-pq", ["--embeddings", "--M", "--K", "--iters", "--seed", "--out"]),
        ("train-rq", ["--embeddings", "--M", "--K", "--iters", "--seed", "--out"]),
        ("train-cq", ["--embeddings", "--base", "--mode", "--M", "--K", "--seed",
                      "--steps", "--lr", "--batch", "--sample-size", "--tau-start",
                      "--tau-end", "--loss", "--finetune-steps", "--finetune-lr",
                      "--pairs-per-batch", "--queries", "--candidates",
                      "--kmeans-init", "--out"]),
        ("encode", ["--model", "--embeddings", "--base", "--out"]),
        ("decode", ["--model", "--codes", "--base", "--out"]),
        ("rerank", ["--queries", "--candidates", "--model", "--codes", "--base",
                    "--raw-embeddings", "--k", "--threads", "--out"]),
        ("eval", ["--run", "--qrels", "--metric", "--out"]),
        ("space-report", ["--Z", "--n", "--V", "--D", "--M", "--K", "--mode",
                          "--float-bytes", "--id-bytes", "--out"]),
        ("gradcheck", ["--seed", "--M", "--K", "--D", "--samples"]),
        ("fidelity", ["--teacher-run", "--student-run", "--pairs-out", "--out"]),
    ])
    def test_subcommand_help_lists_flags(self, capsys, command, flags):
        with pytest.raises(SystemExit):
            cli.build_parser().parse_args([command, "--help"])
        text = capsys.readouterr().out
        for flag in flags:
            assert flag in text, f"{command} help is missing {flag}"

    def test_loss_choices_shown(self, capsys):
        with pytest.raises(SystemExit):
            cli.build_parser().parse_args(["train-cq", "--help"])
        text = capsys.readouterr().out
        for choice in ("mse", "pairwise-ce", "margin-mse"):
            assert choice in text


class TestSynth:
    def test_writes_all_outputs(self, tmp_path, capsys):
        assert run_cli("synth", "--seed", "1", "--out-dir", str(tmp_path)) == 0
        for name in ("corpus.cqem", "base.cqem", "queries.cqem",
                     "candidates.txt", "qrels.txt"):
            assert (tmp_path / name).exists(), name
        pairs = kv(capsys)
        assert pairs["docs"] == "32" and pairs["queries"] == "8"

    def test_deterministic_outputs(self, tmp_path):
        d1, d2 = tmp_path / "a", tmp_path / "b"
        d1.mkdir(), d2.mkdir()
        run_cli("synth", "--seed", "7", "--out-dir", str(d1))
        run_cli("synth", "--seed", "7", "--out-dir", str(d2))
        for name in ("corpus.cqem", "base.cqem", "queries.cqem",
                     "candidates.txt", "qrels.txt"):
            assert (d1 / name).read_bytes() == (d2 / name).read_bytes()

    def test_base_file_covers_vocab(self, tmp_path):
        run_cli("synth", "--vocab", "64", "--out-dir", str(tmp_path))
        dim, docs = read_embeddings(tmp_path / "base.cqem")
        assert len(docs) == 1
        assert docs[0].embeddings.shape == (64, dim)


class TestSpaceReport:
    def test_paper_scale_goldens(self, capsys):
        assert run_cli("space-report", "--Z", "8800000", "--n", "67.5",
                       "--D", "128", "--M", "16", "--K", "256") == 0
        pairs = kv(capsys)
        assert pairs["codebook_bytes"] == "131072"
        assert pairs["doc_indep_bytes"] == "16384000"
        assert float(pairs["codes_bytes"]) == pytest.approx(1.0692e10)
        assert float(pairs["colbert_bytes"]) == pytest.approx(1.52064e11)
        assert float(pairs["ratio_colbert_to_cq"]) == pytest.approx(14.22, abs=0.01)
        assert float(pairs["becr_ratio"]) == pytest.approx(8.89, abs=0.01)

    def test_report_file_written(self, tmp_path, capsys):
        out = tmp_path / "space.txt"
        run_cli("space-report", "--Z", "100", "--n", "10", "--D", "16",
                "--M", "4", "--K", "16", "--out", str(out))
        assert out.read_text() == capsys.readouterr().out


class TestEval:
    def test_mrr_rank_three_fixture(self, tmp_path, capsys):
        run = tmp_path / "a.run"
        qrels = tmp_path / "qrels.txt"
        run.write_text("q1 Q0 d1 1 3.0 t\nq1 Q0 d2 2 2.0 t\nq1 Q0 d3 3 1.0 t\n")
        qrels.write_text("q1 0 d3 1\n")
        assert run_cli("eval", "--run", str(run), "--qrels", str(qrels),
                       "--metric", "mrr@10") == 0
        assert kv(capsys)["mrr@10"] == "0.3333"

    def test_ndcg_metric(self, tmp_path, capsys):
        run = tmp_path / "a.run"
        qrels = tmp_path / "qrels.txt"
        run.write_text("q1 Q0 d1 1 2.0 t\nq1 Q0 d2 2 1.0 t\n")
        qrels.write_text("q1 0 d1 1\nq1 0 d2 2\n")
        run_cli("eval", "--run", str(run), "--qrels", str(qrels),
                "--metric", "ndcg@10")
        assert kv(capsys)["ndcg@10"] == "0.7967"

    def test_unknown_metric_is_data_error(self, tmp_path):
        run = tmp_path / "a.run"
        run.write_text("q1 Q0 d1 1 1.0 t\n")
        qrels = tmp_path / "qrels.txt"
        qrels.write_text("q1 0 d1 1\n")
        assert run_cli("eval", "--run", str(run), "--qrels", str(qrels),
                       "--metric", "f1") == 2


class TestGradcheck:
    def test_passes_and_reports(self, capsys):
        assert run_cli("gradcheck", "--seed", "0") == 0
        pairs = kv(capsys)
        assert pairs["pass"] == "true"
        assert float(pairs["max_rel_err"]) < 1e-4


class TestFidelity:
    def test_identical_runs(self, tmp_path, capsys):
        run = tmp_path / "a.run"
        run.write_text("q1 Q0 d1 1 2.0 t\nq1 Q0 d2 2 1.0 t\n")
        assert run_cli("fidelity", "--teacher-run", str(run),
                       "--student-run", str(run)) == 0
        assert kv(capsys)["median_tau"] == "1.0000"

    def test_pairs_table_written(self, tmp_path):
        run = tmp_path / "a.run"
        run.write_text("q1 Q0 d1 1 2.0 t\nq1 Q0 d2 2 1.0 t\n")
        pairs_path = tmp_path / "pairs.tsv"
        run_cli("fidelity", "--teacher-run", str(run), "--student-run", str(run),
                "--pairs-out", str(pairs_path))
        lines = pairs_path.read_text().strip().splitlines()
        assert lines[0].split("\t") == ["qid", "doc_id", "teacher", "student"]
        assert len(lines) == 3


class TestPipeline:
    """End-to-end flows over a small synthetic corpus."""

    @pytest.fixture()
    def corpus(self, tmp_path):
        run_cli("synth", "--seed", "1", "--docs", "16", "--vocab", "64",
                "--candidates", "6", "--out-dir", str(tmp_path))
        return tmp_path

    def test_baseline_quantizer_flow(self, corpus):
        cqbk = corpus / "pq.cqbk"
        assert run_cli("train-pq", "--embeddings", str(corpus / "corpus.cqem"),
                       "--M", "4", "--K", "8", "--out", str(cqbk)) == 0
        codes = corpus / "codes.cqcs"
        assert run_cli("encode", "--model", str(cqbk),
                       "--embeddings", str(corpus / "corpus.cqem"),
                       "--out", str(codes)) == 0
        store = read_store(codes)
        assert len(store) == 16
        recon = corpus / "recon.cqem"
        assert run_cli("decode", "--model", str(cqbk), "--codes", str(codes),
                       "--out", str(recon)) == 0
        dim, docs = read_embeddings(recon)
        assert dim == 16 and len(docs) == 16

    def test_residual_quantizer_flow(self, corpus):
        cqbk = corpus / "rq.cqbk"
        assert run_cli("train-rq", "--embeddings", str(corpus / "corpus.cqem"),
                       "--M", "2", "--K", "8", "--out", str(cqbk)) == 0
        assert run_cli("encode", "--model", str(cqbk),
                       "--embeddings", str(corpus / "corpus.cqem"),
                       "--out", str(corpus / "codes.cqcs")) == 0

    def test_cq_flow_and_rerank(self, corpus, capsys):
        cqnn = corpus / "model.cqnn"
        assert run_cli("train-cq", "--embeddings", str(corpus / "corpus.cqem"),
                       "--base", str(corpus / "base.cqem"),
                       "--M", "4", "--K", "8", "--steps", "150",
                       "--out", str(cqnn)) == 0
        model = read_model(cqnn)
        assert model.spec.M == 4 and model.spec.K == 8
        codes = corpus / "codes.cqcs"
        assert run_cli("encode", "--model", str(cqnn),
                       "--embeddings", str(corpus / "corpus.cqem"),
                       "--base", str(corpus / "base.cqem"),
                       "--out", str(codes)) == 0
        run_file = corpus / "student.run"
        assert run_cli("rerank", "--queries", str(corpus / "queries.cqem"),
                       "--candidates", str(corpus / "candidates.txt"),
                       "--model", str(cqnn), "--codes", str(codes),
                       "--base", str(corpus / "base.cqem"),
                       "--k", "6", "--out", str(run_file)) == 0
        teacher_file = corpus / "teacher.run"
        assert run_cli("rerank", "--queries", str(corpus / "queries.cqem"),
                       "--candidates", str(corpus / "candidates.txt"),
                       "--raw-embeddings", str(corpus / "corpus.cqem"),
                       "--k", "6", "--out", str(teacher_file)) == 0
        capsys.readouterr()
        assert run_cli("fidelity", "--teacher-run", str(teacher_file),
                       "--student-run", str(run_file)) == 0
        assert -1.0 <= float(kv(capsys)["median_tau"]) <= 1.0

    def test_cq_encode_requires_base(self, corpus):
        cqnn = corpus / "model.cqnn"
        run_cli("train-cq", "--embeddings", str(corpus / "corpus.cqem"),
                "--base", str(corpus / "base.cqem"),
                "--M", "4", "--K", "8", "--steps", "20", "--out", str(cqnn))
        assert run_cli("encode", "--model", str(cqnn),
                       "--embeddings", str(corpus / "corpus.cqem"),
                       "--out", str(corpus / "codes.cqcs")) == 2

    def test_finetune_requires_query_files(self, corpus):
        assert run_cli("train-cq", "--embeddings", str(corpus / "corpus.cqem"),
                       "--base", str(corpus / "base.cqem"),
                       "--M", "4", "--K", "8", "--steps", "20",
                       "--loss", "margin-mse", "--finetune-steps", "5",
                       "--out", str(corpus / "m.cqnn")) == 2
