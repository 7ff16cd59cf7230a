"""End-to-end CLI pipeline: file handoff equals the in-process API,
byte-identical reruns, and the documented exit codes."""

import json
import subprocess
import sys

import numpy as np
import pytest

from querynms import (
    TrainConfig,
    TrainSample,
    init_params,
    load_detections,
    load_embeddings,
    load_foreground,
    load_params,
    load_queries,
    lookup_words,
    prefilter,
    rank_detections,
    save_params,
    top_n,
    train,
)
from querynms.cli import main
from querynms.synthetic import adversarial_world


def run_cli(*argv) -> int:
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    return adversarial_world(tmp_path_factory.mktemp("world"), n_queries=30, seed=0)


@pytest.fixture(scope="module")
def pipeline(world, tmp_path_factory):
    """gen-gt + train once; several tests share the artifacts."""
    out = tmp_path_factory.mktemp("artifacts")
    fg = out / "foreground.jsonl"
    params = out / "params.json"
    loss_log = out / "loss.csv"
    assert run_cli(
        "gen-gt", "--detections", world.detections, "--queries", world.queries,
        "--annotations", world.annotations, "--embeddings", world.embeddings,
        "--lexicon", world.lexicon, "--output", fg) == 0
    assert run_cli(
        "train", "--detections", world.detections, "--queries", world.queries,
        "--embeddings", world.embeddings, "--foreground", fg,
        "--epochs", 8, "--top-h", 10, "--seed", 0,
        "--params-out", params, "--loss-log", loss_log) == 0
    return {"foreground": fg, "params": params, "loss_log": loss_log}


class TestGenGt:
    def test_record_per_query_and_header(self, world, pipeline):
        records, header = load_foreground(pipeline["foreground"])
        assert len(records) == len(load_queries(world.queries))
        assert header["source"] == "text_sim"
        assert header["similarity_threshold"] == 0.4
        assert header["min_confidence"] == 0.05

    def test_rerun_is_byte_identical(self, world, pipeline, tmp_path):
        again = tmp_path / "fg2.jsonl"
        assert run_cli(
            "gen-gt", "--detections", world.detections, "--queries", world.queries,
            "--annotations", world.annotations, "--embeddings", world.embeddings,
            "--lexicon", world.lexicon, "--output", again) == 0
        assert again.read_bytes() == pipeline["foreground"].read_bytes()

    def test_wspg_source_imports_annotations_verbatim(self, world, tmp_path):
        out = tmp_path / "fg_wspg.jsonl"
        assert run_cli(
            "gen-gt", "--detections", world.detections, "--queries", world.queries,
            "--annotations", world.annotations, "--gt-source", "wspg",
            "--output", out) == 0
        records, header = load_foreground(out)
        assert header["source"] == "wspg"
        from querynms import load_annotations
        annotations = load_annotations(world.annotations)
        for rec in records:
            assert rec.foreground.provenance == "wspg_import"
            assert rec.foreground.contextual == annotations[rec.image_id]


class TestTrain:
    def test_params_load_with_expected_dims(self, pipeline):
        params = load_params(pipeline["params"])
        assert params.dims == (16, 16)

    def test_loss_log_rows(self, pipeline):
        lines = pipeline["loss_log"].read_text().splitlines()
        assert lines[0].startswith("epoch")
        assert len(lines) == 1 + 8

    def test_rerun_is_byte_identical(self, world, pipeline, tmp_path):
        again = tmp_path / "params2.json"
        assert run_cli(
            "train", "--detections", world.detections, "--queries", world.queries,
            "--embeddings", world.embeddings, "--foreground", pipeline["foreground"],
            "--epochs", 8, "--top-h", 10, "--seed", 0, "--params-out", again) == 0
        assert again.read_bytes() == pipeline["params"].read_bytes()

    def test_zero_epochs_saves_init_params(self, world, pipeline, tmp_path):
        out = tmp_path / "init_cli.json"
        assert run_cli(
            "train", "--detections", world.detections, "--queries", world.queries,
            "--embeddings", world.embeddings, "--foreground", pipeline["foreground"],
            "--epochs", 0, "--seed", 7, "--params-out", out) == 0
        direct = tmp_path / "init_direct.json"
        save_params(init_params(v=16, q=16, seed=7), direct)
        assert out.read_bytes() == direct.read_bytes()

    def test_file_pipeline_equals_in_process_training(self, world, pipeline):
        records, header = load_foreground(pipeline["foreground"])
        queries = {q.query_id: q for q in load_queries(world.queries)}
        table = load_embeddings(world.embeddings)
        detections = dict(load_detections(world.detections))
        samples = []
        for rec in records:
            dets = prefilter(detections[rec.image_id], header["min_confidence"])
            samples.append(TrainSample(
                V=np.stack([d.feature for d in dets]),
                W=lookup_words(queries[rec.query_id].tokens, table),
                targets=rec.targets,
            ))
        result = train(init_params(v=16, q=16, seed=0), samples,
                       TrainConfig(epochs=8, top_h=10, seed=0))
        from_file = load_params(pipeline["params"])
        for name in from_file.field_names():
            assert np.array_equal(getattr(from_file, name),
                                  getattr(result.params, name))


def read_filter_output(path):
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    grouped = {}
    for row in rows:
        grouped.setdefault(row["query_id"], []).append(row)
    return rows, grouped


class TestFilter:
    def filter_args(self, world, out, *extra):
        return ("filter", "--detections", world.detections, "--queries",
                world.queries, "--output", out) + extra

    def test_baseline_equals_confidence_only_nms(self, world, tmp_path):
        out = tmp_path / "base.jsonl"
        assert run_cli(*self.filter_args(world, out, "--baseline")) == 0
        rows, grouped = read_filter_output(out)
        detections = dict(load_detections(world.detections))
        for query in load_queries(world.queries):
            expected = rank_detections(detections[query.image_id], None, None)
            got = grouped[query.query_id]
            assert [r["rank"] for r in got] == list(range(len(expected)))
            assert [tuple(r["box"]) for r in got] == \
                [s.detection.box.as_tuple() for s in expected]
            assert all(r["relatedness"] == 1.0 for r in got)
            assert [r["fused"] for r in got] == [r["confidence"] for r in got]

    def test_scored_run_matches_api_composition(self, world, pipeline, tmp_path):
        out = tmp_path / "aware.jsonl"
        assert run_cli(*self.filter_args(
            world, out, "--params", pipeline["params"],
            "--embeddings", world.embeddings, "--top-n", 15)) == 0
        _, grouped = read_filter_output(out)
        params = load_params(pipeline["params"])
        table = load_embeddings(world.embeddings)
        detections = dict(load_detections(world.detections))
        for query in load_queries(world.queries):
            W = lookup_words(query.tokens, table)
            expected = top_n(rank_detections(detections[query.image_id], params, W), 15)
            got = grouped[query.query_id]
            assert [tuple(r["box"]) for r in got] == \
                [s.detection.box.as_tuple() for s in expected]
            assert [r["fused"] for r in got] == [s.fused for s in expected]
            assert [r["relatedness"] for r in got] == [s.relatedness for s in expected]

    def test_scaling_relatedness_keeps_survivors_and_order(self, world, pipeline, tmp_path):
        plain = tmp_path / "plain.jsonl"
        scaled = tmp_path / "scaled.jsonl"
        common = ("--params", pipeline["params"], "--embeddings", world.embeddings)
        assert run_cli(*self.filter_args(world, plain, *common)) == 0
        assert run_cli(*self.filter_args(
            world, scaled, *common, "--scale-relatedness", 2.0)) == 0
        rows_a, _ = read_filter_output(plain)
        rows_b, _ = read_filter_output(scaled)
        key = lambda r: (r["query_id"], r["rank"], tuple(r["box"]))
        assert [key(r) for r in rows_a] == [key(r) for r in rows_b]

    def test_thread_count_does_not_change_output(self, world, pipeline, tmp_path):
        serial = tmp_path / "serial.jsonl"
        threaded = tmp_path / "threaded.jsonl"
        common = ("--params", pipeline["params"], "--embeddings", world.embeddings)
        assert run_cli(*self.filter_args(world, serial, *common)) == 0
        assert run_cli(*self.filter_args(world, threaded, *common, "--threads", 4)) == 0
        assert serial.read_bytes() == threaded.read_bytes()

    def test_empty_detections_writes_empty_output(self, tmp_path):
        detections = tmp_path / "detections.jsonl"
        queries = tmp_path / "queries.jsonl"
        detections.write_text("")
        queries.write_text(json.dumps({
            "query_id": "q0", "image_id": "img0", "tokens": ["cat"],
            "referent_box": [0.0, 0.0, 10.0, 10.0]}) + "\n")
        out = tmp_path / "out.jsonl"
        assert run_cli("filter", "--detections", detections, "--queries", queries,
                       "--baseline", "--output", out) == 0
        assert out.read_text() == ""


class TestEval:
    def eval_args(self, world, pipeline, out, *extra):
        return ("eval", "--detections", world.detections, "--queries", world.queries,
                "--annotations", world.annotations, "--embeddings", world.embeddings,
                "--lexicon", world.lexicon, "--params", pipeline["params"],
                "--output", out) + extra

    def test_report_header_and_rows(self, world, pipeline, tmp_path, capsys):
        out = tmp_path / "report.csv"
        assert run_cli(*self.eval_args(world, pipeline, out,
                                       "--budgets", "5,40")) == 0
        lines = out.read_text().splitlines()
        comments = [l for l in lines if l.startswith("#")]
        assert "# min_confidence=0.05" in comments
        assert "# similarity_threshold=0.4" in comments
        assert "# nms_iou=0.5" in comments
        assert "# gt_source=text_sim" in comments
        assert "# budgets=5 40" in comments
        header_idx = lines.index("method,split,N,referent_recall,contextual_recall")
        data = [l.split(",") for l in lines[header_idx + 1:]]
        assert sorted({(d[0], d[2]) for d in data}) == [
            ("baseline", "40"), ("baseline", "5"),
            ("query_aware", "40"), ("query_aware", "5")]
        printed = capsys.readouterr().out
        assert "baseline N=5" in printed
        assert "query_aware N=40" in printed

    def test_rerun_and_threads_byte_identical(self, world, pipeline, tmp_path):
        a, b, c = (tmp_path / n for n in ("a.csv", "b.csv", "c.csv"))
        assert run_cli(*self.eval_args(world, pipeline, a, "--budgets", "5,40")) == 0
        assert run_cli(*self.eval_args(world, pipeline, b, "--budgets", "5,40")) == 0
        assert run_cli(*self.eval_args(world, pipeline, c, "--budgets", "5,40",
                                       "--threads", 3)) == 0
        assert a.read_bytes() == b.read_bytes() == c.read_bytes()

    def test_baseline_method_needs_no_params(self, world, tmp_path):
        out = tmp_path / "base.csv"
        assert run_cli(
            "eval", "--detections", world.detections, "--queries", world.queries,
            "--annotations", world.annotations, "--embeddings", world.embeddings,
            "--lexicon", world.lexicon, "--method", "baseline",
            "--budgets", "5", "--output", out) == 0
        assert "baseline,all,5," in out.read_text()

    def test_plot_written(self, world, pipeline, tmp_path):
        out = tmp_path / "report.csv"
        plot = tmp_path / "curves.png"
        assert run_cli(*self.eval_args(world, pipeline, out, "--budgets", "5,40",
                                       "--plot", plot)) == 0
        assert plot.stat().st_size > 0


class TestExitCodes:
    def test_config_errors_exit_2(self, world, pipeline, tmp_path):
        out = tmp_path / "x"
        base = ("filter", "--detections", world.detections,
                "--queries", world.queries, "--output", out)
        # mutually exclusive ranking modes
        assert run_cli(*base, "--baseline", "--params", pipeline["params"]) == 2
        # neither mode
        assert run_cli(*base) == 2
        # params without embeddings
        assert run_cli(*base, "--params", pipeline["params"]) == 2
        # out-of-range threshold
        assert run_cli(*base, "--baseline", "--nms-iou", 1.5) == 2
        # bad budgets string
        assert run_cli("eval", "--detections", world.detections,
                       "--queries", world.queries, "--annotations",
                       world.annotations, "--embeddings", world.embeddings,
                       "--lexicon", world.lexicon, "--method", "baseline",
                       "--budgets", "ten", "--output", out) == 2
        # query-aware eval without params
        assert run_cli("eval", "--detections", world.detections,
                       "--queries", world.queries, "--annotations",
                       world.annotations, "--embeddings", world.embeddings,
                       "--lexicon", world.lexicon, "--method", "query_aware",
                       "--budgets", "5", "--output", out) == 2
        # text_sim pseudo-GT without embeddings
        assert run_cli("gen-gt", "--detections", world.detections,
                       "--queries", world.queries, "--annotations",
                       world.annotations, "--output", out) == 2
        # invalid training hyperparameter
        assert run_cli("train", "--detections", world.detections,
                       "--queries", world.queries, "--embeddings",
                       world.embeddings, "--foreground", pipeline["foreground"],
                       "--epochs", -1, "--params-out", out) == 2
        # invalid bench size
        assert run_cli("bench", "--boxes", 0) == 2

    def test_data_errors_exit_3(self, world, pipeline, tmp_path):
        out = tmp_path / "x"
        # missing input file
        assert run_cli("gen-gt", "--detections", tmp_path / "absent.jsonl",
                       "--queries", world.queries, "--annotations",
                       world.annotations, "--embeddings", world.embeddings,
                       "--lexicon", world.lexicon, "--output", out) == 3
        # malformed JSONL
        bad = tmp_path / "bad.jsonl"
        bad.write_text("{not json\n")
        assert run_cli("filter", "--detections", bad, "--queries", world.queries,
                       "--baseline", "--output", out) == 3
        # foreground header disagrees with the prefilter actually applied
        doctored = tmp_path / "doctored.jsonl"
        lines = pipeline["foreground"].read_text().splitlines()
        header = json.loads(lines[0])
        header["min_confidence"] = 0.5
        doctored.write_text("\n".join([json.dumps(header)] + lines[1:]) + "\n")
        assert run_cli("train", "--detections", world.detections,
                       "--queries", world.queries, "--embeddings", world.embeddings,
                       "--foreground", doctored, "--params-out", out) == 3
        # foreground record for a query that does not exist
        orphan = tmp_path / "orphan.jsonl"
        lines = pipeline["foreground"].read_text().splitlines()
        record = json.loads(lines[1])
        record["query_id"] = "no-such-query"
        orphan.write_text("\n".join([lines[0], json.dumps(record)]) + "\n")
        assert run_cli("train", "--detections", world.detections,
                       "--queries", world.queries, "--embeddings", world.embeddings,
                       "--foreground", orphan, "--params-out", out) == 3

    def test_numerical_abort_exits_4(self, world, tmp_path):
        # Weights engineered so the attention branch overflows to +inf and the
        # mixed-sign FC then produces inf - inf = nan for every input box.
        params = init_params(v=16, q=16, seed=0)
        params.attn_w1[:] = 1e200
        params.attn_w2[:] = 1e200
        params.sim_w[:] = np.where(np.arange(params.sim_w.size) % 2 == 0, 1.0, -1.0)
        params_path = tmp_path / "hot.json"
        save_params(params, params_path)
        detections = tmp_path / "ones.jsonl"
        detections.write_text(json.dumps({
            "image_id": "img0000", "box": [0.0, 0.0, 10.0, 10.0],
            "label": "cat", "confidence": 0.9,
            "feature": [1.0] * 16}) + "\n")
        out = tmp_path / "x"
        with np.errstate(invalid="ignore", over="ignore"):
            code = run_cli("filter", "--detections", detections,
                           "--queries", world.queries, "--params", params_path,
                           "--embeddings", world.embeddings, "--output", out)
        assert code == 4

    def test_argparse_rejects_unknown_subcommand(self):
        with pytest.raises(SystemExit) as exc:
            run_cli("frobnicate")
        assert exc.value.code == 2


class TestBench:
    def test_within_budget_exits_0(self, capsys):
        assert run_cli("bench", "--boxes", 50, "--repeats", 3,
                       "--budget-ms", 10000) == 0
        printed = capsys.readouterr().out
        assert "boxes=50" in printed
        assert "status=ok" in printed
        assert "median_ms=" in printed

    def test_over_budget_exits_1(self, capsys):
        assert run_cli("bench", "--boxes", 50, "--repeats", 3,
                       "--budget-ms", 1e-9) == 1
        assert "status=over_budget" in capsys.readouterr().out


def test_console_script_reports_version():
    result = subprocess.run(["querynms", "--version"],
                            capture_output=True, text=True)
    assert result.returncode == 0
    assert result.stdout.strip() == "querynms 0.1.0"


def test_module_entry_point_runs():
    result = subprocess.run([sys.executable, "-m", "querynms.cli", "--version"],
                            capture_output=True, text=True)
    assert result.returncode == 0
    assert result.stdout.strip() == "querynms 0.1.0"
