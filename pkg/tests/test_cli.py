import hashlib
import json

import pytest

from proofsynth import metrics
from proofsynth.cli import (
    EXIT_OK,
    EXIT_VALIDATION,
    cmd_clones,
    cmd_eval_premises,
    cmd_index,
    cmd_run,
    cmd_score,
    cmd_split,
    cmd_train_premises,
    cmd_validate,
    load_bundles,
    load_config,
    main,
)

from conftest import make_record, write_corpus


def sha(text):
    return hashlib.sha256(text.encode()).hexdigest()


def fixture_records():
    return [
        make_record(
            "Lib.id", file="lib.fst", project="mainproj",
            goal_type="nat -> nat", prefix="let id =", body="let id x = x",
            file_context=["open Prims"],
        ),
        make_record(
            "Lib.add", file="lib.fst", project="mainproj",
            goal_type="int -> int -> int", prefix="let add =",
            body="let add x y = x + y",
            file_context=["open Prims", "let id x = x"],
        ),
        make_record(
            "Mid.twice", file="mid.fst", project="mainproj",
            goal_type="int -> int", prefix="let twice =",
            body="let twice x = add x x",
            file_context=["open Lib"],
            ideal_premises=["Lib.add"],
            in_scope=["Lib.add", "Lib.id", "Lib.unusedA", "Lib.unusedB"],
        ),
        make_record(
            "TestA.quad", file="test_a.fst", project="mainproj",
            goal_type="int -> int", prefix="let quad =",
            body="let quad x = twice (twice x)",
            file_context=["open Mid", "let helper_t = 0"],
            ideal_premises=["Mid.twice"],
            in_scope=["Mid.twice", "Lib.add", "Lib.id", "Lib.unusedA"],
        ),
        make_record(
            "TestA.neg", file="test_a.fst", project="mainproj",
            goal_type="x:int -> y:int{y = 0 - x}", prefix="let neg =",
            body="let neg x = 0 - x",
            file_context=["open Mid"],
        ),
        make_record(
            "Cross.dbl", file="cross.fst", project="crossproj",
            goal_type="nat -> nat", prefix="let dbl =", body="let dbl x = x + x",
            file_context=["open CrossLib"],
        ),
    ]


DEPS = {"mid.fst": ["lib.fst"], "test_a.fst": ["mid.fst", "lib.fst"]}

LABELS = {
    "lib.fst": "train",
    "mid.fst": "train",
    "test_a.fst": "intra_test",
    "cross.fst": "cross_test",
}


def write_stub_script(path, records, extra_entries=()):
    entries = [
        {"source_hash": sha(rec.body), "status": "success", "wall_ms": 0}
        for rec in records
    ]
    entries.append(
        {
            "default": True,
            "status": "failure",
            "wall_ms": 0,
            "errors": [
                {"code": 228, "stage": "typecheck", "message": "could not verify",
                 "range": [1, 1, 1, 1]}
            ],
        }
    )
    entries.extend(extra_entries)
    path.write_text("\n".join(json.dumps(e) for e in entries) + "\n")
    return path


def config_text(
    out_subdir="out",
    plant_mode="ground_truth_at_0",
    k=10,
    workers=2,
    ablations=(),
    premise_mode="oracle",
    extra="",
):
    ablation_list = ", ".join(f'"{a}"' for a in ablations)
    return f"""
corpus = "corpus.jsonl"
output_dir = "{out_subdir}"
seed = 7

[splits]
mode = "labels"
labels = "splits.json"
cross_projects = ["crossproj"]

[retrieval]
strategy = "train_only"
provider = "local"
dimension = 64

[premises]
mode = "{premise_mode}"
base_dimension = 64
head_dimension = 16
epochs = 10
learning_rate = 0.2
batch_size = 2

[prompt]
format = "natural"
profile = "small"
ablations = [{ablation_list}]

[generation]
backend = "mock"
model_id = "mock-model"
k = {k}
temperature = 0.8
plant_mode = "{plant_mode}"

[checker]
stub_script = "stub.ldjson"
timeout_s = 30.0
workers = {workers}
{extra}
"""


def build_project(tmp_path, records=None, **config_kw):
    records = records if records is not None else fixture_records()
    tmp_path.mkdir(parents=True, exist_ok=True)
    write_corpus(tmp_path / "corpus.jsonl", records, deps=DEPS)
    (tmp_path / "splits.json").write_text(json.dumps(LABELS))
    write_stub_script(tmp_path / "stub.ldjson", records)
    cfg_path = tmp_path / "config.toml"
    cfg_path.write_text(config_text(**config_kw))
    return load_config(cfg_path)


class TestValidate:
    def test_ok(self, tmp_path, capsys):
        config = build_project(tmp_path)
        assert cmd_validate(config) == EXIT_OK
        assert "OK" in capsys.readouterr().out

    def test_missing_corpus(self, tmp_path):
        config = build_project(tmp_path)
        (tmp_path / "corpus.jsonl").unlink()
        assert cmd_validate(config) == EXIT_VALIDATION

    def test_closure_violation(self, tmp_path, capsys):
        config = build_project(tmp_path)
        broken = dict(LABELS, **{"lib.fst": "intra_test"})  # mid depends on lib
        (tmp_path / "splits.json").write_text(json.dumps(broken))
        assert cmd_validate(config) == EXIT_VALIDATION
        assert "closure violation" in capsys.readouterr().out

    def test_clone_warning(self, tmp_path, capsys):
        records = fixture_records()
        records.append(
            make_record(
                "TestA.clone_of_id", file="test_a.fst", project="mainproj",
                goal_type="nat -> nat", body="let clone_of_id x = x",
            )
        )
        config = build_project(tmp_path, records=records)
        assert cmd_validate(config) == EXIT_OK
        out = capsys.readouterr().out
        assert "clone across splits: Lib.id / TestA.clone_of_id" in out


class TestSplitIndexClones:
    def test_split_generate_mode(self, tmp_path):
        config = build_project(tmp_path)
        config.splits.mode = "generate"
        config.splits.fractions = (0.5, 0.25, 0.25)
        assert cmd_split(config) == EXIT_OK
        labels = json.loads((tmp_path / "out" / "splits.json").read_text())
        assert set(labels.values()) <= {"train", "valid", "intra_test", "cross_test"}
        assert labels["cross.fst"] == "cross_test"

    def test_index(self, tmp_path):
        config = build_project(tmp_path)
        assert cmd_index(config) == EXIT_OK
        assert (tmp_path / "out" / "index.npz").exists()
        assert (tmp_path / "out" / "index.meta.json").exists()

    def test_clones(self, tmp_path):
        records = fixture_records()
        records.append(
            make_record(
                "TestA.clone_of_id", file="test_a.fst", project="mainproj",
                goal_type="nat -> nat", body="let clone_of_id x = x",
            )
        )
        config = build_project(tmp_path, records=records)
        assert cmd_clones(config) == EXIT_OK
        lines = (tmp_path / "out" / "clones.csv").read_text().splitlines()
        assert lines[0] == "train_id,test_id"
        assert "Lib.id,TestA.clone_of_id" in lines


class TestTrainAndEvalPremises:
    def test_train_writes_artifacts(self, tmp_path):
        config = build_project(tmp_path)
        assert cmd_train_premises(config) == EXIT_OK
        assert (tmp_path / "out" / "premise_model.bin").exists()
        loss_lines = (tmp_path / "out" / "premise_loss.csv").read_text().splitlines()
        assert loss_lines[0] == "epoch,mean_loss"
        assert len(loss_lines) == 11  # header + 10 epochs

    def test_rerun_same_seed_byte_identical_model(self, tmp_path):
        config = build_project(tmp_path)
        cmd_train_premises(config)
        first = (tmp_path / "out" / "premise_model.bin").read_bytes()
        cmd_train_premises(config)
        assert (tmp_path / "out" / "premise_model.bin").read_bytes() == first

    def test_empty_train_split_fails(self, tmp_path):
        config = build_project(tmp_path)
        empty = {f: "intra_test" for f in LABELS}
        empty["cross.fst"] = "cross_test"
        (tmp_path / "splits.json").write_text(json.dumps(empty))
        assert cmd_train_premises(config) == EXIT_VALIDATION

    def test_eval_premises(self, tmp_path, capsys):
        config = build_project(tmp_path)
        cmd_train_premises(config)
        config.premises.model_path = str(tmp_path / "out" / "premise_model.bin")
        assert cmd_eval_premises(config, split_name="intra") == EXIT_OK
        out = capsys.readouterr().out
        assert "MAP=" in out
        csv_text = (tmp_path / "out" / "premise_eval_intra.csv").read_text()
        _, row = csv_text.splitlines()
        _, goals, map_v, ndcg_v = row.split(",")
        assert 0.0 <= float(map_v) <= 1.0
        assert 0.0 <= float(ndcg_v) <= 1.0


EVAL_IDS = {"TestA.quad", "TestA.neg", "Cross.dbl"}


class TestRun:
    def test_planted_ground_truth_gives_verify_at_1_100(self, tmp_path):
        config = build_project(tmp_path)
        assert cmd_run(config) == EXIT_OK
        report = metrics.read_report(tmp_path / "out" / "report.ldjson")
        assert report.example_ids() == EVAL_IDS
        assert metrics.verify_at_k(report, 1) == 100.0
        assert metrics.verify_at_k(report, 10) == 100.0

    def test_all_broken_gives_zero(self, tmp_path):
        config = build_project(tmp_path, plant_mode="all_broken")
        assert cmd_run(config) == EXIT_OK
        report = metrics.read_report(tmp_path / "out" / "report.ldjson")
        assert metrics.verify_at_k(report, 10) == 0.0

    def test_two_runs_byte_identical(self, tmp_path):
        c1 = build_project(tmp_path / "a")
        c2 = build_project(tmp_path / "b")
        cmd_run(c1)
        cmd_run(c2)
        r1 = (tmp_path / "a" / "out" / "report.ldjson").read_bytes()
        r2 = (tmp_path / "b" / "out" / "report.ldjson").read_bytes()
        assert r1 == r2

    def test_worker_counts_byte_identical(self, tmp_path):
        c1 = build_project(tmp_path / "a", workers=1)
        c8 = build_project(tmp_path / "b", workers=8)
        cmd_run(c1)
        cmd_run(c8)
        r1 = (tmp_path / "a" / "out" / "report.ldjson").read_bytes()
        r8 = (tmp_path / "b" / "out" / "report.ldjson").read_bytes()
        assert r1 == r8

    def test_resume_matches_uninterrupted(self, tmp_path):
        full_cfg = build_project(tmp_path / "full")
        cmd_run(full_cfg)
        full_report = (tmp_path / "full" / "out" / "report.ldjson").read_text()
        full_bundles = (tmp_path / "full" / "out" / "bundles.ldjson").read_text()

        part_cfg = build_project(tmp_path / "part")
        cmd_run(part_cfg)
        # simulate an interruption after the first example
        report_path = tmp_path / "part" / "out" / "report.ldjson"
        bundles_path = tmp_path / "part" / "out" / "bundles.ldjson"
        report_lines = report_path.read_text().splitlines(keepends=True)
        bundle_lines = bundles_path.read_text().splitlines(keepends=True)
        report_path.write_text("".join(report_lines[:2]))  # header + 1 outcome
        bundles_path.write_text("".join(bundle_lines[:1]))
        assert cmd_run(part_cfg) == EXIT_OK
        assert report_path.read_text() == full_report
        assert bundles_path.read_text() == full_bundles

    def test_full_ablations_leave_instructions_and_goal(self, tmp_path):
        config = build_project(
            tmp_path, ablations=("no_context", "no_related", "no_premises")
        )
        cmd_run(config)
        bundles = load_bundles(tmp_path / "out" / "bundles.ldjson")
        for bundle in bundles.values():
            assert [p.component.value for p in bundle.parts] == ["instructions", "goal"]

    def test_model_premise_mode_runs(self, tmp_path):
        config = build_project(tmp_path)
        cmd_train_premises(config)
        run_cfg = build_project(
            tmp_path,
            premise_mode="model",
            extra='model_path = "out/premise_model.bin"',
        )
        # extra key lands under [checker]; set the path on the parsed config
        run_cfg.premises.model_path = str(tmp_path / "out" / "premise_model.bin")
        run_cfg.premises.mode = run_cfg.premises.mode.__class__("model")
        assert cmd_run(run_cfg) == EXIT_OK
        report = metrics.read_report(tmp_path / "out" / "report.ldjson")
        assert metrics.verify_at_k(report, 1) == 100.0

    def test_screened_candidates_logged_not_checked(self, tmp_path):
        records = fixture_records()
        # ground truth containing an escape hatch gets screened, so the
        # planted copy can never verify
        records[3] = make_record(
            "TestA.quad", file="test_a.fst", project="mainproj",
            goal_type="int -> int", prefix="let quad =",
            body="let quad x = admit ()",
        )
        config = build_project(tmp_path, records=records)
        cmd_run(config)
        report = metrics.read_report(tmp_path / "out" / "report.ldjson")
        outcome = next(o for o in report.outcomes if o.example_id == "TestA.quad")
        from proofsynth.check import CheckStatus

        assert outcome.verdicts[0].status is CheckStatus.SCREENED
        assert "admit" in outcome.verdicts[0].errors[0].message


class TestScore:
    def test_score_outputs(self, tmp_path, capsys):
        config = build_project(tmp_path)
        cmd_run(config)
        report_path = tmp_path / "out" / "report.ldjson"
        score_dir = tmp_path / "score"
        rc = cmd_score(
            [str(report_path)], [1, 5, 10], str(score_dir),
            bundles_path=str(tmp_path / "out" / "bundles.ldjson"),
        )
        assert rc == EXIT_OK
        out = capsys.readouterr().out
        assert "verify@1 = 100.00" in out
        for name in ("verify.csv", "exclusive_solves.csv", "summary.json"):
            assert (score_dir / name).exists()
        assert list(score_dir.glob("class_breakdown_*.csv"))
        assert list(score_dir.glob("errors_*.csv"))
        assert list(score_dir.glob("distance_*.csv"))
        assert list(score_dir.glob("overlap_*.csv"))
        summary = json.loads((score_dir / "summary.json").read_text())
        run_id = next(iter(summary["reports"]))
        assert summary["reports"][run_id]["verify@1"] == 100.0

    def test_score_multiple_reports_nk(self, tmp_path):
        c1 = build_project(tmp_path / "a")
        c2 = build_project(tmp_path / "b", plant_mode="all_broken")
        c2.run_id = "broken-run"
        cmd_run(c1)
        cmd_run(c2)
        score_dir = tmp_path / "score"
        rc = cmd_score(
            [str(tmp_path / "a" / "out" / "report.ldjson"),
             str(tmp_path / "b" / "out" / "report.ldjson")],
            [1, 10],
            str(score_dir),
        )
        assert rc == EXIT_OK
        summary = json.loads((score_dir / "summary.json").read_text())
        assert summary["verify_at_nk"]["1"] == 100.0


class TestMainEntry:
    def test_validate_via_main(self, tmp_path):
        build_project(tmp_path)
        assert main(["validate", "--config", str(tmp_path / "config.toml")]) == EXIT_OK

    def test_missing_config_is_validation_error(self, tmp_path):
        assert main(["validate", "--config", str(tmp_path / "nope.toml")]) == EXIT_VALIDATION

    def test_profile_override(self, tmp_path):
        build_project(tmp_path)
        config = load_config(tmp_path / "config.toml")
        assert config.prompt.profile == "small"
        rc = main(
            ["run", "--config", str(tmp_path / "config.toml"), "--profile", "large"]
        )
        assert rc == EXIT_OK
