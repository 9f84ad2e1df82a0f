"""Configuration and pipeline commands.

One TOML config file drives everything; secrets (API keys, endpoints) come
from environment variables. Commands: validate, split, index, train-premises,
eval-premises, run, score, clones. Exit codes: 0 ok, 2 validation failure,
3 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__, corpus as corpus_mod, metrics, premsel, prompt as prompt_mod
from .check import CheckItem, CheckerPool, screen_escape_hatches, screened_verdict
from .corpus import Split, SplitAssignment, clone_report, load_corpus
from .embed import EmbeddingProvider, LocalHashedProvider, RemoteProvider
from .generate import (
    GenerationRequest,
    MockGenerationClient,
    PlantMode,
    RemoteGenerationClient,
    generate,
)
from .metrics import ExampleOutcome, RunReport
from .premsel import PremiseMode
from .prompt import Ablation, PromptBundle, PromptFormat, PromptPart, Component
from .retrieve import RetrievalStrategy, build_index, eligible, retrieve_related, save_index


class ConfigError(Exception):
    pass


EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


@dataclass
class SplitsConfig:
    mode: str = "generate"  # generate | labels
    labels: str | None = None
    fractions: tuple[float, float, float] = (0.80, 0.05, 0.15)
    cross_projects: set[str] = field(default_factory=set)


@dataclass
class RetrievalConfig:
    strategy: RetrievalStrategy = RetrievalStrategy.TRAIN_ONLY
    provider: str = "local"  # local | remote
    dimension: int = 256
    model: str = ""
    cache_dir: str | None = None


@dataclass
class PremisesConfig:
    mode: PremiseMode = PremiseMode.ORACLE
    model_path: str | None = None
    base_dimension: int = 256
    head_dimension: int = 64
    epochs: int = 50
    learning_rate: float = 0.1
    batch_size: int = 8


@dataclass
class PromptConfig:
    format: PromptFormat = PromptFormat.NATURAL_LANGUAGE
    profile: str = "small"
    ablations: set[Ablation] = field(default_factory=set)
    template: str | None = None


@dataclass
class GenerationConfig:
    backend: str = "mock"  # mock | remote
    model_id: str = "mock"
    k: int = 10
    temperature: float = 0.8
    max_tokens: int | None = None  # defaults to the profile's generation budget
    stop: tuple[str, ...] = ()
    plant_mode: PlantMode = PlantMode.NONE
    spend_cap_tokens: int | None = None


@dataclass
class CheckerConfig:
    command: list[str] | None = None
    stub_script: str | None = None
    timeout_s: float = 120.0
    workers: int = 1
    init_options: dict = field(default_factory=dict)


@dataclass
class RunConfig:
    corpus: str
    output_dir: str
    seed: int = 0
    run_id: str | None = None
    eval_splits: tuple[str, ...] = ("intra", "cross")
    splits: SplitsConfig = field(default_factory=SplitsConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    premises: PremisesConfig = field(default_factory=PremisesConfig)
    prompt: PromptConfig = field(default_factory=PromptConfig)
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    checker: CheckerConfig = field(default_factory=CheckerConfig)
    raw: dict = field(default_factory=dict, repr=False)


def _enum(value, enum_cls, what):
    try:
        return enum_cls(value)
    except ValueError:
        options = ", ".join(e.value for e in enum_cls)
        raise ConfigError(f"{what} must be one of: {options} (got {value!r})") from None


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    try:
        return _config_from_dict(raw, base_dir=path.parent)
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"bad config {path}: {e}") from e


def _resolve(base_dir: Path, value: str | None) -> str | None:
    if value is None:
        return None
    p = Path(value)
    return str(p if p.is_absolute() else base_dir / p)


def _config_from_dict(raw: dict, base_dir: Path) -> RunConfig:
    if "corpus" not in raw:
        raise ConfigError("config needs a top-level 'corpus' path")
    sp = raw.get("splits", {})
    splits = SplitsConfig(
        mode=sp.get("mode", "generate"),
        labels=_resolve(base_dir, sp.get("labels")),
        fractions=tuple(sp.get("fractions", (0.80, 0.05, 0.15))),
        cross_projects=set(sp.get("cross_projects", [])),
    )
    if splits.mode not in ("generate", "labels"):
        raise ConfigError("splits.mode must be 'generate' or 'labels'")
    rv = raw.get("retrieval", {})
    retrieval = RetrievalConfig(
        strategy=_enum(rv.get("strategy", "train_only"), RetrievalStrategy, "retrieval.strategy"),
        provider=rv.get("provider", "local"),
        dimension=int(rv.get("dimension", 256)),
        model=rv.get("model", ""),
        cache_dir=_resolve(base_dir, rv.get("cache_dir")),
    )
    pm = raw.get("premises", {})
    premises = PremisesConfig(
        mode=_enum(pm.get("mode", "oracle"), PremiseMode, "premises.mode"),
        model_path=_resolve(base_dir, pm.get("model_path")),
        base_dimension=int(pm.get("base_dimension", 256)),
        head_dimension=int(pm.get("head_dimension", 64)),
        epochs=int(pm.get("epochs", 50)),
        learning_rate=float(pm.get("learning_rate", 0.1)),
        batch_size=int(pm.get("batch_size", 8)),
    )
    pr = raw.get("prompt", {})
    profile = pr.get("profile", "small")
    if profile not in prompt_mod.PROFILES:
        raise ConfigError(f"prompt.profile must be one of {sorted(prompt_mod.PROFILES)}")
    prompt_cfg = PromptConfig(
        format=_enum(pr.get("format", "natural"), PromptFormat, "prompt.format"),
        profile=profile,
        ablations={_enum(a, Ablation, "prompt.ablations") for a in pr.get("ablations", [])},
        template=_resolve(base_dir, pr.get("template")),
    )
    gn = raw.get("generation", {})
    generation = GenerationConfig(
        backend=gn.get("backend", "mock"),
        model_id=gn.get("model_id", "mock"),
        k=int(gn.get("k", 10)),
        temperature=float(gn.get("temperature", 0.8)),
        max_tokens=int(gn["max_tokens"]) if "max_tokens" in gn else None,
        stop=tuple(gn.get("stop", [])),
        plant_mode=_enum(gn.get("plant_mode", "none"), PlantMode, "generation.plant_mode"),
        spend_cap_tokens=int(gn["spend_cap_tokens"]) if "spend_cap_tokens" in gn else None,
    )
    if generation.backend not in ("mock", "remote"):
        raise ConfigError("generation.backend must be 'mock' or 'remote'")
    if generation.k < 1:
        raise ConfigError("generation.k must be >= 1")
    ck = raw.get("checker", {})
    checker = CheckerConfig(
        command=list(ck["command"]) if "command" in ck else None,
        stub_script=_resolve(base_dir, ck.get("stub_script")),
        timeout_s=float(ck.get("timeout_s", 120.0)),
        workers=int(ck.get("workers", 1)),
        init_options=dict(ck.get("init_options", {})),
    )
    eval_splits = tuple(raw.get("eval_splits", ["intra", "cross"]))
    for s in eval_splits:
        if s not in ("intra", "cross", "valid", "train"):
            raise ConfigError(f"eval_splits entries must be intra/cross/valid/train, got {s!r}")
    return RunConfig(
        corpus=_resolve(base_dir, raw["corpus"]),
        output_dir=_resolve(base_dir, raw.get("output_dir", "out")),
        seed=int(raw.get("seed", 0)),
        run_id=raw.get("run_id"),
        eval_splits=eval_splits,
        splits=splits,
        retrieval=retrieval,
        premises=premises,
        prompt=prompt_cfg,
        generation=generation,
        checker=checker,
        raw=raw,
    )


def config_hash(config: RunConfig) -> str:
    """Hash of the experimental configuration.

    Execution-only knobs (output_dir, worker count) are excluded so the same
    experiment produces the same run identity regardless of where or how
    parallel it runs.
    """
    semantic = json.loads(json.dumps(config.raw, sort_keys=True, default=str))
    semantic.pop("output_dir", None)
    semantic.get("checker", {}).pop("workers", None)
    return hashlib.sha256(
        json.dumps(semantic, sort_keys=True, default=str).encode()
    ).hexdigest()


def validate_config_paths(config: RunConfig, for_run: bool = False) -> list[str]:
    problems = []
    if not Path(config.corpus).exists():
        problems.append(f"corpus path does not exist: {config.corpus}")
    if config.splits.mode == "labels":
        if not config.splits.labels:
            problems.append("splits.mode is 'labels' but splits.labels is unset")
        elif not Path(config.splits.labels).exists():
            problems.append(f"splits.labels does not exist: {config.splits.labels}")
    if config.prompt.template and not Path(config.prompt.template).exists():
        problems.append(f"prompt.template does not exist: {config.prompt.template}")
    if for_run:
        if config.checker.stub_script is None and config.checker.command is None:
            problems.append("checker needs either 'command' or 'stub_script'")
        if config.checker.stub_script and not Path(config.checker.stub_script).exists():
            problems.append(f"checker.stub_script does not exist: {config.checker.stub_script}")
        if config.premises.mode is PremiseMode.MODEL:
            if not config.premises.model_path:
                problems.append("premises.mode is 'model' but premises.model_path is unset")
            elif not Path(config.premises.model_path).exists():
                problems.append(f"premises.model_path does not exist: {config.premises.model_path}")
    return problems


# -- shared plumbing ---------------------------------------------------------


SPLIT_NAMES = {
    "train": Split.TRAIN,
    "valid": Split.VALID,
    "intra": Split.INTRA_TEST,
    "cross": Split.CROSS_TEST,
}


def load_splits(
    config: RunConfig, records, graph
) -> tuple[SplitAssignment, dict[str, str]]:
    file_projects = {rec.file: rec.project for rec in records}
    if config.splits.mode == "labels":
        assignment = corpus_mod.load_split_labels(
            config.splits.labels, config.splits.cross_projects
        )
    else:
        assignment = corpus_mod.make_splits(
            graph,
            file_projects,
            config.splits.cross_projects,
            config.splits.fractions,
            config.seed,
        )
    return assignment, file_projects


def make_provider(config: RunConfig) -> EmbeddingProvider:
    r = config.retrieval
    if r.provider == "local":
        return LocalHashedProvider(dimension=r.dimension)
    if r.provider == "remote":
        return RemoteProvider(model=r.model, dimension=r.dimension, cache_dir=r.cache_dir)
    raise ConfigError(f"unknown retrieval.provider {r.provider!r}")


def checker_command(config: RunConfig) -> list[str]:
    if config.checker.command:
        return list(config.checker.command)
    return [sys.executable, "-m", "proofsynth.stubcheck", "--script", config.checker.stub_script]


def run_labels(config: RunConfig) -> dict[str, str]:
    return {
        "prompt_format": config.prompt.format.value,
        "ablations": "+".join(sorted(a.value for a in config.prompt.ablations)) or "none",
        "retrieval_strategy": config.retrieval.strategy.value,
        "premise_mode": config.premises.mode.value,
    }


def effective_run_id(config: RunConfig) -> str:
    return config.run_id or f"run-{config_hash(config)[:8]}"


# -- commands ----------------------------------------------------------------


def cmd_validate(config: RunConfig, out=None) -> int:
    out = out or sys.stdout
    violations = validate_config_paths(config)
    warnings: list[str] = []
    if not violations:
        try:
            records, graph = load_corpus(config.corpus)
            assignment, file_projects = load_splits(config, records, graph)
            violations += corpus_mod.validate_splits(assignment, graph, file_projects)
            warnings += corpus_mod.validate_records(records)
            clones = clone_report(records, assignment)
            for train_id, test_id in clones:
                warnings.append(f"clone across splits: {train_id} / {test_id}")
        except corpus_mod.CorpusError as e:
            violations.append(str(e))
    for v in violations:
        print(f"VIOLATION: {v}", file=out)
    for w in warnings:
        print(f"WARNING: {w}", file=out)
    if violations:
        return EXIT_VALIDATION
    print("OK", file=out)
    return EXIT_OK


def cmd_split(config: RunConfig, out=None) -> int:
    out = out or sys.stdout
    records, graph = load_corpus(config.corpus)
    assignment, _ = load_splits(config, records, graph)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "splits.json"
    corpus_mod.save_split_labels(assignment, path)
    counts = {s.value: len(assignment.files(s)) for s in Split}
    print(f"wrote {path} ({json.dumps(counts, sort_keys=True)})", file=out)
    return EXIT_OK


def cmd_index(config: RunConfig, out=None) -> int:
    out = out or sys.stdout
    records, _ = load_corpus(config.corpus)
    provider = make_provider(config)
    index = build_index(records, provider)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "index"
    save_index(index, path)
    print(f"wrote {path}.npz ({len(index)} records, d={provider.dimension})", file=out)
    return EXIT_OK


def cmd_train_premises(config: RunConfig, out=None) -> int:
    out = out or sys.stdout
    records, graph = load_corpus(config.corpus)
    assignment, _ = load_splits(config, records, graph)
    train_files = assignment.files(Split.TRAIN)
    train_records = [r for r in records if r.file in train_files]
    if not train_records:
        print("VIOLATION: train split is empty", file=out)
        return EXIT_VALIDATION
    pairs = premsel.build_training_pairs(train_records, seed=config.seed)
    if not pairs:
        print("VIOLATION: no training pairs (no records with ideal premises)", file=out)
        return EXIT_VALIDATION
    provider = LocalHashedProvider(dimension=config.premises.base_dimension)
    name_texts = premsel.premise_text_map(records)
    model = premsel.init_model(
        config.premises.base_dimension, config.premises.head_dimension, config.seed
    )
    trained, trace = premsel.train(
        model,
        pairs,
        epochs=config.premises.epochs,
        learning_rate=config.premises.learning_rate,
        batch_size=config.premises.batch_size,
        seed=config.seed,
        base_embedder=provider,
        name_texts=name_texts,
    )
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    model_path = out_dir / "premise_model.bin"
    premsel.save_model(trained, model_path)
    loss_path = out_dir / "premise_loss.csv"
    with open(loss_path, "w", encoding="utf-8") as fh:
        fh.write("epoch,mean_loss\n")
        for epoch, value in enumerate(trace):
            fh.write(f"{epoch},{value!r}\n")
    print(
        f"trained on {len(pairs)} pairs for {len(trace)} epochs; "
        f"final loss {trace[-1]:.6f}; wrote {model_path}",
        file=out,
    )
    return EXIT_OK


def cmd_eval_premises(config: RunConfig, split_name: str = "valid", out=None) -> int:
    out = out or sys.stdout
    records, graph = load_corpus(config.corpus)
    assignment, _ = load_splits(config, records, graph)
    model_path = config.premises.model_path or str(Path(config.output_dir) / "premise_model.bin")
    model = premsel.load_model(model_path)
    provider = LocalHashedProvider(dimension=model.base_dimension)
    name_texts = premsel.premise_text_map(records)
    files = assignment.files(SPLIT_NAMES[split_name])
    rankings = []
    truth = {}
    for rec in records:
        if rec.file not in files or not rec.ideal_premises:
            continue
        texts = {name: name_texts.get(name, name) for name in rec.in_scope}
        rankings.append(
            premsel.rank_premises(
                model, rec.goal_type, sorted(set(rec.in_scope)), texts, provider,
                goal_id=rec.id,
            )
        )
        truth[rec.id] = set(rec.ideal_premises)
    if not rankings:
        print(f"VIOLATION: no rankable records in split {split_name!r}", file=out)
        return EXIT_VALIDATION
    map_value, ndcg_value = premsel.evaluate_ranking(rankings, truth)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"premise_eval_{split_name}.csv"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("split,goals,map,ndcg\n")
        fh.write(f"{split_name},{len(rankings)},{map_value:.6f},{ndcg_value:.6f}\n")
    print(f"{split_name}: MAP={map_value:.4f} NDCG={ndcg_value:.4f} over {len(rankings)} goals", file=out)
    return EXIT_OK


def bundle_to_json(example_id: str, bundle: PromptBundle) -> dict:
    return {
        "example_id": example_id,
        "format": bundle.format.value,
        "ablations": sorted(a.value for a in bundle.ablations),
        "total_tokens": bundle.total_tokens,
        "parts": [
            {"component": p.component.value, "text": p.text, "token_count": p.token_count}
            for p in bundle.parts
        ],
    }


def bundle_from_json(obj: dict) -> PromptBundle:
    return PromptBundle(
        format=PromptFormat(obj["format"]),
        parts=[
            PromptPart(Component(p["component"]), p["text"], int(p["token_count"]))
            for p in obj["parts"]
        ],
        ablations={Ablation(a) for a in obj.get("ablations", [])},
        total_tokens=int(obj.get("total_tokens", 0)),
    )


def load_bundles(path: str | Path) -> dict[str, PromptBundle]:
    bundles = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            bundles.setdefault(obj["example_id"], bundle_from_json(obj))
    return bundles


def cmd_run(config: RunConfig, out=None) -> int:
    out = out or sys.stdout
    problems = validate_config_paths(config, for_run=True)
    if problems:
        for p in problems:
            print(f"VIOLATION: {p}", file=out)
        return EXIT_VALIDATION

    records, graph = load_corpus(config.corpus)
    assignment, _ = load_splits(config, records, graph)
    eval_split_set = {SPLIT_NAMES[s] for s in config.eval_splits}
    eval_records = [r for r in records if assignment.split_of(r.file) in eval_split_set]

    provider = make_provider(config)
    index = build_index(records, provider)

    budgets = prompt_mod.PROFILES[config.prompt.profile]
    template = (
        prompt_mod.load_template(config.prompt.template)
        if config.prompt.template
        else prompt_mod.DEFAULT_TEMPLATE
    )
    name_texts = premsel.premise_text_map(records)
    model = None
    premise_provider = None
    if config.premises.mode is PremiseMode.MODEL:
        model = premsel.load_model(config.premises.model_path)
        premise_provider = LocalHashedProvider(dimension=model.base_dimension)

    if config.generation.backend == "mock":
        client = MockGenerationClient(
            seed=config.seed,
            plant_mode=config.generation.plant_mode,
            ground_truths={r.id: r.body for r in records},
        )
    else:
        out_dir = Path(config.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        client = RemoteGenerationClient(
            transcript_path=out_dir / "generation_transcript.ldjson",
            spend_cap_tokens=config.generation.spend_cap_tokens,
        )
    max_tokens = config.generation.max_tokens or budgets.generation_tokens

    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    run_id = effective_run_id(config)
    labels = run_labels(config)
    report_path = out_dir / "report.ldjson"
    bundles_path = out_dir / "bundles.ldjson"

    manifest = {
        "run_id": run_id,
        "model_id": config.generation.model_id,
        "labels": labels,
        "config_hash": config_hash(config),
        "corpus_hash": hashlib.sha256(Path(config.corpus).read_bytes()).hexdigest(),
        "code_version": __version__,
        "seed": config.seed,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    done: set[str] = set()
    if report_path.exists():
        try:
            existing = metrics.read_report(report_path)
            done = existing.example_ids()
        except metrics.EmptyReport:
            done = set()
    if not report_path.exists() or not done:
        header = {"run_id": run_id, "model_id": config.generation.model_id, "labels": labels}
        with open(report_path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
        bundles_path.write_text("")

    pool = CheckerPool(
        checker_command(config),
        size=config.checker.workers,
        timeout_s=config.checker.timeout_s,
        init_options=config.checker.init_options,
    )
    produced = 0
    with pool:
        for rec in eval_records:
            if rec.id in done:
                continue
            elig = eligible(config.retrieval.strategy, records, assignment, graph, rec)
            hits = retrieve_related(index, rec.goal_type, elig, budgets.related_tokens)
            premises = premsel.premise_source(
                config.premises.mode,
                rec,
                model=model,
                base_embedder=premise_provider,
                name_texts=name_texts,
            )
            bundle = prompt_mod.assemble(
                rec,
                hits,
                premises,
                budgets,
                format=config.prompt.format,
                ablations=config.prompt.ablations,
                template=template,
            )
            prompt_text = prompt_mod.render(bundle, template)
            request = GenerationRequest(
                example_id=rec.id,
                prompt_text=prompt_text,
                sample_count=config.generation.k,
                temperature=config.generation.temperature,
                max_tokens=max_tokens,
                stop_sequences=config.generation.stop,
                model_id=config.generation.model_id,
            )
            candidates = generate(client, request)

            verdicts_by_index = {}
            to_check = []
            for cand in candidates:
                hit = screen_escape_hatches(cand.text)
                if hit is not None:
                    verdicts_by_index[cand.sample_index] = screened_verdict(
                        rec.id, cand.sample_index, hit
                    )
                else:
                    to_check.append(
                        CheckItem(rec.id, cand.sample_index, rec.file, rec.id, cand.text)
                    )
            for ref, verdict in pool.run(to_check).items():
                verdicts_by_index[ref[1]] = verdict

            outcome = ExampleOutcome(
                example_id=rec.id,
                problem_class=rec.problem_class,
                verdicts=[verdicts_by_index[i] for i in sorted(verdicts_by_index)],
                candidate_texts=[c.text for c in candidates],
                ground_truth=rec.body,
            )
            with open(report_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(outcome.to_json(), sort_keys=True) + "\n")
            with open(bundles_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(bundle_to_json(rec.id, bundle), sort_keys=True) + "\n")
            produced += 1

    print(
        f"run {run_id}: {produced} new examples, {len(done)} resumed, "
        f"report at {report_path}",
        file=out,
    )
    return EXIT_OK


def cmd_score(
    report_paths: list[str],
    ks: list[int],
    out_dir: str,
    bundles_path: str | None = None,
    out=None,
) -> int:
    out = out or sys.stdout
    reports = [metrics.read_report(p) for p in report_paths]
    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)

    metrics.write_verify_csv(reports, ks, out_path / "verify.csv")
    summary: dict = {"k": ks, "reports": {}}
    for r in reports:
        per = {f"verify@{k}": verify for k, verify in ((k, metrics.verify_at_k(r, k)) for k in ks)}
        per["shortfall@max_k"] = metrics.shortfall(r, max(ks))
        summary["reports"][r.run_id] = per
        for k in ks:
            print(f"{r.run_id}: verify@{k} = {metrics.verify_at_k(r, k):.2f}", file=out)
        metrics.write_class_breakdown_csv(r, max(ks), out_path / f"class_breakdown_{r.run_id}.csv")
        metrics.write_error_csv(r, out_path / f"errors_{r.run_id}.csv")
        metrics.write_distance_csv(r, out_path / f"distance_{r.run_id}.csv")
    summary["verify_at_nk"] = {str(k): metrics.verify_at_nk(reports, k) for k in ks}
    for k in ks:
        print(f"all reports: verify@{len(reports)}x{k} = {summary['verify_at_nk'][str(k)]:.2f}", file=out)
    metrics.write_exclusive_csv(reports, max(ks), out_path / "exclusive_solves.csv")

    if bundles_path:
        bundles = load_bundles(bundles_path)
        for r in reports:
            table = metrics.identifier_overlap(r, bundles, k=max(ks))
            metrics.write_overlap_csv(table, out_path / f"overlap_{r.run_id}.csv")

    (out_path / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_clones(config: RunConfig, out=None) -> int:
    out = out or sys.stdout
    records, graph = load_corpus(config.corpus)
    assignment, _ = load_splits(config, records, graph)
    pairs = clone_report(records, assignment)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "clones.csv"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("train_id,test_id\n")
        for train_id, test_id in pairs:
            fh.write(f"{train_id},{test_id}\n")
    print(f"{len(pairs)} clone pairs; wrote {path}", file=out)
    return EXIT_OK


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="proofsynth",
        description="Retrieval-augmented synthesis harness for proof-oriented programs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--profile", choices=sorted(prompt_mod.PROFILES),
                       help="override prompt.profile")
        return p

    with_config(sub.add_parser("validate", help="check corpus and split invariants"))
    with_config(sub.add_parser("split", help="generate dependence-closed splits"))
    with_config(sub.add_parser("index", help="build and persist the retrieval index"))
    with_config(sub.add_parser("train-premises", help="train the premise selection head"))
    eval_p = with_config(sub.add_parser("eval-premises", help="MAP/NDCG for premise ranking"))
    eval_p.add_argument("--split", default="valid", choices=sorted(SPLIT_NAMES))
    with_config(sub.add_parser("run", help="run the synthesis pipeline end to end"))
    score_p = sub.add_parser("score", help="compute metrics from run reports")
    score_p.add_argument("reports", nargs="+", help="report.ldjson paths")
    score_p.add_argument("--k", type=int, nargs="+", default=[1, 5, 10])
    score_p.add_argument("--out", required=True, help="output directory for CSVs")
    score_p.add_argument("--bundles", help="bundles.ldjson for identifier overlap")
    with_config(sub.add_parser("clones", help="report train/test clone pairs"))
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "score":
            return cmd_score(args.reports, args.k, args.out, args.bundles)
        config = load_config(args.config)
        if getattr(args, "profile", None):
            config.prompt.profile = args.profile
        dispatch = {
            "validate": cmd_validate,
            "split": cmd_split,
            "index": cmd_index,
            "train-premises": cmd_train_premises,
            "run": cmd_run,
            "clones": cmd_clones,
        }
        if args.command == "eval-premises":
            return cmd_eval_premises(config, args.split)
        return dispatch[args.command](config)
    except (ConfigError, corpus_mod.CorpusError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
