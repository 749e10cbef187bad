"""Stage orchestration over a run directory with a hash-chained manifest."""
from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .config import ConfigError, RunConfig, dump_config

logger = logging.getLogger(__name__)

STAGES = ("prepare", "contrast", "bucket", "train", "generate", "evaluate")


class MissingArtifactError(RuntimeError):
    def __init__(self, stage: str, needed: str):
        self.stage = stage
        self.needed = needed
        super().__init__(f"stage {stage!r} needs the output of stage {needed!r}; run `faithgen {needed}` first")


def file_hash(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())


@dataclass
class StageResult:
    stage: str
    skipped: bool
    outputs: dict[str, str]


class Run:
    """A run directory: stored config, manifest, and stage artifacts."""

    def __init__(self, cfg: RunConfig, out_dir: str | Path):
        self.cfg = cfg
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.manifest_path = self.dir / "manifest.json"
        if self.manifest_path.exists():
            self.manifest = json.loads(self.manifest_path.read_text(encoding="utf-8"))
        else:
            self.manifest = {"created": _now(), "stages": {}}
        # serialized before any stage work
        dump_config(cfg, self.dir / "config.yaml")
        self.manifest["config_hash"] = cfg.hash
        self.manifest["config"] = "config.yaml"
        self._save()

    def _save(self) -> None:
        self.manifest_path.write_text(json.dumps(self.manifest, indent=1, sort_keys=True), encoding="utf-8")

    def path(self, rel: str) -> Path:
        return self.dir / rel

    def output(self, stage: str, name: str) -> Path:
        entry = self.manifest["stages"].get(stage)
        if not entry or name not in entry["outputs"]:
            raise MissingArtifactError(self._current, stage)
        p = self.dir / entry["outputs"][name]["path"]
        if not p.exists():
            raise MissingArtifactError(self._current, stage)
        return p

    def has(self, stage: str) -> bool:
        return stage in self.manifest["stages"]

    def run_stage(self, stage: str, key_parts: dict, upstream: list[str],
                  body: Callable[[], dict[str, Path]]) -> StageResult:
        self._current = stage
        for up in upstream:
            if up not in self.manifest["stages"]:
                raise MissingArtifactError(stage, up)
        upstream_hashes = {up: {k: v["sha256"] for k, v in self.manifest["stages"][up]["outputs"].items()}
                           for up in upstream}
        key = hashlib.sha256(json.dumps({"stage": stage, "parts": key_parts, "upstream": upstream_hashes},
                                        sort_keys=True).encode()).hexdigest()
        prev = self.manifest["stages"].get(stage)
        if prev and prev["key"] == key and self._intact(prev):
            logger.info("stage %s is up to date (key %s)", stage, key[:12])
            return StageResult(stage, True, {k: v["path"] for k, v in prev["outputs"].items()})
        started = _now()
        outputs = body()
        entry = {
            "key": key,
            "config_hash": self.cfg.hash,
            "upstream": upstream,
            "started": started,
            "finished": _now(),
            "outputs": {name: {"path": str(Path(p).relative_to(self.dir)), "sha256": file_hash(p)}
                        for name, p in outputs.items()},
        }
        self.manifest["stages"][stage] = entry
        # a re-run invalidates the manifest entries of stages built on the old outputs
        for other, e in list(self.manifest["stages"].items()):
            if stage in e.get("upstream", []) and other != stage:
                e["stale"] = True
        self._save()
        return StageResult(stage, False, {k: v["path"] for k, v in entry["outputs"].items()})

    def _intact(self, entry: dict) -> bool:
        for out in entry["outputs"].values():
            p = self.dir / out["path"]
            if not p.exists() or file_hash(p) != out["sha256"]:
                return False
        return True

    def input_hashes(self) -> dict[str, str]:
        out = {}
        for split in ("train", "valid", "test"):
            p = getattr(self.cfg.data, split)
            if p and Path(p).exists():
                out[split] = file_hash(p)
        self.manifest["inputs"] = out
        self._save()
        return out


# -- stage bodies ----------------------------------------------------------------

def _load_splits(cfg: RunConfig, splits=("train", "valid", "test")):
    from .kg_data import load_dataset

    data = {}
    for split in splits:
        p = getattr(cfg.data, split)
        if p is None:
            continue
        data[split] = load_dataset(p, split)
    return data


def stage_prepare(run: Run) -> StageResult:
    from .kg_data import Vocabulary, relation_inventory

    cfg = run.cfg
    if not cfg.data.train:
        raise ConfigError("data.train is required")
    inputs = run.input_hashes()

    def body():
        data = _load_splits(cfg)
        all_samples = [s for split in data.values() for s in split]
        vocab = Vocabulary.from_samples(all_samples, cfg.model.max_source_len)
        vocab.save(run.path("vocab.json"))
        relations = relation_inventory(all_samples)
        stats = {
            "counts": {split: len(v) for split, v in data.items()},
            "n_relations": len(relations),
            "relations": relations,
            "relation_counts_train": _relation_counts(data.get("train", [])),
            "vocab_size": len(vocab),
        }
        run.path("stats.json").write_text(json.dumps(stats, indent=1), encoding="utf-8")
        return {"vocab": run.path("vocab.json"), "stats": run.path("stats.json")}

    return run.run_stage("prepare", {"inputs": inputs, "max_source_len": cfg.model.max_source_len}, [], body)


def _relation_counts(samples) -> dict[str, int]:
    counts: dict[str, int] = {}
    for s in samples:
        for r in s.graph.relations:
            counts[r] = counts.get(r, 0) + 1
    return dict(sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])))


def stage_contrast(run: Run) -> StageResult:
    from .sampling import OfflineParaphraser, RemoteParaphraser, build_contrastive_sets, write_contrastive_sets

    cfg = run.cfg
    sc = cfg.sampler

    def body():
        train = _load_splits(cfg, ("train",))["train"]
        para = (RemoteParaphraser(sc.endpoint, sc.timeout) if sc.paraphraser == "remote"
                else OfflineParaphraser())
        sets = build_contrastive_sets(train, para, sc.positives, sc.negatives, sc.heuristic, cfg.seed)
        write_contrastive_sets(sets, run.path("contrastive.jsonl"))
        return {"contrastive": run.path("contrastive.jsonl")}

    return run.run_stage("contrast", {"sampler": cfg.to_dict()["sampler"], "seed": cfg.seed},
                         ["prepare"], body)


def stage_bucket(run: Run) -> StageResult:
    from .control import assign_buckets, make_scorer, score_faithfulness
    from .kg_data import linearize

    cfg = run.cfg

    def body():
        train = _load_splits(cfg, ("train",))["train"]
        scorer = make_scorer(cfg.scorer.name, cfg.scorer.stopwords)
        scores = [score_faithfulness(s.id, linearize(s.graph, cfg.model.max_source_len), s.reference, scorer)
                  for s in train]
        assignment = assign_buckets(scores)
        assignment.write(run.path("buckets.jsonl"))
        meta = {"scorer": scorer.name, "sizes": {t.value: n for t, n in assignment.sizes().items()},
                "boundaries": next(iter(assignment.entries.values())).boundaries,
                "tag_position": "prepended"}
        run.path("buckets.meta.json").write_text(json.dumps(meta, indent=1), encoding="utf-8")
        return {"buckets": run.path("buckets.jsonl"), "meta": run.path("buckets.meta.json")}

    return run.run_stage("bucket", {"scorer": cfg.to_dict()["scorer"],
                                    "max_source_len": cfg.model.max_source_len}, ["prepare"], body)


def stage_train(run: Run) -> StageResult:
    import torch

    from .control import load_bucket_tags
    from .kg_data import Vocabulary
    from .model import ModelConfig, Seq2Seq
    from .sampling import read_contrastive_sets
    from .training import Ablation, TrainConfig, Trainer, build_examples

    cfg = run.cfg
    ablation = Ablation(cfg.train.ablation)
    upstream = ["prepare"] + (["bucket"] if ablation.uses_tag else []) + (
        ["contrast"] if ablation.uses_contrastive else [])

    def body():
        vocab = Vocabulary.load(run.output("prepare", "vocab"))
        train = _load_splits(cfg, ("train",))["train"]
        tags = load_bucket_tags(run.output("bucket", "buckets")) if ablation.uses_tag else None
        contrastive = ({cs.anchor_id: cs for cs in read_contrastive_sets(run.output("contrast", "contrastive"))}
                       if ablation.uses_contrastive else None)
        m, t = cfg.model, cfg.train
        examples = build_examples(train, vocab, ablation, tags, contrastive, m.max_source_len, m.max_target_len)
        torch.manual_seed(cfg.seed)
        model = Seq2Seq(ModelConfig(len(vocab), m.embed_dim, m.hidden_dim, m.ffn_dim, m.num_layers, m.num_heads,
                                    m.dropout, m.max_source_len, m.max_target_len, t.learning_rate, t.batch_size,
                                    cfg.seed, vocab.pad_id, vocab.bos_id, vocab.eos_id))
        trainer = Trainer(model, TrainConfig(ablation, t.learning_rate, t.batch_size, t.epochs, cfg.seed,
                                             t.cl_weight, t.temperature, t.include_positive_in_denominator,
                                             t.clip_norm, t.dtype))
        log = run.path("train_log.jsonl")
        log.unlink(missing_ok=True)
        trainer.fit(examples, log_path=log)
        trainer.save(run.path("checkpoint.pt"), vocab)
        return {"checkpoint": run.path("checkpoint.pt"), "log": log}

    return run.run_stage("train", {"model": cfg.to_dict()["model"], "train": cfg.to_dict()["train"],
                                   "seed": cfg.seed}, upstream, body)


def load_model(run: Run):
    from .training import Trainer

    trainer, vocab = Trainer.load(run.output("train", "checkpoint"))
    trainer.model.eval()
    return trainer.model, vocab, trainer.cfg


def stage_generate(run: Run) -> StageResult:
    from .control import Hal
    from .decoding import beam_decode, generate_batch
    from .training import encode_source

    cfg = run.cfg
    dc = cfg.decode

    def body():
        model, vocab, tcfg = load_model(run)
        samples = _load_splits(cfg, (dc.split,))[dc.split]
        tag = Hal.parse(dc.tag) if tcfg.ablation.uses_tag else None
        if dc.mode == "greedy":
            results = generate_batch(model, vocab, [s.graph for s in samples], tag)
        else:
            results = [beam_decode(model, encode_source(s.graph, vocab, tag, model.cfg.max_source_len),
                                   dc.beam_width, tag=tag) for s in samples]
        path = run.path("generations.jsonl")
        with path.open("w", encoding="utf-8") as fh:
            for s, r in zip(samples, results):
                fh.write(json.dumps({"id": s.id, "tag": tag.value if tag else None, "text": r.text(vocab),
                                     "logprob": r.score, "finished": r.finished}) + "\n")
        return {"generations": path}

    return run.run_stage("generate", {"decode": cfg.to_dict()["decode"]}, ["train"], body)


def make_judge(cfg: RunConfig):
    from .evaluation.judge import EchoJudge, LexicalJudge, RemoteJudge, load_templates

    j = cfg.judge
    templates = load_templates(directory=j.templates) if j.templates else None
    if j.kind == "remote":
        return RemoteJudge(j.endpoint, j.model, j.api_key_env, j.timeout, j.max_retries)
    if j.kind == "echo":
        return EchoJudge(templates)
    return LexicalJudge(templates)


def stage_evaluate(run: Run) -> StageResult:
    from .evaluation.facts import rank_salient_features
    from .evaluation.report import EvalItem, evaluate_corpus, write_report

    cfg = run.cfg

    def body():
        with run.output("generate", "generations").open(encoding="utf-8") as fh:
            gens = {r["id"]: r for r in map(json.loads, filter(str.strip, fh))}
        data = _load_splits(cfg, ("train", cfg.decode.split))
        salient = rank_salient_features(data["train"], 10)
        stats = json.loads(run.output("prepare", "stats").read_text(encoding="utf-8"))
        items = [EvalItem(s.id, s.graph, gens[s.id]["text"], s.reference)
                 for s in data[cfg.decode.split] if s.id in gens]
        rows, agg, transcript = evaluate_corpus(items, make_judge(cfg), salient, cfg.judge.n_samples,
                                                relation_labels=stats["relations"],
                                                max_in_flight=cfg.judge.max_in_flight)
        agg["salient_features"] = salient
        agg["judge"] = cfg.judge.kind
        paths = write_report(run.path("eval"), rows, agg, transcript)
        return {k: v for k, v in paths.items()}

    return run.run_stage("evaluate", {"judge": cfg.to_dict()["judge"], "split": cfg.decode.split},
                         ["prepare", "generate"], body)


STAGE_FUNCS = {
    "prepare": stage_prepare,
    "contrast": stage_contrast,
    "bucket": stage_bucket,
    "train": stage_train,
    "generate": stage_generate,
    "evaluate": stage_evaluate,
}


def cmd_pipeline(cfg: RunConfig, stage: str, out_dir: str | Path) -> StageResult:
    if stage not in STAGE_FUNCS:
        raise ConfigError(f"unknown stage {stage!r}")
    return STAGE_FUNCS[stage](Run(cfg, out_dir))


def run_all(cfg: RunConfig, out_dir: str | Path) -> list[StageResult]:
    from .training import Ablation

    ablation = Ablation(cfg.train.ablation)
    run = Run(cfg, out_dir)
    results = [stage_prepare(run)]
    if ablation.uses_contrastive:
        results.append(stage_contrast(run))
    if ablation.uses_tag:
        results.append(stage_bucket(run))
    for fn in (stage_train, stage_generate, stage_evaluate):
        results.append(fn(run))
    return results
