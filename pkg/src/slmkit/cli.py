"""Command-line pipeline driver.

Stages: synth, ingest, cluster, resample, pretrain, finetune, distill,
specialize, evaluate, cost, compare. Every stage writes its artifacts under
a fixed output layout (corpus/, clusters/, checkpoints/, reports/) plus a
provenance record with the hashes of everything it read. With --threads 1
reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

import torch

from . import synth
from .clustering import (
    Clustering,
    fit_corpus_clustering,
    histogram,
    histogram_from_assignments,
    load_clustering,
    save_clustering,
)
from .config import METHODS, PipelineConfig, load_config, parse_config
from .corpus import (
    ByteTokenizer,
    Corpus,
    WordTokenizer,
    ingest,
    load_corpus,
    merge,
    save_corpus,
    split_heldout,
)
from .errors import ConfigError, SlmkitError, StageDependencyError
from .evaluator import CostModel, crossover_tasks, evaluate
from .model import (
    build_mix,
    build_pn,
    build_slm,
    load_checkpoint,
    save_checkpoint,
)
from .reports import (
    render_cluster_diagnostics,
    render_compare,
    render_cost_curves,
    render_eval_report,
    write_csv,
)
from .sampler import resample, resample_plan, save_plan
from .specializer import save_manifest, specialize
from .trainer import distill, finetune, finetune_lora, pretrain, pretrain_is
from torch.nn.utils import parametrize

CORPUS_FILES = {
    "generic_train": "corpus/generic_train.jsonl",
    "generic_heldout": "corpus/generic_heldout.jsonl",
    "spec_train": "corpus/spec_train.jsonl",
    "spec_val": "corpus/spec_val.jsonl",
    "spec_heldout": "corpus/spec_heldout.jsonl",
}
CLUSTERING_FILE = "clusters/clustering.bin"

RECOMMENDATION = (
    "Guidance encoded by this toolkit (not a measurement of this run): "
    "for a single target domain, importance-sampled pretraining of a small "
    "model gives the best quality for the total cost spent; when many "
    "domains must be served, pretrain a multi-expert model once (projected "
    "experts or a hard mixture) and specialize each domain with a cheap "
    "expert fine-tune."
)


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _require(out: Path, rel: str, stage: str) -> Path:
    path = out / rel
    if not path.exists():
        raise StageDependencyError(stage, rel)
    return path


def _write_provenance(out: Path, stage: str, cfg: PipelineConfig | None,
                      inputs: list[Path], outputs: list[Path]) -> None:
    record = {
        "stage": stage,
        "seed": cfg.seed if cfg else None,
        "config": cfg.raw if cfg else None,
        "inputs": {str(p): sha256_file(p) for p in inputs if Path(p).is_file()},
        "outputs": [str(p) for p in outputs],
    }
    prov_dir = out / "provenance"
    prov_dir.mkdir(parents=True, exist_ok=True)
    (prov_dir / f"{stage}.json").write_text(
        json.dumps(record, indent=2, sort_keys=True), encoding="utf-8"
    )


def _load_corpora(out: Path) -> dict[str, Corpus]:
    return {
        name: load_corpus(_require(out, rel, "ingest"))
        for name, rel in CORPUS_FILES.items()
    }


def _load_clustering(out: Path) -> Clustering:
    return load_clustering(_require(out, CLUSTERING_FILE, "cluster"))


def _subset_tokens(corpus: Corpus, budget: int | None) -> Corpus:
    """First documents up to a token budget (at least one document)."""
    if budget is None:
        return corpus
    docs, used = [], 0
    for doc in corpus.documents:
        docs.append(doc)
        used += len(doc.tokens)
        if used >= budget:
            break
    return replace(corpus, documents=docs)


# ---------------------------------------------------------------- stages


def cmd_synth(args, cfg: PipelineConfig, out: Path) -> int:
    block = cfg.synth
    domains = tuple(block.get("domains", list(synth.DEFAULT_DOMAINS)))
    docs_per_domain = block.get("docs_per_domain", 200)
    spec_docs = block.get("spec_docs", 60)
    target = block.get("target_domain", domains[-1])
    if target not in domains:
        raise ConfigError(f"synth.target_domain: {target!r} not in {domains}")
    length_range = tuple(block.get("length_range", (120, 360)))

    raw_dir = out / "corpus" / "raw"
    files = synth.generate_corpus_files(raw_dir, cfg.seed, domains,
                                        docs_per_domain, length_range)
    # Fresh documents from the target source for the specialization side.
    spec_texts = synth.generate_domain(target, spec_docs, cfg.seed + 1, length_range)
    spec_path = raw_dir / f"{target}_spec.txt"
    spec_path.write_text("\n".join(spec_texts) + "\n", encoding="utf-8")

    new_raw = dict(cfg.raw)
    new_raw["corpus"] = dict(cfg.raw.get("corpus", {}))
    new_raw["corpus"]["generic"] = {d: [str(files[d])] for d in domains}
    new_raw["corpus"]["specialization"] = {target: [str(spec_path)]}
    config_path = out / "synth_config.json"
    config_path.write_text(json.dumps(new_raw, indent=2, sort_keys=True), encoding="utf-8")

    _write_provenance(out, "synth", cfg, [], list(files.values()) + [spec_path, config_path])
    print(f"wrote {len(files)} generic domains + specialization file under {raw_dir}")
    print(f"pipeline config: {config_path}")
    return 0


def _build_tokenizer(cfg: PipelineConfig):
    mode = cfg.tokenizer.get("mode", "byte")
    if mode == "byte":
        return ByteTokenizer()
    if mode == "word":
        texts = []
        for sources in (cfg.generic_sources, cfg.spec_sources):
            for paths in sources.values():
                for p in paths:
                    texts.append(Path(p).read_text(encoding="utf-8"))
        return WordTokenizer.train(texts, cfg.tokenizer.get("max_vocab", 4096))
    raise ConfigError(f"corpus.tokenizer.mode: unknown mode {mode!r}")


def cmd_ingest(args, cfg: PipelineConfig, out: Path) -> int:
    if not cfg.generic_sources or not cfg.spec_sources:
        raise ConfigError("corpus.generic and corpus.specialization are required")
    tokenizer = _build_tokenizer(cfg)

    generic = merge(
        [ingest(paths, d, tokenizer, cfg.corpus_unit)
         for d, paths in sorted(cfg.generic_sources.items())],
        role="generic",
    )
    spec = merge(
        [ingest(paths, d, tokenizer, cfg.corpus_unit)
         for d, paths in sorted(cfg.spec_sources.items())],
        role="specialization",
    )
    gen_train, gen_heldout = split_heldout(generic, cfg.heldout_docs, cfg.seed)
    spec_rest, spec_heldout = split_heldout(spec, cfg.heldout_docs, cfg.seed + 1)
    spec_train, spec_val = split_heldout(spec_rest, cfg.val_docs, cfg.seed + 2)
    spec_val = replace(spec_val, split="train")  # validation, not final heldout

    corpora = {
        "generic_train": gen_train,
        "generic_heldout": gen_heldout,
        "spec_train": spec_train,
        "spec_val": spec_val,
        "spec_heldout": spec_heldout,
    }
    outputs = []
    for name, corpus in corpora.items():
        path = out / CORPUS_FILES[name]
        save_corpus(corpus, path)
        outputs.append(path)
        print(f"{name}: {len(corpus)} docs, {corpus.total_tokens()} tokens -> {path}")
    inputs = [Path(p) for src in (cfg.generic_sources, cfg.spec_sources)
              for paths in src.values() for p in paths]
    _write_provenance(out, "ingest", cfg, inputs, outputs)
    return 0


def cmd_cluster(args, cfg: PipelineConfig, out: Path) -> int:
    corpora = _load_corpora(out)
    clustering = fit_corpus_clustering(
        corpora["generic_train"], cfg.clustering_k, cfg.context_length,
        seed=cfg.clustering_seed, dim=cfg.embed_dim, max_iters=cfg.kmeans_iters,
    )
    clustering_path = out / CLUSTERING_FILE
    save_clustering(clustering, clustering_path)

    gen_hist = histogram_from_assignments(
        list(clustering.assignments.values()), clustering.k
    )
    spec_hist = histogram(corpora["spec_train"], clustering)
    csv_path = out / "reports" / "cluster_diagnostics.csv"
    png_path = out / "reports" / "cluster_diagnostics.png"
    render_cluster_diagnostics(
        {"generic": gen_hist, "specialization": spec_hist}, csv_path, png_path
    )
    _write_provenance(out, "cluster", cfg,
                      [out / CORPUS_FILES["generic_train"], out / CORPUS_FILES["spec_train"]],
                      [clustering_path, csv_path, png_path])
    print(f"k={clustering.k} clusters, inertia {clustering.inertia:.4f} -> {clustering_path}")
    return 0


def cmd_resample(args, cfg: PipelineConfig, out: Path) -> int:
    corpora = _load_corpora(out)
    clustering = _load_clustering(out)
    spec_hist = histogram(corpora["spec_train"], clustering)
    target_size = cfg.raw.get("corpus", {}).get(
        "resample_size", cfg.train.max_steps * cfg.train.batch_size
    )
    plan = resample_plan(spec_hist, target_size, cfg.seed)
    resampled = resample(corpora["generic_train"], clustering, plan, cfg.context_length)

    source_path = out / CORPUS_FILES["generic_train"]
    corpus_path = out / "corpus" / "resampled.jsonl"
    save_corpus(resampled, corpus_path, extra_meta={
        "provenance": {
            "seed": plan.seed,
            "plan": plan.probabilities.tolist(),
            "target_size": plan.target_size,
            "source_corpus_sha256": sha256_file(source_path),
        }
    })
    plan_path = out / "corpus" / "resample_plan.json"
    save_plan(plan, plan_path, provenance={"source_corpus_sha256": sha256_file(source_path)})
    _write_provenance(out, "resample", cfg,
                      [source_path, out / CORPUS_FILES["spec_train"], out / CLUSTERING_FILE],
                      [corpus_path, plan_path])
    print(f"resampled {len(resampled)} windows -> {corpus_path}")
    return 0


def _pretrain_artifacts(method: str, cfg: PipelineConfig, corpora, clustering):
    """Build and pretrain the artifact for one method; returns (model, log)."""
    generic = corpora["generic_train"]
    vocab = generic.vocab_size
    ctx = cfg.context_length
    if method == "slm":
        model = build_slm(cfg.model_config(vocab), cfg.train.seed)
        return pretrain(model, generic, None, cfg.train, ctx, method=method)
    if method == "llm":
        model = build_slm(cfg.llm_config(vocab), cfg.train.seed)
        return pretrain(model, generic, None, cfg.train, ctx, method=method)
    if method == "slm_nopt":
        model = build_slm(cfg.model_config(vocab), cfg.train.seed)
        model, log = pretrain(model, corpora["spec_train"], None, cfg.train, ctx,
                              method=method)
        log.cost_kind = "specialization"
        return model, log
    if method == "slm_is":
        if clustering is None:
            raise StageDependencyError("cluster", CLUSTERING_FILE)
        spec_hist = histogram(corpora["spec_train"], clustering, ctx)
        return pretrain_is(cfg.model_config(vocab), generic, clustering, spec_hist,
                           cfg.train, ctx)
    if method == "slm_pn":
        if clustering is None:
            raise StageDependencyError("cluster", CLUSTERING_FILE)
        if cfg.pn.num_experts != clustering.k:
            raise ConfigError(
                f"pn.num_experts={cfg.pn.num_experts} must equal clustering.k={clustering.k}"
            )
        model = build_pn(cfg.model_config(vocab), cfg.pn, cfg.train.seed)
        return pretrain(model, generic, clustering, cfg.train, ctx, method=method)
    if method == "slm_mix":
        if clustering is None:
            raise StageDependencyError("cluster", CLUSTERING_FILE)
        model = build_mix(cfg.model_config(vocab), clustering.k, cfg.train.seed)
        return pretrain(model, generic, clustering, cfg.train, ctx, method=method)
    raise ConfigError(f"method {method!r} has no pretraining stage")


def cmd_pretrain(args, cfg: PipelineConfig, out: Path) -> int:
    method = args.method or cfg.method
    corpora = _load_corpora(out)
    clustering = None
    if method in ("slm_is", "slm_pn", "slm_mix"):
        clustering = _load_clustering(out)
    model, log = _pretrain_artifacts(method, cfg, corpora, clustering)

    ckpt = out / "checkpoints" / f"{method}.ckpt"
    save_checkpoint(model, ckpt, extra={"method": method, **log.summary()})
    log_path = out / "checkpoints" / "logs" / f"{method}_pretrain.csv"
    log.write_csv(log_path)
    inputs = [out / CORPUS_FILES["generic_train"], out / CORPUS_FILES["spec_train"]]
    if clustering is not None:
        inputs.append(out / CLUSTERING_FILE)
    _write_provenance(out, f"pretrain_{method}", cfg, inputs, [ckpt, log_path])
    print(f"{method}: {len(log.steps)} steps, final loss "
          f"{log.train_losses[-1]:.4f}, cost {log.cost_units:.3g} units -> {ckpt}")
    return 0


def cmd_finetune(args, cfg: PipelineConfig, out: Path) -> int:
    method = args.method or cfg.method
    corpora = _load_corpora(out)
    if method == "lora":
        base_name = cfg.lora_base
        base_path = _require(out, f"checkpoints/{base_name}.ckpt", "pretrain")
        model = load_checkpoint(base_path)
        model, log = finetune_lora(model, cfg.lora_rank, corpora["spec_train"],
                                   corpora["spec_val"], cfg.finetune, cfg.train,
                                   cfg.context_length, sites=tuple(cfg.lora_sites))
        for module, attr in [(b, a) for b in model.blocks
                             for a in ("up_weight", "down_weight")] + \
                [(getattr(b.attn, n), "weight") for b in model.blocks
                 for n in ("q", "k", "v", "o")]:
            if parametrize.is_parametrized(module, attr):
                parametrize.remove_parametrizations(module, attr, leave_parametrized=True)
        for p in model.parameters():
            p.requires_grad_(True)
        ckpt = out / "checkpoints" / "lora_ft.ckpt"
    else:
        base_path = _require(out, f"checkpoints/{method}.ckpt", "pretrain")
        model = load_checkpoint(base_path)
        model, log = finetune(model, corpora["spec_train"], corpora["spec_val"],
                              cfg.finetune, cfg.train, cfg.context_length)
        ckpt = out / "checkpoints" / f"{method}_ft.ckpt"
    save_checkpoint(model, ckpt, extra={"method": method, **log.summary()})
    log_path = out / "checkpoints" / "logs" / f"{method}_finetune.csv"
    log.write_csv(log_path)
    _write_provenance(out, f"finetune_{method}", cfg,
                      [base_path, out / CORPUS_FILES["spec_train"],
                       out / CORPUS_FILES["spec_val"]],
                      [ckpt, log_path])
    print(f"{method}: best step {log.best_step}, best val "
          f"{min(log.val_losses):.4f} -> {ckpt}")
    return 0


def cmd_distill(args, cfg: PipelineConfig, out: Path) -> int:
    corpora = _load_corpora(out)
    teacher_path = _require(out, "checkpoints/llm.ckpt", "pretrain")
    student_path = _require(out, "checkpoints/slm.ckpt", "pretrain")
    spec_train, spec_val = corpora["spec_train"], corpora["spec_val"]

    # The teacher is always fine-tuned on the specialization set first.
    teacher_ft_path = out / "checkpoints" / "llm_ft.ckpt"
    if teacher_ft_path.exists():
        teacher = load_checkpoint(teacher_ft_path)
    else:
        teacher = load_checkpoint(teacher_path)
        teacher, tlog = finetune(teacher, spec_train, spec_val, cfg.finetune,
                                 cfg.train, cfg.context_length)
        save_checkpoint(teacher, teacher_ft_path, extra={"method": "llm_ft", **tlog.summary()})

    student = load_checkpoint(student_path)
    student, log = distill(student, teacher, spec_train, spec_val, cfg.distill,
                           cfg.finetune, cfg.train, cfg.context_length)
    ckpt = out / "checkpoints" / "slm_d.ckpt"
    save_checkpoint(student, ckpt, extra={"method": "slm_d", **log.summary()})
    log_path = out / "checkpoints" / "logs" / "slm_d_distill.csv"
    log.write_csv(log_path)
    _write_provenance(out, "distill", cfg,
                      [teacher_path, student_path, out / CORPUS_FILES["spec_train"]],
                      [ckpt, teacher_ft_path, log_path])
    print(f"slm_d: best step {log.best_step} -> {ckpt}")
    return 0


def cmd_specialize(args, cfg: PipelineConfig, out: Path) -> int:
    method = args.method or cfg.method
    if method not in ("slm_pn", "slm_mix"):
        raise ConfigError(f"specialize applies to slm_pn or slm_mix, not {method!r}")
    corpora = _load_corpora(out)
    clustering = _load_clustering(out)
    artifact_path = _require(out, f"checkpoints/{method}.ckpt", "pretrain")
    artifact = load_checkpoint(artifact_path)
    result = specialize(artifact, clustering, corpora["spec_train"], corpora["spec_val"],
                        args.strategy, cfg.finetune, cfg.train, cfg.context_length)
    ckpt = out / "checkpoints" / f"{method}_spec.ckpt"
    save_checkpoint(result.model, ckpt,
                    extra={"method": f"{method}_spec", **result.log.summary()})
    manifest_path = out / "reports" / f"specialize_{method}.json"
    save_manifest(result, manifest_path, extra={"method": method})
    _write_provenance(out, f"specialize_{method}", cfg,
                      [artifact_path, out / CLUSTERING_FILE,
                       out / CORPUS_FILES["spec_train"], out / CORPUS_FILES["spec_val"]],
                      [ckpt, manifest_path])
    print(f"{method}: strategy {result.selection.strategy} chose expert "
          f"{result.selection.chosen_index} -> {ckpt}")
    return 0


def cmd_evaluate(args, cfg: PipelineConfig, out: Path) -> int:
    name = args.checkpoint
    path = Path(name)
    if not path.is_file():
        path = _require(out, f"checkpoints/{name}.ckpt", "pretrain")
    model = load_checkpoint(path)
    corpora = _load_corpora(out)
    heldout = merge([corpora["generic_heldout"], corpora["spec_heldout"]],
                    role="generic", split="heldout")
    report = evaluate(model, heldout, cfg.context_length, model_id=path.stem)
    json_path = out / "reports" / f"eval_{path.stem}.json"
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(json.dumps(report.to_json(), indent=2), encoding="utf-8")
    csv_path = out / "reports" / f"eval_{path.stem}.csv"
    png_path = out / "reports" / f"eval_{path.stem}.png"
    render_eval_report(report, csv_path, png_path)
    _write_provenance(out, f"evaluate_{path.stem}", cfg, [path],
                      [json_path, csv_path, png_path])
    print(f"{path.stem}: macro ppl {report.macro_ppl:.3f} "
          f"({len(report.per_domain)} domains) -> {csv_path}")
    return 0


def cmd_cost(args, cfg: PipelineConfig, out: Path) -> int:
    methods = args.methods.split(",") if args.methods else sorted(cfg.costs)
    if not methods:
        raise ConfigError("costs: no cost models configured and --methods not given")
    models = {}
    for m in methods:
        if m not in cfg.costs:
            raise ConfigError(f"costs.{m}: no cost model configured")
        models[m] = CostModel(cfg.costs[m]["generic"], cfg.costs[m]["specialization"])
    tasks = ([float(t) for t in args.tasks.split(",")] if args.tasks
             else [float(t) for t in cfg.compare_tasks])
    csv_path = out / "reports" / "cost_curves.csv"
    png_path = out / "reports" / "cost_curves.png"
    render_cost_curves(models, tasks, csv_path, png_path)
    cross_rows = []
    names = sorted(models)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            cross_rows.append((a, b, crossover_tasks(models[a], models[b])))
    cross_path = out / "reports" / "cost_crossovers.csv"
    write_csv(cross_path, ["method_a", "method_b", "crossover_tasks"], cross_rows)
    _write_provenance(out, "cost", cfg, [], [csv_path, png_path, cross_path])
    print(f"cost curves for {', '.join(names)} -> {csv_path}")
    return 0


def _compare_row(method: str, cfg: PipelineConfig, corpora, clustering,
                 spec_train: Corpus, cache: dict) -> dict:
    """One method arm at one spec size: train, specialize, evaluate."""
    ctx = cfg.context_length
    spec_val, spec_heldout = corpora["spec_val"], corpora["spec_heldout"]
    work = dict(corpora)
    work["spec_train"] = spec_train

    generic_units = 0.0
    spec_units = 0.0
    if method in ("slm", "llm", "slm_pn", "slm_mix"):
        if method not in cache:
            cache[method] = _pretrain_artifacts(method, cfg, work, clustering)
        artifact, pre_log = cache[method]
        generic_units = pre_log.cost_units
        if method in ("slm_pn", "slm_mix"):
            result = specialize(artifact, clustering, spec_train, spec_val,
                                "most_frequent_cluster", cfg.finetune, cfg.train, ctx)
            model, ft_log = result.model, result.log
        else:
            model, ft_log = finetune(copy.deepcopy(artifact), spec_train, spec_val,
                                     cfg.finetune, cfg.train, ctx)
        spec_units = ft_log.cost_units
    elif method in ("slm_nopt", "slm_is"):
        model, pre_log = _pretrain_artifacts(method, cfg, work, clustering)
        spec_units = pre_log.cost_units
        if method == "slm_is":
            model, ft_log = finetune(model, spec_train, spec_val, cfg.finetune,
                                     cfg.train, ctx)
            spec_units += ft_log.cost_units
    elif method == "slm_d":
        for base in ("slm", "llm"):
            if base not in cache:
                cache[base] = _pretrain_artifacts(base, cfg, work, clustering)
            generic_units += cache[base][1].cost_units
        teacher, tlog = finetune(copy.deepcopy(cache["llm"][0]), spec_train, spec_val,
                                 cfg.finetune, cfg.train, ctx)
        student, dlog = distill(copy.deepcopy(cache["slm"][0]), teacher, spec_train,
                                spec_val, cfg.distill, cfg.finetune, cfg.train, ctx)
        model = student
        spec_units = tlog.cost_units + dlog.cost_units
    elif method == "lora":
        base = cfg.lora_base
        if base not in cache:
            cache[base] = _pretrain_artifacts(base, cfg, work, clustering)
        generic_units = cache[base][1].cost_units
        model, ft_log = finetune_lora(copy.deepcopy(cache[base][0]), cfg.lora_rank,
                                      spec_train, spec_val, cfg.finetune, cfg.train,
                                      ctx, sites=tuple(cfg.lora_sites))
        spec_units = ft_log.cost_units
    else:
        raise ConfigError(f"compare does not support method {method!r}")

    report = evaluate(model, spec_heldout, ctx, model_id=method)
    return {
        "method": method,
        "spec_tokens": spec_train.total_tokens(),
        "generic_units": generic_units,
        "specialization_units": spec_units,
        "target_nll": report.macro_nll,
        "target_ppl": report.macro_ppl,
    }


def cmd_compare(args, cfg: PipelineConfig, out: Path) -> int:
    corpora = _load_corpora(out)
    needs_clusters = any(m in ("slm_is", "slm_pn", "slm_mix")
                         for m in cfg.compare_methods)
    clustering = _load_clustering(out) if needs_clusters else None

    rows = []
    cache: dict = {}
    for size in cfg.compare_spec_sizes:
        spec_train = _subset_tokens(corpora["spec_train"], size)
        for method in cfg.compare_methods:
            row = _compare_row(method, cfg, corpora, clustering, spec_train, cache)
            rows.append(row)
            print(f"compare: {method} @ {row['spec_tokens']} spec tokens -> "
                  f"ppl {row['target_ppl']:.3f}")
    csv_path = out / "reports" / "compare.csv"
    png_path = out / "reports" / "compare.png"
    footer = out / "reports" / "compare_recommendation.txt"
    render_compare(rows, csv_path, png_path, footer, RECOMMENDATION)
    inputs = [out / rel for rel in CORPUS_FILES.values()]
    if clustering is not None:
        inputs.append(out / CLUSTERING_FILE)
    _write_provenance(out, "compare", cfg, inputs, [csv_path, png_path, footer])
    print(f"comparison matrix ({len(rows)} rows) -> {csv_path}")
    return 0


# ---------------------------------------------------------------- driver

COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "cluster": cmd_cluster,
    "resample": cmd_resample,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "distill": cmd_distill,
    "specialize": cmd_specialize,
    "evaluate": cmd_evaluate,
    "cost": cmd_cost,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slmkit",
        description="Train specialized small language models from a generic "
                    "corpus plus a small in-domain corpus.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", type=str, default=None, help="pipeline config JSON")
        p.add_argument("--out", type=str, required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--threads", type=int, default=1,
                       help="torch threads (1 = deterministic)")
        if name in ("pretrain", "finetune", "specialize"):
            p.add_argument("--method", type=str, default=None,
                           choices=list(METHODS) + ["llm"],
                           help="method override (default: config method)")
        if name == "specialize":
            p.add_argument("--strategy", type=str, default="most_frequent_cluster",
                           choices=["most_frequent_cluster", "best_pretrained",
                                    "best_finetuned"])
        if name == "evaluate":
            p.add_argument("--checkpoint", type=str, required=True,
                           help="checkpoint path or name under checkpoints/")
        if name == "cost":
            p.add_argument("--methods", type=str, default=None,
                           help="comma-separated method names")
            p.add_argument("--tasks", type=str, default=None,
                           help="comma-separated task counts")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    torch.set_num_threads(max(1, args.threads))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        if args.config:
            cfg = load_config(args.config, seed_override=args.seed)
        elif args.command == "synth":
            cfg = parse_config({}, seed_override=args.seed)
        else:
            raise ConfigError("--config is required for this command")
        return COMMANDS[args.command](args, cfg, out)
    except SlmkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
