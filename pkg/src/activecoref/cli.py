"""Command-line entry points.

Every flag can come from an environment variable (prefix ACTIVECOREF_, then
the command and flag uppercased) or from a JSON config file passed with
--config; explicit flags win over both.
"""
from __future__ import annotations

import itertools
import json
import sys

import click

from .corpus import load_corpus, save_corpus
from .features import EmbeddingTable, SpanFeaturizer
from .loop import (
    CycleConfig,
    aggregate_reports,
    read_manifest,
    run_grid,
    simulate_to_files,
)
from .scorer import Hyperparams, init_params, load_params, save_params, train
from .synth import SynthConfig, synth_generate

_SUBCOMMANDS = ("synth", "train-source", "simulate", "grid", "evaluate",
                "analyze", "serve")


class ReadBudget(click.ParamType):
    """Integer document budget, or the word "unconstrained" for no limit."""

    name = "int|unconstrained"

    def convert(self, value, param, ctx):
        if value is None or isinstance(value, int):
            return value
        text = str(value).strip().lower()
        if text == "unconstrained":
            return None
        try:
            return int(text)
        except ValueError:
            self.fail(f"{value!r} is not an integer or 'unconstrained'",
                      param, ctx)


READ_BUDGET = ReadBudget()


def _fail(message: str) -> "click.ClickException":
    return click.ClickException(message)


@click.group(context_settings={"auto_envvar_prefix": "ACTIVECOREF"})
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="JSON file of default flag values.")
@click.pass_context
def main(ctx, config_path):
    """Active learning for incremental span clustering."""
    if config_path is None:
        return
    with open(config_path, "r", encoding="utf-8") as handle:
        try:
            config = json.load(handle)
        except json.JSONDecodeError as exc:
            raise _fail(f"config {config_path} is not valid JSON: {exc}")
    if not isinstance(config, dict):
        raise _fail("config file must hold a JSON object")
    # One flat schema shared by every subcommand; nested per-command
    # sections override the shared values.
    flat = {k: v for k, v in config.items() if k not in _SUBCOMMANDS}
    default_map = {}
    for name in _SUBCOMMANDS:
        section = dict(flat)
        section.update(config.get(name, {}))
        default_map[name] = section
    ctx.default_map = default_map


@main.command()
@click.option("--n-docs", type=int, default=20, show_default=True)
@click.option("--tokens-per-doc", type=int, default=120, show_default=True)
@click.option("--n-entities", type=int, default=60, show_default=True)
@click.option("--mention-rate", type=float, default=0.25, show_default=True)
@click.option("--pronoun-rate", type=float, default=0.15, show_default=True)
@click.option("--singleton-rate", type=float, default=0.3, show_default=True)
@click.option("--vocab-shift", type=float, default=0.0, show_default=True,
              help="Probability each vocabulary slot is resampled from the shifted pool.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def synth(n_docs, tokens_per_doc, n_entities, mention_rate, pronoun_rate,
          singleton_rate, vocab_shift, seed, out):
    """Generate a synthetic corpus with gold clusters."""
    try:
        config = SynthConfig(
            n_docs=n_docs, tokens_per_doc=tokens_per_doc,
            n_entities=n_entities, mention_rate=mention_rate,
            pronoun_rate=pronoun_rate, singleton_rate=singleton_rate,
            vocab_shift=vocab_shift, seed=seed,
        )
    except ValueError as exc:
        raise _fail(str(exc))
    docs = synth_generate(config)
    save_corpus(docs, out)
    click.echo(f"wrote {len(docs)} documents to {out}")


@main.command("train-source")
@click.option("--corpus", "corpus_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="Gold training corpus (JSONL).")
@click.option("--out", type=click.Path(dir_okay=False), required=True,
              help="Checkpoint path (.npz).")
@click.option("--embeddings", type=click.Path(exists=True, dir_okay=False),
              default=None, help="External span-vector table (JSONL).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--hash-dim", type=int, default=512, show_default=True)
@click.option("--rep-dim", type=int, default=64, show_default=True)
@click.option("--hidden-dim", type=int, default=64, show_default=True)
@click.option("--max-width", type=int, default=10, show_default=True)
@click.option("--max-epochs", type=int, default=50, show_default=True)
@click.option("--patience", type=int, default=10, show_default=True)
@click.option("--learning-rate", type=float, default=1e-4, show_default=True)
@click.option("--dropout", type=float, default=0.4, show_default=True)
@click.option("--prune-ratio", type=float, default=0.4, show_default=True)
@click.option("--mention-threshold", type=float, default=0.5, show_default=True)
@click.option("--bce-positive-weight", type=float, default=1.0, show_default=True)
def train_source(corpus_path, out, embeddings, seed, hash_dim, rep_dim,
                 hidden_dim, max_width, max_epochs, patience, learning_rate,
                 dropout, prune_ratio, mention_threshold, bce_positive_weight):
    """Train the source model on a gold corpus and save its checkpoint."""
    docs = load_corpus(corpus_path)
    if not docs:
        raise _fail(f"corpus {corpus_path} is empty")
    try:
        hyper = Hyperparams(
            seed=seed, hash_dim=hash_dim, rep_dim=rep_dim,
            hidden_dim=hidden_dim, max_width=max_width, max_epochs=max_epochs,
            early_stop_patience=patience, learning_rate=learning_rate,
            dropout=dropout, prune_ratio=prune_ratio,
            mention_threshold=mention_threshold,
            bce_positive_weight=bce_positive_weight,
        )
    except ValueError as exc:
        raise _fail(str(exc))
    table = EmbeddingTable.load(embeddings) if embeddings else None
    featurizer = SpanFeaturizer(hash_dim=hash_dim, embeddings=table)
    h0 = init_params(featurizer.n_features, hyper, featurizer=featurizer)
    try:
        model = train(h0, None, docs, hyper, mode="full_gold")
    except (ValueError, RuntimeError, LookupError) as exc:
        raise _fail(str(exc))
    save_params(model, out)
    click.echo(f"saved checkpoint to {out}")


@main.command()
@click.option("--source", "source_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="Source model checkpoint (.npz).")
@click.option("--corpus", "corpus_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="Target-domain pool corpus (JSONL).")
@click.option("--test", "test_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="Held-out evaluation corpus (JSONL).")
@click.option("--strategy", type=click.Choice([
    "random", "random_ment", "ment_ent", "clust_ent", "cond_ent",
    "joint_ent", "li_clust_ent"]), default="ment_ent", show_default=True)
@click.option("--k", type=int, default=50, show_default=True,
              help="Labels per cycle.")
@click.option("--m", type=READ_BUDGET, default="unconstrained", show_default=True,
              help="Documents read per cycle.")
@click.option("--cycles", type=int, default=5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default=".",
              show_default=True)
def simulate(source_path, corpus_path, test_path, strategy, k, m, cycles,
             seed, out):
    """Run one oracle-labeled active learning simulation."""
    import os

    os.makedirs(out, exist_ok=True)
    config = CycleConfig(strategy=strategy, k=k, m=m, cycles=cycles, seed=seed)
    try:
        manifest = simulate_to_files(source_path, corpus_path, test_path,
                                     config, out)
    except (ValueError, RuntimeError) as exc:
        raise _fail(str(exc))
    click.echo(f"run {manifest['run_id']} complete: "
               f"{manifest['artifacts']['cycle_csv']}")


@main.command()
@click.option("--source", "source_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--corpus", "corpus_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--test", "test_path", type=click.Path(exists=True, dir_okay=False),
              required=True)
@click.option("--strategy", "strategies", multiple=True, default=("ment_ent",),
              show_default=True)
@click.option("--k", "ks", type=int, multiple=True, default=(50,),
              show_default=True)
@click.option("--m", "ms", type=READ_BUDGET, multiple=True,
              default=("unconstrained",), show_default=True)
@click.option("--cycles", type=int, default=5, show_default=True)
@click.option("--repeats", type=int, default=5, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default="grid-out",
              show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--resume/--no-resume", default=True, show_default=True,
              help="Skip runs whose manifests are already complete.")
def grid(source_path, corpus_path, test_path, strategies, ks, ms, cycles,
         repeats, seed, out, jobs, resume):
    """Sweep strategies and budgets, aggregating across repeat seeds."""
    import csv as csv_mod
    import os

    for strategy in strategies:
        if strategy not in ("random", "random_ment", "ment_ent", "clust_ent",
                            "cond_ent", "joint_ent", "li_clust_ent"):
            raise _fail(f"unknown strategy {strategy!r}")
    configs = [
        CycleConfig(strategy=s, k=k, m=m, cycles=cycles, seed=seed)
        for s, k, m in itertools.product(strategies, ks, ms)
    ]
    try:
        rows = run_grid(source_path, corpus_path, test_path, configs,
                        repeats=repeats, out_dir=out, jobs=jobs, resume=resume)
    except (ValueError, RuntimeError) as exc:
        raise _fail(str(exc))
    agg_csv = os.path.join(out, "aggregate.csv")
    agg_json = os.path.join(out, "aggregate.json")
    if rows:
        with open(agg_csv, "w", encoding="utf-8", newline="") as handle:
            writer = csv_mod.DictWriter(handle, fieldnames=list(rows[0]),
                                        lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
    with open(agg_json, "w", encoding="utf-8") as handle:
        json.dump(rows, handle, indent=2, sort_keys=True)
        handle.write("\n")
    click.echo(f"{len(configs) * repeats} runs aggregated into {agg_csv}")


@main.command()
@click.option("--gold", "gold_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="Gold corpus (JSONL).")
@click.option("--pred", "pred_path", type=click.Path(exists=True, dir_okay=False),
              required=True,
              help="Predictions in the same JSONL format (clusters read from gold_clusters).")
@click.option("--strip-singletons", is_flag=True, default=False,
              help="Drop predicted size-1 clusters before scoring.")
def evaluate(gold_path, pred_path, strip_singletons):
    """Score predicted clusterings against gold and print a metric table."""
    from .metrics import evaluate_documents

    gold_docs = load_corpus(gold_path)
    pred_docs = load_corpus(pred_path)
    predictions = {doc.doc_id: doc.gold_clusters for doc in pred_docs}
    try:
        result = evaluate_documents(gold_docs, predictions,
                                    strip_singletons=strip_singletons)
    except ValueError as exc:
        raise _fail(str(exc))
    table = [
        ("metric", "precision", "recall", "f1"),
        ("muc", result.muc_p, result.muc_r, result.muc_f1),
        ("b_cubed", result.b3_p, result.b3_r, result.b3_f1),
        ("ceaf_phi4", result.ceaf_p, result.ceaf_r, result.ceaf_f1),
        ("mention", result.mention_p, result.mention_r, result.mention_f1),
    ]
    click.echo(f"{'metric':<10} {'precision':>10} {'recall':>10} {'f1':>10}")
    for name, p, r, f in table[1:]:
        click.echo(f"{name:<10} {p:>10.4f} {r:>10.4f} {f:>10.4f}")
    click.echo(f"{'avg_f1':<10} {'':>10} {'':>10} {result.avg_f1:>10.4f}")
    click.echo(json.dumps(result.to_dict(), sort_keys=True))


@main.command()
@click.option("--runs", "runs_dir", type=click.Path(exists=True, file_okay=False),
              required=True, help="Directory of run manifests and CSVs.")
@click.option("--out", type=click.Path(file_okay=False), required=True)
def analyze(runs_dir, out):
    """Aggregate completed runs into summary CSV + JSON tables."""
    import csv as csv_mod
    import glob
    import os

    manifests = sorted(glob.glob(os.path.join(runs_dir, "*.manifest.json")))
    if not manifests:
        raise _fail(f"no run manifests under {runs_dir}")

    def _resolve(name: str, run_id: str, required: bool) -> str | None:
        # Artifact names are relative to the manifest's directory; absolute
        # paths from older manifests still resolve directly.
        path = name if os.path.isabs(name) else os.path.join(runs_dir, name)
        if os.path.exists(path):
            return path
        if required:
            raise _fail(f"artifact {name} missing for {run_id}")
        return None

    rows = []
    timing_rows = []
    for path in manifests:
        manifest = read_manifest(path)
        if not manifest.get("completed"):
            continue
        run_id = manifest["run_id"]
        csv_path = _resolve(manifest["artifacts"]["cycle_csv"], run_id, True)
        with open(csv_path, "r", encoding="utf-8", newline="") as handle:
            rows.extend(csv_mod.DictReader(handle))
        timing_name = manifest["artifacts"].get("timing_csv")
        timing_path = _resolve(timing_name, run_id, False) if timing_name else None
        if timing_path:
            with open(timing_path, "r", encoding="utf-8", newline="") as handle:
                timing_rows.extend(csv_mod.DictReader(handle))
    if not rows:
        raise _fail("no completed runs to analyze")

    from .analysis import timing_report

    aggregate = aggregate_reports(rows)
    timing = timing_report(timing_rows)
    os.makedirs(out, exist_ok=True)
    agg_csv = os.path.join(out, "aggregate.csv")
    with open(agg_csv, "w", encoding="utf-8", newline="") as handle:
        writer = csv_mod.DictWriter(handle, fieldnames=list(aggregate[0]),
                                    lineterminator="\n")
        writer.writeheader()
        writer.writerows(aggregate)
    summary_json = os.path.join(out, "analysis.json")
    with open(summary_json, "w", encoding="utf-8") as handle:
        json.dump({"aggregate": aggregate, "timing": timing}, handle,
                  indent=2, sort_keys=True)
        handle.write("\n")
    click.echo(f"wrote {agg_csv} and {summary_json}")


@main.command()
@click.option("--source", "source_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="Source model checkpoint (.npz).")
@click.option("--corpus", "corpus_path", type=click.Path(exists=True, dir_okay=False),
              required=True, help="Pool corpus served to annotators (JSONL).")
@click.option("--strategy", type=click.Choice([
    "random", "random_ment", "ment_ent", "clust_ent", "cond_ent",
    "joint_ent", "li_clust_ent"]), default="ment_ent", show_default=True)
@click.option("--k", type=int, default=50, show_default=True)
@click.option("--m", type=READ_BUDGET, default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--out", "labels_out", type=click.Path(dir_okay=False),
              default="labels.jsonl", show_default=True,
              help="Where session labels are flushed on shutdown.")
def serve(source_path, corpus_path, strategy, k, m, seed, host, port,
          labels_out):
    """Run the annotation backend until interrupted."""
    import uvicorn

    from .service import AnnotationService, create_app

    h0 = load_params(source_path)
    docs = load_corpus(corpus_path)
    if not docs:
        raise _fail(f"corpus {corpus_path} is empty")
    service = AnnotationService(h0, docs, strategy=strategy, k=k, m=m,
                                seed=seed)
    app = create_app(service)

    @app.on_event("shutdown")
    def _flush():
        records = service.export_labels()
        with open(labels_out, "w", encoding="utf-8") as handle:
            for record in records:
                handle.write(json.dumps(record, sort_keys=True) + "\n")

    try:
        uvicorn.run(app, host=host, port=port, log_level="info")
    except OSError as exc:
        raise _fail(f"cannot bind {host}:{port}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
