import functools
import json
import re
import sys
from dataclasses import replace
from functools import cached_property
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence

import click

from ..config_manager import BackendSpec, ConfigManager, RunConfig
from ..corpus import Document, Qrels, Query, by_id, load_corpus, load_qrels, load_queries
from ..encoder import EncoderBackend, create_backend
from ..evaluation import compare_runs, evaluate_run
from ..exceptions import ConfigError, DenseExplainException, ExplainError
from ..explain import (
    compare_models, explain_instance, explain_ranking, split_signed, title_attribution,
)
from ..index import DenseIndex, build_index, load_index, retrieve, save_index
from ..report import (
    CloudWeights, delta_table, emit_cloud, emit_title_summary, eval_comparison_table, eval_table,
    ranking_table, render_instance, write_records,
)
from ..utils import format_score, log_message


INDEX_FILE = "index.bin"


def _fail(message: str) -> None:
    log_message(message, "ERROR")
    click.secho(f"Error: {message}", fg="red")
    sys.exit(1)


def _slug(value: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", value)


class Session:
    """Resolved configuration plus the data and backends one command needs."""

    def __init__(self, config: Optional[str], overrides: Sequence[str], output_dir: Optional[str],
                 seed: Optional[int], threads: Optional[int], force: bool, as_json: bool):
        manager = ConfigManager(Path(config) if config else None, overrides)
        if output_dir is not None:
            manager.set_value("output.dir", output_dir)
        if seed is not None:
            manager.set_value("run.seed", seed)
        if threads is not None:
            manager.set_value("run.threads", threads)
        self.manager = manager
        self.cfg: RunConfig = manager.run_config()
        self.force = force
        self.as_json = as_json

    # ========== DATA ==========

    def _required(self, name: str) -> Path:
        path = getattr(self.cfg.data, name)
        if path is None:
            raise ConfigError(f"data.{name} is not set (use --config or --set data.{name}=PATH)")
        return path

    @cached_property
    def corpus(self) -> List[Document]:
        return load_corpus(self._required("corpus"))

    @cached_property
    def documents(self) -> Mapping[str, Document]:
        return by_id(self.corpus)

    @cached_property
    def queries(self) -> List[Query]:
        return load_queries(self._required("queries"))

    @cached_property
    def qrels(self) -> Qrels:
        return load_qrels(self._required("qrels"), self.queries)

    def query(self, query_id: str) -> Query:
        for query in self.queries:
            if query.query_id == query_id:
                return query
        raise ExplainError(f"Unknown query_id: {query_id}")

    def document(self, doc_id: str) -> Document:
        doc = self.documents.get(doc_id)
        if doc is None:
            raise ExplainError(f"Unknown doc_id: {doc_id}")
        return doc

    # ========== MODELS ==========

    def backend(self, spec: Optional[BackendSpec] = None) -> EncoderBackend:
        spec = spec or self.cfg.backend
        texts = None
        if spec.kind == "reference" and not (spec.params_path and Path(spec.params_path).exists()):
            texts = [doc.full_text() for doc in self.corpus]
        return create_backend(spec, self.cfg.seed, texts)

    def index(self, backend: EncoderBackend, stored: bool = True) -> DenseIndex:
        """The saved index when present, else one built in memory."""
        path = self.output(INDEX_FILE)
        if stored and path.exists():
            return load_index(path, backend)
        log_message(f"No saved index for {backend.fingerprint}; building in memory")
        return build_index(self.corpus, backend, self.cfg.backend.batch_size, workers=self.cfg.threads)

    # ========== OUTPUT ==========

    def output(self, name: str) -> Path:
        return self.cfg.output_dir / name

    def guard(self, paths: Iterable[Path]) -> None:
        """Refuse to overwrite existing outputs unless --force."""
        if self.force:
            return
        existing = [str(p) for p in paths if p.exists()]
        if existing:
            raise ConfigError(f"Output exists: {', '.join(existing)} (use --force to overwrite)")

    def extra(self) -> Dict[str, Any]:
        return {"config": self.cfg.as_dict()}

    def emit_json(self, records: Iterable[Dict[str, Any]]) -> None:
        for record in records:
            click.echo(json.dumps(record, sort_keys=True, ensure_ascii=False))


def shared_options(fn: Callable) -> Callable:
    """--config, --set, --output-dir, --seed, --threads, --force and --json."""
    options = [
        click.option("-c", "--config", type=click.Path(dir_okay=False), default=None,
                     help="Config file (section.key = value lines, or .json)"),
        click.option("--set", "overrides", multiple=True, metavar="SECTION.KEY=VALUE",
                     help="Override a config value (repeatable, last wins)"),
        click.option("-o", "--output-dir", default=None, help="Directory for artifacts"),
        click.option("--seed", type=int, default=None, help="Global seed"),
        click.option("--threads", type=int, default=None, help="Maximum worker threads"),
        click.option("--force", is_flag=True, help="Overwrite existing outputs"),
        click.option("--json", "as_json", is_flag=True, help="Print JSON records"),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def backend_b_options(fn: Callable) -> Callable:
    """Second-model overrides; unset fields copy the first model."""
    options = [
        click.option("--kind-b", type=click.Choice(["reference", "external"]), default=None,
                     help="Backend kind of model b"),
        click.option("--seed-b", type=int, default=None, help="Encoder seed of model b"),
        click.option("--model-b", default=None, help="External model reference of model b"),
        click.option("--params-b", default=None, help="ReferenceEncoder parameter file of model b"),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


def with_session(fn: Callable) -> Callable:
    """Build the Session from shared options and turn library errors into exit 1."""

    @functools.wraps(fn)
    def wrapper(config, overrides, output_dir, seed, threads, force, as_json, **kwargs):
        try:
            session = Session(config, overrides, output_dir, seed, threads, force, as_json)
            fn(session, **kwargs)
        except (DenseExplainException, OSError) as e:
            _fail(str(e))

    return wrapper


def _spec_b(session: Session, kind_b: Optional[str], seed_b: Optional[int],
            model_b: Optional[str], params_b: Optional[str]) -> BackendSpec:
    spec = session.cfg.backend
    return replace(
        spec,
        kind=kind_b or spec.kind,
        seed=seed_b if seed_b is not None else spec.resolved_seed(session.cfg.seed),
        model=model_b or spec.model,
        params_path=params_b if params_b is not None else spec.params_path,
    )


def _write_clouds(weights: Dict[str, Dict[str, float]], query_id: str, k: int,
                  paths: Dict[str, Path]) -> List[Path]:
    written = []
    for polarity in ("positive", "negative"):
        if not weights[polarity]:
            if paths[polarity].exists():
                paths[polarity].unlink()
                log_message(f"Removed stale {paths[polarity]}")
            click.secho(f"  No {polarity} tokens for {query_id}; {paths[polarity].name} not written", fg="yellow", err=True)
            continue
        written.append(emit_cloud(CloudWeights.from_mapping(weights[polarity], polarity, query_id, k),
                                  paths[polarity]))
    return written


@click.group()
def cli():
    """DenseExplain-CLI: integrated-gradients explanations for dense retrievers."""
    pass


@cli.command("index")
@shared_options
@with_session
def index_cmd(session: Session) -> None:
    """Encode the corpus and save the index.

    Example: dexplain index -c run.conf
    """
    path = session.output(INDEX_FILE)
    session.guard([path])
    corpus = session.corpus
    backend = session.backend()

    with click.progressbar(length=len(corpus), label="Indexing", file=sys.stderr) as bar:
        index = build_index(corpus, backend, session.cfg.backend.batch_size,
                            progress=lambda done, _total: bar.update(done),
                            workers=session.cfg.threads)
    save_index(index, path)

    summary = {"N": index.size, "d": index.dim, "fingerprint": index.model_fingerprint, "path": str(path)}
    if session.as_json:
        session.emit_json([dict(summary, **session.extra())])
        return
    click.secho(f"✓ Index saved: {path}", fg="green")
    click.echo(f"  N={index.size} d={index.dim}")
    click.echo(f"  fingerprint={index.model_fingerprint}")


@cli.command("retrieve")
@click.argument("query_id")
@click.option("-k", "--top-k", type=int, default=None, help="Documents to list (default retrieval.k_retrieve)")
@shared_options
@with_session
def retrieve_cmd(session: Session, query_id: str, top_k: Optional[int]) -> None:
    """Print the top-k ranking for a query.

    Example: dexplain retrieve q1 -k 10
    """
    query = session.query(query_id)
    backend = session.backend()
    index = session.index(backend)
    k = session.cfg.retrieval.k_retrieve if top_k is None else top_k
    hits = retrieve(index, backend.encode(query.text, role="query"), k)

    if session.as_json:
        session.emit_json({"query_id": query_id, "rank": rank, "doc_id": doc_id, "score": s}
                          for rank, (doc_id, s) in enumerate(hits, 1))
        return
    click.secho(f"\nTop {len(hits)} for {query_id}:", bold=True, fg="cyan")
    click.echo("─" * 70)
    for rank, (doc_id, s) in enumerate(hits, 1):
        click.echo(f"{rank:>4}  {doc_id:<40} {format_score(s)}")


@cli.command("explain")
@click.argument("query_id")
@click.argument("doc_id")
@shared_options
@with_session
def explain_cmd(session: Session, query_id: str, doc_id: str) -> None:
    """Attribute one query-document score and render a heatmap.

    Example: dexplain explain q1 d7
    """
    query = session.query(query_id)
    doc = session.document(doc_id)
    stem = f"explain-{_slug(query_id)}-{_slug(doc_id)}"
    record_path = session.output(f"{stem}.jsonl")
    html_path = session.output(f"{stem}.html")
    session.guard([record_path] if session.as_json else [record_path, html_path])

    ex = explain_instance(query, doc, session.backend(), session.cfg.ig, workers=session.cfg.threads)
    records = ex.records(**session.extra())
    write_records(records, record_path)

    if session.as_json:
        session.emit_json(records)
        return
    render_instance(ex, html_path)
    click.secho(f"✓ Heatmap: {html_path}", fg="green")
    click.echo(f"  Record: {record_path}")
    click.echo(f"  Score: {ex.score:.6f}")
    for attr in (ex.query_attr, ex.doc_attr):
        ok = attr.within_tolerance(session.cfg.ig)
        click.secho(
            f"  Residual ({attr.side}): {attr.completeness_residual:.3e} "
            f"{'within' if ok else 'ABOVE'} tolerance {session.cfg.ig.tolerance(attr.delta):.3e}",
            fg="green" if ok else "yellow",
        )


@cli.command("explain-ranking")
@click.argument("query_id")
@click.option("-k", "--top-k", type=int, default=None, help="Documents to aggregate (default explain.k_explain)")
@shared_options
@with_session
def explain_ranking_cmd(session: Session, query_id: str, top_k: Optional[int]) -> None:
    """Aggregate document attributions over the top-k ranking into cloud weights.

    Example: dexplain explain-ranking q1 -k 25
    """
    query = session.query(query_id)
    k = session.cfg.explain.k_explain if top_k is None else top_k
    stem = f"ranking-{_slug(query_id)}"
    record_path = session.output(f"{stem}.jsonl")
    clouds = {p: session.output(f"{stem}-{p}.tsv") for p in ("positive", "negative")}
    session.guard([record_path, *clouds.values()])

    backend = session.backend()
    ranking = explain_ranking(query, session.index(backend), backend, session.documents, k,
                              session.cfg.ig, session.cfg.explain.separate_signs, session.cfg.threads)
    record = ranking.to_record(**session.extra())
    write_records([record], record_path)
    positive, negative = split_signed(ranking)

    if session.as_json:
        session.emit_json([record])
    else:
        click.echo(ranking_table(ranking))
    written = _write_clouds({"positive": positive, "negative": negative}, query_id, k, clouds)
    if not session.as_json:
        for path in written:
            click.secho(f"✓ Cloud weights: {path}", fg="green")


@cli.command("title-attrib")
@backend_b_options
@shared_options
@with_session
def title_attrib_cmd(session: Session, kind_b, seed_b, model_b, params_b) -> None:
    """Sum title-token attributions of sampled relevant documents under two models.

    Example: dexplain title-attrib --seed-b 7
    """
    summary_path = session.output("title-summary.tsv")
    record_path = session.output("title-attrib.jsonl")
    session.guard([summary_path, record_path])

    backend_a = session.backend()
    backend_b = session.backend(_spec_b(session, kind_b, seed_b, model_b, params_b))
    report = title_attribution(
        session.queries, session.qrels, session.documents, backend_a, backend_b, session.cfg.ig,
        seed=session.cfg.title_seed, threshold=session.cfg.explain.relevance_threshold,
        workers=session.cfg.threads,
    )
    records = report.to_records(**session.extra())
    write_records(records, record_path)
    emit_title_summary(report, summary_path)

    if session.as_json:
        session.emit_json(records)
        return
    total_a, total_b = report.aggregate()
    click.secho(f"✓ Title summary: {summary_path}", fg="green")
    click.echo(f"  Rows: {len(report.rows)} (skipped {len(report.skipped)})")
    click.echo(f"  Title sum a: {format_score(total_a)}")
    click.echo(f"  Title sum b: {format_score(total_b)}")


@cli.command("eval")
@click.option("-k", "--top-k", type=int, default=None, help="NDCG cutoff (default retrieval.k_eval)")
@backend_b_options
@shared_options
@with_session
def eval_cmd(session: Session, top_k: Optional[int], kind_b, seed_b, model_b, params_b) -> None:
    """Mean NDCG@k of the configured backend, or of two models side by side.

    Any --*-b option adds model b and reports baseline, adapted, absolute
    and percentage columns.

    Example: dexplain eval -k 10 --seed-b 7
    """
    record_path = session.output("eval.jsonl")
    session.guard([record_path])
    k = session.cfg.retrieval.k_eval if top_k is None else top_k
    depth = session.cfg.retrieval.k_retrieve

    backend_a = session.backend()
    index_a = session.index(backend_a)
    if all(option is None for option in (kind_b, seed_b, model_b, params_b)):
        result = evaluate_run(index_a, backend_a, session.queries, session.qrels,
                              k=k, workers=session.cfg.threads, depth=depth)
        record, table = result.to_record(**session.extra()), eval_table(result)
    else:
        backend_b = session.backend(_spec_b(session, kind_b, seed_b, model_b, params_b))
        index_b = index_a if backend_b.fingerprint == backend_a.fingerprint else session.index(backend_b, stored=False)
        comparison = compare_runs(index_a, backend_a, index_b, backend_b, session.queries, session.qrels,
                                  k=k, workers=session.cfg.threads, depth=depth)
        record, table = comparison.to_record(**session.extra()), eval_comparison_table(comparison)
    write_records([record], record_path)

    if session.as_json:
        session.emit_json([record])
        return
    click.echo(table)


@cli.command("compare")
@click.argument("query_id")
@click.option("-k", "--top-k", type=int, default=None, help="Documents to aggregate (default explain.k_explain)")
@backend_b_options
@shared_options
@with_session
def compare_cmd(session: Session, query_id: str, top_k: Optional[int], kind_b, seed_b, model_b, params_b) -> None:
    """Ranking explanations of a query under two models and their token delta.

    Example: dexplain compare q1 --seed-b 7
    """
    query = session.query(query_id)
    k = session.cfg.explain.k_explain if top_k is None else top_k
    stem = f"compare-{_slug(query_id)}"
    record_path = session.output(f"{stem}.jsonl")
    clouds = {
        model: {p: session.output(f"{stem}-{model}-{p}.tsv") for p in ("positive", "negative")}
        for model in ("a", "b")
    }
    session.guard([record_path, *clouds["a"].values(), *clouds["b"].values()])

    backend_a = session.backend()
    backend_b = session.backend(_spec_b(session, kind_b, seed_b, model_b, params_b))
    index_a = session.index(backend_a)
    index_b = index_a if backend_b.fingerprint == backend_a.fingerprint else session.index(backend_b, stored=False)
    comparison = compare_models(query, session.documents, index_a, backend_a, index_b, backend_b, k,
                                session.cfg.ig, session.cfg.explain.separate_signs, session.cfg.threads)

    record = dict(session.extra(), query_id=query_id, k=k, delta=comparison.delta,
                  model_a=comparison.ranking_a.to_record(), model_b=comparison.ranking_b.to_record())
    write_records([record], record_path)
    if session.as_json:
        session.emit_json([record])
    else:
        click.echo(delta_table(comparison.delta))

    for model, ranking in (("a", comparison.ranking_a), ("b", comparison.ranking_b)):
        positive, negative = split_signed(ranking)
        for path in _write_clouds({"positive": positive, "negative": negative}, query_id, k, clouds[model]):
            if not session.as_json:
                click.secho(f"✓ Cloud weights ({model}): {path}", fg="green")


@cli.command("config")
@click.option("--save", "save_path", type=click.Path(dir_okay=False), default=None,
              help="Write the resolved values as a flat config file")
@shared_options
@with_session
def config_cmd(session: Session, save_path: Optional[str]) -> None:
    """Show the resolved configuration; overridden keys are marked with *.

    Example: dexplain config -c run.conf --set ig.steps=256 --save run-256.conf
    """
    if save_path:
        path = Path(save_path)
        session.guard([path])
        session.manager.save_config(path)

    if session.as_json:
        session.emit_json([session.extra()])
        return
    click.secho(f"\n⚙️  Configuration ({session.manager.config_path or 'defaults'}):", bold=True, fg="cyan")
    for section, values in session.manager.config.items():
        click.secho(f"  [{section}]", fg="cyan")
        for name, value in values.items():
            mark = "*" if f"{section}.{name}" in session.manager.applied else " "
            click.echo(f"   {mark} {name:<22} {value}")
    click.echo(f"\n  Encoder seed: {session.cfg.encoder_seed}")
    click.echo(f"  Title sampling seed: {session.cfg.title_seed}")
    if save_path:
        click.secho(f"✓ Config saved: {save_path}", fg="green")


def get_cli():
    """Get Click CLI group."""
    return cli
