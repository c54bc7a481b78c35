"""End-to-end runs: split -> candidates -> prompts -> LLM -> extraction -> metrics."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .candidates import CandidateSet, make_filter, read_candidates, write_candidates
from .dataset import Dataset, load_movielens
from .evaluation import (
    EvalRecord,
    PopularityRecommender,
    Summary,
    aggregate,
    cs_random_baseline,
    read_records,
    write_records,
)
from .extraction import DEFAULT_THRESHOLD, parse_lines, resolve
from .llm import DEFAULT_MODEL, CompletionRequest, LLMGateway, make_gateway
from .prompting import (
    DEFAULT_HISTORY_CAP,
    PromptChainState,
    TemplateSet,
    cap_history,
    render_chain_step,
    render_simple,
    render_simple_candidates,
    render_single,
)

logger = logging.getLogger(__name__)

STRATEGIES = ("simple", "cs-random", "nir-single", "nir-multi", "pop")
FILTERS = ("uf", "if")
# output locations are not part of the experiment and stay out of the echo
_NOT_ECHOED = ("output_dir", "cache_dir", "candidates_out")


class ConfigError(ValueError):
    pass


class RunFailedError(RuntimeError):
    pass


@dataclass(frozen=True)
class RunConfig:
    data_dir: str = "data/ml-100k"
    strategy: str = "nir-multi"
    filter: str = "uf"
    m: int = 10
    n: int = 10
    s: int = 19
    k: int = 10
    history_cap: int = DEFAULT_HISTORY_CAP
    seed: int = 0
    min_history: int = 2
    # llm
    backend: str = "stub"
    model: str = DEFAULT_MODEL
    api_base: str = "https://api.openai.com/v1"
    temperature: float = 0.0
    max_tokens: int = 512
    concurrency: int = 4
    cache_dir: str | None = None
    templates: str | None = None
    # ablation toggles (nir-multi only)
    use_candidates: bool = True
    use_preference_step: bool = True
    use_representative_step: bool = True
    # extraction / baselines
    threshold: float = DEFAULT_THRESHOLD
    pop_exclude_seen: bool = False
    # io
    output_dir: str = "runs/default"
    user_sample: int | None = None
    sample_seed: int = 0
    candidates_in: str | None = None
    candidates_out: str | None = None
    max_failure_rate: float = 0.2

    def validate(self, check_paths: bool = True) -> "RunConfig":
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; choose from {', '.join(STRATEGIES)}")
        if self.filter not in FILTERS:
            raise ConfigError(f"unknown filter {self.filter!r}; choose from {', '.join(FILTERS)}")
        for name in ("m", "n", "s", "k", "concurrency", "max_tokens"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.temperature < 0:
            raise ConfigError("temperature must be >= 0")
        if self.min_history < 2:
            raise ConfigError("min_history must be >= 2")
        if self.user_sample is not None and self.user_sample < 1:
            raise ConfigError("user_sample must be >= 1")
        if self.backend not in ("stub", "http"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if check_paths:
            for name in ("data_dir", "templates", "candidates_in"):
                value = getattr(self, name)
                if value is not None and not Path(value).exists():
                    raise ConfigError(f"{name} does not exist: {value}")
        return self

    @property
    def uses_candidates(self) -> bool:
        if self.strategy in ("cs-random", "nir-single"):
            return True
        return self.strategy == "nir-multi" and self.use_candidates

    @property
    def chain_steps(self) -> tuple[int, ...]:
        steps = []
        if self.use_preference_step:
            steps.append(1)
        if self.use_representative_step:
            steps.append(2)
        return (*steps, 3)

    @property
    def label(self) -> str:
        suffix = self.filter.upper()
        if self.strategy == "pop":
            return "POP"
        if self.strategy == "simple" or (self.strategy == "nir-multi" and not self.use_candidates):
            return "Simple"
        if self.strategy == "cs-random":
            return f"CS-Random-{suffix}"
        if self.strategy == "nir-single":
            return f"NIR-Single-{suffix}"
        steps = self.chain_steps
        if steps == (1, 2, 3):
            return f"NIR-Multi-{suffix}"
        if steps == (3,):
            return f"Simple+Candidates-{suffix}"
        return f"NIR-Multi-{suffix}[steps={''.join(map(str, steps))}]"

    def echo(self) -> dict:
        return {k: v for k, v in dataclasses.asdict(self).items() if k not in _NOT_ECHOED}

    def resolved_cache_dir(self) -> Path:
        return Path(self.cache_dir) if self.cache_dir else Path(self.output_dir) / "cache"


def config_from_mapping(values: Mapping[str, Any], base: RunConfig | None = None) -> RunConfig:
    names = {f.name for f in dataclasses.fields(RunConfig)}
    flat = dict(values.get("run", {})) if isinstance(values.get("run"), Mapping) else {}
    flat.update({k: v for k, v in values.items() if not isinstance(v, Mapping)})
    flat = {k.replace("-", "_"): v for k, v in flat.items()}
    unknown = set(flat) - names
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return dataclasses.replace(base or RunConfig(), **flat)


@dataclass
class RunResult:
    summary: Summary
    records: list[EvalRecord]
    transcripts: list[dict]
    output_dir: Path
    summary_doc: dict = field(default_factory=dict)


def sample_users(users: Sequence[int], count: int | None, seed: int) -> list[int]:
    users = sorted(users)
    if count is None or count >= len(users):
        return users
    rng = np.random.Generator(np.random.PCG64(seed))
    return sorted(int(u) for u in rng.choice(users, size=count, replace=False))


def build_candidates(dataset: Dataset, config: RunConfig, users: Sequence[int]) -> dict[int, CandidateSet]:
    if config.candidates_in:
        loaded = read_candidates(config.candidates_in)
        missing = [u for u in users if u not in loaded]
        if missing:
            raise ConfigError(f"{config.candidates_in} lacks candidates for users {missing[:5]}")
        return {u: loaded[u] for u in users}
    est = make_filter(config.filter, m=config.m, n=config.n, s=config.s)
    est.fit(dataset.split, items=list(dataset.catalog.entries))
    return {cs.user_id: cs for cs in est.predict(users)}


class _UserRunner:
    def __init__(self, config: RunConfig, dataset: Dataset, candidates: Mapping[int, CandidateSet],
                 templates: TemplateSet, gateway: LLMGateway):
        self.config = config
        self.dataset = dataset
        self.candidates = candidates
        self.templates = templates
        self.gateway = gateway
        self.pop = PopularityRecommender(config.k, config.pop_exclude_seen).fit(dataset.split)
        # stub hint for the candidate-free simple prompt: popular unseen titles
        self.pop_unseen = PopularityRecommender(config.k, exclude_seen=True).fit(dataset.split)

    def _ask(self, prompt: str, context: dict) -> tuple[str, str]:
        cfg = self.config
        req = CompletionRequest(
            prompt=prompt,
            model=cfg.model,
            backend_id=cfg.backend,
            temperature=cfg.temperature,
            max_tokens=cfg.max_tokens,
            context=context,
        )
        resp = self.gateway.complete(req)
        return resp.text, resp.key

    def __call__(self, user: int) -> tuple[EvalRecord, dict]:
        cfg, ds = self.config, self.dataset
        gt = ds.split.ground_truth[user]
        label = cfg.label
        transcript: dict[str, Any] = {"user_id": user, "steps": [], "prompts": [], "answers": []}
        try:
            if cfg.strategy == "pop":
                return EvalRecord.grade(user, label, gt, self.pop.recommend(user), cfg.k), transcript
            cands = self.candidates.get(user)
            cand_ids = list(cands.items) if cands is not None and cfg.uses_candidates else None
            if cfg.strategy == "cs-random":
                ranking = cs_random_baseline(cands, (cfg.seed, user), cfg.k)
                return EvalRecord.grade(user, label, gt, ranking, cfg.k, candidates=cand_ids), transcript

            watched = cap_history(ds.catalog.titles(ds.split.train[user].items), cfg.history_cap)
            cand_titles = tuple(ds.catalog.titles(cand_ids)) if cand_ids is not None else ()
            context = {"candidates": list(cand_titles), "watched": list(watched), "k": cfg.k}
            digests: list[str] = []

            def ask(step: int | str, prompt: str, ctx: dict) -> str:
                text, key = self._ask(prompt, ctx)
                transcript["steps"].append(step)
                transcript["prompts"].append(prompt)
                transcript["answers"].append(text)
                digests.append(key)
                return text

            if cand_ids is None:
                ctx = dict(context, candidates=ds.catalog.titles(self.pop_unseen.recommend(user)))
                answer = ask("simple", render_simple(self.templates, watched, cfg.k), ctx)
            elif cfg.strategy == "nir-single":
                answer = ask("single", render_single(self.templates, cand_titles, watched, cfg.k), context)
            elif cfg.chain_steps == (3,):
                prompt = render_simple_candidates(self.templates, cand_titles, watched, cfg.k)
                answer = ask("simple+candidates", prompt, context)
            else:
                state = PromptChainState(user, cand_titles, watched, cfg.chain_steps, cfg.k)
                for step in state.steps:
                    prompt = render_chain_step(self.templates, state, step)
                    state.answers[step] = ask(step, prompt, context)
                answer = state.answers[3]

            extracted = resolve(parse_lines(answer), cand_ids, ds.catalog, cfg.k, cfg.threshold, user)
            record = EvalRecord.grade(
                user, label, gt, extracted.items, cfg.k,
                candidates=cand_ids,
                prompt_digests=digests,
                answer_text=answer,
                unresolved_count=len(extracted.unresolved),
            )
            return record, transcript
        except Exception as exc:  # one user's failure must not sink the run
            logger.warning("user %d failed: %s", user, exc)
            return EvalRecord.failed(user, label, gt, f"{type(exc).__name__}: {exc}"), transcript


def _summary_doc(summary: Summary, config: RunConfig, templates: TemplateSet) -> dict:
    doc = summary.to_json()
    doc["params"] = {
        "m": config.m, "n": config.n, "s": config.s, "K": config.k,
        "history_cap": config.history_cap, "model": config.model, "filter": config.filter,
    }
    doc["config"] = config.echo()
    doc["template_digests"] = templates.digests()
    notes = []
    if config.backend == "stub":
        notes.append("offline stub backend: numbers exercise the pipeline, not a language model")
    if config.model == "text-davinci-003":
        notes.append("text-davinci-003 is retired; results are not comparable to published GPT-3 runs")
    doc["notes"] = notes
    return doc


def _dump_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def run(config: RunConfig, dataset: Dataset | None = None, gateway: LLMGateway | None = None) -> RunResult:
    """Execute one configuration and write its artifacts to ``output_dir``.

    Writes ``records.jsonl``, ``transcripts.jsonl`` and ``summary.json``;
    raises :class:`RunFailedError` (after writing) when more than
    ``max_failure_rate`` of the users failed.
    """
    config.validate(check_paths=dataset is None)
    dataset = dataset or load_movielens(config.data_dir, config.min_history)
    templates = TemplateSet.load(config.templates)
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    users = sample_users(dataset.split.eligible_users, config.user_sample, config.sample_seed)
    if not users:
        raise RunFailedError("no eligible users to evaluate")
    needs_candidates = config.uses_candidates
    candidates = build_candidates(dataset, config, users) if needs_candidates else {}
    if config.candidates_out and candidates:
        write_candidates(config.candidates_out, (candidates[u] for u in users))

    llm_needed = config.strategy not in ("pop", "cs-random")
    if gateway is None and llm_needed:
        gateway = make_gateway(config.backend, config.resolved_cache_dir(), config.api_base, config.concurrency)
    runner = _UserRunner(config, dataset, candidates, templates, gateway)
    with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
        results = list(pool.map(runner, users))
    records = [r for r, _ in results]
    transcripts = [t for _, t in results if t["prompts"]]

    write_records(out / "records.jsonl", records)
    with open(out / "transcripts.jsonl", "w", encoding="utf-8") as fh:
        for t in transcripts:
            fh.write(json.dumps(t, sort_keys=True, ensure_ascii=False) + "\n")

    failed = sum(not r.ok for r in records)
    if failed == len(records):
        raise RunFailedError(f"all {failed} users failed; first error: {records[0].error}")
    summary = aggregate(records, config.k)
    doc = _summary_doc(summary, config, templates)
    _dump_json(out / "summary.json", doc)
    if failed / len(records) > config.max_failure_rate:
        raise RunFailedError(f"{failed}/{len(records)} users failed (limit {config.max_failure_rate:.0%})")
    logger.info("%s: HR@%d=%.4f NDCG@%d=%.4f over %d users", config.label, config.k, summary.hr,
                config.k, summary.ndcg, summary.user_count)
    return RunResult(summary, records, transcripts, out, doc)


ABLATION_ROWS = (
    # (name, candidates, preference step, representative step)
    ("no-candidates", False, False, False),
    ("candidates", True, False, False),
    ("candidates+preference", True, True, False),
    ("candidates+representative", True, False, True),
    ("full", True, True, True),
)


def run_ablation(base: RunConfig, dataset: Dataset | None = None) -> list[dict]:
    """The five component toggles on top of the chained UF run."""
    if base.strategy != "nir-multi":
        raise ConfigError("ablation runs on strategy nir-multi")
    base.validate(check_paths=dataset is None)
    dataset = dataset or load_movielens(base.data_dir, base.min_history)
    out = Path(base.output_dir)
    cache = base.resolved_cache_dir()
    rows = []
    for name, cand, pref, rep in ABLATION_ROWS:
        cfg = dataclasses.replace(
            base, use_candidates=cand, use_preference_step=pref, use_representative_step=rep,
            output_dir=str(out / name), cache_dir=str(cache),
        )
        res = run(cfg, dataset)
        rows.append({
            "row": name,
            "candidate_set": int(cand),
            "user_preference": int(pref),
            "representative_movies": int(rep),
            f"HR@{base.k}": res.summary.hr,
            f"NDCG@{base.k}": res.summary.ndcg,
            "coverage": res.summary.candidate_coverage,
        })
    _write_csv(out / "ablation.csv", rows)
    return rows


def parse_sizes(text: str) -> list[int]:
    """``"15..22"`` or ``"15,17,19"`` (or a mix) to a list of sizes."""
    sizes: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = (int(x) for x in part.split(".."))
            sizes.extend(range(lo, hi + 1))
        elif part:
            sizes.append(int(part))
    return sizes


def run_sweep(base: RunConfig, sizes: Sequence[int], dataset: Dataset | None = None) -> list[dict]:
    sizes = list(sizes)
    if not sizes:
        raise ConfigError("no candidate set sizes given")
    if len(set(sizes)) != len(sizes):
        raise ConfigError(f"duplicate sizes in sweep: {sizes}")
    if min(sizes) < 1:
        raise ConfigError("sizes must be >= 1")
    base.validate(check_paths=dataset is None)
    dataset = dataset or load_movielens(base.data_dir, base.min_history)
    out = Path(base.output_dir)
    cache = base.resolved_cache_dir()
    rows = []
    for s in sizes:
        cfg = dataclasses.replace(base, s=s, output_dir=str(out / f"s{s}"), cache_dir=str(cache))
        res = run(cfg, dataset)
        rows.append({
            "s": s,
            f"HR@{base.k}": res.summary.hr,
            f"NDCG@{base.k}": res.summary.ndcg,
            "coverage": res.summary.candidate_coverage,
        })
    _write_csv(out / "sweep.csv", rows)
    return rows


def _write_csv(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def regrade(records_path: str | Path, dataset: Dataset, k: int = 10,
            threshold: float = DEFAULT_THRESHOLD, output_dir: str | Path | None = None) -> Summary:
    """Re-run extraction and scoring over stored answers; no model calls."""
    regraded = []
    for rec in read_records(records_path):
        if not rec.ok or rec.answer_text is None:
            regraded.append(rec)
            continue
        ext = resolve(parse_lines(rec.answer_text), rec.candidates, dataset.catalog, k, threshold, rec.user_id)
        regraded.append(EvalRecord.grade(
            rec.user_id, rec.strategy, rec.ground_truth, ext.items, k,
            candidates=rec.candidates, prompt_digests=rec.prompt_digests,
            answer_text=rec.answer_text, unresolved_count=len(ext.unresolved),
        ))
    summary = aggregate(regraded, k)
    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_records(out / "records.jsonl", regraded)
        _dump_json(out / "summary.json", summary.to_json())
    return summary
