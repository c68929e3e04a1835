"""Batch experiment runner and report shapes.

Inputs are model spec files. Each input is processed independently (and
optionally in a worker pool); results are always emitted in ``input_id``
order, and every random draw for an input comes from a generator seeded by
the root seed and the input id, so output does not depend on the number of
workers.
"""

from __future__ import annotations

import csv
import io
import json
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence as Seq

import numpy as np

from modesearch.attributes import attribute_by_name, make_predictor
from modesearch.beam import BeamConfig, beam_search, conditional_beam_search, length_forced_beam
from modesearch.errors import ConfigError
from modesearch.search import (
    SearchBudget,
    empty_mode_report,
    exact_conditional_mode,
    exact_mode,
    exact_top_n,
)
from modesearch.seqmodel import SequenceModel, entropy_estimate, load_model, sample
from modesearch.seqmodel.specs import read_spec

METHODS = ("exact", "exact-cond", "top-n", "beam", "beam-forced", "beam-cond", "sample")
TARGETED = ("exact-cond", "beam-forced", "beam-cond")
DEFAULT_RATIOS = (0.8, 0.9, 1.0, 1.1, 1.2)
WIN_TOL = 1e-9
DEFAULT_MAX_LEN = 64


# inputs ----------------------------------------------------------------------


@dataclass(frozen=True)
class Input:
    input_id: str
    path: str
    reference_length: int | None


def input_rng(seed: int, input_id: str, stream: int = 0) -> np.random.Generator:
    """Generator for one input, independent of processing order."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(input_id.encode()), stream]))


def discover_inputs(paths: Iterable[str]) -> list[Input]:
    """Expand files and directories (``*.json``) into inputs sorted by id."""
    found = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            files = sorted(p.glob("*.json"))
        elif p.is_file():
            files = [p]
        else:
            raise ConfigError("models", f"no such file or directory: {p}")
        for f in files:
            try:
                spec = read_spec(f)
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(str(f), f"cannot read model spec: {exc}") from exc
            if not isinstance(spec, dict):
                raise ConfigError(str(f), "model spec must be a JSON object")
            ref = spec.get("reference_length")
            if ref is not None and (not isinstance(ref, int) or ref < 0):
                raise ConfigError(f"{f.name}.reference_length", "must be a non-negative integer")
            found.append(Input(str(spec.get("id", f.stem)), str(f), ref))
    ids = [i.input_id for i in found]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise ConfigError("models", f"duplicate input ids: {', '.join(dupes)}")
    return sorted(found, key=lambda i: i.input_id)


def reference_length(model: SequenceModel, inp: Input, seed: int, max_len: int = DEFAULT_MAX_LEN) -> int:
    """The spec's reference length, else the length of a seeded ancestral sample."""
    if inp.reference_length is not None:
        return inp.reference_length
    return len(sample(model, max_len=max_len, rng=input_rng(seed, inp.input_id, 1)).content)


def ratio_target(ratio: float, ref: int) -> int:
    """``ratio * ref`` rounded half up, computed exactly from the decimal ratio."""
    return math.floor(Fraction(str(ratio)) * ref + Fraction(1, 2))


# running methods ---------------------------------------------------------------


@dataclass
class MethodParams:
    max_len: int = DEFAULT_MAX_LEN
    target: int | None = None
    ratios: tuple[float, ...] | None = None
    n: int = 5
    beam_size: int = 5
    k: int = 100
    alpha: float = 1.0
    keep_all_complete: bool = False
    attribute: str = "length"
    predictor: str = "exact"
    predictor_samples: int = 1000
    bucketed: bool = True
    n_samples: int = 5
    temperature: float = 1.0
    dump_beam: bool = False
    budget_nodes: int = 1_000_000

    def to_json(self) -> dict:
        return asdict(self)


def _symbols(model: SequenceModel, tokens) -> list[str] | None:
    if tokens is None:
        return None
    return model.vocab.decode(tokens)


def _num(x: float) -> float | None:
    return float(x) if math.isfinite(x) else None


def _targets(method: str, model, inp: Input, params: MethodParams, seed: int) -> list[tuple[int, float | None]]:
    if params.target is not None:
        return [(params.target, None)]
    if params.attribute != "length" and method == "beam-cond":
        raise ConfigError("target", f"attribute {params.attribute} needs an explicit target")
    ref = reference_length(model, inp, seed, params.max_len)
    return [(ratio_target(r, ref), r) for r in (params.ratios or DEFAULT_RATIOS)]


def _mode_record(inp, method, model, res) -> dict:
    tokens = None if res.best is None else res.best.tokens
    return {
        "input_id": inp.input_id,
        "method": method,
        "mode_tokens": _symbols(model, tokens),
        "mode_logprob": _num(res.best_logprob),
        "empty": bool(res.empty),
        "stats": res.stats.to_json(),
        "exhausted": bool(res.exhausted),
    }


def _beam_record(inp, method, model, res, target, ratio, dump) -> dict:
    rec = {
        "input_id": inp.input_id,
        "method": method,
        "target": target,
        "best_tokens": _symbols(model, res.best.tokens),
        "best_logprob_S": _num(res.best_logprob),
        "best_C": _num(res.best_C),
    }
    if ratio is not None:
        rec["ratio"] = ratio
    if dump:
        rec["beam_dump"] = [s.to_json() for s in res.steps]
    return rec


def run_input(method: str, inp: Input, params: MethodParams, seed: int) -> list[dict]:
    """All result records for one input. Errors propagate to the caller."""
    model = load_model(inp.path)
    budget = SearchBudget(max_nodes=params.budget_nodes)
    cfg = BeamConfig(
        beam_size=params.beam_size,
        k=params.k,
        alpha=params.alpha,
        max_len=params.max_len,
        keep_all_complete=params.keep_all_complete,
    )
    if method == "exact":
        return [_mode_record(inp, method, model, exact_mode(model, params.max_len, budget))]
    if method == "top-n":
        rows = []
        for rank, res in enumerate(exact_top_n(model, params.n, params.max_len, budget)):
            rec = _mode_record(inp, method, model, res)
            rec["rank"] = rank
            rows.append(rec)
        return rows
    if method == "beam":
        res = beam_search(model, cfg, dump=params.dump_beam)
        return [_beam_record(inp, method, model, res, None, None, params.dump_beam)]
    if method == "sample":
        rng = input_rng(seed, inp.input_id)
        rows = []
        for i in range(params.n_samples):
            s = sample(model, max_len=params.max_len, temperature=params.temperature, rng=rng)
            rows.append({
                "input_id": inp.input_id,
                "method": method,
                "sample_index": i,
                "tokens": _symbols(model, s.tokens),
                "logprob": _num(model.sequence_logprob(s)),
                "truncated": bool(s.truncated),
            })
        return rows

    predictor = None
    if method == "beam-cond":
        attr = attribute_by_name(params.attribute, model, bucketed=params.bucketed)
        predictor = make_predictor(
            params.predictor, model, attr, n_samples=params.predictor_samples,
            seed=int(input_rng(seed, inp.input_id, 2).integers(2**31)),
        )
    rows = []
    for target, ratio in _targets(method, model, inp, params, seed):
        if method == "exact-cond":
            rec = _mode_record(inp, method, model, exact_conditional_mode(model, target, budget))
            rec["target"] = target
            if ratio is not None:
                rec["ratio"] = ratio
        elif method == "beam-forced":
            res = length_forced_beam(model, target, cfg, dump=params.dump_beam)
            rec = _beam_record(inp, method, model, res, target, ratio, params.dump_beam)
        elif method == "beam-cond":
            res = conditional_beam_search(model, predictor, target, cfg, dump=params.dump_beam)
            rec = _beam_record(inp, method, model, res, target, ratio, params.dump_beam)
        else:
            raise ConfigError("method", f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
        rows.append(rec)
    return rows


def _guarded(job) -> list[dict]:
    method, inp, params, seed = job
    try:
        return run_input(method, inp, params, seed)
    except Exception as exc:  # recorded per input; the batch continues
        return [{"input_id": inp.input_id, "method": method, "error": f"{type(exc).__name__}: {exc}"}]


def run_method(method: str, inputs: Seq[Input], params: MethodParams, seed: int = 0, workers: int = 1) -> list[dict]:
    """Records for every input, in ``input_id`` order; failed inputs yield an ``error`` record."""
    if method not in METHODS:
        raise ConfigError("method", f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    jobs = [(method, inp, params, seed) for inp in sorted(inputs, key=lambda i: i.input_id)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_guarded, jobs))
    else:
        chunks = [_guarded(j) for j in jobs]
    return [rec for chunk in chunks for rec in chunk]


# experiment configs --------------------------------------------------------------


@dataclass
class ExperimentConfig:
    models: list[str]
    method: str
    params: MethodParams = field(default_factory=MethodParams)
    out: str | None = None
    seed: int = 0
    workers: int = 1

    @classmethod
    def from_json(cls, obj: dict, base_dir: Path | str = ".") -> "ExperimentConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config", "must be a JSON object")
        base_dir = Path(base_dir)
        models = obj.get("models")
        if isinstance(models, str):
            models = [models]
        if not models or not all(isinstance(m, str) for m in models):
            raise ConfigError("models", "must be a non-empty list of paths")
        models = [str(base_dir / m) for m in models]
        for m in models:
            if not Path(m).exists():
                raise ConfigError("models", f"no such file or directory: {m}")
        method = obj.get("method")
        if method not in METHODS:
            raise ConfigError("method", f"expected one of {', '.join(METHODS)}, got {method!r}")
        raw = dict(obj.get("params", {}))
        if "predictor" in obj:
            raw["predictor"] = obj["predictor"]
        known = set(MethodParams.__dataclass_fields__)
        for key in raw:
            if key not in known:
                raise ConfigError(f"params.{key}", "unknown parameter")
        if "ratios" in raw and raw["ratios"] is not None:
            raw["ratios"] = tuple(float(r) for r in raw["ratios"])
        params = MethodParams(**raw)
        _check_params(method, params)
        seed = obj.get("seed", 0)
        workers = obj.get("workers", 1)
        if not isinstance(seed, int) or seed < 0:
            raise ConfigError("seed", "must be a non-negative integer")
        if not isinstance(workers, int) or workers < 1:
            raise ConfigError("workers", "must be a positive integer")
        out = obj.get("out")
        return cls(models, method, params, None if out is None else str(base_dir / out), seed, workers)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            obj = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(str(path), f"cannot read config: {exc}") from exc
        return cls.from_json(obj, path.parent)


def _check_params(method: str, p: MethodParams) -> None:
    checks = [
        ("max_len", p.max_len >= 1),
        ("n", p.n >= 1),
        ("beam_size", p.beam_size >= 1),
        ("k", p.k >= 1),
        ("alpha", p.alpha >= 0),
        ("budget_nodes", p.budget_nodes >= 1),
        ("n_samples", p.n_samples >= 1),
        ("temperature", p.temperature > 0),
        ("target", p.target is None or p.target >= 0),
        ("ratios", p.ratios is None or (len(p.ratios) > 0 and all(r > 0 for r in p.ratios))),
        ("predictor", p.predictor in ("exact", "mc", "tabular", "uniform")),
        ("attribute", p.attribute in ("length", "empty", "rare_count", "typo_count")),
    ]
    for name, ok in checks:
        if not ok:
            raise ConfigError(f"params.{name}", f"invalid value {getattr(p, name)!r}")


def run(config: ExperimentConfig) -> list[dict]:
    return run_method(config.method, discover_inputs(config.models), config.params, config.seed, config.workers)


# serialization ---------------------------------------------------------------------


def to_jsonl(records: Iterable[dict]) -> str:
    return "".join(json.dumps(r) + "\n" for r in records)


def read_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def to_csv(rows: Seq[dict], columns: Seq[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({c: r[c] for c in columns})
    return buf.getvalue()


_STATS = {"nodes_expanded", "subtrees_pruned", "incumbent_updates", "cache_reconstitutions",
          "peak_stored_full_caches", "max_node_materializations"}
_TOKENS = (list, type(None))
_NUM = (float, int, type(None))
SCHEMAS = {
    "mode": {"input_id": str, "method": str, "mode_tokens": _TOKENS, "mode_logprob": _NUM,
             "empty": bool, "stats": dict, "exhausted": bool},
    "beam": {"input_id": str, "method": str, "target": (int, type(None)), "best_tokens": list,
             "best_logprob_S": _NUM, "best_C": _NUM},
    "sample": {"input_id": str, "method": str, "sample_index": int, "tokens": list,
               "logprob": _NUM, "truncated": bool},
    "error": {"input_id": str, "method": str, "error": str},
}
_OPTIONAL = {"mode": {"target": int, "ratio": float, "rank": int},
             "beam": {"ratio": float, "beam_dump": list}, "sample": {}, "error": {}}


def schema_of(record: dict) -> str:
    if "error" in record:
        return "error"
    method = record.get("method")
    if method in ("exact", "exact-cond", "top-n"):
        return "mode"
    if method in ("beam", "beam-forced", "beam-cond"):
        return "beam"
    if method == "sample":
        return "sample"
    raise ValueError(f"record has unknown method {method!r}")


def validate_record(record: dict) -> None:
    """Raise ``ValueError`` unless ``record`` matches its method's documented schema."""
    name = schema_of(record)
    required, optional = SCHEMAS[name], _OPTIONAL[name]
    for key, typ in required.items():
        if key not in record:
            raise ValueError(f"{name} record lacks {key!r}")
        if not isinstance(record[key], typ):
            raise ValueError(f"{name} record field {key!r} has type {type(record[key]).__name__}")
    extra = set(record) - set(required) - set(optional)
    if extra:
        raise ValueError(f"{name} record has unexpected fields {sorted(extra)}")
    for key, typ in optional.items():
        if key in record and not isinstance(record[key], typ):
            raise ValueError(f"{name} record field {key!r} has type {type(record[key]).__name__}")
    if name == "mode" and set(record["stats"]) != _STATS:
        raise ValueError("mode record stats do not match SearchStats")


# comparisons ---------------------------------------------------------------------------


class KeyMismatch(ValueError):
    def __init__(self, only_a: list, only_b: list):
        self.only_a = only_a
        self.only_b = only_b
        super().__init__(f"result keys differ: only in a: {only_a}; only in b: {only_b}")


@dataclass
class ComparisonRow:
    input_id: str
    target: int | None
    group: str
    logprob_a: float
    logprob_b: float
    winner: str


@dataclass
class WinRate:
    group: str
    a_wins: int
    b_wins: int
    ties: int

    @property
    def n(self) -> int:
        return self.a_wins + self.b_wins + self.ties

    def percentages(self) -> tuple[float, float, float]:
        n = self.n
        return (100.0 * self.a_wins / n, 100.0 * self.b_wins / n, 100.0 * self.ties / n)

    def to_row(self) -> dict:
        pa, pb, pt = self.percentages()
        return {"group": self.group, "a_wins": self.a_wins, "b_wins": self.b_wins, "ties": self.ties,
                "pct_a": round(pa, 6), "pct_b": round(pb, 6), "pct_ties": round(pt, 6)}


WIN_RATE_COLUMNS = ("group", "a_wins", "b_wins", "ties", "pct_a", "pct_b", "pct_ties")


def _logprob(rec: dict) -> float:
    for key in ("best_logprob_S", "mode_logprob", "logprob"):
        if key in rec:
            v = rec[key]
            return -math.inf if v is None else float(v)
    raise ValueError(f"record for {rec.get('input_id')} has no log-probability")


def _key(rec: dict) -> tuple:
    return (rec["input_id"], rec.get("target"), rec.get("ratio"), rec.get("rank"), rec.get("sample_index"))


def _group(rec: dict) -> str:
    if rec.get("ratio") is not None:
        return f"ratio={rec['ratio']}"
    if rec.get("target") is not None:
        return f"target={rec['target']}"
    return "all"


def winner(a: float, b: float, tol: float = WIN_TOL) -> str:
    if a == b or (math.isfinite(a) and math.isfinite(b) and abs(a - b) <= tol):
        return "tie"
    return "a" if a > b else "b"


def compare(results_a: Seq[dict], results_b: Seq[dict]) -> tuple[list[ComparisonRow], list[WinRate]]:
    """Pair records by (input_id, target) and count which side has the higher log-probability."""
    a = {_key(r): r for r in results_a if "error" not in r}
    b = {_key(r): r for r in results_b if "error" not in r}
    if a.keys() != b.keys():
        raise KeyMismatch(sorted(a.keys() - b.keys(), key=repr), sorted(b.keys() - a.keys(), key=repr))
    rows = []
    for key in sorted(a, key=repr):
        ra, rb = a[key], b[key]
        la, lb = _logprob(ra), _logprob(rb)
        rows.append(ComparisonRow(key[0], key[1], _group(ra), la, lb, winner(la, lb)))
    groups: dict[str, WinRate] = {}
    for row in rows:
        g = groups.setdefault(row.group, WinRate(row.group, 0, 0, 0))
        if row.winner == "a":
            g.a_wins += 1
        elif row.winner == "b":
            g.b_wins += 1
        else:
            g.ties += 1
    order = sorted(groups, key=_group_sort_key)
    return rows, [groups[g] for g in order]


def _group_sort_key(group: str):
    name, _, value = group.partition("=")
    try:
        return (name, float(value), group)
    except ValueError:
        return (name, math.inf, group)


# typicality --------------------------------------------------------------------------


@dataclass
class TypicalityRow:
    index: int
    nll: float
    entropy_estimate: float
    in_typical_set: bool


def typicality_report(
    model: SequenceModel,
    sequences: Iterable,
    epsilon: float,
    n_samples: int = 1000,
    rng=None,
    max_len: int = 256,
) -> list[TypicalityRow]:
    """Flag each complete sequence whose NLL is within ``epsilon`` nats of the estimated entropy."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    seqs = list(sequences)
    h = entropy_estimate(model, n_samples, rng=rng, max_len=max_len).mean_nll
    rows = []
    for i, s in enumerate(seqs):
        nll = -model.sequence_logprob(s)
        rows.append(TypicalityRow(i, nll, h, abs(nll - h) < epsilon))
    return rows


# sample-vs-mode scatter --------------------------------------------------------------------

SCATTER_COLUMNS = ("input_id", "mode_logprob", "mean_sample_logprob", "mode_empty", "exhausted")


@dataclass
class ScatterRow:
    input_id: str
    mode_logprob: float
    mean_sample_logprob: float
    mode_empty: bool
    exhausted: bool


def scatter_row(
    model: SequenceModel,
    input_id: str,
    n_samples_per: int = 5,
    rng=None,
    max_len: int = DEFAULT_MAX_LEN,
    budget: SearchBudget | None = None,
) -> ScatterRow:
    res = exact_mode(model, max_len, budget)
    lps = [model.sequence_logprob(sample(model, max_len=max_len, rng=rng)) for _ in range(n_samples_per)]
    return ScatterRow(input_id, res.best_logprob, float(np.mean(lps)), res.empty, res.exhausted)


def scatter_export(
    inputs: Seq[Input],
    n_samples_per: int = 5,
    seed: int = 0,
    max_len: int = DEFAULT_MAX_LEN,
    budget: SearchBudget | None = None,
) -> list[ScatterRow]:
    """Mode log-probability against mean sample log-probability, one row per input.

    Inputs whose search ran out of budget are kept and flagged with ``exhausted=False``.
    The samples are the ones the ``sample`` method draws for the same seed, so
    the rows can be rebuilt from its records with ``scatter_from_records``.
    """
    if n_samples_per < 1:
        raise ValueError("n_samples_per must be >= 1")
    return [
        scatter_row(load_model(inp.path), inp.input_id, n_samples_per, input_rng(seed, inp.input_id),
                    max_len, budget)
        for inp in sorted(inputs, key=lambda i: i.input_id)
    ]


def scatter_from_records(modes: Seq[dict], samples: Seq[dict]) -> list[ScatterRow]:
    """Rebuild scatter rows from ``exact`` and ``sample`` JSONL records."""
    by_input: dict[str, list[float]] = {}
    for s in samples:
        by_input.setdefault(s["input_id"], []).append(_logprob(s))
    rows = []
    for m in sorted(modes, key=lambda r: r["input_id"]):
        lps = by_input[m["input_id"]]
        rows.append(ScatterRow(m["input_id"], _logprob(m), float(np.mean(lps)), m["empty"], m["exhausted"]))
    return rows


# empty-mode report over inputs -----------------------------------------------------------------

EMPTY_REPORT_COLUMNS = ("length_lo", "length_hi", "n", "percent_empty_mode", "geomean_empty_prob", "n_not_exhausted")


def empty_report_for_inputs(
    inputs: Seq[Input], n_bins: int = 10, seed: int = 0, max_len: int = DEFAULT_MAX_LEN,
    budget: SearchBudget | None = None,
):
    entries = []
    for inp in sorted(inputs, key=lambda i: i.input_id):
        model = load_model(inp.path)
        entries.append((model, reference_length(model, inp, seed, max_len)))
    return empty_mode_report(entries, n_bins=n_bins, max_len=max_len, budget=budget)
