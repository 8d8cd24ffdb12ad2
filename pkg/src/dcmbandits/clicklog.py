"""Search-session click logs: parsing, per-query DCM estimation and replay.

Log format, one session per line, three tab-separated fields::

    <query id>\t<10 space-separated item ids>\t<10 space-separated 0/1 click flags>

The estimator assumes that every position up to the last click was examined,
and all positions when nothing was clicked. Its termination estimate is a
rough heuristic (it cannot tell termination from abandonment).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

from .dcm import DcmEnvironment, DcmInstance, check_action
from .harness import RegretSummary, aggregate, run_many

log = logging.getLogger(__name__)

SERP_SIZE = 10


class LogFormatError(ValueError):
    def __init__(self, lineno: int, reason: str):
        super().__init__(f"line {lineno}: {reason}")
        self.lineno = lineno
        self.reason = reason


@dataclass(frozen=True)
class Session:
    query: int
    displayed: tuple[int, ...]
    clicks: tuple[int, ...]

    def to_line(self) -> str:
        return "{}\t{}\t{}".format(
            self.query,
            " ".join(map(str, self.displayed)),
            " ".join(map(str, self.clicks)),
        )


def _parse_line(line: str, positions: int) -> Session:
    parts = line.rstrip("\r\n").split("\t")
    if len(parts) != 3:
        raise ValueError(f"expected 3 tab-separated fields, got {len(parts)}")
    try:
        query = int(parts[0])
        items = tuple(int(x) for x in parts[1].split())
        clicks = tuple(int(x) for x in parts[2].split())
    except ValueError:
        raise ValueError("non-integer field") from None
    if len(items) != positions or len(clicks) != positions:
        raise ValueError(f"expected {positions} items and {positions} click flags")
    if len(set(items)) != positions:
        raise ValueError("displayed items are not distinct")
    if any(c not in (0, 1) for c in clicks):
        raise ValueError("click flags must be 0 or 1")
    return Session(query, items, clicks)


def parse_log(lines: Iterable[str], strict: bool = False, errors: list | None = None,
              positions: int = SERP_SIZE) -> Iterator[Session]:
    """Yield sessions from log lines, lazily.

    Malformed lines are logged and skipped; their ``LogFormatError`` is
    appended to ``errors`` when a list is given. With ``strict=True`` the
    first malformed line raises instead. Blank lines are ignored.
    """
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            yield _parse_line(line, positions)
        except ValueError as exc:
            err = LogFormatError(lineno, str(exc))
            if strict:
                raise err from None
            log.warning("skipping malformed %s", err)
            if errors is not None:
                errors.append(err)


def write_log(sessions: Iterable[Session], stream: IO[str]) -> int:
    count = 0
    for s in sessions:
        stream.write(s.to_line() + "\n")
        count += 1
    return count


def group_by_query(sessions: Iterable[Session]) -> dict[int, list[Session]]:
    groups: dict[int, list[Session]] = {}
    for s in sessions:
        groups.setdefault(s.query, []).append(s)
    return groups


@dataclass
class EstimatedDcm:
    """A DCM fitted to one query's sessions.

    Item ``i`` of ``instance`` is the document ``item_ids[i]``. The count
    arrays are the numerators and denominators of the estimates; entries with
    a zero denominator are estimated as 0 and reported as low-confidence.
    """

    query: int
    instance: DcmInstance
    item_ids: tuple[int, ...]
    item_clicks: np.ndarray
    item_examined: np.ndarray
    position_last_clicks: np.ndarray
    position_clicks: np.ndarray
    sessions: int

    @property
    def low_confidence_items(self) -> list[int]:
        return [self.item_ids[i] for i in np.flatnonzero(self.item_examined == 0)]

    @property
    def low_confidence_positions(self) -> list[int]:
        return [int(k) + 1 for k in np.flatnonzero(self.position_clicks == 0)]

    def attraction_of(self, item_id: int) -> float:
        return float(self.instance.attraction[self.item_ids.index(item_id)])


def estimate_dcm(sessions: Sequence[Session]) -> EstimatedDcm:
    """Fit attraction and termination probabilities to one query's sessions."""
    if not sessions:
        raise ValueError("need at least one session")
    queries = {s.query for s in sessions}
    if len(queries) != 1:
        raise ValueError(f"sessions span several queries: {sorted(queries)}")
    displayed = np.array([s.displayed for s in sessions], dtype=np.int64)
    clicks = np.array([s.clicks for s in sessions], dtype=np.int64)
    n, K = clicks.shape
    item_ids, idx = np.unique(displayed, return_inverse=True)
    idx = idx.reshape(n, K)
    L = len(item_ids)
    if L < K:
        raise ValueError("fewer distinct items than positions")

    any_click = clicks.any(axis=1)
    # 1-based rank of the last click; K when there was no click
    last = np.where(any_click, K - np.argmax(clicks[:, ::-1], axis=1), K)
    examined = np.arange(K)[None, :] < last[:, None]

    item_examined = np.bincount(idx[examined], minlength=L).astype(np.float64)
    item_clicks = np.bincount(idx[examined], weights=clicks[examined], minlength=L)
    position_clicks = clicks.sum(axis=0).astype(np.float64)
    position_last = np.bincount(last[any_click] - 1, minlength=K).astype(np.float64)

    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(item_examined > 0, item_clicks / item_examined, 0.0)
        v = np.where(position_clicks > 0, position_last / position_clicks, 0.0)
    if np.any(item_examined == 0) or np.any(position_clicks == 0):
        log.info("query %s: some estimates have no support and are set to 0", next(iter(queries)))
    return EstimatedDcm(
        query=next(iter(queries)),
        instance=DcmInstance(w, v),
        item_ids=tuple(int(i) for i in item_ids),
        item_clicks=item_clicks,
        item_examined=item_examined,
        position_last_clicks=position_last,
        position_clicks=position_clicks,
        sessions=n,
    )


def estimate_all(sessions: Iterable[Session]) -> dict[int, EstimatedDcm]:
    return {q: estimate_dcm(group) for q, group in sorted(group_by_query(sessions).items())}


def generate_sessions(instance: DcmInstance, display, sessions: int, seed: int,
                      query: int = 0, item_ids: Sequence[int] | None = None) -> Iterator[Session]:
    """Simulate users of ``instance`` who are always shown ``display``.

    ``item_ids`` maps item indices to the ids written to the log
    (default: the indices themselves).
    """
    a = check_action(display, instance.L, instance.K)
    ids = np.arange(instance.L) if item_ids is None else np.asarray(item_ids)
    shown = tuple(int(ids[e]) for e in a)
    env = DcmEnvironment(instance, np.random.default_rng(seed))
    for _ in range(sessions):
        out = env.step(a)
        yield Session(query, shown, tuple(int(c) for c in out.clicks))


def generate_log(instance: DcmInstance, display, sessions: int, seed: int, query: int = 0) -> str:
    return "".join(s.to_line() + "\n" for s in generate_sessions(instance, display, sessions, seed, query))


def synthetic_query(rng: np.random.Generator, n_items: int = SERP_SIZE,
                    positions: int = SERP_SIZE) -> tuple[DcmInstance, np.ndarray]:
    """A random query resembling real search logs.

    One item is much more attractive than the rest and is shown first; the
    first position terminates most often and the remaining termination
    probabilities are unordered.
    """
    w = rng.uniform(0.02, 0.15, size=n_items)
    star = int(rng.integers(n_items))
    w[star] = rng.uniform(0.3, 0.6)
    v = rng.uniform(0.1, 0.5, size=positions)
    v[0] = rng.uniform(0.6, 0.9)
    others = rng.permutation([e for e in range(n_items) if e != star])
    display = np.concatenate([[star], others])[:positions]
    return DcmInstance(w, v), display


@dataclass
class ReplayResult:
    """Regret of each policy, averaged over queries (each query weighted equally)."""

    per_query: dict[str, dict[int, RegretSummary]]
    summary: dict[str, RegretSummary]


def replay(estimates: dict | Sequence[EstimatedDcm], policies: Sequence[str],
           n: int, seeds: Iterable[int], positions: int = 5, jobs: int = 1,
           **kwargs) -> ReplayResult:
    """Treat each fitted DCM as ground truth and run every policy on it.

    ``estimates`` is a sequence of ``EstimatedDcm`` or a dict from query id
    to ``EstimatedDcm`` or ``DcmInstance``. The policies assume that higher
    positions terminate more often, whether or not the fitted termination
    probabilities agree.
    """
    if isinstance(estimates, dict):
        models = list(estimates.items())
    else:
        models = [(e.query, e) for e in estimates]
    if not models:
        raise ValueError("no estimated models to replay")
    seeds = list(seeds)
    per_query: dict[str, dict[int, RegretSummary]] = {p: {} for p in policies}
    for query, model in models:
        inst = model.instance if isinstance(model, EstimatedDcm) else model
        inst = inst.truncated(min(positions, inst.K))
        traces = run_many(inst, policies, n, seeds, jobs=jobs, **kwargs)
        for p in policies:
            per_query[p][query] = aggregate(traces[p])
    summary = {}
    for p in policies:
        parts = list(per_query[p].values())
        mean = np.mean([s.mean for s in parts], axis=0)
        sem = np.sqrt(np.sum([s.sem ** 2 for s in parts], axis=0)) / len(parts)
        summary[p] = RegretSummary(mean, sem, sum(s.runs for s in parts))
    return ReplayResult(per_query, summary)
