"""Experience pools: append-only per-model and per-workflow outcome logs with
summary views that feed the mutation operators.

Records live one-per-line in canonical form; a truncated final line (crash
mid-write) is skipped with a warning on reload.
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from . import canonical
from .errors import InvalidInput, StorageError

logger = logging.getLogger(__name__)

VERDICTS = ("Positive", "Negative", "None")
DEFAULT_SUCCESS_THRESHOLD = 1.0


@dataclass(frozen=True)
class LlmExperienceRecord:
    model_id: str
    workflow_id: str
    query_id: str
    verdict: str  # Positive | Negative | None ("None" = model made no calls)
    commentary: str
    domain: str
    timestamp: float = field(default_factory=time.time)

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise InvalidInput(f"bad verdict {self.verdict!r}")


@dataclass(frozen=True)
class WorkflowExperienceRecord:
    workflow_id: str
    query_id: str
    verdict: str  # Positive | Negative
    commentary: str
    perf: float
    cost: float
    domain: str = "general"
    timestamp: float = field(default_factory=time.time)

    def __post_init__(self):
        if self.verdict not in ("Positive", "Negative"):
            raise InvalidInput(f"bad verdict {self.verdict!r}")


@dataclass
class ExperienceSummary:
    positive_count: int = 0
    negative_count: int = 0
    none_count: int = 0
    recent_commentaries: list[str] = field(default_factory=list)

    @property
    def positive_rate(self) -> float:
        """Laplace-smoothed success rate over decisive verdicts."""
        return (self.positive_count + 1) / (self.positive_count + self.negative_count + 2)


def verdict_from_perf(perf: float, threshold: float = DEFAULT_SUCCESS_THRESHOLD) -> str:
    return "Positive" if perf >= threshold else "Negative"


def default_commentary(model_id: str, verdict: str, domain: str, kinds: Iterable[str]) -> str:
    outcome = "succeeded" if verdict == "Positive" else "failed"
    return f"model {model_id} {outcome} on domain {domain} via operator kinds {sorted(set(kinds))}"


class _JsonlLog:
    """Append-only line log, optionally file-backed."""

    def __init__(self, path: Optional[Path] = None):
        self.path = Path(path) if path is not None else None
        self._records: list[dict] = []
        if self.path is not None and self.path.exists():
            self._records = list(self._load())

    def _load(self):
        lines = self.path.read_text(encoding="utf-8").split("\n")
        for i, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                yield canonical.loads(line)
            except ValueError:
                if i == len(lines) - 1 or (i == len(lines) - 2 and not lines[-1]):
                    logger.warning("skipping truncated final record in %s", self.path)
                else:
                    raise StorageError(f"corrupt record at {self.path}:{i + 1}")

    def append(self, doc: dict) -> None:
        if self.path is not None:
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(canonical.dumps(doc) + "\n")
                    fh.flush()
            except OSError as e:
                raise StorageError(f"cannot append to {self.path}: {e}") from e
        self._records.append(doc)

    @property
    def records(self) -> list[dict]:
        return self._records


class _SummaryIndex:
    """Incremental per-key verdict counts plus the last 10 commentaries."""

    def __init__(self):
        self._data: dict[tuple, ExperienceSummary] = {}

    def add(self, keys: Iterable[tuple], verdict: str, commentary: str) -> None:
        for key in keys:
            summary = self._data.setdefault(key, ExperienceSummary())
            if verdict == "Positive":
                summary.positive_count += 1
            elif verdict == "Negative":
                summary.negative_count += 1
            else:
                summary.none_count += 1
            summary.recent_commentaries.append(commentary)
            del summary.recent_commentaries[:-10]

    def get(self, key: tuple) -> ExperienceSummary:
        hit = self._data.get(key)
        if hit is None:
            return ExperienceSummary()
        return ExperienceSummary(
            positive_count=hit.positive_count,
            negative_count=hit.negative_count,
            none_count=hit.none_count,
            recent_commentaries=list(hit.recent_commentaries),
        )


class LlmExperiencePool:
    """Per-model outcome pool (default file: memory/llm_pool.log)."""

    def __init__(self, path: Optional[Path] = None):
        self._log = _JsonlLog(path)
        self._index = _SummaryIndex()
        for doc in self._log.records:
            self._index_doc(doc)

    def _index_doc(self, doc: dict) -> None:
        self._index.add(
            [(doc["model_id"], None), (doc["model_id"], doc["domain"])],
            doc["verdict"],
            doc["commentary"],
        )

    def append(self, record: LlmExperienceRecord) -> None:
        doc = {
            "model_id": record.model_id,
            "workflow_id": record.workflow_id,
            "query_id": record.query_id,
            "verdict": record.verdict,
            "commentary": record.commentary,
            "domain": record.domain,
            "timestamp": record.timestamp,
        }
        self._log.append(doc)
        self._index_doc(doc)

    def query_summary(self, model_id: str, domain: Optional[str] = None) -> ExperienceSummary:
        return self._index.get((model_id, domain))


class WorkflowExperiencePool:
    """Per-workflow outcome pool (default file: memory/wf_pool.log)."""

    def __init__(self, path: Optional[Path] = None):
        self._log = _JsonlLog(path)
        self._index = _SummaryIndex()
        for doc in self._log.records:
            self._index_doc(doc)

    def _index_doc(self, doc: dict) -> None:
        self._index.add(
            [
                (doc["workflow_id"], None),
                (doc["workflow_id"], doc.get("domain", "general")),
            ],
            doc["verdict"],
            doc["commentary"],
        )

    def append(self, record: WorkflowExperienceRecord) -> None:
        doc = {
            "workflow_id": record.workflow_id,
            "query_id": record.query_id,
            "verdict": record.verdict,
            "commentary": record.commentary,
            "perf": record.perf,
            "cost": record.cost,
            "domain": record.domain,
            "timestamp": record.timestamp,
        }
        self._log.append(doc)
        self._index_doc(doc)

    def query_summary(self, workflow_id: str, domain: Optional[str] = None) -> ExperienceSummary:
        return self._index.get((workflow_id, domain))
