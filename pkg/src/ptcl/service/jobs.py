"""In-process job registry for long-running training work.

One worker thread executes jobs in submission order (training is CPU-bound
and single-host); status lookups are cheap dictionary reads guarded by a
lock.
"""

from __future__ import annotations

import threading
import time
import traceback
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional


@dataclass
class JobRecord:
    run_id: str
    kind: str
    state: str = "queued"            # queued | running | done | failed
    error: Optional[str] = None
    result: Optional[dict] = None
    out_dir: Optional[str] = None
    started_at: Optional[float] = None
    finished_at: Optional[float] = None

    @property
    def seconds(self) -> Optional[float]:
        if self.started_at is None:
            return None
        end = self.finished_at if self.finished_at is not None else time.time()
        return end - self.started_at


class JobRegistry:
    def __init__(self, workers: int = 1):
        self._executor = ThreadPoolExecutor(max_workers=workers)
        self._jobs: dict[str, JobRecord] = {}
        self._lock = threading.Lock()

    def submit(self, kind: str, fn: Callable[[], dict],
               out_dir: Optional[str] = None) -> JobRecord:
        run_id = uuid.uuid4().hex[:12]
        record = JobRecord(run_id=run_id, kind=kind, out_dir=out_dir)
        with self._lock:
            self._jobs[run_id] = record

        def work():
            with self._lock:
                record.state = "running"
                record.started_at = time.time()
            try:
                result = fn()
            except Exception as exc:  # noqa: BLE001 - reported via status
                with self._lock:
                    record.state = "failed"
                    record.error = f"{type(exc).__name__}: {exc}"
                    record.finished_at = time.time()
                traceback.print_exc()
                return
            with self._lock:
                record.state = "done"
                record.result = result
                record.finished_at = time.time()

        self._executor.submit(work)
        return record

    def get(self, run_id: str) -> Optional[JobRecord]:
        with self._lock:
            return self._jobs.get(run_id)

    def all(self) -> list[JobRecord]:
        with self._lock:
            return list(self._jobs.values())
