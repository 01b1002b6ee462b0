import asyncio
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

from config import config

logger = logging.getLogger(__name__)


@dataclass
class SweepJob:
    """Одна точка расписания: блокирующий вызов с собственным seed"""
    name: str
    fn: Callable[..., Any]
    kwargs: dict = field(default_factory=dict)
    status: str = "pending"
    error: Optional[str] = None


class SweepTracker:
    def __init__(self, workers: int = config.SWEEP_WORKERS):
        self.workers = max(1, workers)
        self.jobs: dict[str, SweepJob] = {}

    @staticmethod
    def spawn_seeds(seed: int, count: int) -> list[int]:
        """Независимые seed для точек расписания"""
        children = np.random.SeedSequence(seed).spawn(count)
        return [int(child.generate_state(1)[0]) for child in children]

    async def _run_one(self, semaphore: asyncio.Semaphore, job: SweepJob) -> Any:
        loop = asyncio.get_running_loop()
        async with semaphore:
            job.status = "running"
            logger.info(f"Sweep job started: {job.name}")
            try:
                result = await loop.run_in_executor(None, lambda: job.fn(**job.kwargs))
                job.status = "completed"
                logger.info(f"Sweep job completed: {job.name}")
                return result
            except Exception as e:
                job.status = "failed"
                job.error = str(e)
                logger.error(f"Sweep job {job.name} failed: {e}", exc_info=True)
                return e

    async def run_all(self, jobs: list[SweepJob]) -> list[Any]:
        """
        Запускает задачи в пуле потоков с ограничением параллелизма.
        Результаты возвращаются в порядке расписания; упавшая задача
        возвращает своё исключение вместо результата.
        """
        names = [job.name for job in jobs]
        clash = sorted(set(names) & set(self.jobs)) or sorted({n for n in names if names.count(n) > 1})
        if clash:
            raise ValueError(f"duplicate sweep job names: {', '.join(clash)}")
        for job in jobs:
            self.jobs[job.name] = job
        semaphore = asyncio.Semaphore(self.workers)
        try:
            results = await asyncio.gather(*(self._run_one(semaphore, job) for job in jobs))
        finally:
            # в реестре только выполняющиеся задачи
            for job in jobs:
                self.jobs.pop(job.name, None)
        failed = [job.name for job in jobs if job.status == "failed"]
        if failed:
            logger.warning(f"{len(failed)} of {len(jobs)} sweep jobs failed: {', '.join(failed)}")
        return list(results)

    async def run(self, name: str, fn: Callable[..., Any], **kwargs) -> Any:
        """Одна задача в пуле; исключение пробрасывается"""
        result = (await self.run_all([SweepJob(name, fn, kwargs)]))[0]
        if isinstance(result, Exception):
            raise result
        return result


sweep_tracker = SweepTracker()
