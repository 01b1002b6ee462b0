import asyncio

import pytest

from services.task_tracker import SweepJob, SweepTracker


def _square(x: int) -> int:
    return x * x


def _fail(x: int) -> int:
    raise RuntimeError(f"bad point {x}")


def test_spawn_seeds_reproducible():
    a = SweepTracker.spawn_seeds(42, 5)
    assert a == SweepTracker.spawn_seeds(42, 5)
    assert len(set(a)) == 5
    assert a != SweepTracker.spawn_seeds(43, 5)


def test_run_all_keeps_schedule_order():
    tracker = SweepTracker(workers=2)
    jobs = [SweepJob(f"x{i}", _square, {"x": i}) for i in range(6)]
    assert asyncio.run(tracker.run_all(jobs)) == [0, 1, 4, 9, 16, 25]
    assert all(job.status == "completed" for job in jobs)
    assert tracker.jobs == {}


def test_failed_job_returns_exception():
    tracker = SweepTracker(workers=1)
    jobs = [SweepJob("ok", _square, {"x": 3}), SweepJob("bad", _fail, {"x": 7})]
    ok, bad = asyncio.run(tracker.run_all(jobs))
    assert ok == 9
    assert isinstance(bad, RuntimeError)
    assert jobs[1].status == "failed"
    assert jobs[1].error == "bad point 7"


def test_run_single_job():
    tracker = SweepTracker()
    assert asyncio.run(tracker.run("one", _square, x=4)) == 16
    with pytest.raises(RuntimeError):
        asyncio.run(tracker.run("two", _fail, x=1))
    assert tracker.jobs == {}


def test_workers_at_least_one():
    assert SweepTracker(workers=0).workers == 1


def test_duplicate_job_names_rejected():
    tracker = SweepTracker()
    with pytest.raises(ValueError):
        asyncio.run(tracker.run_all([SweepJob("x", _square, {"x": 1}), SweepJob("x", _square, {"x": 2})]))
    assert tracker.jobs == {}


def test_running_job_name_is_reserved():
    tracker = SweepTracker(workers=2)

    async def overlap():
        first = asyncio.ensure_future(tracker.run("same", _square, x=2))
        await asyncio.sleep(0)
        assert "same" in tracker.jobs
        with pytest.raises(ValueError):
            await tracker.run("same", _square, x=3)
        return await first

    assert asyncio.run(overlap()) == 4
    # после завершения имя снова свободно
    assert asyncio.run(tracker.run("same", _square, x=3)) == 9
