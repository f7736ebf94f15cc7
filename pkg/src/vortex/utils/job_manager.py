import asyncio
import logging
import uuid
from concurrent.futures import Executor, ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime
from typing import Callable, Dict, List, Optional

from .config import RunConfig

logger = logging.getLogger(__name__)


@dataclass
class RunJob:
    """One run of a comparison study."""

    job_id: str
    label: str
    config: RunConfig
    status: str  # pending, running, completed, failed
    start_time: datetime
    end_time: Optional[datetime] = None
    exit_code: Optional[int] = None
    error: Optional[str] = None

    @property
    def output_dir(self) -> str:
        return self.config.output_dir


class JobManager:
    """Runs independent solver jobs in worker processes."""

    def __init__(self, max_workers: Optional[int] = None):
        self.jobs: Dict[str, RunJob] = {}
        self.active_tasks: Dict[str, asyncio.Future] = {}
        self.max_workers = max_workers

    def create_job(self, label: str, config: RunConfig) -> str:
        job_id = str(uuid.uuid4())[:8]  # Short ID for logs
        self.jobs[job_id] = RunJob(
            job_id=job_id,
            label=label,
            config=config,
            status="pending",
            start_time=datetime.now(),
        )
        logger.info(f"Created run job {job_id} ({label}) -> {config.output_dir}")
        return job_id

    def update_job_status(
        self,
        job_id: str,
        status: str,
        exit_code: Optional[int] = None,
        error: Optional[str] = None,
    ):
        """Record a status change and, once finished, the exit code or error."""
        if job_id not in self.jobs:
            return
        job = self.jobs[job_id]
        job.status = status
        if exit_code is not None:
            job.exit_code = exit_code
        if error is not None:
            job.error = error
        if status in ["completed", "failed"]:
            job.end_time = datetime.now()
            self.active_tasks.pop(job_id, None)

    def start_job_task(self, job_id: str, task: asyncio.Future):
        """Track the executor future of a job that just started."""
        self.active_tasks[job_id] = task
        if job_id in self.jobs:
            self.jobs[job_id].status = "running"

    async def _run_job(
        self, job_id: str, worker: Callable[[RunConfig], int], executor: Executor
    ):
        loop = asyncio.get_running_loop()
        job = self.jobs[job_id]
        future = loop.run_in_executor(executor, worker, job.config)
        self.start_job_task(job_id, future)
        try:
            code = await future
        except Exception as e:
            logger.error(f"Run job {job_id} crashed: {e}")
            self.update_job_status(job_id, "failed", error=str(e))
            return
        status = "completed" if code == 0 else "failed"
        self.update_job_status(job_id, status, exit_code=code)
        logger.info(f"Run job {job_id} ({job.label}) {status} with exit code {code}")

    async def run_pending(
        self,
        worker: Callable[[RunConfig], int],
        executor: Optional[Executor] = None,
    ) -> List[RunJob]:
        """Execute every pending job concurrently; worker must be picklable."""
        pending = [job_id for job_id, job in self.jobs.items() if job.status == "pending"]
        owned = executor is None
        executor = executor or ProcessPoolExecutor(max_workers=self.max_workers)
        try:
            await asyncio.gather(
                *(self._run_job(job_id, worker, executor) for job_id in pending)
            )
        finally:
            if owned:
                executor.shutdown(wait=True)
        return [self.jobs[job_id] for job_id in pending]

    def run_all(
        self,
        worker: Callable[[RunConfig], int],
        executor: Optional[Executor] = None,
    ) -> List[RunJob]:
        return asyncio.run(self.run_pending(worker, executor))
