import csv
import logging
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, Iterator, List, Optional, Sequence

import psutil

logger = logging.getLogger('helpers')


def read_properties(properties_file: Path) -> Dict[str, str]:
    """Read a `key = value` file, skipping blank lines and # comments"""
    properties = {}
    with open(properties_file, 'r') as f:
        for number, line in enumerate(f, start=1):
            line = line.strip()
            if line and not line.startswith('#'):
                if '=' not in line:
                    raise ValueError(f"{properties_file}:{number}: expected key = value, got {line!r}")
                key, value = line.split('=', 1)
                properties[key.strip()] = value.strip()
    return properties


def format_header(settings: Dict[str, Any]) -> str:
    """Comment header recording a resolved configuration, one key per line"""
    return ''.join(f"# {key} = {value}\n" for key, value in settings.items())


def write_csv(path: Path, header: str, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    """Write a comment header, the column names and the formatted rows"""
    with open(path, 'w', newline='') as f:
        f.write(header)
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def format_value(value: Any) -> str:
    """Format floats with repr so values survive a round trip"""
    if isinstance(value, float):
        return repr(value)
    return str(value)


@contextmanager
def atomic_output(path: Path) -> Iterator[Path]:
    """Yield a temporary path next to `path`; rename it into place on success"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    os.close(fd)
    tmp = Path(tmp_name)
    try:
        yield tmp
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def resolve_jobs(jobs: int) -> int:
    """Worker count: 0 means one per physical core"""
    if jobs == 0:
        return psutil.cpu_count(logical=False) or 1
    return max(1, jobs)


def run_replicas(fn: Callable[[Any], Any], items: Sequence[Any], jobs: int = 1,
                 logger: Optional[logging.Logger] = None) -> List[Any]:
    """Map fn over items, in item order, optionally on a process pool"""
    logger = logger or logging.getLogger('helpers')
    workers = resolve_jobs(jobs)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    logger.debug(f"Running {len(items)} replicas on {workers} workers")
    chunk = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=chunk))


def memory_usage_mb() -> float:
    """Resident memory of this process in MB"""
    return psutil.Process().memory_info().rss / (1024 * 1024)
