import hashlib
import json
import re
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from typing import Iterable, Iterator

from tqdm import tqdm


def strip_ansi(s):
    return re.sub(r"\x1B[@-_][0-?]*[ -/]*[@-~]", "", s)


def sha256_hex(data: str | bytes) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def dumps_canonical(obj, indent: int | None = None) -> str:
    """JSON with sorted keys, used wherever output must be byte-identical
    across runs."""
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, indent=indent)


def iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    """Yields (line_number, record) for every non-blank line, 1-indexed."""
    with open(path, encoding="utf-8") as reader:
        for line_number, line in enumerate(reader, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{line_number}: invalid JSON ({e.msg})")
            if not isinstance(record, dict):
                raise ValueError(f"{path}:{line_number}: expected a JSON object")
            yield line_number, record


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as writer:
        for record in records:
            writer.write(dumps_canonical(record) + "\n")


def run_ordered(func, items, jobs: int = 1, on_result=None, desc: str | None = None):
    """Applies `func` to every item on `jobs` worker threads and returns the
    results in item order. `on_result(index, result)` runs on the calling
    thread as each result arrives. The first exception cancels pending work
    and is re-raised."""
    items = list(items)
    results = [None] * len(items)
    if jobs <= 1:
        for index, item in enumerate(tqdm(items, desc=desc, leave=False, disable=desc is None)):
            results[index] = func(item)
            if on_result:
                on_result(index, results[index])
        return results

    with ThreadPoolExecutor(jobs) as executor:
        futures = {executor.submit(func, item): index for index, item in enumerate(items)}
        pbar = tqdm(as_completed(futures), total=len(items), desc=desc, leave=False, disable=desc is None)
        for future in pbar:
            if future.cancelled():
                continue
            try:
                index = futures[future]
                results[index] = future.result()
                if on_result:
                    on_result(index, results[index])
            except BaseException:
                executor.shutdown(wait=False, cancel_futures=True)
                raise
    return results
