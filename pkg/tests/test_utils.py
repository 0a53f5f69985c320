import json
import threading
import time

import pytest

from ttpx.utils import (
    dumps_canonical,
    iter_jsonl,
    run_ordered,
    sha256_hex,
    strip_ansi,
    write_jsonl,
)


def test_strip_ansi():
    message = "\x1b[31mThis is a test message.\x1b[0m"
    assert strip_ansi(message) == "This is a test message."
    message = "\x1b[32mThis is another test message.\x1b[0m"
    assert strip_ansi(message) == "This is another test message."


def test_sha256_hex_accepts_str_and_bytes():
    assert sha256_hex("abc") == sha256_hex(b"abc")
    assert sha256_hex("abc").startswith("ba7816bf")


def test_dumps_canonical_sorts_keys():
    assert dumps_canonical({"b": 1, "a": [2, {"d": 0, "c": 1}]}) == '{"a": [2, {"c": 1, "d": 0}], "b": 1}'
    assert dumps_canonical({"é": 1}) == '{"é": 1}'


def test_write_and_iter_jsonl(tmp_path):
    path = tmp_path / "nested" / "records.jsonl"
    write_jsonl(path, [{"a": 1}, {"b": 2}])
    assert path.read_text().splitlines() == ['{"a": 1}', '{"b": 2}']
    assert list(iter_jsonl(path)) == [(1, {"a": 1}), (2, {"b": 2})]


def test_iter_jsonl_skips_blank_lines_and_reports_line_numbers(tmp_path):
    path = tmp_path / "records.jsonl"
    path.write_text('{"a": 1}\n\n{"a": 2}\n')
    assert [n for n, _ in iter_jsonl(path)] == [1, 3]

    path.write_text('{"a": 1}\n{broken\n')
    with pytest.raises(ValueError, match=":2: invalid JSON"):
        list(iter_jsonl(path))

    path.write_text(json.dumps([1, 2]) + "\n")
    with pytest.raises(ValueError, match="expected a JSON object"):
        list(iter_jsonl(path))


@pytest.mark.parametrize("jobs", [1, 4])
def test_run_ordered_keeps_item_order(jobs):
    def slow_square(x):
        time.sleep(0.001 * (10 - x))
        return x * x

    arrived = []
    results = run_ordered(slow_square, range(10), jobs=jobs, on_result=lambda i, r: arrived.append(i))
    assert results == [x * x for x in range(10)]
    assert sorted(arrived) == list(range(10))


def test_run_ordered_calls_back_on_the_calling_thread():
    caller = threading.get_ident()
    threads = set()
    run_ordered(lambda x: x, range(5), jobs=3, on_result=lambda i, r: threads.add(threading.get_ident()))
    assert threads == {caller}


@pytest.mark.parametrize("jobs", [1, 3])
def test_run_ordered_reraises_first_error(jobs):
    def fail_on_three(x):
        if x == 3:
            raise RuntimeError("boom")
        return x

    with pytest.raises(RuntimeError, match="boom"):
        run_ordered(fail_on_three, range(6), jobs=jobs)


def test_run_ordered_empty():
    assert run_ordered(lambda x: x, [], jobs=4) == []
