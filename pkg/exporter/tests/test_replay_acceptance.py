"""Acceptance checks for the export client.

Each test prints one PASS/FAIL line. The replay run covers two batches
over two years against recorded fixtures, with sockets disabled for the
whole run to prove no network is involved.
"""

import pathlib
import socket
import types

import pytest

from gee_exporter import build_query, load_manifest, run_export
from gee_exporter.export import ReplayFetcher

HERE = pathlib.Path(__file__).resolve().parent
FIXTURES = HERE / "fixtures"
GOLDENS = HERE / "goldens"
MANIFEST = FIXTURES / "manifest.json"


def _report(name, ok, detail):
    print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, f"{name}: {detail}"


def _no_socket(*args, **kwargs):
    raise AssertionError("network access attempted during replay")


def _tree_bytes(root):
    return {p.name: p.read_bytes() for p in sorted(root.iterdir()) if p.is_file()}


@pytest.fixture(scope="module")
def replay(tmp_path_factory):
    out = tmp_path_factory.mktemp("replay_out")
    fetcher = ReplayFetcher(FIXTURES / "responses")
    inputs_before = _tree_bytes(FIXTURES / "responses")
    manifest_before = MANIFEST.read_bytes()
    mp = pytest.MonkeyPatch()
    mp.setattr(socket, "socket", _no_socket)
    mp.setattr(socket, "create_connection", _no_socket)
    try:
        first_tasks, first_rows = run_export(
            load_manifest(MANIFEST), "replay", out, fixtures_dir=fetcher, status_path=out / "status.csv"
        )
        fetches_after_first = fetcher.fetch_count
        mtimes = {p.name: p.stat().st_mtime_ns for p in out.iterdir()}
        second_tasks, second_rows = run_export(
            load_manifest(MANIFEST), "replay", out, fixtures_dir=fetcher, status_path=out / "status.csv"
        )
    finally:
        mp.undo()
    return types.SimpleNamespace(
        out=out,
        fetcher=fetcher,
        first_tasks=first_tasks,
        first_rows=first_rows,
        fetches_after_first=fetches_after_first,
        mtimes=mtimes,
        second_tasks=second_tasks,
        second_rows=second_rows,
        inputs_untouched=(
            inputs_before == _tree_bytes(FIXTURES / "responses")
            and manifest_before == MANIFEST.read_bytes()
        ),
    )


def test_replay_export_is_bit_identical(replay):
    names = sorted(p.name for p in GOLDENS.iterdir())
    diffs = [n for n in names if (replay.out / n).read_bytes() != (GOLDENS / n).read_bytes()]
    coverage = {(t.batch_id, t.year) for t in replay.first_tasks}
    ok = (
        len(names) == 16
        and not diffs
        and coverage == {(0, 2016), (0, 2017), (1, 2016), (1, 2017)}
        and all(t.status == "done" for t in replay.first_tasks)
        and replay.inputs_untouched
    )
    _report(
        "replay matches goldens",
        ok,
        f"2 batches x 2 years, {len(names) - len(diffs)}/{len(names)} files bit-identical",
    )


def test_queries_carry_the_seasonal_date_filter(replay):
    windows = {}
    for task in load_manifest(MANIFEST):
        q = build_query(task)
        windows[(task.batch_id, task.year)] = (q.date_start, q.date_end)
    ok = all(
        win == (f"{year}-06-01", f"{year}-10-01") for (_, year), win in windows.items()
    )
    _report(
        "descriptors filter the season",
        ok,
        f"date ranges {sorted(set(windows.values()))} (end exclusive)",
    )


def test_rerun_is_a_no_op(replay):
    mtimes_now = {p.name: p.stat().st_mtime_ns for p in replay.out.iterdir()}
    untouched = {
        n: t for n, t in mtimes_now.items() if n in replay.mtimes and t == replay.mtimes[n]
    }
    refetched = replay.fetcher.fetch_count - replay.fetches_after_first
    ok = (
        refetched == 0
        and all(r.reason == "already exported" for r in replay.second_rows)
        and all(t.status == "done" for t in replay.second_tasks)
        and len(untouched) == len(replay.mtimes) - 1  # only status.csv gains rows
        and "status.csv" not in untouched
    )
    _report(
        "rerun is a no-op",
        ok,
        f"{refetched} new fetches, {len(untouched)} outputs untouched",
    )


def test_replay_needs_no_network(replay):
    ok = all(t.status == "done" for t in replay.first_tasks + replay.second_tasks)
    _report("no network access", ok, "both runs completed with sockets disabled")
