"""Acceptance criteria 1-10, one pass/fail line each.

Criteria 6, 7 and 9 share a module-level state so the memorized model and its
dataset are trained once.
"""

import time

import pytest
import torch

from fmip.selfcheck import CRITERIA, verify_fixtures

STATE: dict = {}
LINES: list = []


@pytest.fixture(scope="module", autouse=True)
def report_lines():
    torch.manual_seed(0)
    yield
    print()
    for line in LINES:
        print(line)


def test_fixtures_verified():
    ok, detail = verify_fixtures()
    assert ok, detail


@pytest.mark.parametrize("cid,name,fn", CRITERIA, ids=[f"criterion_{c[0]}" for c in CRITERIA])
def test_criterion(cid, name, fn):
    tic = time.perf_counter()
    ok, detail = fn(STATE)
    line = f"[{'PASS' if ok else 'FAIL'}] {cid:2d} {name}: {detail} ({time.perf_counter() - tic:.1f}s)"
    LINES.append(line)
    print(line)
    assert ok, detail
