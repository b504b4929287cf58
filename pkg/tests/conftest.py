"""Shared fixtures: a cached trained tiny denoiser and the acceptance summary."""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from zeroair import io
from zeroair.degrade import shapes32
from zeroair.diffusion import build_linear_schedule, train_tiny_denoiser

# Acceptance training budget; ~12 minutes on one CPU core.
DENOISER_STEPS = 1200
DENOISER_SEED = 1  # evaluation images are drawn with seed 0
CACHE_DIR = Path(__file__).resolve().parent.parent / ".zeroair_cache"

ACCEPTANCE_LINES: dict = {}


def record_acceptance(number: int, passed: bool, detail: str):
    ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])


@pytest.fixture(scope="session")
def trained_denoiser():
    """(model, schedule, training seconds), trained on fresh shapes32 draws and cached on disk."""
    tag = f"tiny_s{DENOISER_STEPS}_seed{DENOISER_SEED}"
    params, meta = CACHE_DIR / f"{tag}.zair", CACHE_DIR / f"{tag}.json"
    if params.is_file() and meta.is_file():
        model, sched = io.load_denoiser(params)
        return model, sched, json.loads(meta.read_text())["train_seconds"]
    sched = build_linear_schedule(1000)
    rng = np.random.default_rng(DENOISER_SEED)
    t0 = time.perf_counter()
    model, _ = train_tiny_denoiser(lambda r, n: shapes32(r, n) * 2.0 - 1.0, sched, DENOISER_STEPS, rng)
    seconds = time.perf_counter() - t0
    CACHE_DIR.mkdir(exist_ok=True)
    io.save_denoiser(params, model, sched)
    meta.write_text(json.dumps({"train_seconds": seconds, "steps": DENOISER_STEPS}))
    return model, sched, seconds
