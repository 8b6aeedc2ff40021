import numpy as np
import pytest
from hypothesis import settings

from salience.data import Dataset, InteractionSequence, TelemetrySession

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")

ROOT = __import__("pathlib").Path(__file__).resolve().parents[1]
DESK = ROOT / "configs" / "desk.ini"
SMOKE = ROOT / "configs" / "smoke.ini"


def make_seq(agent, obj, rows, latent=None):
    """rows: (absence, session_time, active_time, activity) per session."""
    sessions = tuple(TelemetrySession(float(a), float(s), float(p), int(c), obj) for a, s, p, c in rows)
    return InteractionSequence(agent, obj, sessions, None if latent is None else tuple(latent))


def random_dataset(n=40, objects=("a", "b"), lengths=(2, 6), seed=0, latent=False):
    rng = np.random.default_rng(seed)
    seqs = []
    for i in range(n):
        T = int(rng.integers(lengths[0], lengths[1] + 1))
        rows = np.column_stack([rng.uniform(0, 50, T), rng.uniform(1, 60, T), rng.uniform(0, 100, T),
                                rng.integers(0, 30, T)])
        rows[0, 0] = 0.0
        lat = rng.uniform(0, 2, T) if latent else None
        seqs.append(make_seq(f"x{i:03d}", objects[i % len(objects)], rows, lat))
    return Dataset(seqs)


@pytest.fixture
def small_data():
    return random_dataset()


PIPELINE = ("simulate", "prepare", "tune", "crossval", "report", "encode", "embed", "partition")


def run_pipeline(config, workdir, stages=PIPELINE, extra=()):
    from salience.cli import main
    for stage in stages:
        code = main([stage, "--config", str(config), "--workdir", str(workdir), *extra])
        if code != 0:
            raise RuntimeError(f"stage {stage} exited with {code}")
    return workdir


@pytest.fixture(scope="session")
def smoke_run(tmp_path_factory):
    return run_pipeline(SMOKE, tmp_path_factory.mktemp("smoke"))


# ---------------------------------------------------------------- acceptance reporting

CRITERIA: dict[int, tuple[bool, str]] = {}


def record(n: int, ok: bool, detail: str) -> None:
    CRITERIA[n] = (bool(ok), detail)
    assert ok, f"criterion {n}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
