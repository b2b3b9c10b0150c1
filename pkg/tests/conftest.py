import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from postamp.model import ModelParams, Variant, make_instance
from postamp.amp import run_amp_z2
from postamp.tap import TapContext

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# Filled by tests/test_acceptance.py: criterion number -> (title, [(label, passed, detail)]).
ACCEPTANCE_LINES: dict[int, tuple[str, list]] = {}


def record(number: int, title: str, label: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.setdefault(number, (title, []))[1].append((label, bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        title, parts = ACCEPTANCE_LINES[number]
        status = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        body = "; ".join(f"{label}: {detail}{'' if ok else ' [fail]'}" for label, ok, detail in parts)
        terminalreporter.write_line(f"{status}  {number}. {title} | {body}")


@pytest.fixture(scope="session", params=[Variant.AMS, Variant.FMM], ids=["AMS", "FMM"])
def small_run(request):
    """n=400 instance at lambda=1.5, gamma0=0.3 with a k=8 AMP trace."""
    inst = make_instance(ModelParams(400, 1.5, 0.3, request.param), seed=11)
    trace = run_amp_z2(inst, 8)
    ctx = TapContext.from_instance(inst)
    return inst, trace, ctx


@pytest.fixture
def rng():
    return np.random.default_rng(20261019)
