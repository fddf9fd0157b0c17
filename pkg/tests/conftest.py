import dataclasses

import numpy as np
import pytest

from droopsafe import pipeline
from droopsafe.config import example_path, load_config
from droopsafe.grid import assemble_dynamics


@dataclasses.dataclass
class Example:
    cfg: object
    dec: object
    certs: list
    policies: list
    filters: list


@pytest.fixture(scope="session")
def example_cfg():
    return load_config(example_path())


@pytest.fixture(scope="session")
def example(example_cfg):
    """Synthesized certificates, policies and filters for the shipped example."""
    eq, red = pipeline.run_powerflow(example_cfg)
    dec = assemble_dynamics(red, example_cfg.inverter_params(), eq,
                            example_cfg.synthesis.trig_degree)
    res = pipeline.synthesize(example_cfg, dec, check=False)
    filters = pipeline.build_filters(example_cfg, dec, res.certs, res.policies)
    return Example(example_cfg, dec, res.certs, res.policies, filters)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# --- acceptance reporting -------------------------------------------------------

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    n, text = mark.args
    entry = _CRITERIA.setdefault(n, {"text": text, "ok": True, "details": []})
    entry["ok"] &= not rep.failed
    entry["details"] += [str(v) for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        line = f"criterion {n}: {'PASS' if e['ok'] else 'FAIL'}  {e['text']}"
        if e["details"]:
            line += "  [" + "; ".join(e["details"]) + "]"
        terminalreporter.write_line(line)
