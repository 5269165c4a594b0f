import sys
from importlib import resources
from pathlib import Path

import pytest

from rearrangekit.scene import graph_from_document, load_scene_file

sys.path.insert(0, str(Path(__file__).parent))

SCENES = resources.files("rearrangekit").joinpath("data/scenes")
APARTMENT = str(SCENES.joinpath("apartment.json"))
OFFICE = str(SCENES.joinpath("office.json"))


def obj(oid, name, center, half, yaw=0, platforms=None):
    d = {"id": oid, "name": name, "position": list(center), "half_extents": list(half), "yaw_degrees": yaw}
    if platforms is not None:
        d["platforms"] = platforms
    return d


def table_doc(items=(), bounds=(-2.0, -2.0, 5.0, 4.0), name="unit"):
    """A 3 x 2 m table whose top face is x[0,3] y[0,2] at z=0.8, plus small items on it."""
    objects = [obj("table_1", "table_wooden_dining", (1.5, 1.0, 0.4), (1.5, 1.0, 0.4))]
    for oid, nm, rect, h in items:
        x0, y0, x1, y1 = rect
        objects.append(obj(oid, nm, ((x0 + x1) / 2, (y0 + y1) / 2, 0.8 + h / 2), ((x1 - x0) / 2, (y1 - y0) / 2, h / 2)))
    return {"name": name, "bounds": list(bounds), "objects": objects}


def two_table_doc(items=(), name="unit2"):
    """Table A (x[0,3] y[0,2]) with items, plus an empty side table B (x[4,5] y[0,1])."""
    doc = table_doc(items, bounds=(-2.0, -2.0, 7.0, 4.0), name=name)
    doc["objects"].append(obj("side_1", "table_small_side", (4.5, 0.5, 0.3), (0.5, 0.5, 0.3)))
    return doc


@pytest.fixture(scope="session")
def apartment():
    return load_scene_file(APARTMENT)


@pytest.fixture(scope="session")
def office():
    return load_scene_file(OFFICE)


@pytest.fixture
def build():
    return graph_from_document


# ---------------------------------------------------------------------------
# acceptance summary: one PASS/FAIL line per criterion

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(label): ties a test to an acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    label = mark.args[0]
    title = mark.args[1] if len(mark.args) > 1 else item.name
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        prev = _ACCEPTANCE.get(label, (True, title))
        _ACCEPTANCE[label] = (prev[0] and rep.outcome == "passed", title)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_ACCEPTANCE, key=lambda s: int(s[2:])):
        ok, title = _ACCEPTANCE[label]
        terminalreporter.write_line(f"{label} {'PASS' if ok else 'FAIL'} {title}")
