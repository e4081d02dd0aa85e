import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lift3d.prototypes import save_obj  # noqa: E402
from lift3d.synthetic import car_registry, unit_cube  # noqa: E402


@pytest.fixture
def cube():
    return unit_cube()


@pytest.fixture(scope="session")
def cars():
    return car_registry()


@pytest.fixture
def cube_manifest(tmp_path, cube):
    save_obj(tmp_path / "cube.obj", cube.vertices, cube.faces)
    (tmp_path / "cube.kp.json").write_text(
        json.dumps({k: v.tolist() for k, v in cube.keypoints3d.items()}))
    manifest = tmp_path / "manifest.json"
    manifest.write_text(json.dumps([
        {"class": "cube", "id": "unit", "mesh": "cube.obj", "keypoints": "cube.kp.json"}]))
    return manifest


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[num])
