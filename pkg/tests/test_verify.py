import json

import pytest

import src.manifold
from src.load_module import load_module_from_path
from src.run_analysis import load_targets


def test_repository_file_is_imported_under_its_package_name():
    assert load_module_from_path("src/manifold.py") is src.manifold


def test_windows_separators_are_accepted():
    assert load_module_from_path("src\\manifold.py") is src.manifold


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_module_from_path(str(tmp_path / "absent.py"))


def test_file_outside_the_repository_is_loaded_standalone(tmp_path):
    path = tmp_path / "standalone_target.py"
    path.write_text("def double(x: int) -> int:\n    return 2 * x\n", encoding="utf-8")
    module = load_module_from_path(str(path))
    assert module.double(4) == 8


def test_every_batch_target_resolves():
    targets = load_targets()
    assert targets
    for target in targets:
        module = load_module_from_path(target["file"])
        assert callable(getattr(module, target["function"]))


def test_batch_file_must_be_a_list(tmp_path):
    path = tmp_path / "targets.json"
    path.write_text(json.dumps({"file": "src/manifold.py"}), encoding="utf-8")
    with pytest.raises(TypeError):
        load_targets(str(path))
