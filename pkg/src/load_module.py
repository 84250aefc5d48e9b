import importlib
import importlib.util
import os
import sys

from src import ROOT_PATH


def _normalise(file_path):
    # target lists may be written with Windows separators
    return os.path.normpath(file_path.replace("\\", "/"))


def load_module_from_path(file_path):
    """
    Load a Python module from the given file path.

    Files inside the repository are imported under their package name (``src/manifold.py``
    becomes ``src.manifold``), so their own ``from src...`` imports and icontract-decorated
    objects are shared with the rest of the program. Other files are loaded standalone.

    Parameters:
        file_path (str): Path to the Python file, absolute or relative to the repository root.

    Returns:
        module: The loaded module object.
    """
    file_path = _normalise(file_path)
    if not os.path.isabs(file_path) and not os.path.isfile(file_path):
        file_path = os.path.join(ROOT_PATH, file_path)
    if not os.path.isfile(file_path):
        raise FileNotFoundError(f"File not found: {file_path}")

    relative = os.path.relpath(os.path.abspath(file_path), ROOT_PATH)
    if not relative.startswith(os.pardir):
        if ROOT_PATH not in sys.path:
            sys.path.insert(0, ROOT_PATH)
        return importlib.import_module(os.path.splitext(relative)[0].replace(os.sep, "."))

    module_name = os.path.splitext(os.path.basename(file_path))[0]
    spec = importlib.util.spec_from_file_location(module_name, file_path)

    if spec is None or spec.loader is None:
        raise ImportError(f"Could not load spec for {file_path}")

    module = importlib.util.module_from_spec(spec)
    sys.modules[module_name] = module
    spec.loader.exec_module(module)
    return module
