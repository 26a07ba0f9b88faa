"""Loading tasks, devices and run configurations from YAML files."""
from __future__ import annotations

from importlib import resources
from pathlib import Path

import yaml

from .errors import InvalidTask
from .oracle import DeviceSpec
from .space import TaskSpec


def _read(path):
    with open(path, "r", encoding="utf-8") as fh:
        return yaml.safe_load(fh)


def resource_path(name: str) -> Path:
    return Path(str(resources.files("moses_lab") / "resources" / name))


def load_tasks(path=None) -> list:
    doc = _read(path or resource_path("tasks.yaml"))
    entries = doc.get("tasks", doc) if isinstance(doc, dict) else doc
    tasks = [TaskSpec.from_dict(e) for e in entries]
    ids = [t.id for t in tasks]
    if len(set(ids)) != len(ids):
        raise InvalidTask("task ids must be unique within a workload")
    return tasks


def load_device(path) -> DeviceSpec:
    return DeviceSpec.from_dict(_read(path))


def default_source_device() -> DeviceSpec:
    return load_device(resource_path("server.yaml"))


def default_target_device() -> DeviceSpec:
    return load_device(resource_path("embedded.yaml"))


def load_run_config(path=None) -> dict:
    """Run configuration: device/task file paths (relative to the config file), budget, strategies, seeds."""
    path = Path(path) if path else resource_path("run.yaml")
    doc = _read(path) or {}
    base = path.parent
    for key in ("source_device", "target_device", "tasks"):
        if key in doc and not Path(doc[key]).is_absolute():
            doc[key] = str(base / doc[key])
    return doc
