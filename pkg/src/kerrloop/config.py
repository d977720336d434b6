import copy
import hashlib
import json
from pathlib import Path

PROJECT_ROOT = Path(__file__).resolve().parents[2]  # repo root, above src/kerrloop
CONFIG_PATH = PROJECT_ROOT / "config.json"
VERSION_PATH = PROJECT_ROOT / "VERSION"


def load_config_file(path: str | Path) -> dict:
    """Read a JSON experiment file without validating it"""
    with open(path, "r") as config_file:
        return json.load(config_file)


def _load_defaults() -> dict:
    try:
        return load_config_file(CONFIG_PATH)
    except (OSError, ValueError) as e:
        print(f"⚠️  Cannot load defaults from {CONFIG_PATH}: {e}")
        raise SystemExit(2)


# defaults for every run, read once at import
config = _load_defaults()


def code_version() -> str:
    """Contents of VERSION, or 'unknown' for a tree without one"""
    try:
        return VERSION_PATH.read_text(encoding="utf-8").strip() or "unknown"
    except OSError:
        return "unknown"


def deep_merge(base: dict, override: dict, path: str = "") -> dict:
    """Merge override into a copy of base, rejecting keys base does not know"""
    merged = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in merged:
            raise KeyError(where)
        if isinstance(merged[key], dict) and isinstance(value, dict):
            merged[key] = deep_merge(merged[key], value, where)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def config_hash(data: dict) -> str:
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
