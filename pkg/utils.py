import typing
from pathlib import Path

import yaml


class bcolors:
    HEADER = "\033[95m"
    OKBLUE = "\033[94m"
    OKCYAN = "\033[96m"
    OKGREEN = "\033[92m"
    WARNING = "\033[93m"
    FAIL = "\033[91m"
    ENDC = "\033[0m"
    BOLD = "\033[1m"
    UNDERLINE = "\033[4m"


def ensure_dirs_exist(dirs: list[Path]):
    for dir in dirs:
        if not dir.exists():
            dir.mkdir(parents=True, exist_ok=True)


def save_yaml_from_data(save_path: Path, data: dict):
    ensure_dirs_exist([Path(save_path).parent])
    with open(save_path, "w", encoding="utf-8", newline="\n") as savefile:
        yaml.safe_dump(data, savefile, sort_keys=False, allow_unicode=True)


def load_yaml(yaml_path: Path):
    with open(yaml_path, encoding="utf-8") as f:
        yaml_data = yaml.safe_load(f)
    return yaml_data


def config_to_dict(config, keys_to_delete: typing.Iterable[str] = ("FILE_PATH",)) -> dict:
    """Plain-dict copy of a YAML dataclass config, nested configs included.

    Args:
        config: YamlDataClassConfig instance
        keys_to_delete: bookkeeping fields that don't belong in saved files
    """
    keys_to_delete = set(keys_to_delete)

    def _strip(value):
        if isinstance(value, dict):
            return {k: _strip(v) for k, v in value.items() if k not in keys_to_delete}
        if isinstance(value, list):
            return [_strip(v) for v in value]
        return value

    return _strip(config.to_dict(encode_json=False))


def format_float(value: float) -> str:
    """Shortest text that parses back to exactly `value`."""
    return repr(float(value))


def key_values_to_text(data: dict) -> str:
    lines = []
    for key, value in data.items():
        if isinstance(value, float):
            value = format_float(value)
        lines.append(f"{key}: {value}")
    return "\n".join(lines) + "\n"


def key_values_from_text(text: str) -> dict[str, str]:
    """Parse a flat `key: value` block. Values stay strings; blank lines and `#` comments are skipped."""
    data = {}
    for line_number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition(":")
        if not sep:
            raise ValueError(f"line {line_number}: expected `key: value`, got {line!r}")
        data[key.strip()] = value.strip()
    return data
