"""JSON file helpers shared by the descriptor, device pool, LUT, model and report formats."""
import json

from .errors import ParseError

__all__ = ["read_json", "write_json"]


def write_json(data, path, indent=2):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=indent)
        f.write("\n")


def read_json(path):
    """Load a JSON file, raising ParseError (with the line) on malformed content."""
    with open(path, encoding="utf-8") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as err:
            raise ParseError(f"{path}: {err.msg}", line=err.lineno)
