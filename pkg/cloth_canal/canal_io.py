import csv
import json
import logging
from collections.abc import Iterable, Iterator, Mapping, Sequence
from pathlib import Path
from typing import Any

import numpy as np

logger = logging.getLogger(__name__)

PathLike = str | Path


class CanalIO:
    """Reads and writes the text, JSON and array files used across the package.

    JSON is written canonically (sorted keys, compact separators, shortest
    round-trip float repr), so identical content always produces identical
    bytes and floats load back bit-exactly.
    """

    def __init__(self, encoding: str = "utf-8", create_parents: bool = True):
        """Initialize the IO layer

        Args:
            encoding: Text encoding for every file this instance touches.
            create_parents: Create missing parent directories before writing.
        """
        self.encoding = encoding
        self.create_parents = create_parents

    @staticmethod
    def dumps(obj: Any) -> str:
        """Canonical single-line JSON for ``obj``."""
        return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)

    def _prepare(self, path: PathLike) -> Path:
        path = Path(path)
        if self.create_parents:
            path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def read_text(self, source: PathLike) -> str:
        logger.debug(f"Reading {source}")
        return Path(source).read_text(encoding=self.encoding)

    def write_text(self, dest: PathLike, text: str) -> None:
        path = self._prepare(dest)
        path.write_text(text, encoding=self.encoding)
        logger.info(f"Wrote {path}")

    def read_json(self, source: PathLike) -> Any:
        text = self.read_text(source)
        try:
            return json.loads(text)
        except json.JSONDecodeError as err:
            raise ValueError(f"{source} is not valid JSON: {err}") from err

    def write_json(self, dest: PathLike, obj: Any, indent: int | None = None) -> None:
        if indent is None:
            text = self.dumps(obj)
        else:
            text = json.dumps(obj, sort_keys=True, indent=indent, allow_nan=False)
        self.write_text(dest, text + "\n")

    def iter_jsonl(self, source: PathLike) -> Iterator[dict[str, Any]]:
        """Iterator that yields one dictionary per non-empty line of a JSON lines
        file.

        Raises:
            ValueError: a line does not hold a JSON object.
        """
        with open(source, encoding=self.encoding) as f:
            for number, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as err:
                    raise ValueError(f"{source}:{number}: {err}") from err
                if not isinstance(record, dict):
                    raise ValueError(f"{source}:{number}: expected a JSON object")
                yield record

    def write_jsonl(self, dest: PathLike, records: Iterable[Any]) -> int:
        """Writes one canonical JSON document per line and returns the count."""
        path = self._prepare(dest)
        count = 0
        with open(path, "w", encoding=self.encoding, newline="\n") as f:
            for record in records:
                f.write(self.dumps(record) + "\n")
                count += 1
        logger.info(f"Wrote {count} records to {path}")
        return count

    def write_csv(
        self,
        dest: PathLike,
        fieldnames: Sequence[str],
        rows: Iterable[Mapping[str, Any]],
    ) -> None:
        path = self._prepare(dest)
        with open(path, "w", encoding=self.encoding, newline="") as f:
            writer = csv.DictWriter(f, fieldnames=list(fieldnames))
            writer.writeheader()
            writer.writerows(rows)
        logger.info(f"Wrote {path}")

    def read_csv(self, source: PathLike) -> list[dict[str, str]]:
        with open(source, encoding=self.encoding, newline="") as f:
            return list(csv.DictReader(f))

    def write_npz(self, dest: PathLike, **arrays: np.ndarray[Any, Any]) -> None:
        path = self._prepare(dest)
        np.savez(path, **arrays)  # type: ignore[arg-type]
        logger.info(f"Wrote {path}")

    def read_npz(self, source: PathLike) -> dict[str, np.ndarray[Any, Any]]:
        with np.load(source) as data:
            return {key: data[key] for key in data.files}
