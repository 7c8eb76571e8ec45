"""
File I/O of the CLI: 8-bit PGM/PPM images and mask bitmaps, 1D signals as CSV, the per-step
trace CSV and experiment reports (JSON plus one CSV per table/curve).
"""

from __future__ import annotations

import csv
import json
import math
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from dpps_restore.config import logger
from dpps_restore.errors import ImageFormatError, OutputWriteError
from dpps_restore.fields import SignalField, as_signal_field
from dpps_restore.sampler import RunTrace
from dpps_restore.services.experiment_service import ExperimentReport

SUPPORTED_MAXVAL = 255
_CHANNELS = {b"P5": 1, b"P6": 3}
_HEADER_PEEK_BYTES = 1024
TRACE_COLUMNS = ("t", "residual", "n_candidates", "selected_index", "min_distance", "mean_distance")


@contextmanager
def _writing(path: Path) -> Iterator[None]:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        yield
    except OSError as exc:
        raise OutputWriteError(f"Falha ao gravar '{path}'. Erro: {exc}") from exc


def _read_header(raw: bytes) -> tuple[bytes, int, int, int, int]:
    """Returns (magic, width, height, maxval, payload offset) of a binary netpbm header."""
    tokens: list[bytes] = []
    position = 0
    while len(tokens) < 4:
        if position >= len(raw):
            raise ImageFormatError("Cabeçalho PGM/PPM incompleto.")
        current = raw[position : position + 1]
        if current == b"#":
            end_of_line = raw.find(b"\n", position)
            position = len(raw) if end_of_line < 0 else end_of_line + 1
        elif current.isspace():
            position += 1
        else:
            start = position
            while position < len(raw) and not raw[position : position + 1].isspace() and raw[position : position + 1] != b"#":
                position += 1
            tokens.append(raw[start:position])
    # exactly one whitespace byte separates maxval from the payload
    position += 1

    magic = tokens[0]
    if magic not in _CHANNELS:
        raise ImageFormatError(f"Formato '{magic.decode(errors='replace')}' não suportado; use P5 (PGM) ou P6 (PPM).")
    try:
        width, height, maxval = (int(token) for token in tokens[1:])
    except ValueError as exc:
        raise ImageFormatError("Cabeçalho PGM/PPM malformado.") from exc
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"Dimensões inválidas no cabeçalho: {width}x{height}.")
    if maxval != SUPPORTED_MAXVAL:
        raise ImageFormatError(f"maxval {maxval} não suportado; apenas 8 bits (maxval {SUPPORTED_MAXVAL}).")
    return magic, width, height, maxval, position


def read_image(path: str | Path) -> SignalField:
    """PGM -> [H, W], PPM -> [H, W, 3], values mapped to [0, 1]."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ImageFormatError(f"Falha ao ler '{path}'. Erro: {exc}") from exc

    magic, width, height, _, offset = _read_header(raw[:_HEADER_PEEK_BYTES])
    expected = width * height * _CHANNELS[magic]
    if len(raw) - offset < expected:
        raise ImageFormatError(f"Payload truncado em '{path}': {len(raw) - offset} de {expected} bytes.")

    try:
        with Image.open(path) as image:
            pixels = np.asarray(image, dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageFormatError(f"Imagem inválida em '{path}'. Erro: {exc}") from exc
    return pixels.astype(np.float64) / SUPPORTED_MAXVAL


def quantize(field: SignalField) -> np.ndarray:
    """Clamp to [0, 1] and round to the nearest 8-bit level."""
    return np.rint(np.clip(np.asarray(field, dtype=np.float64), 0.0, 1.0) * SUPPORTED_MAXVAL).astype(np.uint8)


def write_image(path: str | Path, field: SignalField) -> Path:
    field = np.asarray(field, dtype=np.float64)
    if field.ndim == 3 and field.shape[2] == 1:
        field = field[..., 0]
    if not (field.ndim == 2 or (field.ndim == 3 and field.shape[2] == 3)):
        raise ImageFormatError(f"Apenas [H, W] (PGM) ou [H, W, 3] (PPM) podem ser gravados (recebido {field.shape}).")
    path = Path(path)
    with _writing(path):
        Image.fromarray(quantize(field)).save(path, format="PPM")
    return path


def write_mask(path: str | Path, mask: np.ndarray) -> Path:
    """0 = dropped, 255 = kept."""
    return write_image(path, np.asarray(mask, dtype=bool).astype(np.float64))


def read_mask(path: str | Path) -> np.ndarray:
    pixels = read_image(path)
    if pixels.ndim != 2:
        raise ImageFormatError(f"Máscara deve ser PGM em tons de cinza (recebido shape {pixels.shape}).")
    return pixels >= 0.5


def write_signal_csv(path: str | Path, field: SignalField) -> Path:
    path = Path(path)
    with _writing(path), path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(("index", "value"))
        writer.writerows((index, repr(float(value))) for index, value in enumerate(np.ravel(field)))
    return path


def read_signal_csv(path: str | Path) -> SignalField:
    try:
        with Path(path).open(newline="", encoding="utf-8") as handle:
            return as_signal_field([float(row["value"]) for row in csv.DictReader(handle)])
    except (OSError, KeyError, ValueError) as exc:
        raise ImageFormatError(f"CSV de sinal inválido em '{path}'. Erro: {exc}") from exc


def read_reference(path: str | Path) -> SignalField:
    return read_signal_csv(path) if Path(path).suffix.lower() == ".csv" else read_image(path)


def write_estimate(out_dir: str | Path, field: SignalField, stem: str = "estimate") -> Path:
    """1D signals go to CSV, images to PGM/PPM."""
    out_dir = Path(out_dir)
    if np.ndim(field) == 1:
        return write_signal_csv(out_dir / f"{stem}.csv", field)
    suffix = "ppm" if np.ndim(field) == 3 and np.shape(field)[2] == 3 else "pgm"
    return write_image(out_dir / f"{stem}.{suffix}", field)


def _cell(value: Any) -> Any:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return int(value)
    return value


def write_csv(path: str | Path, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    with _writing(path), path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows([_cell(value) for value in row] for row in rows)
    return path


def write_trace_csv(path: str | Path, trace: RunTrace) -> Path:
    """Header `t,residual,n_candidates,selected_index,min_distance,mean_distance[,mu_error_ref]`."""
    with_reference = bool(trace.per_step) and all(record.mu_error_ref is not None for record in trace.per_step)
    columns = TRACE_COLUMNS + (("mu_error_ref",) if with_reference else ())
    rows = (
        (
            record.t,
            record.residual,
            record.n_candidates,
            record.selected_index,
            record.min_distance,
            record.mean_distance,
        )
        + ((record.mu_error_ref,) if with_reference else ())
        for record in trace.per_step
    )
    return write_csv(path, columns, rows)


def json_safe(value: Any) -> Any:
    """Non-finite floats become the strings "inf", "-inf" and "nan"; numpy scalars become Python ones."""
    if isinstance(value, dict):
        return {str(key): json_safe(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(item) for item in value]
    if isinstance(value, np.ndarray):
        return json_safe(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    return value


def write_json(path: str | Path, payload: dict[str, Any]) -> Path:
    path = Path(path)
    with _writing(path):
        path.write_text(json.dumps(json_safe(payload), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def _table(rows: Sequence[dict[str, Any]]) -> tuple[list[str], list[list[Any]]]:
    columns: list[str] = []
    for row in rows:
        columns.extend(key for key in row if key not in columns)
    return columns, [[row.get(column, "") for column in columns] for row in rows]


def write_report(report: ExperimentReport, out_dir: str | Path) -> list[Path]:
    """`<name>.json` plus `<name>_per_seed.csv` and one `<name>_<curve>.csv` per curve."""
    out_dir = Path(out_dir)
    csv_paths = [write_csv(out_dir / f"{report.name}_per_seed.csv", *_table(report.per_seed))]
    for curve_name, curve_rows in report.curves.items():
        csv_paths.append(write_csv(out_dir / f"{report.name}_{curve_name}.csv", *_table(curve_rows)))
    report.trace_files = [path.name for path in csv_paths]
    json_path = write_json(out_dir / f"{report.name}.json", report.to_dict())
    logger.info("Relatório '%s' gravado em %s (%s arquivos CSV).", report.name, out_dir, len(csv_paths))
    return [json_path, *csv_paths]
