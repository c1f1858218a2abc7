"""Dataset, config, report and log files.

Datasets come in two formats chosen by extension:

``.odmd.jsonl``
    One self-describing record per line and nothing else, so a set of N
    examples is an N-line file. Floats are written with 17 significant digits.
    The set description ``{"format": "odmd-set", "schema_version": 1, "count",
    "name", "split", "provenance"}`` goes to a ``<path>.set.json`` sidecar;
    without one the set is named after the file.

``.odmd.bin``
    Little-endian. ``b"ODMDBIN\\0"``, u32 schema version, u32 count, u32 header
    length + JSON header, then per record: u32 record length, u32 n, f64 label,
    n*7 f64 (x, y, w, h, CX, CY, CZ), u32 meta length + JSON meta.
"""

import json
import logging
import math
import os
import struct
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from .benchmark import BenchmarkSet, EvalReport, SetSummary
from .config import CameraIntrinsics, GenerationConfig, OdmdModel, TrainConfig
from .errors import ConfigError, InputError, ParseError, VersionError
from .generator import ExampleBatch

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SET_FORMAT = "odmd-set"
SET_SUFFIX = ".set.json"
HEADER_FIELDS = {"format", "schema_version", "count", "name", "split", "provenance"}
BIN_MAGIC = b"ODMDBIN\0"
BOX_FIELDS = ("x", "y", "w", "h")
POSITION_FIELDS = ("CX", "CY", "CZ")


class ObservationRecord(OdmdModel):
    x: float
    y: float
    w: float
    h: float
    CX: float
    CY: float
    CZ: float


class ExampleRecord(OdmdModel):
    schema_version: int
    n: int
    intrinsics: CameraIntrinsics
    observations: List[ObservationRecord]
    label_Z: float
    meta: Optional[Dict[str, Any]] = None


def _num(value: float) -> str:
    return format(float(value), ".17g")


def _meta_json(meta: Optional[Dict[str, Any]]) -> str:
    return json.dumps(meta, sort_keys=True) if meta is not None else "null"


def _record_line(batch: ExampleBatch, k: int, intrinsics_json: str, meta: Optional[Dict[str, Any]]) -> str:
    obs = ",".join(
        "{" + ",".join(f'"{name}":{_num(v)}' for name, v in zip(BOX_FIELDS + POSITION_FIELDS, row)) + "}"
        for row in np.concatenate([batch.boxes[k], batch.positions[k]], axis=1)
    )
    return (f'{{"schema_version":{SCHEMA_VERSION},"n":{batch.n},"intrinsics":{intrinsics_json},'
            f'"observations":[{obs}],"label_Z":{_num(batch.labels[k])},"meta":{_meta_json(meta)}}}')


def _meta_rows(batch: ExampleBatch) -> List[Optional[Dict[str, Any]]]:
    if batch.meta is None:
        return [None] * len(batch)
    return [{k: (v.item() if hasattr(v, "item") else v) for k, v in row.items()}
            for row in batch.meta.to_dict(orient="records")]


def _header(bset: BenchmarkSet) -> Dict[str, Any]:
    return {"format": SET_FORMAT, "schema_version": SCHEMA_VERSION, "count": len(bset),
            "name": bset.name, "split": bset.split, "provenance": bset.provenance}


def write_jsonl(path: str, bset: BenchmarkSet) -> None:
    batch = bset.examples
    intrinsics_json = json.dumps(batch.intrinsics.model_dump(), sort_keys=True)
    with open(path, "w", encoding="utf-8") as f:
        for k, meta in enumerate(_meta_rows(batch)):
            f.write(_record_line(batch, k, intrinsics_json, meta) + "\n")
    with open(path + SET_SUFFIX, "w", encoding="utf-8") as f:
        json.dump(_header(bset), f, sort_keys=True)


def _parse_json(text: str, line: int) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON: {e.msg}", line=line, offset=e.colno) from None


def _parse_record(data: Any, line: int) -> ExampleRecord:
    try:
        record = ExampleRecord.from_dict(data)
    except ParseError as e:
        raise ParseError(str(e), line=line, field=e.field) from None
    except ConfigError as e:
        raise ParseError(str(e), line=line) from None
    if record.schema_version != SCHEMA_VERSION:
        raise VersionError(f"record on line {line} has schema version {record.schema_version}, "
                           f"expected {SCHEMA_VERSION}")
    if len(record.observations) != record.n:
        raise ParseError(f"record declares n={record.n} but has {len(record.observations)} observations",
                         line=line, field="observations")
    return record


def _check_header(header: Any, allowed=HEADER_FIELDS, line: Optional[int] = None,
                  offset: Optional[int] = None) -> Dict[str, Any]:
    if not isinstance(header, dict) or "schema_version" not in header:
        raise ParseError("dataset header must be a JSON object with a schema_version", line=line, offset=offset)
    if header.get("schema_version") != SCHEMA_VERSION:
        raise VersionError(f"dataset schema version {header.get('schema_version')} is not {SCHEMA_VERSION}")
    unknown = set(header) - set(allowed)
    if unknown:
        field = sorted(unknown)[0]
        raise ParseError(f"Unknown field '{field}' in dataset header", line=line, offset=offset, field=field)
    return header


def _read_set_header(path: str) -> Dict[str, Any]:
    sidecar = path + SET_SUFFIX
    if not os.path.exists(sidecar):
        return {"name": os.path.basename(path).removesuffix(".odmd.jsonl")}
    with open(sidecar, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        header = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid set description {sidecar}: {e.msg}", line=e.lineno, offset=e.colno) from None
    return _check_header(header, line=1)


def _batch_from_records(records: List[ExampleRecord], metas: List[Optional[Dict[str, Any]]]) -> ExampleBatch:
    if not records:
        raise InputError("dataset contains no examples")
    intrinsics = records[0].intrinsics
    n = records[0].n
    for k, record in enumerate(records):
        if record.intrinsics != intrinsics or record.n != n:
            raise InputError(f"example {k} has different intrinsics or n; one set holds one camera and n")
    rows = np.array([[[o.x, o.y, o.w, o.h, o.CX, o.CY, o.CZ] for o in r.observations] for r in records],
                    dtype=np.float64)
    labels = np.array([r.label_Z for r in records], dtype=np.float64)
    meta = pd.DataFrame(metas) if all(m is not None for m in metas) else None
    return ExampleBatch(rows[:, :, :4], rows[:, :, 4:], labels, intrinsics, meta)


def read_jsonl(path: str) -> BenchmarkSet:
    header = _read_set_header(path)
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    records, metas = [], []
    for number, text in enumerate(lines, start=1):
        if not text.strip():
            continue
        record = _parse_record(_parse_json(text, number), number)
        records.append(record)
        metas.append(record.meta)
    if "count" in header and header["count"] != len(records):
        raise ParseError(f"set description announces {header['count']} examples, file has {len(records)}")
    return BenchmarkSet(header.get("name", "custom"), header.get("split", "test"),
                        _batch_from_records(records, metas), header.get("provenance", {}))


def write_bin(path: str, bset: BenchmarkSet) -> None:
    batch = bset.examples
    header = _header(bset)
    header["format"] = "odmd-bin"
    header["intrinsics"] = batch.intrinsics.model_dump()
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    rows = np.concatenate([batch.boxes, batch.positions], axis=2)
    with open(path, "wb") as f:
        f.write(BIN_MAGIC + struct.pack("<III", SCHEMA_VERSION, len(bset), len(header_bytes)) + header_bytes)
        for k, meta in enumerate(_meta_rows(batch)):
            meta_bytes = _meta_json(meta).encode("utf-8")
            body = (struct.pack("<Id", batch.n, batch.labels[k]) + rows[k].astype("<f8").tobytes()
                    + struct.pack("<I", len(meta_bytes)) + meta_bytes)
            f.write(struct.pack("<I", len(body)) + body)


def read_bin(path: str) -> BenchmarkSet:
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != BIN_MAGIC:
        raise ParseError("not an ODMD binary dataset (bad magic)", offset=0)
    offset = 8

    def take(size: int) -> bytes:
        nonlocal offset
        if offset + size > len(data):
            raise ParseError(f"binary dataset truncated (needed {size} bytes)", offset=offset)
        chunk = data[offset:offset + size]
        offset += size
        return chunk

    version, count, header_len = struct.unpack("<III", take(12))
    if version != SCHEMA_VERSION:
        raise VersionError(f"dataset schema version {version} is not {SCHEMA_VERSION}")
    try:
        header = json.loads(take(header_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ParseError(f"invalid binary dataset header: {e}", offset=20) from None
    header = _check_header(header, HEADER_FIELDS | {"intrinsics"}, offset=20)
    intrinsics = CameraIntrinsics.from_dict(header.get("intrinsics", {}))

    boxes, positions, labels, metas = [], [], [], []
    for _ in range(count):
        (length,) = struct.unpack("<I", take(4))
        start = offset
        n, label = struct.unpack("<Id", take(12))
        values = np.frombuffer(take(8 * 7 * n), dtype="<f8").reshape(n, 7).astype(np.float64)
        (meta_len,) = struct.unpack("<I", take(4))
        try:
            metas.append(json.loads(take(meta_len).decode("utf-8")))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ParseError(f"invalid record meta: {e}", offset=offset) from None
        if offset - start != length:
            raise ParseError(f"record length {length} does not match its contents", offset=start)
        boxes.append(values[:, :4])
        positions.append(values[:, 4:])
        labels.append(label)
    if offset != len(data):
        raise ParseError(f"{len(data) - offset} trailing bytes after {count} records", offset=offset)
    if not labels:
        raise InputError("dataset contains no examples")
    if len({b.shape[0] for b in boxes}) != 1:
        raise InputError("examples in one set must share n")
    meta = pd.DataFrame(metas) if all(m is not None for m in metas) else None
    batch = ExampleBatch(np.stack(boxes), np.stack(positions), np.array(labels), intrinsics, meta)
    return BenchmarkSet(header.get("name", "custom"), header.get("split", "test"), batch,
                        header.get("provenance", {}))


def write_dataset(path: str, bset: BenchmarkSet) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    if path.endswith(".odmd.bin"):
        write_bin(path, bset)
    elif path.endswith(".odmd.jsonl"):
        write_jsonl(path, bset)
    else:
        raise InputError(f"dataset path must end in .odmd.jsonl or .odmd.bin: {path}")
    logger.info(f"Wrote {len(bset)} examples to {path}")


def read_dataset(path: str) -> BenchmarkSet:
    if not os.path.exists(path):
        raise InputError(f"dataset not found: {path}")
    if path.endswith(".odmd.bin"):
        bset = read_bin(path)
    elif path.endswith(".odmd.jsonl"):
        bset = read_jsonl(path)
    else:
        raise InputError(f"dataset path must end in .odmd.jsonl or .odmd.bin: {path}")
    logger.info(f"Read {len(bset)} examples ({bset.name}/{bset.split}) from {path}")
    return bset


def read_config(path: str) -> Union[GenerationConfig, TrainConfig]:
    """A GenerationConfig, or a TrainConfig when the object has a ``gen`` field"""
    if not os.path.exists(path):
        raise InputError(f"config not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid config JSON: {e.msg}", line=e.lineno, offset=e.colno) from None
    if isinstance(data, dict) and "gen" in data:
        return TrainConfig.from_dict(data)
    return GenerationConfig.from_dict(data)


def write_config(path: str, cfg: Union[GenerationConfig, TrainConfig]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(cfg.model_dump(mode="json"), f, indent=2)


def _clean(value: float) -> Optional[float]:
    return None if value is None or (isinstance(value, float) and math.isnan(value)) else float(value)


def report_dict(report: EvalReport) -> Dict[str, Any]:
    records = report.records
    return {
        "schema_version": SCHEMA_VERSION,
        "method": report.method,
        "all_sets_aggregate": _clean(report.all_sets_aggregate),
        "aggregate_rule": "unweighted mean of per-set mean percent errors",
        "sets": [{"name": s.name, "split": s.split, "count": s.count, "failures": s.failures,
                  "percent_error": {k: _clean(v) for k, v in s.percent.items()},
                  "absolute_error": {k: _clean(v) for k, v in s.absolute.items()}} for s in report.sets],
        "records": [{"set": r.set, "index": int(r.index), "label_Z": float(r.label_z),
                     "prediction": _clean(r.prediction), "ok": bool(r.ok),
                     "abs_error": _clean(r.abs_error), "pct_error": _clean(r.pct_error)}
                    for r in records.itertuples(index=False)],
    }


def write_report(path: str, report: EvalReport) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report_dict(report), f, indent=2)
    logger.info(f"Wrote report {path}")


def read_report(path: str) -> EvalReport:
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid report JSON: {e.msg}", line=e.lineno, offset=e.colno) from None
    if data.get("schema_version") != SCHEMA_VERSION:
        raise VersionError(f"report schema version {data.get('schema_version')} is not {SCHEMA_VERSION}")

    def stats(block):
        return {k: (float("nan") if v is None else v) for k, v in block.items()}

    sets = [SetSummary(s["name"], s["split"], s["count"], s["failures"], stats(s["percent_error"]),
                       stats(s["absolute_error"])) for s in data["sets"]]
    records = pd.DataFrame(data["records"]).rename(columns={"label_Z": "label_z"})
    records = records.astype({"prediction": float, "abs_error": float, "pct_error": float})
    aggregate = data["all_sets_aggregate"]
    return EvalReport(data["method"], sets, records, float("nan") if aggregate is None else aggregate)


def write_plotdata(path: str, report: EvalReport) -> None:
    """Per-example error vs depth in CSV (label_Z, prediction, abs_error, pct_error)"""
    frame = report.records[report.records["ok"]]
    frame = frame[["set", "label_z", "prediction", "abs_error", "pct_error"]].rename(columns={"label_z": "label_Z"})
    frame.to_csv(path, index=False, float_format="%.17g")
    logger.info(f"Wrote plot data {path} ({len(frame)} rows)")


def write_train_log(path: str, log: pd.DataFrame) -> None:
    """Training log as line-delimited JSON (iteration, loss, val_error)"""
    with open(path, "w", encoding="utf-8") as f:
        for row in log.to_dict(orient="records"):
            f.write(json.dumps({"iteration": int(row["iteration"]), "loss": float(row["loss"]),
                                "val_error": float(row["val_error"])}) + "\n")
    logger.info(f"Wrote training log {path} ({len(log)} rows)")
