"""Reading and writing event streams, cumulants, fitted results and model configs.

Floats are written with ``repr`` so every value reads back bit-for-bit, and JSON
documents use a fixed key order; writing the same object twice gives identical bytes.
"""

import csv
import enum
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import NonmonotonicAfterRepair, ParseError
from .model import CumulantSet, CumulantSource, EventStream, HawkesModel

log = logging.getLogger(__name__)

LONG_HEADER = ("component_id", "timestamp_seconds")
RESULT_FORMAT = "nphc-result/1"
CUMULANT_FORMAT = "nphc-cumulants/1"


def _version() -> str:
    from . import __version__

    return __version__


class StreamFormat(str, enum.Enum):
    CSV_LONG = "csv_long"
    COLUMNS = "columns"


@dataclass
class ReadReport:
    streams: List[EventStream]
    repairs: List[int]

    @property
    def total_repairs(self) -> int:
        return int(sum(self.repairs))


def _parse_float(text: str, line: int, path) -> float:
    try:
        x = float(text)
    except ValueError:
        raise ParseError(f"not a number: {text!r}", line=line, path=path) from None
    if not math.isfinite(x):
        raise ParseError(f"timestamp must be finite: {text!r}", line=line, path=path)
    if x < 0:
        raise ParseError(f"timestamp must be >= 0: {text!r}", line=line, path=path)
    return x


def _read_directives(path) -> Dict[str, str]:
    """``# key=value`` lines at the top of a stream file."""
    out = {}
    with open(path, newline="") as fh:
        for raw in fh:
            s = raw.strip()
            if not s:
                continue
            if not s.startswith("#"):
                break
            body = s[1:].strip()
            if "=" in body:
                key, value = body.split("=", 1)
                out[key.strip()] = value.strip()
    return out


def _data_rows(fh):
    """csv rows with comment and blank lines skipped, paired with 1-based line numbers."""
    reader = csv.reader(fh)
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if row[0].lstrip().startswith("#"):
            continue
        yield line, [c.strip() for c in row]


def _parse_long(path) -> Tuple[Dict[int, List[float]], Optional[List[str]]]:
    by_comp: Dict[int, List[float]] = {}
    with open(path, newline="") as fh:
        first = True
        for line, row in _data_rows(fh):
            if first:
                first = False
                if tuple(c.lower() for c in row) == LONG_HEADER:
                    continue
            if len(row) != 2:
                raise ParseError(f"expected 2 fields, got {len(row)}", line=line, path=path)
            try:
                comp = int(row[0])
            except ValueError:
                raise ParseError(f"component id must be an integer: {row[0]!r}", line=line, path=path) from None
            if comp < 0:
                raise ParseError(f"component id must be >= 0: {comp}", line=line, path=path)
            by_comp.setdefault(comp, []).append(_parse_float(row[1], line, path))
    return by_comp, None


def _parse_columns(path) -> Tuple[Dict[int, List[float]], Optional[List[str]]]:
    by_comp: Dict[int, List[float]] = {}
    labels = None
    with open(path, newline="") as fh:
        for line, row in _data_rows(fh):
            if labels is None:
                labels = row
                by_comp = {k: [] for k in range(len(labels))}
                continue
            if len(row) > len(labels):
                raise ParseError(f"row has {len(row)} fields but header has {len(labels)}", line=line, path=path)
            for k, cell in enumerate(row):
                if cell:
                    by_comp[k].append(_parse_float(cell, line, path))
    if labels is None:
        raise ParseError("no header row", path=path)
    return by_comp, labels


def repair_duplicates(times: np.ndarray) -> Tuple[np.ndarray, int]:
    """Sort and nudge repeated timestamps up to the next representable float."""
    t = np.sort(np.asarray(times, dtype=float))
    repairs = 0
    for k in range(1, t.size):
        if t[k] <= t[k - 1]:
            t[k] = np.nextafter(t[k - 1], np.inf)
            repairs += 1
    return t, repairs


def read_stream_file(
    path,
    fmt: StreamFormat = StreamFormat.CSV_LONG,
    T_override: Optional[float] = None,
    dim: Optional[int] = None,
    labels: Optional[Sequence[str]] = None,
) -> Tuple[EventStream, int]:
    """Parse one realization; returns the stream and the number of repaired duplicates."""
    fmt = StreamFormat(fmt)
    directives = _read_directives(path)
    if fmt is StreamFormat.CSV_LONG:
        by_comp, file_labels = _parse_long(path)
    else:
        by_comp, file_labels = _parse_columns(path)
    if not any(by_comp.values()):
        raise ParseError("file contains no events", path=path)

    if labels is None:
        labels = file_labels
        if labels is None and "labels" in directives:
            labels = [x.strip() for x in directives["labels"].split(",")]
    if dim is None:
        if labels is not None:
            dim = len(labels)
        elif "dim" in directives:
            dim = int(directives["dim"])
        else:
            dim = max(by_comp) + 1
    if by_comp and max(by_comp) >= dim:
        raise ParseError(f"component id {max(by_comp)} outside [0, {dim})", path=path)

    events = []
    repairs = 0
    for k in range(dim):
        t, n = repair_duplicates(np.asarray(by_comp.get(k, []), dtype=float))
        repairs += n
        events.append(t)
    if repairs:
        log.info("%s: nudged %d duplicate timestamps", path, repairs)

    t_max = max(float(e[-1]) for e in events if e.size)
    if T_override is not None:
        T = float(T_override)
    elif "horizon_seconds" in directives:
        T = float(directives["horizon_seconds"])
    else:
        T = float(math.ceil(t_max))
    if T <= 0:
        T = float(np.nextafter(t_max, np.inf)) if t_max > 0 else 1.0
    if t_max > T:
        raise NonmonotonicAfterRepair(f"{path}: timestamp {t_max!r} exceeds the horizon {T!r}")
    for e in events:
        if e.size > 1 and not np.all(np.diff(e) > 0):
            raise NonmonotonicAfterRepair(f"{path}: timestamps are not strictly increasing after repair")
    return EventStream(T, events, labels=tuple(labels) if labels is not None else None), repairs


def read_streams_report(files, T_override=None, fmt=StreamFormat.CSV_LONG, labels=None) -> ReadReport:
    if isinstance(files, (str, os.PathLike)):
        files = [files]
    files = list(files)
    if not files:
        raise ParseError("no input files")
    # find a common dimension first so files missing the last component still agree
    dim = None
    if labels is not None:
        dim = len(labels)
    else:
        dims = []
        for path in files:
            directives = _read_directives(path)
            if "dim" in directives:
                dims.append(int(directives["dim"]))
        if dims:
            if len(set(dims)) != 1:
                raise ParseError(f"inconsistent dimensions across files: {sorted(set(dims))}")
            dim = dims[0]
    streams, repairs = [], []
    for path in files:
        s, n = read_stream_file(path, fmt, T_override, dim=dim, labels=labels)
        streams.append(s)
        repairs.append(n)
    d = {s.dim for s in streams}
    if len(d) > 1:
        if dim is None and fmt is StreamFormat.CSV_LONG:
            # no declared dimension: pad to the widest file
            dim = max(d)
            streams = [read_stream_file(p, fmt, T_override, dim=dim)[0] for p in files]
        else:
            raise ParseError(f"inconsistent dimensions across files: {sorted(d)}")
    return ReadReport(streams, repairs)


def read_streams(files, T_override=None, fmt=StreamFormat.CSV_LONG, labels=None) -> List[EventStream]:
    """Read one EventStream per file (each file is one realization)."""
    return read_streams_report(files, T_override, fmt, labels).streams


def write_streams(stream: EventStream, path, fmt: StreamFormat = StreamFormat.CSV_LONG):
    """Write a realization; the horizon and labels travel in ``#`` directives."""
    fmt = StreamFormat(fmt)
    with open(path, "w", newline="") as fh:
        fh.write(f"# horizon_seconds={float(stream.duration)!r}\n")
        fh.write(f"# dim={stream.dim}\n")
        if stream.labels is not None and fmt is StreamFormat.CSV_LONG:
            fh.write("# labels=" + ",".join(stream.labels) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        if fmt is StreamFormat.CSV_LONG:
            w.writerow(LONG_HEADER)
            comp = np.concatenate([np.full(e.size, k) for k, e in enumerate(stream.events)])
            t = np.concatenate(stream.events)
            order = np.lexsort((comp, t))
            for k in order:
                w.writerow((int(comp[k]), repr(float(t[k]))))
        else:
            labels = stream.labels or tuple(str(k) for k in range(stream.dim))
            w.writerow(labels)
            n = max((e.size for e in stream.events), default=0)
            for r in range(n):
                w.writerow([repr(float(e[r])) if r < e.size else "" for e in stream.events])


def _enc(x):
    """JSON-safe value; non-finite floats become strings."""
    if isinstance(x, np.ndarray):
        return [_enc(v) for v in x.tolist()]
    if isinstance(x, (list, tuple)):
        return [_enc(v) for v in x]
    if isinstance(x, dict):
        return {str(k): _enc(v) for k, v in x.items()}
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, enum.Enum):
        return x.value
    return x


def _dec_float(x) -> float:
    if isinstance(x, str):
        return float(x)
    return float(x)


def _dec_array(x) -> np.ndarray:
    return np.vectorize(_dec_float, otypes=[float])(np.asarray(x, dtype=object)) if len(x) else np.zeros(0)


def dumps(doc: dict) -> str:
    return json.dumps(_enc(doc), indent=2, allow_nan=False) + "\n"


def _write_text(path, text: str):
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def _read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno, path=path) from None


def cumulants_to_dict(cs: CumulantSet, labels=None) -> dict:
    return {
        "format": CUMULANT_FORMAT,
        "tool_version": _version(),
        "dim": cs.dim,
        "labels": list(labels) if labels is not None else None,
        "source": cs.source.value,
        "H_seconds": cs.H,
        "duration_seconds": cs.duration,
        "Lambda_per_second": cs.Lambda,
        "C": cs.C,
        "Kc": cs.Kc,
        "meta": dict(sorted(cs.meta.items())),
    }


def cumulants_from_dict(doc: dict) -> CumulantSet:
    if doc.get("format") != CUMULANT_FORMAT:
        raise ParseError(f"not a cumulants document (format={doc.get('format')!r})")
    return CumulantSet(
        Lambda=_dec_array(doc["Lambda_per_second"]),
        C=_dec_array(doc["C"]),
        Kc=_dec_array(doc["Kc"]),
        H=_dec_float(doc["H_seconds"]),
        source=CumulantSource(doc["source"]),
        duration=_dec_float(doc["duration_seconds"]),
        meta=dict(doc.get("meta", {})),
    )


def write_cumulants(cs: CumulantSet, path, labels=None):
    _write_text(path, dumps(cumulants_to_dict(cs, labels)))


def read_cumulants(path) -> Tuple[CumulantSet, Optional[List[str]]]:
    doc = _read_json(path)
    try:
        return cumulants_from_dict(doc), doc.get("labels")
    except (KeyError, ValueError, TypeError) as exc:
        raise ParseError(f"malformed cumulants document: {exc}", path=path) from None


_RESULT_KEYS = (
    "format", "tool_version", "dim", "labels", "H_seconds", "kappa",
    "Lambda_per_second", "C", "Kc", "R", "G", "Psi", "mu_per_second",
    "spectral_radius", "largest_singular_value", "final_loss", "converged",
    "restart_index", "iterations", "nonstationary", "negative_mu",
    "alternative_optima", "config", "extra",
)


@dataclass
class ResultFile:
    """Serializable record of one fit."""

    dim: int
    labels: Optional[List[str]]
    H_seconds: float
    kappa: float
    Lambda_per_second: np.ndarray
    C: np.ndarray
    Kc: np.ndarray
    R: np.ndarray
    G: np.ndarray
    Psi: np.ndarray
    mu_per_second: np.ndarray
    spectral_radius: float
    largest_singular_value: float
    final_loss: float
    converged: bool
    restart_index: int
    iterations: int
    nonstationary: bool = False
    negative_mu: bool = False
    alternative_optima: List[int] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    tool_version: str = ""

    @classmethod
    def from_result(cls, result, labels=None, config=None, extra=None) -> "ResultFile":
        cs = result.cumulants
        return cls(
            dim=int(result.G_hat.shape[0]),
            labels=list(labels) if labels is not None else None,
            H_seconds=float(cs.H) if cs is not None else math.nan,
            kappa=float(result.kappa),
            Lambda_per_second=np.array(result.Lambda_hat),
            C=np.array(cs.C) if cs is not None else np.full_like(result.G_hat, np.nan),
            Kc=np.array(cs.Kc) if cs is not None else np.full_like(result.G_hat, np.nan),
            R=np.array(result.R_hat),
            G=np.array(result.G_hat),
            Psi=np.array(result.Psi_hat),
            mu_per_second=np.array(result.mu_hat),
            spectral_radius=float(result.spectral_radius),
            largest_singular_value=float(result.largest_singular_value),
            final_loss=float(result.final_loss),
            converged=bool(result.converged),
            restart_index=int(result.restart_index),
            iterations=int(result.iterations),
            nonstationary=bool(result.nonstationary),
            negative_mu=bool(result.negative_mu),
            alternative_optima=[int(i) for i in result.alternative_optima],
            config=dict(config or {}),
            extra=dict(extra or {}),
            tool_version=_version(),
        )

    def to_dict(self) -> dict:
        doc = {"format": RESULT_FORMAT}
        for key in _RESULT_KEYS[1:]:
            doc[key] = getattr(self, key)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ResultFile":
        if doc.get("format") != RESULT_FORMAT:
            raise ParseError(f"not a result document (format={doc.get('format')!r})")
        arrays = {"Lambda_per_second", "C", "Kc", "R", "G", "Psi", "mu_per_second"}
        floats = {"H_seconds", "kappa", "spectral_radius", "largest_singular_value", "final_loss"}
        kw = {}
        for key in _RESULT_KEYS[1:]:
            v = doc[key]
            if key in arrays:
                v = _dec_array(v)
            elif key in floats:
                v = _dec_float(v)
            kw[key] = v
        return cls(**kw)

    def to_json(self) -> str:
        return dumps(self.to_dict())

    def write(self, path):
        _write_text(path, self.to_json())

    @classmethod
    def read(cls, path) -> "ResultFile":
        doc = _read_json(path)
        try:
            return cls.from_dict(doc)
        except (KeyError, ValueError, TypeError) as exc:
            raise ParseError(f"malformed result document: {exc}", path=path) from None

    def cumulant_set(self) -> CumulantSet:
        return CumulantSet(self.Lambda_per_second, self.C, self.Kc, H=self.H_seconds)


def matrix_tsv(M, labels=None) -> str:
    """Labelled TSV: header row of column labels, then one labelled row per matrix row."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    rows_l = list(labels) if labels is not None else [str(i) for i in range(M.shape[0])]
    cols_l = list(labels) if labels is not None and len(labels) == M.shape[1] else [str(j) for j in range(M.shape[1])]
    lines = ["\t".join([""] + cols_l)]
    for lab, row in zip(rows_l, M):
        lines.append("\t".join([lab] + [repr(float(x)) for x in row]))
    return "\n".join(lines) + "\n"


def write_matrix_tsv(M, path, labels=None):
    _write_text(path, matrix_tsv(M, labels))


def read_matrix_tsv(path) -> Tuple[np.ndarray, List[str]]:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise ParseError("empty matrix file", path=path)
    labels = lines[0].split("\t")[1:]
    rows = []
    for n, ln in enumerate(lines[1:], start=2):
        parts = ln.split("\t")
        try:
            rows.append([float(x) for x in parts[1:]])
        except ValueError:
            raise ParseError("non-numeric matrix entry", line=n, path=path) from None
    return np.array(rows), labels


def model_config_to_dict(model: HawkesModel, horizon_seconds=None, seed=None, labels=None, extra=None) -> dict:
    doc = model.to_dict()
    if horizon_seconds is not None:
        doc["horizon_seconds"] = float(horizon_seconds)
    if seed is not None:
        doc["seed"] = int(seed)
    if labels is not None:
        doc["labels"] = list(labels)
    for k, v in (extra or {}).items():
        doc[k] = v
    return doc


def write_model_config(model: HawkesModel, path, **kw):
    _write_text(path, dumps(model_config_to_dict(model, **kw)))


def read_model_config(path) -> Tuple[HawkesModel, dict]:
    """Returns the model and the full document (horizon, seed, labels, ...)."""
    doc = _read_json(path)
    try:
        return HawkesModel.from_dict(doc), doc
    except (KeyError, ValueError, TypeError) as exc:
        raise ParseError(f"malformed model config: {exc}", path=path) from None
