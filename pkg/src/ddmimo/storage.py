"""On-disk formats: dataset containers, checkpoints, DDNet bundles, reports, logs.

Dataset container (``.ddmd``), all little-endian::

    magic b"DDMD" | u32 version | u32 n_t | u64 count
    per sample: u32 n_r | f64 rho | f64 snr_db | f64 sigma2
                | f64[2 n_r] y | f64[2 n_r * 2 n_t] H (row major) | f64[2 n_t] x

plus a ``.json`` sidecar holding the generating config, seed and provenance.

Route container (``.ddmr``)::

    magic b"DDMR" | u32 version | u32 n_t | u64 count
    per sample: u8 label | f64 n_r | f64 sigma2 | f64 snr_db | f64 be_id | f64 be_oa
                | f64[2 n_t * 2 n_t] H'H

Checkpoint: ``<stem>.bin`` with every tensor flattened in manifest order as
little-endian f64, and ``<stem>.json`` with names, shapes, kind, config and
format version.
"""
from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from .channel import ClientProfile, Dataset, Sample
from .ddnet import DDNet, NormStats, RouteNetConfig, RouteSet
from .idetnet import IDetNetConfig
from .numerics import ContractError
from .oampnet import OAMPNetConfig

FORMAT_VERSION = 1
_DATA_MAGIC = b"DDMD"
_ROUTE_MAGIC = b"DDMR"
_HEAD = struct.Struct("<4sIIQ")
_SAMPLE_HEAD = struct.Struct("<Iddd")
_ROUTE_HEAD = struct.Struct("<Bddddd")
F8 = np.dtype("<f8")


class FormatError(ContractError):
    pass


def _profile_dict(p) -> Any:
    return dataclasses.asdict(p) if isinstance(p, ClientProfile) else p


def write_json(path: Path | str, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path: Path | str):
    return json.loads(Path(path).read_text())


# -- detection datasets -------------------------------------------------------------

def dataset_bytes(ds: Dataset) -> bytes:
    if len(ds) == 0:
        raise FormatError("refusing to write an empty dataset")
    n_t = ds[0].n_t
    parts = [_HEAD.pack(_DATA_MAGIC, FORMAT_VERSION, n_t, len(ds))]
    for s in ds:
        if s.n_t != n_t:
            raise FormatError("mixed n_t in one dataset")
        parts.append(_SAMPLE_HEAD.pack(s.n_r, s.rho, s.snr_db, s.sigma2))
        parts.append(np.concatenate([s.y, s.H.ravel(), s.x]).astype(F8).tobytes())
    return b"".join(parts)


def dataset_from_bytes(buf: bytes, provenance="pooled") -> Dataset:
    magic, version, n_t, count = _HEAD.unpack_from(buf, 0)
    if magic != _DATA_MAGIC:
        raise FormatError("not a dataset container")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    off = _HEAD.size
    n = 2 * n_t
    samples = []
    for _ in range(count):
        n_r, rho, snr_db, sigma2 = _SAMPLE_HEAD.unpack_from(buf, off)
        off += _SAMPLE_HEAD.size
        m = 2 * n_r
        width = m + m * n + n
        vals = np.frombuffer(buf, dtype=F8, count=width, offset=off).astype(np.float64)
        off += 8 * width
        samples.append(Sample(y=vals[:m], H=vals[m:m + m * n].reshape(m, n), sigma2=sigma2,
                              x=vals[m + m * n:], n_r=n_r, rho=rho, snr_db=snr_db))
    if off != len(buf):
        raise FormatError("trailing bytes in dataset container")
    return Dataset(samples, provenance=provenance)


def save_dataset(path: Path | str, ds: Dataset, meta: dict | None = None) -> None:
    path = Path(path)
    path.write_bytes(dataset_bytes(ds))
    sidecar = {"format_version": FORMAT_VERSION, "count": len(ds), "n_t": ds[0].n_t,
               "provenance": _profile_dict(ds.provenance)}
    sidecar.update(meta or {})
    write_json(path.with_suffix(".json"), sidecar)


def load_dataset(path: Path | str) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset {path} not found")
    prov = "pooled"
    side = path.with_suffix(".json")
    if side.exists():
        p = read_json(side).get("provenance", "pooled")
        if isinstance(p, dict):
            p = ClientProfile(p["client_id"], tuple(p["rho_subinterval"]), tuple(p["snr_subinterval"]),
                              tuple(p["n_r_range"]))
        prov = p
    return dataset_from_bytes(path.read_bytes(), prov)


# -- route datasets -----------------------------------------------------------------

def save_routes(path: Path | str, routes: RouteSet) -> None:
    n = routes.gram.shape[-1]
    parts = [_HEAD.pack(_ROUTE_MAGIC, FORMAT_VERSION, n // 2, len(routes))]
    snr = routes.snr_db if routes.snr_db is not None else np.full(len(routes), np.nan)
    for i in range(len(routes)):
        parts.append(_ROUTE_HEAD.pack(int(routes.label[i]), float(routes.n_r[i]), float(routes.sigma2[i]),
                                      float(snr[i]), float(routes.be_id[i]), float(routes.be_oa[i])))
        parts.append(routes.gram[i].astype(F8).tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_routes(path: Path | str) -> RouteSet:
    buf = Path(path).read_bytes()
    magic, version, n_t, count = _HEAD.unpack_from(buf, 0)
    if magic != _ROUTE_MAGIC or version != FORMAT_VERSION:
        raise FormatError("not a route container of a supported version")
    n = 2 * n_t
    off = _HEAD.size
    rows, grams = [], []
    for _ in range(count):
        rows.append(_ROUTE_HEAD.unpack_from(buf, off))
        off += _ROUTE_HEAD.size
        grams.append(np.frombuffer(buf, dtype=F8, count=n * n, offset=off).reshape(n, n))
        off += 8 * n * n
    r = np.array(rows, dtype=np.float64).reshape(count, 6)
    return RouteSet(gram=np.array(grams, dtype=np.float64).reshape(count, n, n), sigma2=r[:, 2], n_r=r[:, 1],
                    label=r[:, 0].astype(np.int64), be_id=r[:, 4], be_oa=r[:, 5], snr_db=r[:, 3])


# -- checkpoints --------------------------------------------------------------------

def _config_dict(cfg) -> dict:
    return dataclasses.asdict(cfg) if dataclasses.is_dataclass(cfg) else dict(cfg or {})


def save_checkpoint(stem: Path | str, params: dict, kind: str, config=None, extra: dict | None = None) -> None:
    stem = Path(stem)
    names = list(params)
    arrays = [np.asarray(params[k], dtype=np.float64) for k in names]
    flat = np.concatenate([a.ravel() for a in arrays]) if arrays else np.zeros(0)
    if not np.all(np.isfinite(flat)):
        raise ContractError(f"refusing to save non-finite {kind} parameters")
    stem.with_suffix(".bin").write_bytes(flat.astype(F8).tobytes())
    manifest = {"format_version": FORMAT_VERSION, "kind": kind, "names": names,
                "shapes": [list(a.shape) for a in arrays], "config": _config_dict(config)}
    manifest.update(extra or {})
    write_json(stem.with_suffix(".json"), manifest)


def load_checkpoint(stem: Path | str, kind: str | None = None) -> tuple[dict, dict]:
    stem = Path(stem)
    if not stem.with_suffix(".json").exists():
        raise FileNotFoundError(f"checkpoint {stem} not found")
    manifest = read_json(stem.with_suffix(".json"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {manifest.get('format_version')}")
    if kind is not None and manifest.get("kind") != kind:
        raise FormatError(f"checkpoint holds {manifest.get('kind')!r}, expected {kind!r}")
    flat = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype=F8).astype(np.float64)
    params, off = {}, 0
    for name, shape in zip(manifest["names"], manifest["shapes"]):
        size = int(np.prod(shape)) if shape else 1
        params[name] = flat[off:off + size].reshape(shape)
        off += size
    if off != flat.size:
        raise FormatError("checkpoint size does not match its manifest")
    return params, manifest


def save_ddnet(directory: Path | str, model: DDNet, ro_cfg: RouteNetConfig, extra: dict | None = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_checkpoint(d / "idetnet", model.id_params, "idetnet", model.id_cfg)
    save_checkpoint(d / "oampnet", model.oa_params, "oampnet", model.oa_cfg)
    save_checkpoint(d / "routenet", model.ro_params, "routenet", ro_cfg)
    write_json(d / "normstats.json", model.stats.to_dict())
    manifest = {"format_version": FORMAT_VERSION, "kind": "ddnet",
                "parts": ["idetnet", "oampnet", "routenet", "normstats.json"]}
    manifest.update(extra or {})
    write_json(d / "manifest.json", manifest)


def load_ddnet(directory: Path | str) -> tuple[DDNet, RouteNetConfig, dict]:
    d = Path(directory)
    if not (d / "manifest.json").exists():
        raise FileNotFoundError(f"no DDNet bundle in {d}")
    manifest = read_json(d / "manifest.json")
    if manifest.get("kind") != "ddnet" or manifest.get("format_version") != FORMAT_VERSION:
        raise FormatError("not a supported DDNet bundle")
    idp, idm = load_checkpoint(d / "idetnet", "idetnet")
    oap, oam = load_checkpoint(d / "oampnet", "oampnet")
    rop, rom = load_checkpoint(d / "routenet", "routenet")
    stats = NormStats.from_dict(read_json(d / "normstats.json"))
    model = DDNet(idp, IDetNetConfig(**idm["config"]), oap, OAMPNetConfig(**oam["config"]), rop, stats)
    return model, RouteNetConfig(**rom["config"]), manifest


# -- logs ---------------------------------------------------------------------------

class JsonlLog:
    """Append-only JSON-lines training log; numpy arrays are dropped from records."""

    def __init__(self, path: Path | str | None):
        self.path = None if path is None else Path(path)
        self.records: list[dict] = []
        if self.path is not None:
            self.path.write_text("")

    def __call__(self, record: dict) -> None:
        clean = {k: _plain(v) for k, v in record.items() if k != "params"}
        self.records.append(clean)
        if self.path is not None:
            with self.path.open("a") as fh:
                fh.write(json.dumps(clean, sort_keys=True) + "\n")


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return v
