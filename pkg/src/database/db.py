"""
Dataset directory management.

Layout:
    manifest.json                 format version, grid, record count, seed, generator
    records.jsonl                 one annotation record per line, sorted by id
    provenance.jsonl              profile + render settings per synthetic record
    masks/<id>.pgm                silhouette masks
    heatmaps/<id>_{top|tip}_<s>.pfm   optional simulated detector stacks
    params.json                   optional ShapeParams

The manifest is written last, so a directory without one is an aborted
write. Concurrent writers on one directory are not supported.
"""
import json
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, ValidationError

from src.core.errors import DisconnectedMask, MalformedFile
from src.core.models import AnnotationRecord, ImageGrid, KeypointKind, SilhouetteMask
from src.services.geometry import largest_component
from src.services.heatmap import HeatmapStack
from .formats import read_heatmap, read_mask, write_heatmap, write_mask
from .records import read_records, write_records

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

FORMAT_VERSION = "1"
SUPPORTED_VERSIONS = ("1",)

MANIFEST_FILE = "manifest.json"
RECORDS_FILE = "records.jsonl"
PROVENANCE_FILE = "provenance.jsonl"
PARAMS_FILE = "params.json"
MASK_DIR = "masks"
HEATMAP_DIR = "heatmaps"


class GridDocument(BaseModel):
    width: int
    height: int


class ManifestDocument(BaseModel):
    model_config = ConfigDict(extra="ignore")

    version: str
    grid: GridDocument
    count: int
    seed: Optional[int] = None
    generator: Dict = {}


@dataclass(frozen=True)
class DatasetManifest:
    grid: ImageGrid
    count: int
    seed: Optional[int] = None
    generator: dict = field(default_factory=dict)
    version: str = FORMAT_VERSION

    def to_json(self) -> str:
        doc = ManifestDocument(
            version=self.version,
            grid=GridDocument(width=self.grid.width, height=self.grid.height),
            count=self.count,
            seed=self.seed,
            generator=self.generator,
        )
        return json.dumps(doc.model_dump(), indent=2, sort_keys=False, allow_nan=False) + "\n"


def mask_file(record_id: str) -> str:
    return f"{MASK_DIR}/{record_id}.pgm"


def heatmap_file(record_id: str, kind: KeypointKind, index: int) -> str:
    return f"{HEATMAP_DIR}/{record_id}_{KeypointKind(kind).value}_{index}.pfm"


def read_manifest(root: PathLike) -> DatasetManifest:
    path = Path(root) / MANIFEST_FILE
    if not path.is_file():
        raise MalformedFile(f"{path}: manifest missing (not a dataset directory, or an aborted write)")
    try:
        doc = ManifestDocument.model_validate(json.loads(path.read_text(encoding="utf-8")))
    except UnicodeDecodeError as e:
        raise MalformedFile(f"{path}: invalid UTF-8 at byte {e.start}") from e
    except json.JSONDecodeError as e:
        raise MalformedFile(f"{path}: invalid JSON: {e.msg}")
    except ValidationError as e:
        raise MalformedFile(f"{path}: invalid manifest: {e.error_count()} error(s)")
    if doc.version not in SUPPORTED_VERSIONS:
        raise MalformedFile(f"{path}: unsupported format version {doc.version!r}")
    try:
        grid = ImageGrid(width=doc.grid.width, height=doc.grid.height)
    except Exception as e:
        raise MalformedFile(f"{path}: {e}")
    return DatasetManifest(grid=grid, count=doc.count, seed=doc.seed, generator=dict(doc.generator), version=doc.version)


class DatasetWriter:
    """Single-writer session over a dataset directory."""

    def __init__(self, root: Path, manifest: DatasetManifest):
        self.root = root
        self.manifest = manifest
        self._records: List[AnnotationRecord] = []
        self._provenance: List[dict] = []

    def add(
        self,
        record: AnnotationRecord,
        mask: SilhouetteMask,
        stacks: Optional[Tuple[HeatmapStack, HeatmapStack]] = None,
        provenance: Optional[dict] = None,
    ) -> None:
        if mask.grid != self.manifest.grid:
            raise MalformedFile(f"record {record.id}: mask grid differs from the dataset grid")
        if not record.mask_path:
            record = AnnotationRecord(record.id, record.top, record.tip, record.phi_gt, record.theta_gt, mask_file(record.id))
        write_mask(self.root / record.mask_path, mask)
        if stacks is not None:
            (self.root / HEATMAP_DIR).mkdir(exist_ok=True)
            for stack in stacks:
                for index, heatmap in enumerate(stack.maps):
                    write_heatmap(self.root / heatmap_file(record.id, stack.kind, index), heatmap)
        self._records.append(record)
        if provenance is not None:
            self._provenance.append(provenance)

    def close(self) -> DatasetManifest:
        records = sorted(self._records, key=lambda r: r.id)
        write_records(self.root / RECORDS_FILE, records)
        if self._provenance:
            with (self.root / PROVENANCE_FILE).open("w", encoding="utf-8", newline="\n") as f:
                for entry in sorted(self._provenance, key=lambda e: e["id"]):
                    f.write(json.dumps(entry, allow_nan=False) + "\n")

        manifest = self.manifest
        if manifest.count != len(records):
            logger.warning(f"manifest announced {manifest.count} records, {len(records)} written")
            manifest = DatasetManifest(manifest.grid, len(records), manifest.seed, manifest.generator, manifest.version)
        (self.root / MANIFEST_FILE).write_text(manifest.to_json(), encoding="utf-8")
        logger.info(f"wrote dataset {self.root} with {len(records)} records")
        return manifest


@contextmanager
def dataset_writer(root: PathLike, manifest: DatasetManifest):
    """Context manager for writing a dataset; the manifest is only written on success."""
    root = Path(root)
    (root / MASK_DIR).mkdir(parents=True, exist_ok=True)
    writer = DatasetWriter(root, manifest)
    try:
        yield writer
        writer.close()
    except Exception:
        logger.error(f"dataset write to {root} aborted; manifest not written")
        raise


@dataclass
class Dataset:
    """A dataset directory opened for reading."""
    root: Path
    manifest: DatasetManifest
    records: List[AnnotationRecord]
    strict: bool = False

    @property
    def grid(self) -> ImageGrid:
        return self.manifest.grid

    def __len__(self) -> int:
        return len(self.records)

    def mask(self, record: AnnotationRecord) -> SilhouetteMask:
        """Read a record's mask; a disconnected mask is a warning, or an error when strict."""
        path = self.root / (record.mask_path or mask_file(record.id))
        mask = read_mask(path)
        if mask.grid != self.grid:
            raise MalformedFile(f"{path}: mask is {mask.grid.width}x{mask.grid.height}, dataset grid is "
                                f"{self.grid.width}x{self.grid.height}")
        _, components = largest_component(mask.bits)
        if components > 1:
            if self.strict:
                raise DisconnectedMask(f"{path}: mask has {components} components")
            logger.warning(f"record {record.id}: mask has {components} components; using the largest")
        return mask

    def has_heatmaps(self, record: AnnotationRecord) -> bool:
        return (self.root / heatmap_file(record.id, KeypointKind.TOP, 0)).is_file()

    def heatmaps(self, record: AnnotationRecord) -> Tuple[HeatmapStack, HeatmapStack]:
        stacks = []
        for kind in (KeypointKind.TOP, KeypointKind.TIP):
            maps = []
            while (self.root / heatmap_file(record.id, kind, len(maps))).is_file():
                maps.append(read_heatmap(self.root / heatmap_file(record.id, kind, len(maps))))
            if not maps:
                raise MalformedFile(f"record {record.id}: no {kind.value} heat maps under {self.root / HEATMAP_DIR}")
            stacks.append(HeatmapStack(tuple(maps), kind))
        return stacks[0], stacks[1]


def open_dataset(root: PathLike, strict: bool = False) -> Dataset:
    """Open a dataset directory, checking the manifest against the records on disk."""
    root = Path(root)
    manifest = read_manifest(root)
    path = root / RECORDS_FILE
    if not path.is_file():
        raise MalformedFile(f"{path}: records file missing")
    records = read_records(path, manifest.grid)
    if len(records) != manifest.count:
        raise MalformedFile(f"{root}: manifest lists {manifest.count} records, {len(records)} found")
    return Dataset(root, manifest, sorted(records, key=lambda r: r.id), strict)
