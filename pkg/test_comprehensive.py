"""
Comprehensive Tests
Dataset files, synthetic generation, calibration, evaluation and the CLI.
"""
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

# Add project root to path
PROJECT_ROOT = Path(__file__).parent
sys.path.insert(0, str(PROJECT_ROOT))

from src.cli.main import main
from src.core.errors import (
    BerryOutOfFrame,
    DisconnectedMask,
    EmptyMask,
    IdMismatch,
    InvalidValue,
    MalformedFile,
    MalformedLine,
    NoGroundTruth,
    NonBinaryPixelValue,
    OutOfBounds,
    OutOfRangeValue,
    PartialGroundTruth,
)
from src.core.models import (
    AnnotationRecord,
    ImageGrid,
    KeyPoint,
    KeypointKind,
    OrientationAngles,
    Prediction,
    ShapeParams,
    SilhouetteMask,
    default_shape_params,
)
from src.database.db import DatasetManifest, dataset_writer, open_dataset, read_manifest
from src.database.formats import read_heatmap, read_mask, write_heatmap, write_mask
from src.database.records import (
    read_params,
    read_predictions,
    read_records,
    write_params,
    write_predictions,
    write_records,
)
from src.infra.workers import map_ordered
from src.services.calibration import (
    ParamBounds,
    _project,
    fit,
    objective,
    observations_from_formula,
    observe,
)
from src.services.evaluation import (
    MetricStats,
    evaluate,
    keypoint_error,
    kfold_indices,
    phi_error,
    predict,
    summarize,
    summarize_folds,
    theta_bin_edges,
)
from src.services.geometry import keypoint_distances
from src.services.heatmap import HeatmapStack, decode, encode
from src.services.orientation import direction_from_angles
from src.services.report_generator import ReportGenerator, summary_text
from src.services.synthgen import (
    BerryProfile,
    RenderSpec,
    fit_scale,
    generate_dataset,
    heatmaps_for_record,
    project_keypoints,
    record_id,
    silhouette,
)

GRID = ImageGrid()
SMALL = RenderSpec(grid=ImageGrid(96, 96), scale=50.0, margin=4)
SMALL_FLAGS = ["--grid", "96", "--scale", "50", "--margin", "4"]


def disc_mask(grid: ImageGrid, cx: float, cy: float, radius: float) -> SilhouetteMask:
    ys, xs = np.mgrid[0:grid.height, 0:grid.width]
    return SilhouetteMask(grid, (xs - cx) ** 2 + (ys - cy) ** 2 <= radius ** 2)


def oriented_record(rid: str, phi: float, theta: float) -> AnnotationRecord:
    return AnnotationRecord(rid, KeyPoint(150, 128), KeyPoint(100, 128, KeypointKind.TIP), phi, theta)


def prediction_for(record: AnnotationRecord, phi: float, theta: float, top=None, tip=None) -> Prediction:
    angles = OrientationAngles(phi, theta)
    return Prediction(record.id, top or record.top, tip or record.tip, angles, direction_from_angles(angles), "tip")


def snapshot(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def decode_point(hm):
    result = decode(HeatmapStack((hm,)))
    return result.keypoint.x, result.keypoint.y


# ============================================================
# MASK AND HEAT MAP FILES
# ============================================================
def test_mask_round_trip_and_size(tmp_path):
    mask = disc_mask(GRID, 100, 120, 30)
    path = tmp_path / "m.pgm"
    write_mask(path, mask)
    assert path.stat().st_size == 15 + 65536
    assert path.read_bytes()[:15] == b"P5\n256 256\n255\n"
    assert read_mask(path) == mask


def test_mask_header_comments_and_small_maxval(tmp_path):
    raster = np.zeros((8, 8), dtype=np.uint8)
    raster[2:5, 3:6] = 1
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# exported\n8 8\n1\n" + raster.tobytes())
    mask = read_mask(path)
    assert mask.area == 9
    assert mask.bits[3, 4] and not mask.bits[0, 0]


def test_mask_rejects_bad_files(tmp_path):
    mask = disc_mask(ImageGrid(16, 16), 8, 8, 4)
    path = tmp_path / "m.pgm"
    write_mask(path, mask)
    data = bytearray(path.read_bytes())

    gray = tmp_path / "gray.pgm"
    gray.write_bytes(bytes(data[:-3]) + b"\x07" + bytes(data[-2:]))
    with pytest.raises(NonBinaryPixelValue) as info:
        read_mask(gray)
    assert "(13, 15)" in str(info.value)

    short = tmp_path / "short.pgm"
    short.write_bytes(bytes(data[:-10]))
    with pytest.raises(MalformedFile):
        read_mask(short)

    magic = tmp_path / "magic.pgm"
    magic.write_bytes(b"P6" + bytes(data[2:]))
    with pytest.raises(MalformedFile):
        read_mask(magic)

    empty = tmp_path / "empty.pgm"
    empty.write_bytes(b"P5\n8 8\n255\n" + bytes(64))
    with pytest.raises(EmptyMask):
        read_mask(empty)


def test_heatmap_file_layout(tmp_path):
    hm = encode(KeyPoint(3, 255), GRID)
    path = tmp_path / "h.pfm"
    write_heatmap(path, hm)
    data = path.read_bytes()
    assert data[:16] == b"Pf\n256 256\n-1.0\n"
    assert len(data) == 16 + 256 * 256 * 4
    # rows are stored bottom-up, so the first stored row is y = 255
    first_row = np.frombuffer(data[16:16 + 256 * 4], dtype="<f4")
    assert first_row[3] == 1.0

    back = read_heatmap(path)
    assert np.array_equal(back.values, hm.values.astype(np.float32).astype(np.float64))
    assert decode_point(back) == (3.0, 255.0)


def test_heatmap_big_endian_and_range(tmp_path):
    values = np.zeros((8, 8), dtype=np.float64)
    values[1, 6] = 0.75
    path = tmp_path / "be.pfm"
    path.write_bytes(b"Pf\n8 8\n1.0\n" + values[::-1].astype(">f4").tobytes())
    assert read_heatmap(path).value_at(6, 1) == 0.75

    with pytest.raises(OutOfRangeValue):
        write_heatmap(tmp_path / "bad.pfm", np.full((8, 8), 1.5))
    bad = tmp_path / "bad_read.pfm"
    bad.write_bytes(b"Pf\n8 8\n-1.0\n" + np.full((8, 8), 2.0).astype("<f4").tobytes())
    with pytest.raises(OutOfRangeValue):
        read_heatmap(bad)


# ============================================================
# RECORD, PREDICTION AND PARAMS DOCUMENTS
# ============================================================
def test_records_round_trip(tmp_path):
    records = [
        AnnotationRecord("a", KeyPoint(10.1234567, 20), KeyPoint(30, 40, KeypointKind.TIP), -45.5, 12.25, "masks/a.pgm"),
        AnnotationRecord("b", KeyPoint(1, 2), KeyPoint(3, 4, KeypointKind.TIP), mask_path="masks/b.pgm"),
    ]
    path = tmp_path / "records.jsonl"
    assert write_records(path, records) == 2
    lines = path.read_text().splitlines()
    assert "phi_gt" not in json.loads(lines[1])
    back = read_records(path, GRID)
    assert back[0].top.x == 10.123457
    assert (back[0].phi_gt, back[0].theta_gt) == (-45.5, 12.25)
    assert not back[1].has_orientation
    assert back[1].tip.kind == KeypointKind.TIP


@pytest.mark.parametrize("line,error", [
    ('{"id": "x", "top": [1, 2], "tip": [3, 4], "mask": "m"', MalformedLine),
    ('{"id": "x", "top": [1, 2], "mask": "m"}', MalformedLine),
    ('{"id": "x", "top": [1, 2], "tip": [3, 4], "phi_gt": 5, "mask": "m"}', PartialGroundTruth),
    ('{"id": "x", "top": [1, 2], "tip": [3, 4], "phi_gt": 5, "theta_gt": 95, "mask": "m"}', MalformedLine),
    ('{"id": "x", "top": [1, 2], "tip": [300, 4], "mask": "m"}', OutOfBounds),
])
def test_records_errors(tmp_path, line, error):
    path = tmp_path / "records.jsonl"
    good = '{"id": "ok", "top": [1, 2], "tip": [3, 4], "mask": "m"}'
    path.write_text(good + "\n" + line + "\n")
    with pytest.raises(error) as info:
        read_records(path, GRID)
    assert ":2" in str(info.value)
    if error is MalformedLine:
        assert info.value.line_number == 2


def test_records_duplicate_id(tmp_path):
    path = tmp_path / "records.jsonl"
    line = '{"id": "dup", "top": [1, 2], "tip": [3, 4], "mask": "m"}'
    path.write_text(line + "\n" + line + "\n")
    with pytest.raises(MalformedLine):
        read_records(path)


def test_documents_reject_invalid_utf8(tmp_path):
    path = tmp_path / "records.jsonl"
    good = b'{"id": "ok", "top": [1, 2], "tip": [3, 4], "mask": "m"}\n'
    path.write_bytes(good + b'{"id": "a\xff", "top": [1, 2], "tip": [3, 4], "mask": "m"}\n')
    with pytest.raises(MalformedLine) as info:
        read_records(path)
    assert info.value.line_number == 2
    with pytest.raises(MalformedLine):
        read_predictions(path)

    params = tmp_path / "params.json"
    params.write_bytes(b'{"T": 170\xfe}')
    with pytest.raises(MalformedFile, match="UTF-8"):
        read_params(params)


def test_predictions_round_trip(tmp_path):
    record = oriented_record("p1", 10.0, 20.0)
    preds = [prediction_for(record, 10.0, 20.0)]
    path = tmp_path / "pred.jsonl"
    write_predictions(path, preds)
    doc = json.loads(path.read_text())
    assert set(doc) == {"id", "top", "tip", "phi", "theta", "direction", "branch", "degenerate"}
    back = read_predictions(path)
    assert back[0].angles == preds[0].angles
    assert back[0].direction.as_list() == pytest.approx(preds[0].direction.as_list())


def test_params_round_trip_and_errors(tmp_path):
    path = tmp_path / "params.json"
    params = ShapeParams(T=150.0, alpha=60.0, omega=45.0, sigma_offset=35.0, sigma_kernel=2.5)
    write_params(path, params, extra={"objective_after": 3.5})
    assert json.loads(path.read_text())["objective_after"] == 3.5
    assert read_params(path) == params

    path.write_text("{not json")
    with pytest.raises(MalformedFile):
        read_params(path)
    path.write_text(json.dumps({"T": 170, "alpha": 54, "omega": 60, "sigma_offset": 40}))
    with pytest.raises(MalformedFile):
        read_params(path)
    path.write_text(json.dumps({"T": 170, "alpha": 54, "omega": 50, "sigma_offset": 40}))
    assert read_params(path).sigma_kernel == 2.0


# ============================================================
# DATASET DIRECTORIES
# ============================================================
def write_small_dataset(root: Path, masks=None, records=None):
    grid = ImageGrid(32, 32)
    records = records or [
        AnnotationRecord("r2", KeyPoint(20, 16), KeyPoint(10, 16, KeypointKind.TIP), 0.0, 30.0),
        AnnotationRecord("r1", KeyPoint(16, 10), KeyPoint(16, 22, KeypointKind.TIP), -90.0, 10.0),
    ]
    masks = masks or [disc_mask(grid, 15.5, 15.5, 10)] * len(records)
    with dataset_writer(root, DatasetManifest(grid, len(records), seed=3)) as writer:
        for record, mask in zip(records, masks):
            writer.add(record, mask)
    return records


def test_dataset_write_and_open(tmp_path):
    write_small_dataset(tmp_path)
    manifest = read_manifest(tmp_path)
    assert (manifest.count, manifest.seed, manifest.grid) == (2, 3, ImageGrid(32, 32))
    dataset = open_dataset(tmp_path)
    assert [r.id for r in dataset.records] == ["r1", "r2"]
    assert dataset.records[0].mask_path == "masks/r1.pgm"
    assert dataset.mask(dataset.records[0]).area > 0
    assert not dataset.has_heatmaps(dataset.records[0])


def test_dataset_aborted_write_has_no_manifest(tmp_path):
    grid = ImageGrid(32, 32)
    with pytest.raises(RuntimeError):
        with dataset_writer(tmp_path, DatasetManifest(grid, 1)) as writer:
            writer.add(AnnotationRecord("x", KeyPoint(1, 1), KeyPoint(2, 2, KeypointKind.TIP)), disc_mask(grid, 10, 10, 3))
            raise RuntimeError("interrupted")
    assert not (tmp_path / "manifest.json").exists()
    with pytest.raises(MalformedFile):
        open_dataset(tmp_path)


def test_dataset_count_mismatch(tmp_path):
    write_small_dataset(tmp_path)
    doc = json.loads((tmp_path / "manifest.json").read_text())
    doc["count"] = 5
    (tmp_path / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(MalformedFile):
        open_dataset(tmp_path)


def test_dataset_manifest_invalid_utf8(tmp_path):
    write_small_dataset(tmp_path)
    (tmp_path / "manifest.json").write_bytes(b'{"version": "\xc3\x28"}')
    with pytest.raises(MalformedFile, match="UTF-8"):
        read_manifest(tmp_path)


def test_dataset_disconnected_mask(tmp_path, caplog):
    grid = ImageGrid(32, 32)
    bits = np.zeros(grid.shape, dtype=bool)
    bits[4:14, 4:14] = True
    bits[20:23, 20:23] = True
    write_small_dataset(tmp_path, masks=[SilhouetteMask(grid, bits)] * 2)
    dataset = open_dataset(tmp_path)
    with caplog.at_level(logging.WARNING):
        dataset.mask(dataset.records[0])
    assert "components" in caplog.text
    with pytest.raises(DisconnectedMask):
        open_dataset(tmp_path, strict=True).mask(dataset.records[0])


# ============================================================
# WORKERS
# ============================================================
def test_map_ordered_keeps_order():
    items = list(range(40))
    assert map_ordered(lambda x: x * x, items, threads=4) == [x * x for x in items]
    with pytest.raises(ValueError):
        map_ordered(abs, items, threads=0)


def test_map_ordered_reraises():
    def boom(x):
        if x == 7:
            raise InvalidValue("seven")
        return x
    with pytest.raises(InvalidValue):
        map_ordered(boom, range(20), threads=3)


# ============================================================
# SYNTHETIC GENERATION
# ============================================================
def test_profile_validation_and_shape():
    with pytest.raises(InvalidValue):
        BerryProfile(bulge=0.4)
    with pytest.raises(InvalidValue):
        BerryProfile(asymmetry=0.7)
    profile = BerryProfile(taper=1.3, asymmetry=0.35)
    assert profile.radius(0.0) == 0.0 and profile.radius(1.0) == 0.0
    assert float(profile.radius(0.35)) == pytest.approx(profile.r_max)
    t = np.linspace(0, 1, 201)
    assert float(profile.radius(t).max()) == pytest.approx(profile.r_max, rel=1e-3)


def test_silhouette_axis_frame():
    profile = BerryProfile()
    spec = RenderSpec()
    mask, top, tip = silhouette(profile, OrientationAngles(0.0, 0.0), spec)
    assert top.x > tip.x and top.y == pytest.approx(tip.y)
    assert top.distance_to(tip) == pytest.approx(170.0, abs=1e-5)
    assert mask.bits[128, 128]

    _, top, tip = silhouette(profile, OrientationAngles(-90.0, 0.0), spec)
    assert top.y < tip.y and top.x == pytest.approx(tip.x)

    _, top, tip = silhouette(profile, OrientationAngles(35.0, 60.0), spec)
    assert top.distance_to(tip) == pytest.approx(85.0, abs=1e-5)
    assert math.degrees(math.atan2(top.y - tip.y, top.x - tip.x)) == pytest.approx(35.0, abs=1e-4)


def test_silhouette_tip_facing_camera():
    mask, top, tip = silhouette(BerryProfile(), OrientationAngles(40.0, 90.0), RenderSpec())
    assert (top.x, top.y) == (127.5, 127.5) == (tip.x, tip.y)
    ys, xs = np.nonzero(mask.bits)
    assert xs.mean() == pytest.approx(127.5) and ys.mean() == pytest.approx(127.5)


def test_silhouette_out_of_frame():
    with pytest.raises(BerryOutOfFrame):
        silhouette(BerryProfile(), OrientationAngles(0.0, 0.0), RenderSpec(scale=1000.0))
    scale = fit_scale(BerryProfile(), GRID)
    silhouette(BerryProfile(), OrientationAngles(0.0, 0.0), RenderSpec(scale=scale))


def test_rendered_ratios_in_range():
    profile = BerryProfile()
    for phi, theta in [(0, 10), (120, 45), (-60, 75)]:
        mask, top, tip = silhouette(profile, OrientationAngles(phi, theta), RenderSpec())
        d = keypoint_distances(mask, top, tip)
        assert 0.0 <= d.dhat_top <= 1.0 and 0.0 <= d.dhat_tip <= 1.0
        assert d.d_topside > 0 and d.d_tipside > 0
        assert d.d_tt == pytest.approx(170.0 * math.cos(math.radians(theta)), abs=1e-5)


def test_rendered_distances_follow_tilt():
    profile = BerryProfile()
    thetas = [0, 20, 40, 60, 80]
    measured = []
    for theta in thetas:
        mask, top, tip = silhouette(profile, OrientationAngles(30.0, theta), RenderSpec())
        measured.append(keypoint_distances(mask, top, tip))
    d_tt = [d.d_tt for d in measured]
    assert all(b < a for a, b in zip(d_tt, d_tt[1:]))
    assert measured[-1].dhat_top < measured[0].dhat_top


def test_generate_dataset_deterministic_across_threads():
    serial = generate_dataset(2, 3, SMALL, threads=1)
    parallel = generate_dataset(2, 3, SMALL, threads=3)
    assert [r.id for r in serial] == [record_id(b, v) for b in range(2) for v in range(3)]
    for a, b in zip(serial, parallel):
        assert a.record == b.record
        assert a.mask == b.mask
        assert a.profile == b.profile
    for r in serial:
        angles = r.angles()
        assert -180.0 <= angles.phi < 180.0 and 0.0 <= angles.theta <= 90.0
        top, _ = project_keypoints(r.profile, angles, r.spec)
        assert (r.top.x, r.top.y) == (round(top[0], 6), round(top[1], 6))


def test_generate_dataset_to_disk(tmp_path):
    records = generate_dataset(2, 2, SMALL, out_dir=tmp_path, heatmap_maps=2)
    assert all(r.mask is None for r in records)
    manifest = read_manifest(tmp_path)
    assert manifest.count == 4
    assert manifest.generator["berries"] == 2 and manifest.generator["heatmap_maps"] == 2
    assert len((tmp_path / "provenance.jsonl").read_text().splitlines()) == 4
    dataset = open_dataset(tmp_path)
    first = dataset.records[0]
    assert dataset.has_heatmaps(first)
    top_stack, tip_stack = dataset.heatmaps(first)
    assert len(top_stack) == 2 and tip_stack.kind == KeypointKind.TIP
    decoded = decode(top_stack).keypoint
    assert decoded.distance_to(first.top) <= math.sqrt(0.5) + 1e-9


def test_generated_theta_is_uniform():
    records = generate_dataset(50, 20, SMALL, threads=2)
    thetas = [r.record.theta_gt for r in records]
    counts, _ = np.histogram(thetas, bins=10, range=(0.0, 90.0))
    assert counts.sum() == 1000
    assert stats.chisquare(counts).pvalue > 0.01


def test_heatmaps_for_record_amplitudes():
    record = generate_dataset(1, 1, SMALL)[0]
    top_stack, _ = heatmaps_for_record(record, default_shape_params(), n_maps=5, seed=4)
    peaks = [m.peak for m in top_stack.maps]
    assert max(peaks) == 1.0
    assert all(0.5 <= p <= 1.0 for p in peaks)
    again, _ = heatmaps_for_record(record, 2.0, n_maps=5, seed=4)
    assert [m.peak for m in again.maps] == peaks
    with pytest.raises(InvalidValue):
        heatmaps_for_record(record, 2.0, n_maps=9)


# ============================================================
# CALIBRATION
# ============================================================
def test_objective_zero_at_true_params():
    obs = observations_from_formula(n=400, seed=2)
    assert objective(default_shape_params(), obs) == pytest.approx(0.0, abs=1e-6)
    assert objective(ShapeParams(T=120.0), obs) > 1.0


def test_objective_flat_top_ratio():
    from src.services.calibration import Observations
    n = 10
    obs = Observations(
        ids=[f"o{i}" for i in range(n)],
        d_tt=np.full(n, 200.0),
        dhat_top=np.zeros(n),
        dhat_tip=np.ones(n),
        phi=np.full(n, 15.0),
        degenerate=np.zeros(n, dtype=bool),
        phi_gt=np.full(n, 15.0),
        theta_gt=np.full(n, 27.0),
    )
    assert objective(default_shape_params(), obs) == pytest.approx(27.0)
    assert objective(ShapeParams(alpha=5.0), obs) == pytest.approx(27.0)


def test_degenerate_rows_face_camera():
    from src.services.calibration import Observations
    obs = Observations(["d"], [0.0], [0.0], [0.0], [0.0], [True], [123.0], [90.0])
    assert objective(default_shape_params(), obs) == pytest.approx(0.0, abs=1e-9)


def test_fit_recovers_from_offset_start():
    obs = observations_from_formula(n=1000, seed=5)
    init = ShapeParams(T=150.0, alpha=45.0, omega=40.0, sigma_offset=30.0)
    report = fit(obs, init=init, budget=20000)
    assert report.objective_after <= report.objective_before
    assert report.objective_after < 1.5
    assert report.fitted.T == pytest.approx(170.0, abs=8.0)
    assert report.fitted.alpha == pytest.approx(54.0, abs=4.0)
    assert report.evaluations <= 20000
    assert all(b < a for a, b in zip(report.history, report.history[1:]))
    assert report.fitted.omega + report.fitted.sigma_offset <= 90.0 + 1e-6
    assert "objective after" in report.to_text()


def test_fit_budget_one_returns_init():
    obs = observations_from_formula(n=100)
    init = ShapeParams(T=150.0)
    report = fit(obs, init=init, budget=1)
    assert report.fitted == init
    assert report.evaluations == 1 and report.objective_after == report.objective_before


def test_fit_rejects_bad_inputs():
    obs = observations_from_formula(n=100)
    with pytest.raises(InvalidValue):
        fit(obs, init=ShapeParams(T=300.0))
    with pytest.raises(InvalidValue):
        fit(obs, budget=0)
    with pytest.raises(InvalidValue):
        ParamBounds(T=(100.0, 50.0))


def test_projection_restores_angle_sum():
    bounds = ParamBounds()
    moved = _project({"T": 170.0, "alpha": 54.0, "omega": 50.0, "sigma_offset": 48.0}, "sigma_offset", bounds)
    assert moved["sigma_offset"] == 48.0 and moved["omega"] == pytest.approx(42.0)
    moved = _project({"T": 500.0, "alpha": 54.0, "omega": 58.0, "sigma_offset": 40.0}, "omega", bounds)
    assert moved["T"] == 240.0
    assert moved["omega"] == 58.0 and moved["sigma_offset"] == pytest.approx(32.0)


def test_observe_requires_ground_truth():
    mask = disc_mask(GRID, 128, 128, 30)
    record = AnnotationRecord("k", KeyPoint(140, 128), KeyPoint(115, 128, KeypointKind.TIP))
    with pytest.raises(NoGroundTruth):
        observe([record], [mask])


def test_fit_on_rendered_records_never_worse():
    records = generate_dataset(3, 4, SMALL)
    report = fit(records, budget=300)
    assert report.objective_after <= report.objective_before
    assert report.evaluations <= 300


# ============================================================
# EVALUATION
# ============================================================
def test_metric_stats_conventions():
    stats = MetricStats.from_values([100.0, 2.0, 4.0])
    assert stats.median == 4.0
    assert stats.mean == pytest.approx(106.0 / 3.0)
    assert stats.count == 3
    assert MetricStats.from_values([1.0, 2.0, 3.0, 4.0]).median == 2.0
    assert MetricStats.from_values([1.0, 3.0]).std == pytest.approx(1.0)
    empty = MetricStats.from_values([])
    assert empty.count == 0 and math.isnan(empty.median)


def test_phi_error_wraps():
    assert phi_error(170.0, -170.0) == pytest.approx(20.0)
    assert phi_error(90.0, -90.0) == pytest.approx(180.0)
    assert phi_error(-179.0, 179.0) == pytest.approx(2.0)


def test_summary_angular_examples():
    records = [oriented_record(f"r{i}", 0.0, 0.0) for i in range(3)]
    preds = [prediction_for(r, phi, 0.0) for r, phi in zip(records, (2.0, 4.0, 100.0))]
    summary = summarize(records, preds)
    assert summary.median("angular") == pytest.approx(4.0)
    assert summary.metrics["angular"].mean == pytest.approx(106.0 / 3.0)
    assert summary.median("phi") == pytest.approx(4.0)
    assert summary.median("theta") == 0.0
    assert summary.median("kp_top") == 0.0


def test_perfect_predictions_score_zero():
    records = [oriented_record(f"r{i}", -170.0 + 30 * i, 9.0 * i) for i in range(11)]
    summary = summarize(records, [prediction_for(r, r.phi_gt, r.theta_gt) for r in records])
    for metric in ("angular", "phi", "theta", "kp_top", "kp_tip"):
        assert summary.metrics[metric].median == 0.0
        assert summary.metrics[metric].mean == 0.0


def test_keypoint_error_bounded_by_grid_diagonal():
    corner, opposite = KeyPoint(0, 0), KeyPoint(GRID.width - 1, GRID.height - 1)
    assert keypoint_error(corner, opposite) == pytest.approx(GRID.diagonal)
    rng = np.random.default_rng(4)
    for _ in range(100):
        a = KeyPoint(*rng.uniform(0, 255, size=2))
        b = KeyPoint(*rng.uniform(0, 255, size=2))
        assert 0.0 <= keypoint_error(a, b) <= GRID.diagonal


def test_theta_bins():
    assert theta_bin_edges(10)[-1] == (80.0, 90.0)
    assert theta_bin_edges(25)[-1] == (75.0, 90.0)
    with pytest.raises(InvalidValue):
        theta_bin_edges(0)
    records = [oriented_record("a", 0.0, 90.0), oriented_record("b", 0.0, 10.0), oriented_record("c", 0.0, 9.99)]
    summary = summarize(records, [prediction_for(r, 0.0, r.theta_gt) for r in records])
    assert summary.bin_for(90.0).label == "[80,90]"
    assert summary.bin_for(90.0).stats["angular"].count == 1
    assert summary.bin_for(10.0).stats["angular"].count == 1
    assert summary.bin_for(0.0).stats["angular"].count == 1


def test_partial_summary_and_mismatch(caplog):
    oriented = oriented_record("a", 0.0, 10.0)
    bare = AnnotationRecord("b", KeyPoint(5, 5), KeyPoint(9, 9, KeypointKind.TIP))
    preds = [prediction_for(oriented, 0.0, 10.0), prediction_for(bare, 0.0, 10.0), prediction_for(oriented_record("z", 0, 0), 0, 0)]
    with caplog.at_level(logging.WARNING):
        summary = summarize([oriented, bare], preds)
    assert summary.partial
    assert summary.metrics["angular"].count == 1
    assert summary.metrics["kp_top"].count == 2
    assert "id mismatch" in caplog.text
    with pytest.raises(NoGroundTruth):
        summarize([oriented, bare], preds, require_orientation=True)
    with pytest.raises(IdMismatch):
        summarize([oriented], [prediction_for(bare, 0.0, 0.0)])


def test_kfold_indices_cover_all():
    folds = kfold_indices(10, 3)
    tests = np.concatenate([test for _, test in folds])
    assert sorted(tests.tolist()) == list(range(10))
    for train, test in folds:
        assert not set(train) & set(test)
    with pytest.raises(InvalidValue):
        kfold_indices(3, 5)


def test_predict_and_evaluate_rendered():
    records = generate_dataset(2, 3, SMALL)
    preds = predict([r.record for r in records], [r.mask for r in records], threads=2)
    assert [p.id for p in preds] == [r.id for r in records]
    summary = evaluate([r.record for r in records], [r.mask for r in records])
    assert summary.count == 6 and not summary.partial
    assert summary.metrics["kp_top"].median == 0.0
    assert 0.0 <= summary.median("angular") <= 180.0
    folds = summarize_folds([r.record for r in records], preds, 2)
    assert sum(f.count for f in folds) == 6


def test_report_files(tmp_path):
    records = [oriented_record(f"r{i}", 0.0, 10.0 * i) for i in range(5)]
    summary = summarize(records, [prediction_for(r, 3.0, r.theta_gt) for r in records])
    written = ReportGenerator(tmp_path / "run").write_all(summary)
    text = Path(written["summary"]).read_text()
    assert "angular" in text and "[80,90]" in text
    assert len(written["csv"]) == 5
    lines = Path(written["records"]).read_text().splitlines()
    assert json.loads(lines[0])["id"] == "r0"
    assert summary_text(summary).startswith("EVALUATION SUMMARY")


# ============================================================
# COMMAND LINE
# ============================================================
@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for key in ("BERRYPOSE_THREADS", "BERRYPOSE_SEED", "BERRYPOSE_PARAMS", "LOG_LEVEL", "DEBUG"):
        monkeypatch.delenv(key, raising=False)


def test_cli_usage_errors(tmp_path):
    assert main([]) == 2
    assert main(["generate", "--out", str(tmp_path), "--berries", "0", "--views", "1"]) == 2
    assert main(["evaluate", "--data", "d", "--pred", "p", "--out-prefix", "x", "--bins", "100"]) == 2
    assert main(["evaluate", "--data", "d", "--pred", "p", "--out-prefix", "x", "--folds", "1"]) == 2
    assert main(["estimate", "--data", "d", "--out", "o", "--threads", "0"]) == 2


def test_cli_bad_thread_env(tmp_path, monkeypatch):
    monkeypatch.setenv("BERRYPOSE_THREADS", "0")
    assert main(["estimate", "--data", str(tmp_path), "--out", str(tmp_path / "p.jsonl")]) == 2


def test_cli_bad_log_level_env(tmp_path, monkeypatch):
    monkeypatch.setenv("LOG_LEVEL", "LOUD")
    assert main(["estimate", "--data", str(tmp_path), "--out", str(tmp_path / "p.jsonl")]) == 2


def test_cli_runtime_error(tmp_path, capsys):
    assert main(["estimate", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "p.jsonl")]) == 1
    assert "manifest missing" in capsys.readouterr().err


def test_cli_undecodable_predictions(tmp_path, capsys):
    write_small_dataset(tmp_path / "data")
    pred = tmp_path / "pred.jsonl"
    pred.write_bytes(b'{"id": "r1\xff"}\n')
    code = main(["evaluate", "--data", str(tmp_path / "data"), "--pred", str(pred),
                 "--out-prefix", str(tmp_path / "run")])
    assert code == 1
    assert "UTF-8" in capsys.readouterr().err


def test_cli_estimate_error_names_record(tmp_path, capsys):
    grid = ImageGrid(32, 32)
    bits = np.zeros(grid.shape, dtype=bool)
    bits[5, 5] = True
    record = AnnotationRecord("speck", KeyPoint(20, 16), KeyPoint(10, 16, KeypointKind.TIP), 0.0, 30.0)
    write_small_dataset(tmp_path / "data", masks=[SilhouetteMask(grid, bits)], records=[record])
    code = main(["estimate", "--data", str(tmp_path / "data"), "--out", str(tmp_path / "pred.jsonl")])
    assert code == 1
    assert "record speck" in capsys.readouterr().err


def test_cli_generate_is_reproducible(tmp_path):
    args = ["generate", "--berries", "2", "--views", "3", "--seed", "11"] + SMALL_FLAGS
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b"), "--threads", "3"]) == 0
    a, b = snapshot(tmp_path / "a"), snapshot(tmp_path / "b")
    assert a == b
    assert len([name for name in a if name.startswith("masks")]) == 6
    assert json.loads(a["manifest.json"])["seed"] == 11


def test_cli_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("BERRYPOSE_SEED", "9")
    assert main(["generate", "--out", str(tmp_path), "--berries", "1", "--views", "1"] + SMALL_FLAGS) == 0
    assert read_manifest(tmp_path).seed == 9


def test_cli_pipeline(tmp_path):
    data = tmp_path / "data"
    assert main(["generate", "--out", str(data), "--berries", "2", "--views", "4", "--heatmaps", "2"] + SMALL_FLAGS) == 0
    before = snapshot(data)

    params = tmp_path / "params.json"
    assert main(["calibrate", "--data", str(data), "--budget", "200", "--out", str(params), "--holdout", "0.25"]) == 0
    fitted = read_params(params)
    assert fitted.omega + fitted.sigma_offset <= 90.0 + 1e-6
    report = (tmp_path / "params.report.txt").read_text()
    assert "holdout after" in report

    preds = tmp_path / "pred.jsonl"
    assert main(["estimate", "--data", str(data), "--params", str(params), "--out", str(preds)]) == 0
    assert [p.id for p in read_predictions(preds)] == sorted(record_id(b, v) for b in range(2) for v in range(4))

    hm_preds = tmp_path / "pred_hm.jsonl"
    assert main(["estimate", "--data", str(data), "--out", str(hm_preds), "--use-heatmaps", "--threads", "2"]) == 0
    assert len(read_predictions(hm_preds)) == 8

    prefix = tmp_path / "out" / "run"
    assert main(["evaluate", "--data", str(data), "--pred", str(preds), "--out-prefix", str(prefix),
                 "--folds", "2", "--plot"]) == 0
    summary = (tmp_path / "out" / "run_summary.txt").read_text()
    assert "FOLD 2/2" in summary
    for suffix in ("kp_top", "kp_tip", "phi", "theta", "angular"):
        assert (tmp_path / "out" / f"run_{suffix}.csv").is_file()
    assert (tmp_path / "out" / "run_angular_hist.html").is_file()
    assert snapshot(data) == before


def test_cli_params_fallback_and_degenerate(tmp_path, caplog):
    grid = ImageGrid(32, 32)
    record = AnnotationRecord("same", KeyPoint(16, 16), KeyPoint(16, 16, KeypointKind.TIP), 0.0, 90.0)
    write_small_dataset(tmp_path / "data", masks=[disc_mask(grid, 15.5, 15.5, 8)], records=[record])
    out = tmp_path / "pred.jsonl"
    with caplog.at_level(logging.WARNING):
        code = main(["estimate", "--data", str(tmp_path / "data"), "--params", str(tmp_path / "nope.json"),
                     "--out", str(out)])
    assert code == 0
    assert "not found" in caplog.text
    pred = read_predictions(out)[0]
    assert pred.degenerate and pred.angles.theta == 90.0 and pred.angles.phi == 0.0


def test_cli_calibrate_without_ground_truth(tmp_path):
    record = AnnotationRecord("k", KeyPoint(20, 16), KeyPoint(10, 16, KeypointKind.TIP))
    write_small_dataset(tmp_path / "data", records=[record])
    assert main(["calibrate", "--data", str(tmp_path / "data"), "--out", str(tmp_path / "p.json")]) == 1


def test_cli_encode_decode(tmp_path, capsys):
    path = tmp_path / "kp.pfm"
    assert main(["encode", "--x", "10", "--y", "20", "--out", str(path), "--width", "64", "--height", "64"]) == 0
    capsys.readouterr()
    assert main(["decode", str(path), "--kind", "tip"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert (doc["x"], doc["y"], doc["kind"], doc["degenerate"]) == (10.0, 20.0, "tip", False)
    assert main(["encode", "--x", "70", "--y", "20", "--out", str(path), "--width", "64", "--height", "64"]) == 1


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
