"""
Tests for the binary container, run manifests, seeds/hashes and the CSV/JSON writers.
"""
import json

import numpy as np
import pytest

from artifacts import file_sha256, read_container, write_container
from export import (
    read_csv,
    read_manifest_hash,
    write_curve_csv,
    write_histogram_csv,
    write_json_report,
    write_records_csv,
    write_reliability_csv,
)
from manifest import build_manifest, check_class_split, load_manifest, require_equal, write_manifest
from metrics import aurc, calibration
from inference import confidence_histogram
from schemas import PredictionRecord, TrainReport
from utils import (
    ArtifactFormatError,
    ArtifactMismatchError,
    ConfigError,
    FeatureFormatError,
    derive_seed,
    sha256_arrays,
)

MAGIC = b'TESTMAGC'


class TestContainer:
    def test_round_trip(self, tmp_path):
        digest = write_container(tmp_path / 'c.bin', MAGIC, 3, {'b': 1, 'a': [1, 2]}, b'\x01\x02\x03')
        header, payload = read_container(tmp_path / 'c.bin', MAGIC, 3)
        assert header == {'a': [1, 2], 'b': 1}
        assert payload == b'\x01\x02\x03'
        assert digest == file_sha256(tmp_path / 'c.bin')

    def test_layout_prefix(self, tmp_path):
        write_container(tmp_path / 'c.bin', MAGIC, 1, {}, b'')
        blob = (tmp_path / 'c.bin').read_bytes()
        assert blob[:8] == MAGIC
        assert blob[8:12] == (1).to_bytes(4, 'little')
        assert blob[12:16] == (2).to_bytes(4, 'little')
        assert blob[16:] == b'{}'

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            read_container(tmp_path / 'missing.bin', MAGIC, 1)

    @pytest.mark.parametrize('blob, field', [
        (b'TEST', 'prefix'),
        (b'OTHERMAG' + bytes(8), 'magic'),
        (MAGIC + (2).to_bytes(4, 'little') + bytes(4), 'version'),
        (MAGIC + (1).to_bytes(4, 'little') + (50).to_bytes(4, 'little') + b'{}', 'header'),
        (MAGIC + (1).to_bytes(4, 'little') + (3).to_bytes(4, 'little') + b'{x}', 'header'),
        (MAGIC + (1).to_bytes(4, 'little') + (2).to_bytes(4, 'little') + b'[]', 'header'),
    ])
    def test_malformed(self, tmp_path, blob, field):
        (tmp_path / 'c.bin').write_bytes(blob)
        with pytest.raises(ArtifactFormatError) as info:
            read_container(tmp_path / 'c.bin', MAGIC, 1)
        assert info.value.field == field

    def test_error_class_is_selectable(self, tmp_path):
        (tmp_path / 'c.bin').write_bytes(b'OTHERMAG' + bytes(8))
        with pytest.raises(FeatureFormatError):
            read_container(tmp_path / 'c.bin', MAGIC, 1, error_cls=FeatureFormatError)


class TestManifest:
    def test_hash_is_stable_and_content_addressed(self):
        a = build_manifest('train', config={'lr': 0.1}, seeds={'train': 0}, inputs={'data': 'abc'})
        b = build_manifest('train', config={'lr': 0.1}, seeds={'train': 0}, inputs={'data': 'abc'})
        c = build_manifest('train', config={'lr': 0.2}, seeds={'train': 0}, inputs={'data': 'abc'})
        assert a.manifest_hash == b.manifest_hash
        assert a.manifest_hash != c.manifest_hash
        assert a.versions['package']

    def test_empty_parents_are_dropped(self):
        manifest = build_manifest('evaluate', config={}, parents=['p1', '', 'p2'])
        assert manifest.parents == ['p1', 'p2']

    def test_write_and_load(self, tmp_path):
        (tmp_path / 'out.txt').write_text('hello')
        manifest = build_manifest('sample', config={'kind': 'sgld'}, seeds={'sampler': 3})
        write_manifest(manifest, tmp_path / 'manifest.json', outputs=[tmp_path / 'out.txt'])
        loaded = load_manifest(tmp_path / 'manifest.json')
        assert loaded.manifest_hash == manifest.manifest_hash
        assert loaded.created_at is not None
        assert loaded.outputs == {'out.txt': file_sha256(tmp_path / 'out.txt')}

    def test_rewrite_keeps_hash(self, tmp_path):
        manifest = build_manifest('train', config={'lr': 0.1})
        write_manifest(manifest, tmp_path / 'm1.json')
        again = build_manifest('train', config={'lr': 0.1})
        write_manifest(again, tmp_path / 'm2.json')
        assert load_manifest(tmp_path / 'm1.json').manifest_hash == load_manifest(tmp_path / 'm2.json').manifest_hash

    def test_tampered_manifest(self, tmp_path):
        manifest = build_manifest('train', config={'lr': 0.1})
        write_manifest(manifest, tmp_path / 'manifest.json')
        raw = json.loads((tmp_path / 'manifest.json').read_text())
        raw['config']['lr'] = 0.2
        (tmp_path / 'manifest.json').write_text(json.dumps(raw))
        with pytest.raises(ArtifactMismatchError):
            load_manifest(tmp_path / 'manifest.json')

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(ConfigError):
            load_manifest(tmp_path / 'manifest.json')

    def test_require_equal(self):
        require_equal('kind', 'sgld', 'sgld')
        with pytest.raises(ArtifactMismatchError, match="kind mismatch"):
            require_equal('kind', 'sgld', 'sgd')

    def test_class_split_check(self):
        check_class_split({}, {'other': 1}, 'params vs features')
        check_class_split({'in_classes': [0, 1], 'out_classes': [2]}, {'in_classes': [0, 1], 'out_classes': [2]}, 'x')
        with pytest.raises(ArtifactMismatchError):
            check_class_split({'in_classes': [0, 1], 'out_classes': [2]}, {}, 'params vs features')


class TestSeedsAndHashes:
    def test_derive_seed_is_stable_and_distinct(self):
        assert derive_seed(42, 3) == derive_seed(42, 3)
        children = {derive_seed(42, i) for i in range(100)}
        assert len(children) == 100
        assert derive_seed(42, 0) != derive_seed(43, 0)
        assert derive_seed(42, 1, 2) != derive_seed(42, 2, 1)

    def test_array_hash_sees_dtype_shape_and_values(self):
        a = np.arange(6, dtype=np.float64)
        assert sha256_arrays(a) == sha256_arrays(a.copy())
        assert sha256_arrays(a) != sha256_arrays(a.reshape(2, 3))
        assert sha256_arrays(a) != sha256_arrays(a.astype(np.float32))
        assert sha256_arrays(a.astype('>f8')) == sha256_arrays(a)


def _records():
    return [
        PredictionRecord(index=0, label=1, predicted=1, posterior=[0.1, 0.9], sr=0.9, std_kappa=-0.01, q_entropy_kappa=0.0),
        PredictionRecord(index=1, label=0, predicted=1, posterior=[0.4, 0.6], sr=0.6, std_kappa=-0.2, q_entropy_kappa=-0.5),
        PredictionRecord(index=2, label=0, predicted=0, posterior=[1 / 3, 2 / 3][::-1], sr=2 / 3, std_kappa=-0.1, q_entropy_kappa=0.0),
    ]


class TestExport:
    def test_records_csv_keeps_full_precision(self, tmp_path):
        path = write_records_csv(_records(), tmp_path / 'records.csv', 'hash123', include_posterior=True)
        assert read_manifest_hash(path) == 'hash123'
        frame = read_csv(path)
        assert list(frame.columns) == ['index', 'y', 'f_hat', 'sr', 'std_kappa', 'q_entropy_kappa', 'p_0', 'p_1']
        assert frame['sr'].iloc[2] == pytest.approx(2 / 3, rel=1e-15)
        assert frame['p_0'].iloc[2] == pytest.approx(2 / 3, rel=1e-15)
        assert frame['y'].tolist() == [1, 0, 0]

    def test_curve_reliability_and_histogram(self, tmp_path):
        records = _records()
        _, curve = aurc(records, 'sr')
        curve_frame = read_csv(write_curve_csv(curve, tmp_path / 'curve.csv', 'h'))
        assert curve_frame.columns.tolist() == ['threshold', 'coverage', 'risk']
        assert curve_frame['coverage'].iloc[-1] == 1.0

        reliability = read_csv(write_reliability_csv(calibration(records, m=5), tmp_path / 'rel.csv', 'h'))
        assert len(reliability) == 5
        assert reliability['n'].sum() == 3

        hist = read_csv(write_histogram_csv(confidence_histogram(records, 'sr', bins=4), tmp_path / 'hist.csv', 'h'))
        assert hist[['correct', 'incorrect']].to_numpy().sum() == 3

    def test_json_report(self, tmp_path):
        report = TrainReport(manifest_hash='abc', final_train_loss=0.25, train_accuracy=0.9, epoch_losses=[0.5, 0.25])
        path = write_json_report(report, tmp_path / 'train_report.json')
        assert TrainReport.model_validate_json(path.read_text()) == report
